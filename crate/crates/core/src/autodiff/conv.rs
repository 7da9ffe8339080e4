//! Batched 2D convolution via im2col and a strided GEMM.

use super::{accumulate, Op, Tape, Var};
use crate::error::{shape_err, Result};
use crate::tensor::Tensor;

/// `C = A·B + beta·C` for row/column-strided f64 matrices.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_strides: (usize, usize),
    b: &[f64],
    b_strides: (usize, usize),
    c: &mut [f64],
    c_strides: (usize, usize),
    beta: f64,
) {
    if m == 0 || n == 0 {
        return;
    }
    let last = |rows: usize, cols: usize, (rs, cs): (usize, usize)| {
        (rows.saturating_sub(1)) * rs + (cols.saturating_sub(1)) * cs
    };
    if k > 0 {
        assert!(last(m, k, a_strides) < a.len(), "gemm: A out of bounds");
        assert!(last(k, n, b_strides) < b.len(), "gemm: B out of bounds");
    }
    assert!(last(m, n, c_strides) < c.len(), "gemm: C out of bounds");
    // SAFETY: every index touched by dgemm lies inside the slices, checked above.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            a_strides.0 as isize,
            a_strides.1 as isize,
            b.as_ptr(),
            b_strides.0 as isize,
            b_strides.1 as isize,
            beta,
            c.as_mut_ptr(),
            c_strides.0 as isize,
            c_strides.1 as isize,
        );
    }
}

/// Output length along one axis: `⌊(len + 2·pad − k)/stride⌋ + 1`.
pub fn conv2d_output_size(len: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = len + 2 * padding;
    if stride == 0 || padded < kernel {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

#[derive(Debug)]
pub(crate) struct Conv2dSaved {
    input: Var,
    kernel: Var,
    bias: Option<Var>,
    stride: usize,
    padding: usize,
    out_hw: (usize, usize),
    /// im2col matrix `[Ci·kh·kw, B·Ho·Wo]`.
    cols: Vec<f64>,
}

struct Geometry {
    batch: usize,
    c_in: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    ho: usize,
    wo: usize,
    stride: usize,
    padding: usize,
}

impl Geometry {
    fn patch(&self) -> usize {
        self.c_in * self.kh * self.kw
    }

    fn positions(&self) -> usize {
        self.ho * self.wo
    }

    /// Visits `(col_row, col_col, input_index)` for every in-bounds tap.
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize, usize)) {
        let p = self.positions();
        let total = self.batch * p;
        for b in 0..self.batch {
            for c in 0..self.c_in {
                for ky in 0..self.kh {
                    for kx in 0..self.kw {
                        let row = (c * self.kh + ky) * self.kw + kx;
                        for oy in 0..self.ho {
                            let iy = (oy * self.stride + ky) as isize - self.padding as isize;
                            if iy < 0 || iy >= self.h as isize {
                                continue;
                            }
                            for ox in 0..self.wo {
                                let ix = (ox * self.stride + kx) as isize - self.padding as isize;
                                if ix < 0 || ix >= self.w as isize {
                                    continue;
                                }
                                let col = b * p + oy * self.wo + ox;
                                let src = ((b * self.c_in + c) * self.h + iy as usize) * self.w
                                    + ix as usize;
                                debug_assert!(row * total + col < self.patch() * total);
                                f(row, col, src);
                            }
                        }
                    }
                }
            }
        }
    }
}

impl Tape {
    /// Cross-correlation of `input[B,Ci,H,W]` with `kernel[Co,Ci,kh,kw]`.
    pub fn conv2d(
        &mut self,
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let xs = self.shape(input).to_vec();
        let ks = self.shape(kernel).to_vec();
        if xs.len() != 4 || ks.len() != 4 {
            return Err(shape_err!("conv2d: input {:?}, kernel {:?}", xs, ks));
        }
        if xs[1] != ks[1] {
            return Err(shape_err!(
                "conv2d: input has {} channels but kernel expects {}",
                xs[1],
                ks[1]
            ));
        }
        if ks[2] % 2 == 0 || ks[3] % 2 == 0 {
            return Err(shape_err!("conv2d: kernel size {}×{} must be odd", ks[2], ks[3]));
        }
        let c_out = ks[0];
        if let Some(b) = bias {
            if self.shape(b) != [c_out] {
                return Err(shape_err!("conv2d: bias {:?} for {} outputs", self.shape(b), c_out));
            }
        }
        let (ho, wo) = match (
            conv2d_output_size(xs[2], ks[2], stride, padding),
            conv2d_output_size(xs[3], ks[3], stride, padding),
        ) {
            (Some(a), Some(b)) => (a, b),
            _ => return Err(shape_err!("conv2d: kernel {:?} does not fit input {:?}", ks, xs)),
        };
        let geo = Geometry {
            batch: xs[0],
            c_in: xs[1],
            h: xs[2],
            w: xs[3],
            kh: ks[2],
            kw: ks[3],
            ho,
            wo,
            stride,
            padding,
        };
        let p = geo.positions();
        let total = geo.batch * p;
        let x = self.value(input).data();
        let mut cols = vec![0.0; geo.patch() * total];
        geo.for_each_tap(|row, col, src| cols[row * total + col] = x[src]);

        let mut tmp = vec![0.0; c_out * total];
        gemm(
            c_out,
            geo.patch(),
            total,
            self.value(kernel).data(),
            (geo.patch(), 1),
            &cols,
            (total, 1),
            &mut tmp,
            (total, 1),
            0.0,
        );
        let bias_vals = bias.map(|b| self.value(b).data().to_vec());
        let mut out = vec![0.0; geo.batch * c_out * p];
        for b in 0..geo.batch {
            for co in 0..c_out {
                let add = bias_vals.as_ref().map_or(0.0, |bv| bv[co]);
                let dst = &mut out[(b * c_out + co) * p..(b * c_out + co + 1) * p];
                let src = &tmp[co * total + b * p..co * total + (b + 1) * p];
                for (d, &s) in dst.iter_mut().zip(src) {
                    *d = s + add;
                }
            }
        }
        let value = Tensor::from_parts(vec![geo.batch, c_out, ho, wo], out);
        let saved = Conv2dSaved {
            input,
            kernel,
            bias,
            stride,
            padding,
            out_hw: (ho, wo),
            cols,
        };
        let mut inputs = vec![input, kernel];
        inputs.extend(bias);
        Ok(self.push(value, Op::Conv2d(Box::new(saved)), &inputs))
    }
}

pub(super) fn backward(tape: &Tape, s: &Conv2dSaved, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
    let xs = tape.shape(s.input);
    let ks = tape.shape(s.kernel);
    let geo = Geometry {
        batch: xs[0],
        c_in: xs[1],
        h: xs[2],
        w: xs[3],
        kh: ks[2],
        kw: ks[3],
        ho: s.out_hw.0,
        wo: s.out_hw.1,
        stride: s.stride,
        padding: s.padding,
    };
    let c_out = ks[0];
    let p = geo.positions();
    let total = geo.batch * p;
    // Regroup the upstream gradient as [Co, B·P].
    let mut g2 = vec![0.0; c_out * total];
    for b in 0..geo.batch {
        for co in 0..c_out {
            g2[co * total + b * p..co * total + (b + 1) * p]
                .copy_from_slice(&g[(b * c_out + co) * p..(b * c_out + co + 1) * p]);
        }
    }
    if let Some(bias) = s.bias {
        if tape.wants(bias) {
            let dst = accumulate(grads, tape.numel_of(bias), bias);
            for co in 0..c_out {
                dst[co] += g2[co * total..(co + 1) * total].iter().sum::<f64>();
            }
        }
    }
    if tape.wants(s.kernel) {
        let dst = accumulate(grads, tape.numel_of(s.kernel), s.kernel);
        // dK = G2 · colsᵀ
        gemm(
            c_out,
            total,
            geo.patch(),
            &g2,
            (total, 1),
            &s.cols,
            (1, total),
            dst,
            (geo.patch(), 1),
            1.0,
        );
    }
    if tape.wants(s.input) {
        let mut dcols = vec![0.0; geo.patch() * total];
        // dcols = Kᵀ · G2
        gemm(
            geo.patch(),
            c_out,
            total,
            tape.value(s.kernel).data(),
            (1, geo.patch()),
            &g2,
            (total, 1),
            &mut dcols,
            (total, 1),
            0.0,
        );
        let dst = accumulate(grads, tape.numel_of(s.input), s.input);
        geo.for_each_tap(|row, col, src| dst[src] += dcols[row * total + col]);
    }
}
