//! Differentiable 2D Fourier transforms on real channel-stacked views.
//!
//! Complex tensors are stored as real tensors whose channel axis holds the
//! real parts of all channels followed by the imaginary parts: `[B, 2C, ...]`.
//! Each transform is linear, so its backward rule is its adjoint.

use rustfft::num_complex::Complex64;

use super::{accumulate, Op, Tape, Var};
use crate::error::{shape_err, Result};
use crate::frequency::fft::{expand_half, fft2_real, half_rows, has_mirror_row, ifft2_unnormalized};
use crate::tensor::Tensor;

/// `(batch, channels, h, w)` of a rank-3 `[C,H,W]` or rank-4 `[B,C,H,W]` shape.
fn dims(shape: &[usize], what: &str) -> Result<(usize, usize, usize, usize)> {
    match *shape {
        [c, h, w] => Ok((1, c, h, w)),
        [b, c, h, w] => Ok((b, c, h, w)),
        _ => Err(shape_err!("{what} expects [C,H,W] or [B,C,H,W], got {:?}", shape)),
    }
}

fn with_dims(rank: usize, b: usize, c: usize, h: usize, w: usize) -> Vec<usize> {
    if rank == 3 {
        vec![c, h, w]
    } else {
        vec![b, c, h, w]
    }
}

/// Reads complex plane `(bi, ch)` out of a channel-stacked real buffer.
fn read_complex(data: &[f64], c: usize, plane: usize, bi: usize, ch: usize) -> Vec<Complex64> {
    let re = &data[(bi * 2 * c + ch) * plane..][..plane];
    let im = &data[(bi * 2 * c + c + ch) * plane..][..plane];
    re.iter().zip(im).map(|(&r, &i)| Complex64::new(r, i)).collect()
}

fn write_complex(
    dst: &mut [f64],
    c: usize,
    plane: usize,
    bi: usize,
    ch: usize,
    values: impl Iterator<Item = Complex64>,
    scale: f64,
) {
    let re_off = (bi * 2 * c + ch) * plane;
    let im_off = (bi * 2 * c + c + ch) * plane;
    for (i, z) in values.take(plane).enumerate() {
        dst[re_off + i] += z.re * scale;
        dst[im_off + i] += z.im * scale;
    }
}

impl Tape {
    /// Real input `[B,C,H,W]` → half spectrum `[B,2C,⌊H/2⌋+1,W]`.
    pub fn rfft2(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let (b, c, h, w) = dims(&shape, "rfft2")?;
        let hh = half_rows(h);
        let (plane, half) = (h * w, hh * w);
        let data = self.value(x).data();
        let mut out = vec![0.0; b * 2 * c * half];
        for bi in 0..b {
            for ch in 0..c {
                let spec = fft2_real(h, w, &data[(bi * c + ch) * plane..][..plane]);
                write_complex(&mut out, c, half, bi, ch, spec.into_iter(), 1.0);
            }
        }
        let value = Tensor::from_parts(with_dims(shape.len(), b, 2 * c, hh, w), out);
        Ok(self.push(value, Op::Rfft2(x), &[x]))
    }

    /// Half spectrum `[B,2C,⌊H/2⌋+1,W]` → real signal `[B,C,H,W]`, normalized by `1/(H·W)`.
    ///
    /// Missing rows are filled by conjugate symmetry; the real part of the
    /// inverse transform is returned.
    pub fn irfft2(&mut self, spec: Var, height: usize) -> Result<Var> {
        let shape = self.shape(spec).to_vec();
        let (b, c2, hh, w) = dims(&shape, "irfft2")?;
        if c2 % 2 != 0 || hh != half_rows(height) {
            return Err(shape_err!(
                "irfft2: {:?} is not a half spectrum of height {}",
                shape,
                height
            ));
        }
        let c = c2 / 2;
        let (plane, half) = (height * w, hh * w);
        let norm = 1.0 / plane as f64;
        let data = self.value(spec).data();
        let mut out = vec![0.0; b * c * plane];
        for bi in 0..b {
            for ch in 0..c {
                let full = expand_half(height, w, &read_complex(data, c, half, bi, ch));
                let sig = ifft2_unnormalized(height, w, &full);
                let dst = &mut out[(bi * c + ch) * plane..][..plane];
                for (d, z) in dst.iter_mut().zip(sig) {
                    *d = z.re * norm;
                }
            }
        }
        let value = Tensor::from_parts(with_dims(shape.len(), b, c, height, w), out);
        Ok(self.push(value, Op::Irfft2 { input: spec, height }, &[spec]))
    }

    /// Real input `[B,C,H,W]` → full spectrum `[B,2C,H,W]`, unnormalized.
    pub fn fft2(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let (b, c, h, w) = dims(&shape, "fft2")?;
        let plane = h * w;
        let data = self.value(x).data();
        let mut out = vec![0.0; b * 2 * c * plane];
        for bi in 0..b {
            for ch in 0..c {
                let spec = fft2_real(h, w, &data[(bi * c + ch) * plane..][..plane]);
                write_complex(&mut out, c, plane, bi, ch, spec.into_iter(), 1.0);
            }
        }
        let value = Tensor::from_parts(with_dims(shape.len(), b, 2 * c, h, w), out);
        Ok(self.push(value, Op::Fft2(x), &[x]))
    }

    /// Full spectrum `[B,2C,H,W]` → real part of its normalized inverse `[B,C,H,W]`.
    pub fn ifft2_real(&mut self, spec: Var) -> Result<Var> {
        let shape = self.shape(spec).to_vec();
        let (b, c2, h, w) = dims(&shape, "ifft2_real")?;
        if c2 % 2 != 0 {
            return Err(shape_err!("ifft2_real: odd channel count in {:?}", shape));
        }
        let c = c2 / 2;
        let plane = h * w;
        let norm = 1.0 / plane as f64;
        let data = self.value(spec).data();
        let mut out = vec![0.0; b * c * plane];
        for bi in 0..b {
            for ch in 0..c {
                let sig = ifft2_unnormalized(h, w, &read_complex(data, c, plane, bi, ch));
                let dst = &mut out[(bi * c + ch) * plane..][..plane];
                for (d, z) in dst.iter_mut().zip(sig) {
                    *d = z.re * norm;
                }
            }
        }
        let value = Tensor::from_parts(with_dims(shape.len(), b, c, h, w), out);
        Ok(self.push(value, Op::Ifft2Real(spec), &[spec]))
    }
}

pub(super) fn rfft2_backward(tape: &Tape, x: Var, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
    if !tape.wants(x) {
        return;
    }
    let (b, c, h, w) = dims(tape.shape(x), "rfft2").expect("validated in forward");
    let (plane, half) = (h * w, half_rows(h) * w);
    let dst = accumulate(grads, tape.numel_of(x), x);
    for bi in 0..b {
        for ch in 0..c {
            let mut full = read_complex(g, c, half, bi, ch);
            full.resize(plane, Complex64::default());
            let back = ifft2_unnormalized(h, w, &full);
            for (d, z) in dst[(bi * c + ch) * plane..][..plane].iter_mut().zip(back) {
                *d += z.re;
            }
        }
    }
}

pub(super) fn irfft2_backward(
    tape: &Tape,
    spec: Var,
    height: usize,
    g: &[f64],
    grads: &mut [Option<Vec<f64>>],
) {
    if !tape.wants(spec) {
        return;
    }
    let (b, c2, hh, w) = dims(tape.shape(spec), "irfft2").expect("validated in forward");
    let c = c2 / 2;
    let (plane, half) = (height * w, hh * w);
    let norm = 1.0 / plane as f64;
    let weights: Vec<f64> = (0..hh)
        .flat_map(|u| {
            let k = if has_mirror_row(height, u) { 2.0 } else { 1.0 };
            std::iter::repeat_n(k * norm, w)
        })
        .collect();
    let dst = accumulate(grads, tape.numel_of(spec), spec);
    for bi in 0..b {
        for ch in 0..c {
            let gs = fft2_real(height, w, &g[(bi * c + ch) * plane..][..plane]);
            let scaled = gs.into_iter().zip(&weights).map(|(z, &k)| z * k);
            write_complex(dst, c, half, bi, ch, scaled, 1.0);
        }
    }
}

pub(super) fn fft2_backward(tape: &Tape, x: Var, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
    if !tape.wants(x) {
        return;
    }
    let (b, c, h, w) = dims(tape.shape(x), "fft2").expect("validated in forward");
    let plane = h * w;
    let dst = accumulate(grads, tape.numel_of(x), x);
    for bi in 0..b {
        for ch in 0..c {
            let back = ifft2_unnormalized(h, w, &read_complex(g, c, plane, bi, ch));
            for (d, z) in dst[(bi * c + ch) * plane..][..plane].iter_mut().zip(back) {
                *d += z.re;
            }
        }
    }
}

pub(super) fn ifft2_real_backward(tape: &Tape, spec: Var, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
    if !tape.wants(spec) {
        return;
    }
    let (b, c2, h, w) = dims(tape.shape(spec), "ifft2_real").expect("validated in forward");
    let c = c2 / 2;
    let plane = h * w;
    let norm = 1.0 / plane as f64;
    let dst = accumulate(grads, tape.numel_of(spec), spec);
    for bi in 0..b {
        for ch in 0..c {
            let gs = fft2_real(h, w, &g[(bi * c + ch) * plane..][..plane]);
            write_complex(dst, c, plane, bi, ch, gs.into_iter(), norm);
        }
    }
}

impl Tape {
    /// Per-bin complex product of a channel-stacked spectrum `x[B,2C,R,W]`
    /// with complex weights `w[2C,R,W]` stored the same way.
    pub fn complex_mul_broadcast(&mut self, x: Var, w: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 4 || xs[1] % 2 != 0 || xs[1..] != *self.shape(w) {
            return Err(shape_err!(
                "complex_mul_broadcast: {:?} cannot take weights {:?}",
                xs,
                self.shape(w)
            ));
        }
        let (b, c, plane) = (xs[0], xs[1] / 2, xs[2] * xs[3]);
        let (xv, wv) = (self.value(x).data(), self.value(w).data());
        let mut out = vec![0.0; xv.len()];
        for bi in 0..b {
            for ch in 0..c {
                let xr = (bi * 2 * c + ch) * plane;
                let xi = xr + c * plane;
                let (wr, wi) = (ch * plane, (c + ch) * plane);
                for p in 0..plane {
                    let (a, bb) = (xv[xr + p], xv[xi + p]);
                    let (cr, ci) = (wv[wr + p], wv[wi + p]);
                    out[xr + p] = a * cr - bb * ci;
                    out[xi + p] = a * ci + bb * cr;
                }
            }
        }
        let value = Tensor::from_parts(xs, out);
        Ok(self.push(value, Op::ComplexMulBroadcast(x, w), &[x, w]))
    }
}

pub(super) fn complex_mul_broadcast_backward(
    tape: &Tape,
    x: Var,
    w: Var,
    g: &[f64],
    grads: &mut [Option<Vec<f64>>],
) {
    let s = tape.shape(x);
    let (b, c, plane) = (s[0], s[1] / 2, s[2] * s[3]);
    let (xv, wv) = (tape.value(x).data(), tape.value(w).data());
    // dL/dx = g·conj(w), dL/dw = Σ_b g·conj(x)
    if tape.wants(x) {
        let dst = accumulate(grads, tape.numel_of(x), x);
        for bi in 0..b {
            for ch in 0..c {
                let xr = (bi * 2 * c + ch) * plane;
                let xi = xr + c * plane;
                let (wr, wi) = (ch * plane, (c + ch) * plane);
                for p in 0..plane {
                    let (gr, gi) = (g[xr + p], g[xi + p]);
                    dst[xr + p] += gr * wv[wr + p] + gi * wv[wi + p];
                    dst[xi + p] += gi * wv[wr + p] - gr * wv[wi + p];
                }
            }
        }
    }
    if tape.wants(w) {
        let dst = accumulate(grads, tape.numel_of(w), w);
        for bi in 0..b {
            for ch in 0..c {
                let xr = (bi * 2 * c + ch) * plane;
                let xi = xr + c * plane;
                let (wr, wi) = (ch * plane, (c + ch) * plane);
                for p in 0..plane {
                    let (gr, gi) = (g[xr + p], g[xi + p]);
                    dst[wr + p] += gr * xv[xr + p] + gi * xv[xi + p];
                    dst[wi + p] += gi * xv[xr + p] - gr * xv[xi + p];
                }
            }
        }
    }
}
