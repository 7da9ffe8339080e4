//! Pairwise and row-wise operations used by the metric heads.

use super::{accumulate, Op, Tape, Var};
use crate::error::{shape_err, Error, Result};
use crate::tensor::Tensor;

impl Tape {
    /// `out[i,j] = ‖a_i − b_j‖²` for `a[n,d]`, `b[m,d]`.
    pub fn pairwise_sq_dist(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[1] {
            return Err(shape_err!("pairwise_sq_dist: {:?} vs {:?}", sa, sb));
        }
        let (n, m, d) = (sa[0], sb[0], sa[1]);
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            for j in 0..m {
                out[i * m + j] = av[i * d..(i + 1) * d]
                    .iter()
                    .zip(&bv[j * d..(j + 1) * d])
                    .map(|(x, y)| (x - y) * (x - y))
                    .sum();
            }
        }
        Ok(self.push(Tensor::from_parts(vec![n, m], out), Op::PairwiseSqDist(a, b), &[a, b]))
    }

    /// `out[i·n + j, k] = |x_ik − x_jk|` for `x[n,d]`.
    pub fn pairwise_abs_diff(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 2 {
            return Err(shape_err!("pairwise_abs_diff expects [n,d], got {:?}", s));
        }
        let (n, d) = (s[0], s[1]);
        let xv = self.value(x).data();
        let mut out = Vec::with_capacity(n * n * d);
        for i in 0..n {
            for j in 0..n {
                out.extend(
                    xv[i * d..(i + 1) * d]
                        .iter()
                        .zip(&xv[j * d..(j + 1) * d])
                        .map(|(a, b)| (a - b).abs()),
                );
            }
        }
        Ok(self.push(Tensor::from_parts(vec![n * n, d], out), Op::PairwiseAbsDiff(x), &[x]))
    }

    /// Divides each row of a strictly positive `[n,m]` matrix by its sum.
    pub fn row_normalize(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 2 {
            return Err(shape_err!("row_normalize expects [n,m], got {:?}", s));
        }
        let m = s[1];
        let mut out = self.value(x).data().to_vec();
        for row in out.chunks_exact_mut(m) {
            let total: f64 = row.iter().sum();
            if !(total > 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "row_normalize: row sum {total} is not positive"
                )));
            }
            row.iter_mut().for_each(|v| *v /= total);
        }
        Ok(self.push(Tensor::from_parts(s, out), Op::RowNormalize(x), &[x]))
    }
}

pub(super) fn pairwise_sq_dist_backward(
    tape: &Tape,
    a: Var,
    b: Var,
    g: &[f64],
    grads: &mut [Option<Vec<f64>>],
) {
    let (n, d) = (tape.shape(a)[0], tape.shape(a)[1]);
    let m = tape.shape(b)[0];
    let (av, bv) = (tape.value(a).data().to_vec(), tape.value(b).data().to_vec());
    for (target, sign) in [(a, 1.0), (b, -1.0)] {
        if !tape.wants(target) {
            continue;
        }
        let dst = accumulate(grads, tape.numel_of(target), target);
        for i in 0..n {
            for j in 0..m {
                let gij = 2.0 * g[i * m + j] * sign;
                for k in 0..d {
                    let diff = av[i * d + k] - bv[j * d + k];
                    let idx = if sign > 0.0 { i * d + k } else { j * d + k };
                    dst[idx] += gij * diff;
                }
            }
        }
    }
}

pub(super) fn pairwise_abs_diff_backward(tape: &Tape, x: Var, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
    if !tape.wants(x) {
        return;
    }
    let (n, d) = (tape.shape(x)[0], tape.shape(x)[1]);
    let xv = tape.value(x).data().to_vec();
    let dst = accumulate(grads, tape.numel_of(x), x);
    for i in 0..n {
        for j in 0..n {
            let row = &g[(i * n + j) * d..][..d];
            for k in 0..d {
                let diff = xv[i * d + k] - xv[j * d + k];
                let sgn = if diff > 0.0 {
                    1.0
                } else if diff < 0.0 {
                    -1.0
                } else {
                    0.0
                };
                dst[i * d + k] += sgn * row[k];
                dst[j * d + k] -= sgn * row[k];
            }
        }
    }
}

pub(super) fn row_normalize_backward(
    tape: &Tape,
    x: Var,
    out: &[f64],
    g: &[f64],
    grads: &mut [Option<Vec<f64>>],
) {
    if !tape.wants(x) {
        return;
    }
    let m = tape.shape(x)[1];
    let xv = tape.value(x).data().to_vec();
    let dst = accumulate(grads, tape.numel_of(x), x);
    for ((y, gr), (xr, d)) in out
        .chunks_exact(m)
        .zip(g.chunks_exact(m))
        .zip(xv.chunks_exact(m).zip(dst.chunks_exact_mut(m)))
    {
        let total: f64 = xr.iter().sum();
        let dot: f64 = y.iter().zip(gr).map(|(a, b)| a * b).sum();
        for j in 0..m {
            d[j] += (gr[j] - dot) / total;
        }
    }
}
