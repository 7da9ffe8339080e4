//! Batch normalization over `(batch, H, W)` per channel.

use super::{accumulate, Op, Tape, Var};
use crate::error::{shape_err, Error, Result};
use crate::tensor::Tensor;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Normalization statistics source.
#[derive(Debug, Clone, Copy)]
pub enum BnMode<'a> {
    /// Normalize with the batch's own statistics.
    Train,
    /// Normalize with stored running statistics.
    Eval { mean: &'a [f64], var: &'a [f64] },
}

/// Per-channel statistics of a training batch, for updating running buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    /// Unbiased variance, as used for running estimates.
    pub var: Vec<f64>,
}

impl BatchStats {
    /// `running ← (1−momentum)·running + momentum·batch`.
    pub fn update_running(&self, running_mean: &mut [f64], running_var: &mut [f64]) {
        for (r, &m) in running_mean.iter_mut().zip(&self.mean) {
            *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * m;
        }
        for (r, &v) in running_var.iter_mut().zip(&self.var) {
            *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * v;
        }
    }
}

#[derive(Debug)]
pub(crate) struct BatchNormSaved {
    input: Var,
    gamma: Var,
    beta: Var,
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
    train: bool,
}

impl Tape {
    /// Batch normalization of `input[B,C,H,W]` with affine `gamma`, `beta` of shape `[C]`.
    ///
    /// Returns batch statistics in train mode so the caller can update its
    /// running buffers.
    pub fn batch_norm(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        mode: BnMode<'_>,
    ) -> Result<(Var, Option<BatchStats>)> {
        let s = self.shape(input).to_vec();
        if s.len() != 4 {
            return Err(shape_err!("batch_norm expects [B,C,H,W], got {:?}", s));
        }
        let (b, c, plane) = (s[0], s[1], s[2] * s[3]);
        if self.shape(gamma) != [c] || self.shape(beta) != [c] {
            return Err(shape_err!(
                "batch_norm: affine {:?}/{:?} for {} channels",
                self.shape(gamma),
                self.shape(beta),
                c
            ));
        }
        let n = b * plane;
        let x = self.value(input).data();
        let (mean, var, stats) = match mode {
            BnMode::Train => {
                if b < 2 {
                    return Err(Error::InvalidArgument(format!(
                        "batch_norm in train mode needs batch ≥ 2, got {b}"
                    )));
                }
                let mut mean = vec![0.0; c];
                let mut var = vec![0.0; c];
                for ch in 0..c {
                    let mut sum = 0.0;
                    for bi in 0..b {
                        let off = (bi * c + ch) * plane;
                        sum += x[off..off + plane].iter().sum::<f64>();
                    }
                    let mu = sum / n as f64;
                    let mut sq = 0.0;
                    for bi in 0..b {
                        let off = (bi * c + ch) * plane;
                        sq += x[off..off + plane].iter().map(|v| (v - mu) * (v - mu)).sum::<f64>();
                    }
                    mean[ch] = mu;
                    var[ch] = sq / n as f64;
                }
                let unbiased = var.iter().map(|v| v * n as f64 / (n - 1).max(1) as f64).collect();
                let stats = BatchStats {
                    mean: mean.clone(),
                    var: unbiased,
                };
                (mean, var, Some(stats))
            }
            BnMode::Eval { mean, var } => {
                if mean.len() != c || var.len() != c {
                    return Err(shape_err!(
                        "batch_norm: running stats of length {}/{} for {} channels",
                        mean.len(),
                        var.len(),
                        c
                    ));
                }
                (mean.to_vec(), var.to_vec(), None)
            }
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
        let gv = self.value(gamma).data();
        let bv = self.value(beta).data();
        let mut xhat = vec![0.0; x.len()];
        let mut out = vec![0.0; x.len()];
        for bi in 0..b {
            for ch in 0..c {
                let off = (bi * c + ch) * plane;
                for i in off..off + plane {
                    xhat[i] = (x[i] - mean[ch]) * inv_std[ch];
                    out[i] = gv[ch] * xhat[i] + bv[ch];
                }
            }
        }
        let saved = BatchNormSaved {
            input,
            gamma,
            beta,
            xhat,
            inv_std,
            train: stats.is_some(),
        };
        let var = self.push(
            Tensor::from_parts(s, out),
            Op::BatchNorm(Box::new(saved)),
            &[input, gamma, beta],
        );
        Ok((var, stats))
    }
}

pub(super) fn backward(tape: &Tape, s: &BatchNormSaved, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
    let shape = tape.shape(s.input);
    let (b, c, plane) = (shape[0], shape[1], shape[2] * shape[3]);
    let n = (b * plane) as f64;
    let gamma = tape.value(s.gamma).data();
    let mut sum_g = vec![0.0; c];
    let mut sum_gx = vec![0.0; c];
    for bi in 0..b {
        for ch in 0..c {
            let off = (bi * c + ch) * plane;
            for i in off..off + plane {
                sum_g[ch] += g[i];
                sum_gx[ch] += g[i] * s.xhat[i];
            }
        }
    }
    if tape.wants(s.gamma) {
        let dst = accumulate(grads, tape.numel_of(s.gamma), s.gamma);
        for ch in 0..c {
            dst[ch] += sum_gx[ch];
        }
    }
    if tape.wants(s.beta) {
        let dst = accumulate(grads, tape.numel_of(s.beta), s.beta);
        for ch in 0..c {
            dst[ch] += sum_g[ch];
        }
    }
    if tape.wants(s.input) {
        let dst = accumulate(grads, tape.numel_of(s.input), s.input);
        for bi in 0..b {
            for ch in 0..c {
                let off = (bi * c + ch) * plane;
                let k = gamma[ch] * s.inv_std[ch];
                for i in off..off + plane {
                    dst[i] += if s.train {
                        k * (g[i] - sum_g[ch] / n - s.xhat[i] * sum_gx[ch] / n)
                    } else {
                        k * g[i]
                    };
                }
            }
        }
    }
}
