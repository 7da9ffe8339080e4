use super::{accumulate, Op, Reduction, Tape, Var};
use crate::error::{shape_err, Error, Result};
use crate::tensor::Tensor;

#[derive(Debug)]
pub(crate) struct CrossEntropySaved {
    logits: Var,
    labels: Vec<usize>,
    probs: Vec<f64>,
    reduction: Reduction,
}

/// Row-wise softmax of a `[B,N]` buffer, max-shifted.
pub(crate) fn softmax_rows(data: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; data.len()];
    for (row, dst) in data.chunks_exact(n).zip(out.chunks_exact_mut(n)) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for (d, &x) in dst.iter_mut().zip(row) {
            *d = (x - max).exp();
            total += *d;
        }
        dst.iter_mut().for_each(|d| *d /= total);
    }
    out
}

impl Tape {
    /// Softmax over the last axis of `[B,N]` logits.
    pub fn softmax(&mut self, logits: Var) -> Result<Var> {
        let s = self.shape(logits).to_vec();
        if s.len() != 2 || s[1] == 0 {
            return Err(shape_err!("softmax expects [B,N], got {:?}", s));
        }
        let probs = softmax_rows(self.value(logits).data(), s[1]);
        Ok(self.push(Tensor::from_parts(s, probs), Op::Softmax(logits), &[logits]))
    }

    /// Cross-entropy `−log softmax(logits)[label]`, summed or averaged over rows.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize], reduction: Reduction) -> Result<Var> {
        let s = self.shape(logits).to_vec();
        if s.len() != 2 || s[1] == 0 {
            return Err(shape_err!("cross_entropy expects [B,N] logits, got {:?}", s));
        }
        let (b, n) = (s[0], s[1]);
        if labels.len() != b {
            return Err(shape_err!("cross_entropy: {} labels for {} rows", labels.len(), b));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= n) {
            return Err(Error::InvalidArgument(format!(
                "label {bad} out of range for {n} classes"
            )));
        }
        let data = self.value(logits).data();
        let mut total = 0.0;
        for (row, &label) in data.chunks_exact(n).zip(labels) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|&x| (x - max).exp()).sum::<f64>().ln();
            total += lse - row[label];
        }
        if reduction == Reduction::Mean {
            total /= b as f64;
        }
        let saved = CrossEntropySaved {
            logits,
            labels: labels.to_vec(),
            probs: softmax_rows(data, n),
            reduction,
        };
        Ok(self.push(
            Tensor::scalar(total),
            Op::CrossEntropy(Box::new(saved)),
            &[logits],
        ))
    }
}

pub(super) fn cross_entropy_backward(
    tape: &Tape,
    s: &CrossEntropySaved,
    g: &[f64],
    grads: &mut [Option<Vec<f64>>],
) {
    if !tape.wants(s.logits) {
        return;
    }
    let n = tape.shape(s.logits)[1];
    let scale = match s.reduction {
        Reduction::Sum => g[0],
        Reduction::Mean => g[0] / s.labels.len() as f64,
    };
    let dst = accumulate(grads, tape.numel_of(s.logits), s.logits);
    for (i, &label) in s.labels.iter().enumerate() {
        for j in 0..n {
            let onehot = if j == label { 1.0 } else { 0.0 };
            dst[i * n + j] += scale * (s.probs[i * n + j] - onehot);
        }
    }
}

pub(super) fn softmax_backward(
    tape: &Tape,
    logits: Var,
    probs: &[f64],
    g: &[f64],
    grads: &mut [Option<Vec<f64>>],
) {
    if !tape.wants(logits) {
        return;
    }
    let n = tape.shape(logits)[1];
    let dst = accumulate(grads, tape.numel_of(logits), logits);
    for ((p, gr), d) in probs
        .chunks_exact(n)
        .zip(g.chunks_exact(n))
        .zip(dst.chunks_exact_mut(n))
    {
        let dot: f64 = p.iter().zip(gr).map(|(a, b)| a * b).sum();
        for j in 0..n {
            d[j] += p[j] * (gr[j] - dot);
        }
    }
}
