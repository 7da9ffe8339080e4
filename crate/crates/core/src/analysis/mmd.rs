//! Maximum mean discrepancy with an RBF kernel.

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MmdReport {
    /// `√max(MMD², 0)` of the biased estimator.
    pub value: f64,
    /// Squared-distance scale `h` of the kernel `exp(−‖x−y‖²/h)`.
    pub bandwidth: f64,
    pub n_source: usize,
    pub n_target: usize,
}

fn rows(t: &Tensor, what: &str) -> Result<(usize, usize)> {
    match *t.shape() {
        [n, d] => Ok((n, d)),
        ref s => Err(shape_err!("{what} features must be [n,D], got {:?}", s)),
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Median of the pooled pairwise squared distances, falling back to the mean
/// of the positive ones when more than half vanish; `None` when all do.
fn median_bandwidth(points: &[&[f64]]) -> Option<f64> {
    let mut d = Vec::with_capacity(points.len() * (points.len() - 1) / 2);
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            d.push(sq_dist(points[i], points[j]));
        }
    }
    d.sort_by(f64::total_cmp);
    let mid = d.len() / 2;
    let median = if d.len() % 2 == 0 { 0.5 * (d[mid - 1] + d[mid]) } else { d[mid] };
    if median > 0.0 {
        return Some(median);
    }
    let positive: Vec<f64> = d.into_iter().filter(|&x| x > 0.0).collect();
    if positive.is_empty() {
        None
    } else {
        Some(positive.iter().sum::<f64>() / positive.len() as f64)
    }
}

/// Biased MMD between two feature sets with the median-heuristic bandwidth.
pub fn mmd(a: &Tensor, b: &Tensor) -> Result<MmdReport> {
    let (n, d) = rows(a, "first")?;
    let (m, d2) = rows(b, "second")?;
    if d != d2 {
        return Err(shape_err!("feature widths {d} and {d2} differ"));
    }
    if n < 2 || m < 2 {
        return Err(Error::InvalidArgument(format!("MMD needs at least 2 samples per set, got {n} and {m}")));
    }
    let pa: Vec<&[f64]> = a.data().chunks_exact(d).collect();
    let pb: Vec<&[f64]> = b.data().chunks_exact(d).collect();
    let pooled: Vec<&[f64]> = pa.iter().chain(&pb).copied().collect();
    let Some(h) = median_bandwidth(&pooled) else {
        log::warn!("MMD of {n} and {m} identical points is degenerate; reporting 0");
        return Ok(MmdReport {
            value: 0.0,
            bandwidth: 0.0,
            n_source: n,
            n_target: m,
        });
    };
    let mean_kernel = |x: &[&[f64]], y: &[&[f64]]| -> f64 {
        let mut total = 0.0;
        for p in x {
            for q in y {
                total += (-sq_dist(p, q) / h).exp();
            }
        }
        total / (x.len() * y.len()) as f64
    };
    let mmd2 = mean_kernel(&pa, &pa) + mean_kernel(&pb, &pb) - 2.0 * mean_kernel(&pa, &pb);
    Ok(MmdReport {
        value: mmd2.max(0.0).sqrt(),
        bandwidth: h,
        n_source: n,
        n_target: m,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Naive oracle: explicit kernel matrices over index loops.
    fn oracle(a: &Tensor, b: &Tensor, h: f64) -> f64 {
        let (n, d) = (a.shape()[0], a.shape()[1]);
        let m = b.shape()[0];
        let at = |t: &Tensor, i: usize, k: usize| t.data()[i * d + k];
        let k = |x: &Tensor, i: usize, y: &Tensor, j: usize| {
            let mut s = 0.0;
            for c in 0..d {
                s += (at(x, i, c) - at(y, j, c)).powi(2);
            }
            (-s / h).exp()
        };
        let (mut kaa, mut kbb, mut kab) = (0.0, 0.0, 0.0);
        for i in 0..n {
            for j in 0..n {
                kaa += k(a, i, a, j);
            }
        }
        for i in 0..m {
            for j in 0..m {
                kbb += k(b, i, b, j);
            }
        }
        for i in 0..n {
            for j in 0..m {
                kab += k(a, i, b, j);
            }
        }
        (kaa / (n * n) as f64 + kbb / (m * m) as f64 - 2.0 * kab / (n * m) as f64).max(0.0).sqrt()
    }

    #[test]
    fn identical_sets_give_zero() {
        let a = Tensor::randn(&[20, 4], 1.0, &mut ChaCha8Rng::seed_from_u64(0));
        assert!(mmd(&a, &a).unwrap().value < 1e-10);
    }

    #[test]
    fn separated_gaussians() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = Tensor::randn(&[500, 1], 1.0, &mut rng);
        let b = Tensor::randn(&[500, 1], 1.0, &mut rng).map(|v| v + 10.0);
        let r = mmd(&a, &b).unwrap();
        assert!(r.value > 0.9, "{}", r.value);
        assert!((r.value - oracle(&a, &b, r.bandwidth)).abs() < 1e-10);
    }

    #[test]
    fn symmetric_and_matches_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for (n, m) in [(2, 2), (13, 50), (50, 31)] {
            let a = Tensor::randn(&[n, 3], 1.0, &mut rng);
            let b = Tensor::randn(&[m, 3], 1.5, &mut rng).map(|v| v + 0.3);
            let ab = mmd(&a, &b).unwrap();
            let ba = mmd(&b, &a).unwrap();
            assert!((ab.value - ba.value).abs() < 1e-12);
            assert!((ab.value - oracle(&a, &b, ab.bandwidth)).abs() < 1e-10);
        }
    }

    #[test]
    fn degenerate_and_invalid_inputs() {
        let a = Tensor::full(&[5, 2], 3.0);
        assert_eq!(mmd(&a, &a).unwrap().value, 0.0);
        assert!(mmd(&Tensor::zeros(&[1, 2]), &a).is_err());
        assert!(mmd(&Tensor::zeros(&[3, 3]), &a).is_err());
    }
}
