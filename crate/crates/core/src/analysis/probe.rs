//! Accuracy on band-limited copies of tasks.

use serde::{Deserialize, Serialize};

use crate::data::DatasetSplit;
use crate::episode::{sample_episode, DomainTag, Episode, EpisodeClassifier};
use crate::error::{Error, Result};
use crate::frequency::{split_bands_raw, value_range};
use crate::rng::{stream_rng, Stream};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FreqProbeReport {
    pub gamma_probe: f64,
    /// Pixel radius `gamma_probe · min(H,W)` of the low band.
    pub radius: f64,
    pub n_tasks: usize,
    pub original_acc: f64,
    pub low_acc: f64,
    pub high_acc: f64,
    pub low_ratio: f64,
    pub high_ratio: f64,
}

/// Low-only and high-only copies of every image, each clamped to its
/// source image's value range.
pub fn band_variants(batch: &Tensor, radius: f64) -> Result<(Tensor, Tensor)> {
    let n = batch.shape()[0];
    let mut low = Vec::with_capacity(n);
    let mut high = Vec::with_capacity(n);
    for i in 0..n {
        let img = batch.slice_outer(i)?;
        let (lo_min, lo_max) = value_range(&img);
        let (l, h) = split_bands_raw(&img, radius)?;
        low.push(l.map(|v| v.clamp(lo_min, lo_max)));
        high.push(h.map(|v| v.clamp(lo_min, lo_max)));
    }
    Ok((Tensor::stack(&low)?, Tensor::stack(&high)?))
}

fn with_images(ep: &Episode, support: Tensor, query: Tensor) -> Episode {
    Episode {
        support,
        query,
        ..ep.clone()
    }
}

fn hits(preds: &[usize], labels: &[usize]) -> f64 {
    preds.iter().zip(labels).filter(|(p, y)| p == y).count() as f64 / labels.len() as f64
}

/// Mean accuracy on original, low-only and high-only versions of `n_tasks` tasks.
#[allow(clippy::too_many_arguments)]
pub fn frequency_probe<C: EpisodeClassifier + ?Sized>(
    classifier: &C,
    split: &DatasetSplit,
    gamma_probe: f64,
    (n, k, m): (usize, usize, usize),
    n_tasks: usize,
    seed: u64,
) -> Result<FreqProbeReport> {
    if !(0.0..=1.0).contains(&gamma_probe) {
        return Err(Error::config("gamma_probe", format!("{gamma_probe} must lie in [0, 1]")));
    }
    if n_tasks == 0 {
        return Err(Error::InvalidArgument("frequency probe over zero tasks".into()));
    }
    let mut acc = [0.0; 3];
    let mut radius = 0.0;
    for t in 0..n_tasks {
        let mut rng = stream_rng(seed, Stream::ProbeTask(t as u64));
        let ep = sample_episode(split, n, k, m, DomainTag::Source, &mut rng)?;
        let dims = ep.image_dims();
        radius = gamma_probe * dims[1].min(dims[2]) as f64;
        let (s_low, s_high) = band_variants(&ep.support, radius)?;
        let (q_low, q_high) = band_variants(&ep.query, radius)?;
        let variants = [
            ep.clone(),
            with_images(&ep, s_low, q_low),
            with_images(&ep, s_high, q_high),
        ];
        for (slot, v) in variants.iter().enumerate() {
            // Each variant sees the same classifier randomness.
            let mut crng = stream_rng(seed ^ 0x5eed, Stream::ProbeTask(t as u64));
            acc[slot] += hits(&classifier.classify(v, &mut crng)?, &v.query_labels);
        }
    }
    let [orig, low, high] = acc.map(|a| a / n_tasks as f64);
    if orig == 0.0 {
        return Err(Error::InvalidArgument("original-task accuracy is zero; ratios are undefined".into()));
    }
    Ok(FreqProbeReport {
        gamma_probe,
        radius,
        n_tasks,
        original_acc: orig,
        low_acc: low,
        high_acc: high,
        low_ratio: low / orig,
        high_ratio: high / orig,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{ClassImages, ImageRef, SplitRole};
    use crate::episode::OracleClassifier;
    use crate::rng::StreamRng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn split() -> DatasetSplit {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        DatasetSplit {
            name: "probe".into(),
            role: SplitRole::SourceTrain,
            classes: (0..6)
                .map(|c| ClassImages {
                    id: format!("c{c}"),
                    images: (0..6)
                        .map(|i| ImageRef::in_memory(format!("{c}/{i}"), Tensor::rand_uniform(&[3, 8, 8], 0.0, 1.0, &mut rng)))
                        .collect(),
                })
                .collect(),
        }
    }

    #[test]
    fn oracle_ratios_are_one() {
        let r = frequency_probe(&OracleClassifier, &split(), 0.1, (5, 1, 2), 10, 0).unwrap();
        assert_eq!((r.low_ratio, r.high_ratio), (1.0, 1.0));
    }

    /// Nearest support image by raw pixel distance.
    struct PixelNn;
    impl EpisodeClassifier for PixelNn {
        fn classify(&self, ep: &Episode, _: &mut StreamRng) -> Result<Vec<usize>> {
            let d = ep.support.numel() / ep.support.shape()[0];
            Ok(ep
                .query
                .data()
                .chunks(d)
                .map(|q| {
                    let (best, _) = ep.support.data().chunks(d).enumerate().fold((0, f64::INFINITY), |b, (i, s)| {
                        let dist: f64 = q.iter().zip(s).map(|(x, y)| (x - y).powi(2)).sum();
                        if dist < b.1 {
                            (i, dist)
                        } else {
                            b
                        }
                    });
                    ep.support_labels[best]
                })
                .collect())
        }
    }

    #[test]
    fn full_radius_low_band_is_original() {
        let r = frequency_probe(&PixelNn, &split(), 1.0, (5, 1, 2), 10, 1).unwrap();
        assert_eq!(r.low_ratio, 1.0);
    }

    #[test]
    fn bands_recompose_before_clamping() {
        let x = Tensor::rand_uniform(&[3, 8, 8], 0.0, 1.0, &mut ChaCha8Rng::seed_from_u64(3));
        let (l, h) = split_bands_raw(&x, 1.6).unwrap();
        let sum = l.zip_map(&h, |a, b| a + b).unwrap();
        assert!(sum.max_abs_diff(&x).unwrap() < 1e-6);
    }

    #[test]
    fn zero_original_accuracy_is_an_error() {
        struct Wrong;
        impl EpisodeClassifier for Wrong {
            fn classify(&self, ep: &Episode, _: &mut StreamRng) -> Result<Vec<usize>> {
                Ok(ep.query_labels.iter().map(|&y| (y + 1) % ep.n_way).collect())
            }
        }
        assert!(frequency_probe(&Wrong, &split(), 0.1, (5, 1, 2), 3, 0).is_err());
    }
}
