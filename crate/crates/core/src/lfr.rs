//! Low-frequency replacement: pseudo source tasks whose images keep the
//! source high band and take the low band of paired target images.
//!
//! The low band is the centered Chebyshev ball of pixel radius
//! `r = γ·min(H,W)`. [`ReplaceMode::Hfr`] swaps the complementary high band
//! instead. Fusion uses linearity of the transform:
//! `pseudo = s + lowpass(t − s)` for LFR and `pseudo = t + lowpass(s − t)` for HFR.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::episode::{DomainTag, Episode};
use crate::error::{shape_err, Error, Result};
use crate::frequency::{make_mask, reconstruct_with, Polarity};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum GammaDist {
    Fixed { gamma: f64 },
    Uniform { lo: f64, hi: f64 },
}

impl Default for GammaDist {
    fn default() -> Self {
        GammaDist::Uniform { lo: 0.0, hi: 0.2 }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReplaceMode {
    #[default]
    Lfr,
    Hfr,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Pairing {
    /// Source image `j` of class slot `c` pairs with image `j mod len` of the
    /// target's class slot `c`, counting target support then query images.
    #[default]
    IndexAligned,
    /// Each source image pairs with a uniformly drawn image of the target task.
    RandomWithinTask,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LfrConfig {
    pub gamma: GammaDist,
    pub mode: ReplaceMode,
    pub pairing: Pairing,
}

impl LfrConfig {
    pub fn validate(&self) -> Result<()> {
        match self.gamma {
            GammaDist::Fixed { gamma } if !(0.0..=1.0).contains(&gamma) => {
                Err(Error::config("gamma", format!("fixed γ = {gamma} must lie in [0, 1]")))
            }
            GammaDist::Uniform { lo, hi } if !(0.0 <= lo && lo <= hi && hi <= 1.0) => {
                Err(Error::config("gamma", format!("uniform({lo}, {hi}) needs 0 ≤ a ≤ b ≤ 1")))
            }
            _ => Ok(()),
        }
    }

    pub fn sample_gamma<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self.gamma {
            GammaDist::Fixed { gamma } => gamma,
            GammaDist::Uniform { lo, hi } if lo == hi => lo,
            GammaDist::Uniform { lo, hi } => rng.random_range(lo..hi),
        }
    }
}

/// Draws one γ and returns the pixel radius `γ·min(H,W)`.
pub fn sample_radius<R: Rng + ?Sized>(cfg: &LfrConfig, h: usize, w: usize, rng: &mut R) -> f64 {
    cfg.sample_gamma(rng) * h.min(w) as f64
}

/// What one call to [`apply_lfr`] did.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LfrRecord {
    pub gamma: f64,
    pub radius: f64,
    pub mode: ReplaceMode,
    pub pairing: Pairing,
    /// `(source image id, target image id)`, support rows then query rows.
    pub pairs: Vec<(String, String)>,
}

/// Precomputed low-pass weights for one radius and image size.
#[derive(Debug, Clone)]
pub struct BandSwap {
    low: Vec<f64>,
    mode: ReplaceMode,
    dims: Vec<usize>,
}

impl BandSwap {
    pub fn new(dims: &[usize], radius: f64, mode: ReplaceMode) -> Result<Self> {
        let (h, w) = match *dims {
            [_, h, w] => (h, w),
            _ => return Err(shape_err!("band swap expects [C,H,W] images, got {:?}", dims)),
        };
        Ok(BandSwap {
            low: make_mask(h, w, radius, Polarity::Low)?.weights(),
            mode,
            dims: dims.to_vec(),
        })
    }

    /// Fused image before clamping.
    pub fn fuse_raw(&self, src: &Tensor, tar: &Tensor) -> Result<Tensor> {
        if src.shape() != self.dims.as_slice() || tar.shape() != self.dims.as_slice() {
            return Err(shape_err!(
                "band swap of {:?} with {:?}, expected {:?}",
                src.shape(),
                tar.shape(),
                self.dims
            ));
        }
        let (keep, give) = match self.mode {
            ReplaceMode::Lfr => (src, tar),
            ReplaceMode::Hfr => (tar, src),
        };
        let delta = reconstruct_with(&give.zip_map(keep, |a, b| a - b)?, &self.low)?;
        keep.zip_map(&delta, |a, b| a + b)
    }

    /// Fused image clamped to `[0,1]`.
    pub fn fuse(&self, src: &Tensor, tar: &Tensor) -> Result<Tensor> {
        Ok(self.fuse_raw(src, tar)?.map(|v| v.clamp(0.0, 1.0)))
    }
}

/// Target image `(row in combined list, id)` paired with each source image.
fn pair_indices<R: Rng + ?Sized>(src: &Episode, tar: &Episode, pairing: Pairing, rng: &mut R) -> Result<Vec<(bool, usize)>> {
    let rows = |c: usize, k: usize, m: usize| -> Vec<(bool, usize)> {
        (0..k).map(|j| (true, c * k + j)).chain((0..m).map(|j| (false, c * m + j))).collect()
    };
    let mut out = Vec::with_capacity(src.n_way * (src.k_shot + src.m_query));
    match pairing {
        Pairing::IndexAligned => {
            if src.n_way != tar.n_way {
                return Err(Error::InvalidArgument(format!(
                    "index-aligned pairing of a {}-way source task with a {}-way target task",
                    src.n_way, tar.n_way
                )));
            }
            let per_class: Vec<Vec<(bool, usize)>> = (0..tar.n_way).map(|c| rows(c, tar.k_shot, tar.m_query)).collect();
            for c in 0..src.n_way {
                let pool = &per_class[c];
                out.extend((0..src.k_shot).map(|j| pool[j % pool.len()]));
            }
            for c in 0..src.n_way {
                let pool = &per_class[c];
                out.extend((0..src.m_query).map(|j| pool[(src.k_shot + j) % pool.len()]));
            }
        }
        Pairing::RandomWithinTask => {
            let all: Vec<(bool, usize)> = (0..tar.n_way).flat_map(|c| rows(c, tar.k_shot, tar.m_query)).collect();
            let total = src.n_way * (src.k_shot + src.m_query);
            out.extend((0..total).map(|_| all[rng.random_range(0..all.len())]));
        }
    }
    Ok(out)
}

/// Builds the pseudo source task; labels and structure come from `src`.
pub fn apply_lfr<R: Rng + ?Sized>(src: &Episode, tar: &Episode, cfg: &LfrConfig, rng: &mut R) -> Result<(Episode, LfrRecord)> {
    cfg.validate()?;
    let dims = src.image_dims().to_vec();
    if tar.image_dims() != dims.as_slice() {
        return Err(shape_err!(
            "source images {:?} and target images {:?} differ",
            dims,
            tar.image_dims()
        ));
    }
    let (h, w) = (dims[1], dims[2]);
    let gamma = cfg.sample_gamma(rng);
    let radius = gamma * h.min(w) as f64;
    let pairs = pair_indices(src, tar, cfg.pairing, rng)?;
    let swap = BandSwap::new(&dims, radius, cfg.mode)?;
    let n_support = src.support_ids.len();
    let mut fused = Vec::with_capacity(pairs.len());
    let mut record_pairs = Vec::with_capacity(pairs.len());
    for (i, &(in_support, row)) in pairs.iter().enumerate() {
        let (s, sid) = if i < n_support {
            (src.support.slice_outer(i)?, &src.support_ids[i])
        } else {
            (src.query.slice_outer(i - n_support)?, &src.query_ids[i - n_support])
        };
        let (t, tid) = if in_support {
            (tar.support.slice_outer(row)?, &tar.support_ids[row])
        } else {
            (tar.query.slice_outer(row)?, &tar.query_ids[row])
        };
        fused.push(swap.fuse(&s, &t)?);
        record_pairs.push((sid.clone(), tid.clone()));
    }
    let query = fused.split_off(n_support);
    let episode = Episode {
        support: Tensor::stack(&fused)?,
        query: Tensor::stack(&query)?,
        domain: DomainTag::Pseudo,
        ..src.clone()
    };
    let record = LfrRecord {
        gamma,
        radius,
        mode: cfg.mode,
        pairing: cfg.pairing,
        pairs: record_pairs,
    };
    Ok((episode, record))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frequency::fft2;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn episode(seed: u64, n: usize, k: usize, m: usize, size: usize) -> Episode {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mk = |count: usize, rng: &mut ChaCha8Rng| Tensor::rand_uniform(&[count, 3, size, size], 0.1, 0.9, rng);
        let support = mk(n * k, &mut rng);
        let query = mk(n * m, &mut rng);
        Episode {
            n_way: n,
            k_shot: k,
            m_query: m,
            support,
            support_labels: (0..n).flat_map(|c| vec![c; k]).collect(),
            query,
            query_labels: (0..n).flat_map(|c| vec![c; m]).collect(),
            domain: DomainTag::Source,
            class_ids: (0..n).map(|c| format!("s{seed}c{c}")).collect(),
            support_ids: (0..n * k).map(|i| format!("s{seed}s{i}")).collect(),
            query_ids: (0..n * m).map(|i| format!("s{seed}q{i}")).collect(),
        }
    }

    fn fixed(gamma: f64, mode: ReplaceMode) -> LfrConfig {
        LfrConfig {
            gamma: GammaDist::Fixed { gamma },
            mode,
            pairing: Pairing::IndexAligned,
        }
    }

    #[test]
    fn radius_rule() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let r = sample_radius(&fixed(0.1, ReplaceMode::Lfr), 224, 224, &mut rng);
        assert!((r - 22.4).abs() < 1e-9);
        assert_eq!(sample_radius(&fixed(0.0, ReplaceMode::Lfr), 224, 224, &mut rng), 0.0);
        let cfg = LfrConfig::default();
        let n = 100_000;
        let mean = (0..n).map(|_| sample_radius(&cfg, 100, 100, &mut rng)).sum::<f64>() / n as f64;
        assert!((mean - 10.0).abs() < 0.1, "{mean}");
    }

    #[test]
    fn invalid_gamma_rejected() {
        assert!(fixed(1.5, ReplaceMode::Lfr).validate().is_err());
        let cfg = LfrConfig {
            gamma: GammaDist::Uniform { lo: 0.3, hi: 0.2 },
            ..LfrConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn self_replacement_is_identity() {
        let src = episode(1, 3, 2, 4, 12);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (p, _) = apply_lfr(&src, &src, &LfrConfig::default(), &mut rng).unwrap();
        assert!(p.support.max_abs_diff(&src.support).unwrap() < 1e-6);
        assert!(p.query.max_abs_diff(&src.query).unwrap() < 1e-6);
        assert_eq!(p.query_labels, src.query_labels);
        assert_eq!(p.domain, DomainTag::Pseudo);
    }

    #[test]
    fn full_radius_returns_target() {
        let src = episode(1, 2, 1, 3, 10);
        let tar = episode(2, 2, 1, 3, 10);
        let (p, _) = apply_lfr(&src, &tar, &fixed(1.0, ReplaceMode::Lfr), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!(p.support.max_abs_diff(&tar.support).unwrap() < 1e-6);
        assert!(p.query.max_abs_diff(&tar.query).unwrap() < 1e-6);
    }

    #[test]
    fn zero_gamma_swaps_channel_means() {
        let src = episode(3, 2, 1, 2, 9);
        let tar = episode(4, 2, 1, 2, 9);
        let (p, _) = apply_lfr(&src, &tar, &fixed(0.0, ReplaceMode::Lfr), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        for row in 0..2 {
            let (s, t) = (src.support.slice_outer(row).unwrap(), tar.support.slice_outer(row).unwrap());
            let got = p.support.slice_outer(row).unwrap();
            let plane = 81;
            for c in 0..3 {
                let mean = |x: &Tensor| x.data()[c * plane..(c + 1) * plane].iter().sum::<f64>() / plane as f64;
                let shift = mean(&t) - mean(&s);
                for i in 0..plane {
                    let want = (s.data()[c * plane + i] + shift).clamp(0.0, 1.0);
                    assert!((got.data()[c * plane + i] - want).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn idempotent_against_same_target() {
        // Narrow pixel ranges keep every fusion inside [0,1], so clamping is inert.
        let narrow = |mut e: Episode| {
            e.support = e.support.map(|v| 0.4 + 0.2 * v);
            e.query = e.query.map(|v| 0.4 + 0.2 * v);
            e
        };
        let src = narrow(episode(5, 2, 1, 3, 16));
        let tar = narrow(episode(6, 2, 1, 3, 16));
        let cfg = fixed(0.15, ReplaceMode::Lfr);
        let (once, _) = apply_lfr(&src, &tar, &cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let swap = BandSwap::new(&[3, 16, 16], 0.15 * 16.0, ReplaceMode::Lfr).unwrap();
        for row in 0..2 {
            let s = src.support.slice_outer(row).unwrap();
            let t = tar.support.slice_outer(row).unwrap();
            let a = swap.fuse_raw(&s, &t).unwrap();
            let b = swap.fuse_raw(&a, &t).unwrap();
            assert!(a.max_abs_diff(&b).unwrap() < 1e-6);
        }
        let (twice, _) = apply_lfr(&once, &tar, &cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!(once.support.max_abs_diff(&twice.support).unwrap() < 1e-6);
        assert!(once.query.max_abs_diff(&twice.query).unwrap() < 1e-6);
    }

    #[test]
    fn band_support_and_energy() {
        let s = Tensor::rand_uniform(&[3, 12, 12], 0.0, 1.0, &mut ChaCha8Rng::seed_from_u64(7));
        let t = Tensor::rand_uniform(&[3, 12, 12], 0.0, 1.0, &mut ChaCha8Rng::seed_from_u64(8));
        let r = 3.0;
        let fused = BandSwap::new(&[3, 12, 12], r, ReplaceMode::Lfr).unwrap().fuse_raw(&s, &t).unwrap();
        let low = make_mask(12, 12, r, Polarity::Low).unwrap();
        let (fs, ss, ts) = (
            fft2(&fused).unwrap().centered().unwrap(),
            fft2(&s).unwrap().centered().unwrap(),
            fft2(&t).unwrap().centered().unwrap(),
        );
        let mut expected_energy = 0.0;
        for c in 0..3 {
            for p in 0..144 {
                let k = c * 144 + p;
                let want = if low.bits()[p] { &ts } else { &ss };
                assert!((fs.real().data()[k] - want.real().data()[k]).abs() < 1e-6);
                assert!((fs.imag().data()[k] - want.imag().data()[k]).abs() < 1e-6);
                expected_energy += want.real().data()[k].powi(2) + want.imag().data()[k].powi(2);
            }
        }
        assert!((fs.energy() - expected_energy).abs() / expected_energy < 1e-8);
    }

    #[test]
    fn hfr_keeps_source_low_band() {
        let s = Tensor::rand_uniform(&[3, 8, 8], 0.0, 1.0, &mut ChaCha8Rng::seed_from_u64(1));
        let t = Tensor::rand_uniform(&[3, 8, 8], 0.0, 1.0, &mut ChaCha8Rng::seed_from_u64(2));
        let lfr = BandSwap::new(&[3, 8, 8], 2.0, ReplaceMode::Lfr).unwrap().fuse_raw(&t, &s).unwrap();
        let hfr = BandSwap::new(&[3, 8, 8], 2.0, ReplaceMode::Hfr).unwrap().fuse_raw(&s, &t).unwrap();
        assert!(lfr.max_abs_diff(&hfr).unwrap() < 1e-12);
    }

    #[test]
    fn pairing_rules() {
        let src = episode(1, 3, 1, 16, 8);
        let tar = episode(2, 3, 1, 4, 8);
        let (_, rec) = apply_lfr(&src, &tar, &fixed(0.1, ReplaceMode::Lfr), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(rec.pairs.len(), 3 + 48);
        // Class slot 1 target images: support s1, then queries q4..q7.
        assert_eq!(rec.pairs[1].1, "s2s1");
        assert_eq!(rec.pairs[3 + 16].1, "s2q4");
        assert_eq!(rec.pairs[3 + 16 + 4].1, "s2s1");
        let four_way = episode(3, 4, 1, 4, 8);
        assert!(apply_lfr(&src, &four_way, &fixed(0.1, ReplaceMode::Lfr), &mut ChaCha8Rng::seed_from_u64(0)).is_err());
        let random = LfrConfig {
            pairing: Pairing::RandomWithinTask,
            ..LfrConfig::default()
        };
        assert!(apply_lfr(&src, &four_way, &random, &mut ChaCha8Rng::seed_from_u64(0)).is_ok());
        let small = episode(4, 3, 1, 16, 6);
        assert!(matches!(
            apply_lfr(&src, &small, &random, &mut ChaCha8Rng::seed_from_u64(0)),
            Err(Error::Shape(_))
        ));
    }
}
