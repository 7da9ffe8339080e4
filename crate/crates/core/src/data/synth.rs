//! Synthetic two-domain benchmark.
//!
//! Every image is `0.5 + style + signature + noise`, clamped to `[0,1]`:
//!
//! * the class signature is a few cosines on high-frequency bins
//!   (normalized Chebyshev radius in `signature_band`) with class-specific
//!   amplitudes and phases, identical in both domains;
//! * the style lives on the DC bin and a few low-frequency bins (normalized
//!   radius below `style_band`). Each domain has its own base style. Source
//!   classes additionally carry a class-specific style offset, so the low band
//!   is a spurious class cue in the source domain only; target images draw
//!   their style offset per image;
//! * the noise is white Gaussian, seeded by class and image index.

use std::path::{Path, PathBuf};

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{write_manifest, Benchmark, ClassImages, DatasetSplit, ImageRef, Manifest, SplitEntry, SplitRole};
use crate::error::{Error, Result};
use crate::frequency::{normalized_radius, save_image};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub image_size: usize,
    pub source_classes: usize,
    pub source_images: usize,
    pub target_train_classes: usize,
    pub target_train_images: usize,
    pub target_test_classes: usize,
    pub target_test_images: usize,
    /// Normalized radius range `[lo, hi)` of class-signature bins.
    pub signature_band: (f64, f64),
    /// Cosines per class signature.
    pub signature_bins: usize,
    pub signature_amplitude: f64,
    /// Normalized radius below which style bins live.
    pub style_band: f64,
    /// Non-DC cosines carrying style.
    pub style_bins: usize,
    /// Spread of the per-class style offsets in the source domain.
    pub style_amplitude: f64,
    /// Spread of the per-domain base styles.
    pub domain_shift: f64,
    /// Spread of per-image style offsets in the source domain.
    pub source_jitter: f64,
    /// Spread of per-image style offsets in the target domain.
    pub target_jitter: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            image_size: 32,
            source_classes: 20,
            source_images: 60,
            target_train_classes: 10,
            target_train_images: 5,
            target_test_classes: 10,
            target_test_images: 30,
            signature_band: (0.5, 1.0),
            signature_bins: 3,
            signature_amplitude: 0.06,
            style_band: 0.2,
            style_bins: 3,
            style_amplitude: 0.06,
            domain_shift: 0.06,
            source_jitter: 0.0,
            target_jitter: 0.06,
            noise_sigma: 0.05,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Source,
    Target,
}

/// A cosine `a_c · cos(2π(du·y/H + dv·x/W) + φ_c)` per channel `c`.
#[derive(Debug, Clone, PartialEq)]
struct Wave {
    du: i64,
    dv: i64,
    amp: [f64; 3],
    phase: [f64; 3],
}

/// Style as per-channel DC offsets plus `(cos, sin)` weights per style bin.
#[derive(Debug, Clone, PartialEq)]
pub struct StyleCoefficients {
    pub values: Vec<f64>,
}

impl StyleCoefficients {
    fn zeros(bins: usize) -> Self {
        StyleCoefficients {
            values: vec![0.0; 3 + 6 * bins],
        }
    }

    fn add_gaussian<R: Rng>(&mut self, std: f64, rng: &mut R) {
        for v in &mut self.values {
            let z: f64 = rng.sample(StandardNormal);
            *v += std * z;
        }
    }
}

/// Every random draw of a benchmark, fixed by the config.
#[derive(Debug, Clone)]
pub struct SynthModel {
    cfg: SynthConfig,
    style_bins: Vec<(i64, i64)>,
    signatures: Vec<Vec<Wave>>,
    base: [StyleCoefficients; 2],
}

/// SplitMix64 finalizer over a tuple of tags.
fn mix(parts: &[u64]) -> u64 {
    let mut h: u64 = 0x9E37_79B9_7F4A_7C15;
    for &p in parts {
        h ^= p.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_add(h << 6).wrapping_add(h >> 2);
        let mut z = h;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        h = z ^ (z >> 31);
    }
    h
}

fn rng_for(parts: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(parts))
}

const TAG_LAYOUT: u64 = 1;
const TAG_SIGNATURE: u64 = 2;
const TAG_BASE: u64 = 3;
const TAG_CLASS_STYLE: u64 = 4;
const TAG_IMAGE_STYLE: u64 = 5;
const TAG_NOISE: u64 = 6;

/// Half-plane representatives `(du, dv)` whose normalized radius satisfies `keep`,
/// excluding DC and Nyquist offsets.
fn bins_where(size: usize, keep: impl Fn(f64) -> bool) -> Vec<(i64, i64)> {
    let n = size as i64;
    let lim = (n - 1) / 2;
    let mut out = Vec::new();
    for du in 0..=lim {
        for dv in -lim..=lim {
            if du == 0 && dv <= 0 {
                continue;
            }
            let d = du.unsigned_abs().max(dv.unsigned_abs()) as usize;
            if keep(normalized_radius(d, size, size)) {
                out.push((du, dv));
            }
        }
    }
    out
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.signature_band;
        if self.image_size < 8 {
            return Err(Error::config("image_size", "must be at least 8"));
        }
        if !(0.0..1.0).contains(&lo) || hi <= lo || hi > 1.0 {
            return Err(Error::config("signature_band", "needs 0 ≤ lo < hi ≤ 1"));
        }
        if !(self.style_band > 0.0) || self.style_band > lo {
            return Err(Error::config(
                "style_band",
                format!("must lie in (0, {lo}] so style and signature bins are disjoint"),
            ));
        }
        for (field, n) in [
            ("source_classes", self.source_classes),
            ("source_images", self.source_images),
            ("target_train_classes", self.target_train_classes),
            ("target_train_images", self.target_train_images),
            ("target_test_classes", self.target_test_classes),
            ("target_test_images", self.target_test_images),
            ("signature_bins", self.signature_bins),
        ] {
            if n == 0 {
                return Err(Error::config(field, "must be positive"));
            }
        }
        for (field, v) in [
            ("signature_amplitude", self.signature_amplitude),
            ("style_amplitude", self.style_amplitude),
            ("domain_shift", self.domain_shift),
            ("source_jitter", self.source_jitter),
            ("target_jitter", self.target_jitter),
            ("noise_sigma", self.noise_sigma),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::config(field, "must be finite and ≥ 0"));
            }
        }
        let sig = self.signature_bins_available();
        if sig.len() < self.signature_bins {
            return Err(Error::config(
                "signature_bins",
                format!("only {} bins exist in the signature band", sig.len()),
            ));
        }
        let style = self.style_bins_available();
        if style.len() < self.style_bins {
            return Err(Error::config(
                "style_bins",
                format!("only {} bins exist below the style band", style.len()),
            ));
        }
        Ok(())
    }

    fn signature_bins_available(&self) -> Vec<(i64, i64)> {
        let (lo, hi) = self.signature_band;
        bins_where(self.image_size, |d| d >= lo && (d < hi || hi >= 1.0))
    }

    fn style_bins_available(&self) -> Vec<(i64, i64)> {
        bins_where(self.image_size, |d| d < self.style_band)
    }

    pub fn total_classes(&self) -> usize {
        self.source_classes + self.target_train_classes + self.target_test_classes
    }
}

fn draw_waves<R: Rng>(bins: &[(i64, i64)], count: usize, amplitude: f64, rng: &mut R) -> Vec<Wave> {
    let picks = sample(rng, bins.len(), count).into_vec();
    picks
        .into_iter()
        .map(|i| {
            let (du, dv) = bins[i];
            Wave {
                du,
                dv,
                amp: std::array::from_fn(|_| amplitude * rng.random_range(0.5..1.0)),
                phase: std::array::from_fn(|_| rng.random_range(0.0..std::f64::consts::TAU)),
            }
        })
        .collect()
}

impl SynthModel {
    pub fn new(cfg: &SynthConfig) -> Result<Self> {
        cfg.validate()?;
        let seed = cfg.seed;
        let mut layout = rng_for(&[seed, TAG_LAYOUT]);
        let style_all = cfg.style_bins_available();
        let style_bins: Vec<(i64, i64)> = sample(&mut layout, style_all.len(), cfg.style_bins)
            .into_iter()
            .map(|i| style_all[i])
            .collect();
        let sig_all = cfg.signature_bins_available();
        let signatures = (0..cfg.total_classes())
            .map(|c| {
                let mut rng = rng_for(&[seed, TAG_SIGNATURE, c as u64]);
                draw_waves(&sig_all, cfg.signature_bins, cfg.signature_amplitude, &mut rng)
            })
            .collect();
        let base = [Domain::Source, Domain::Target].map(|d| {
            let mut s = StyleCoefficients::zeros(cfg.style_bins);
            s.add_gaussian(cfg.domain_shift, &mut rng_for(&[seed, TAG_BASE, d as u64]));
            s
        });
        Ok(SynthModel {
            cfg: cfg.clone(),
            style_bins,
            signatures,
            base,
        })
    }

    pub fn config(&self) -> &SynthConfig {
        &self.cfg
    }

    /// Style of image `index` of global class `class` in `domain`.
    pub fn style(&self, domain: Domain, class: usize, index: usize) -> StyleCoefficients {
        let seed = self.cfg.seed;
        let mut s = self.base[domain as usize].clone();
        let jitter = match domain {
            Domain::Source => {
                let mut rng = rng_for(&[seed, TAG_CLASS_STYLE, class as u64]);
                s.add_gaussian(self.cfg.style_amplitude, &mut rng);
                self.cfg.source_jitter
            }
            Domain::Target => self.cfg.target_jitter,
        };
        if jitter > 0.0 {
            let mut rng = rng_for(&[seed, TAG_IMAGE_STYLE, domain as u64, class as u64, index as u64]);
            s.add_gaussian(jitter, &mut rng);
        }
        s
    }

    /// Renders without clamping or quantization.
    pub fn render_raw(&self, class: usize, index: usize, style: &StyleCoefficients) -> Tensor {
        let n = self.cfg.image_size;
        let plane = n * n;
        let mut data = vec![0.5; 3 * plane];
        let tau = std::f64::consts::TAU;
        let angle = |du: i64, dv: i64, y: usize, x: usize| tau * (du as f64 * y as f64 + dv as f64 * x as f64) / n as f64;
        for c in 0..3 {
            let ch = &mut data[c * plane..(c + 1) * plane];
            ch.iter_mut().for_each(|v| *v += style.values[c]);
            for (b, &(du, dv)) in self.style_bins.iter().enumerate() {
                let (wc, ws) = (style.values[3 + 6 * b + 2 * c], style.values[3 + 6 * b + 2 * c + 1]);
                for y in 0..n {
                    for x in 0..n {
                        let a = angle(du, dv, y, x);
                        ch[y * n + x] += wc * a.cos() + ws * a.sin();
                    }
                }
            }
            for w in &self.signatures[class] {
                for y in 0..n {
                    for x in 0..n {
                        ch[y * n + x] += w.amp[c] * (angle(w.du, w.dv, y, x) + w.phase[c]).cos();
                    }
                }
            }
        }
        if self.cfg.noise_sigma > 0.0 {
            let mut rng = rng_for(&[self.cfg.seed, TAG_NOISE, class as u64, index as u64]);
            for v in &mut data {
                let z: f64 = rng.sample(StandardNormal);
                *v += self.cfg.noise_sigma * z;
            }
        }
        Tensor::from_parts(vec![3, n, n], data)
    }

    /// Image `index` of global class `class` in `domain`, clamped to `[0,1]`.
    pub fn render(&self, domain: Domain, class: usize, index: usize) -> Tensor {
        let style = self.style(domain, class, index);
        self.render_raw(class, index, &style).map(|v| v.clamp(0.0, 1.0))
    }

    /// `(split name, role, domain, first global class, classes, images per class)`.
    fn layout(&self) -> [(&'static str, SplitRole, Domain, usize, usize, usize); 3] {
        let c = &self.cfg;
        [
            ("source", SplitRole::SourceTrain, Domain::Source, 0, c.source_classes, c.source_images),
            (
                "target_train",
                SplitRole::TargetTrain,
                Domain::Target,
                c.source_classes,
                c.target_train_classes,
                c.target_train_images,
            ),
            (
                "target_test",
                SplitRole::TargetTest,
                Domain::Target,
                c.source_classes + c.target_train_classes,
                c.target_test_classes,
                c.target_test_images,
            ),
        ]
    }
}

/// Renders image `index` of global class `class` as it appears in `domain`.
pub fn render_image(cfg: &SynthConfig, domain: Domain, class: usize, index: usize) -> Result<Tensor> {
    Ok(SynthModel::new(cfg)?.render(domain, class, index))
}

fn quantize(t: &Tensor) -> Tensor {
    t.map(|v| (v.clamp(0.0, 1.0) * 255.0).round() / 255.0)
}

fn class_id(split: &str, k: usize) -> String {
    format!("{split}_{k:03}")
}

fn image_rel_path(split: &str, class: &str, i: usize) -> String {
    format!("{split}/{class}/{i:03}.png")
}

/// The benchmark held in memory, quantized to 8 bits as if written to disk.
pub fn synthetic_splits(cfg: &SynthConfig) -> Result<Benchmark> {
    let model = SynthModel::new(cfg)?;
    let mut splits = std::collections::BTreeMap::new();
    for (name, role, domain, first, classes, images) in model.layout() {
        let classes = (0..classes)
            .map(|k| {
                let id = class_id(name, k);
                let images = (0..images)
                    .map(|i| {
                        let img = quantize(&model.render(domain, first + k, i));
                        ImageRef::in_memory(image_rel_path(name, &id, i), img)
                    })
                    .collect();
                ClassImages { id, images }
            })
            .collect();
        splits.insert(
            name.to_string(),
            DatasetSplit {
                name: name.to_string(),
                role,
                classes,
            },
        );
    }
    Benchmark::from_splits(splits)
}

/// Writes PNG images and `manifest.json` under `out_dir`; returns the manifest path.
pub fn generate_synthetic(cfg: &SynthConfig, out_dir: &Path) -> Result<PathBuf> {
    let model = SynthModel::new(cfg)?;
    let mut manifest = Manifest::new();
    for (name, role, domain, first, classes, images) in model.layout() {
        let mut entry = SplitEntry {
            role,
            images_per_class: Some(images),
            classes: Default::default(),
        };
        for k in 0..classes {
            let id = class_id(name, k);
            let dir = out_dir.join(name).join(&id);
            std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            let mut paths = Vec::with_capacity(images);
            for i in 0..images {
                let rel = image_rel_path(name, &id, i);
                save_image(&out_dir.join(&rel), &model.render(domain, first + k, i))?;
                paths.push(rel);
            }
            entry.classes.insert(id, paths);
        }
        manifest.insert(name.to_string(), entry);
    }
    let path = out_dir.join("manifest.json");
    write_manifest(&path, &manifest)?;
    let cfg_path = out_dir.join("synth_config.json");
    std::fs::write(&cfg_path, serde_json::to_string_pretty(cfg)?).map_err(|e| Error::io(&cfg_path, e))?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frequency::{centered_band_weights, fft2};

    fn quiet() -> SynthConfig {
        SynthConfig {
            noise_sigma: 0.0,
            source_jitter: 0.0,
            target_jitter: 0.0,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn noiseless_images_of_a_class_coincide() {
        let m = SynthModel::new(&quiet()).unwrap();
        for domain in [Domain::Source, Domain::Target] {
            assert_eq!(m.render(domain, 3, 0), m.render(domain, 3, 7));
        }
    }

    #[test]
    fn domains_share_the_high_band() {
        let cfg = SynthConfig::default();
        let m = SynthModel::new(&cfg).unwrap();
        let n = cfg.image_size;
        let (s, t) = (m.style(Domain::Source, 4, 2), m.style(Domain::Target, 4, 2));
        let a = fft2(&m.render_raw(4, 2, &s)).unwrap().centered().unwrap();
        let b = fft2(&m.render_raw(4, 2, &t)).unwrap().centered().unwrap();
        let high = centered_band_weights(n, n, 0.5, 1.0);
        let low = centered_band_weights(n, n, 0.0, cfg.style_band);
        let (mut hi_diff, mut lo_diff) = (0.0f64, 0.0f64);
        for c in 0..3 {
            for p in 0..n * n {
                let k = c * n * n + p;
                let d = (a.real().data()[k] - b.real().data()[k]).hypot(a.imag().data()[k] - b.imag().data()[k]);
                if high[p] == 1.0 {
                    hi_diff = hi_diff.max(d);
                }
                if low[p] == 1.0 {
                    lo_diff = lo_diff.max(d);
                }
            }
        }
        assert!(hi_diff < 1e-6, "{hi_diff}");
        assert!(lo_diff > 1e-3, "{lo_diff}");
    }

    #[test]
    fn overlapping_bands_rejected() {
        let cfg = SynthConfig {
            style_band: 0.6,
            ..SynthConfig::default()
        };
        assert!(matches!(SynthModel::new(&cfg), Err(Error::Config { .. })));
    }

    #[test]
    fn high_band_energies_separate_classes() {
        // Nearest class centroid on per-bin high-band energies, noise off.
        let cfg = quiet();
        let m = SynthModel::new(&cfg).unwrap();
        let n = cfg.image_size;
        let high = centered_band_weights(n, n, cfg.signature_band.0, cfg.signature_band.1);
        let features = |img: &Tensor| -> Vec<f64> {
            let s = fft2(img).unwrap().centered().unwrap();
            (0..n * n)
                .filter(|&p| high[p] == 1.0)
                .map(|p| (0..3).map(|c| s.real().data()[c * n * n + p].powi(2) + s.imag().data()[c * n * n + p].powi(2)).sum())
                .collect()
        };
        let classes = cfg.source_classes;
        let centroids: Vec<Vec<f64>> = (0..classes).map(|c| features(&m.render(Domain::Source, c, 0))).collect();
        for c in 0..classes {
            let f = features(&m.render(Domain::Source, c, 5));
            let best = (0..classes)
                .min_by(|&a, &b| {
                    let d = |k: usize| f.iter().zip(&centroids[k]).map(|(x, y)| (x - y).powi(2)).sum::<f64>();
                    d(a).total_cmp(&d(b))
                })
                .unwrap();
            assert_eq!(best, c);
        }
    }

    #[test]
    fn in_memory_splits_have_configured_sizes() {
        let cfg = SynthConfig {
            source_classes: 3,
            source_images: 4,
            target_train_classes: 2,
            target_test_classes: 2,
            target_test_images: 3,
            ..SynthConfig::default()
        };
        let b = synthetic_splits(&cfg).unwrap();
        assert_eq!(b.source.num_images(), 12);
        assert_eq!(b.target_train.num_images(), 10);
        assert_eq!(b.target_test.num_images(), 6);
        for (_, img) in b.source.images() {
            let t = img.load().unwrap();
            assert!(t.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }
}
