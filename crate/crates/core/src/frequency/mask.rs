//! Centered Chebyshev-radius frequency masks.

use serde::{Deserialize, Serialize};

use super::fft::half_rows;
use super::spectrum::{fft2, ifft2, Spectrum};
use crate::error::{shape_err, Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    Low,
    High,
}

/// Binary mask on the centered `H × W` grid.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyMask {
    height: usize,
    width: usize,
    radius: f64,
    polarity: Polarity,
    bits: Vec<bool>,
}

/// Chebyshev distance of centered bin `(u,v)` from `(⌊H/2⌋, ⌊W/2⌋)`.
pub fn centered_distance(u: usize, v: usize, h: usize, w: usize) -> usize {
    u.abs_diff(h / 2).max(v.abs_diff(w / 2))
}

/// Chebyshev distance of an uncentered bin, measured after centering.
pub fn uncentered_distance(u: usize, v: usize, h: usize, w: usize) -> usize {
    centered_distance((u + h / 2) % h, (v + w / 2) % w, h, w)
}

/// Pixel radius divided by `min(H,W)/2`, so `1.0` reaches the nearest edge.
pub fn normalized_radius(pixels: usize, h: usize, w: usize) -> f64 {
    pixels as f64 / (h.min(w) as f64 / 2.0)
}

/// Whether a normalized radius falls in the band `[lo, hi)`; `hi ≥ 1` also
/// admits everything beyond the edge so that `[0, 1]` covers the corners.
pub fn in_band(d: f64, lo: f64, hi: f64) -> bool {
    d >= lo && (d < hi || hi >= 1.0)
}

pub fn validate_band(lo: f64, hi: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) || lo >= hi {
        return Err(Error::InvalidArgument(format!(
            "band [{lo}, {hi}) must satisfy 0 ≤ lo < hi ≤ 1"
        )));
    }
    Ok(())
}

/// `{0,1}` weights over the half layout `[⌊H/2⌋+1, W]` selecting a normalized band.
///
/// Each stored bin is placed by its full-spectrum centered coordinates.
pub fn half_band_weights(h: usize, w: usize, lo: f64, hi: f64) -> Vec<f64> {
    let hh = half_rows(h);
    let mut out = Vec::with_capacity(hh * w);
    for u in 0..hh {
        for v in 0..w {
            let d = normalized_radius(uncentered_distance(u, v, h, w), h, w);
            out.push(if in_band(d, lo, hi) { 1.0 } else { 0.0 });
        }
    }
    out
}

/// `{0,1}` weights over the centered full grid selecting a normalized band.
pub fn centered_band_weights(h: usize, w: usize, lo: f64, hi: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(h * w);
    for u in 0..h {
        for v in 0..w {
            let d = normalized_radius(centered_distance(u, v, h, w), h, w);
            out.push(if in_band(d, lo, hi) { 1.0 } else { 0.0 });
        }
    }
    out
}

/// Builds a low- or high-pass mask of pixel radius `r`.
pub fn make_mask(height: usize, width: usize, radius: f64, polarity: Polarity) -> Result<FrequencyMask> {
    if !(radius >= 0.0) {
        return Err(Error::InvalidArgument(format!("mask radius {radius} must be ≥ 0")));
    }
    if height == 0 || width == 0 {
        return Err(shape_err!("mask of size {height}×{width}"));
    }
    let mut bits = Vec::with_capacity(height * width);
    for u in 0..height {
        for v in 0..width {
            let low = centered_distance(u, v, height, width) as f64 <= radius;
            bits.push(match polarity {
                Polarity::Low => low,
                Polarity::High => !low,
            });
        }
    }
    Ok(FrequencyMask {
        height,
        width,
        radius,
        polarity,
        bits,
    })
}

impl FrequencyMask {
    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn polarity(&self) -> Polarity {
        self.polarity
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, u: usize, v: usize) -> bool {
        self.bits[u * self.width + v]
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn complement(&self) -> FrequencyMask {
        FrequencyMask {
            polarity: match self.polarity {
                Polarity::Low => Polarity::High,
                Polarity::High => Polarity::Low,
            },
            bits: self.bits.iter().map(|b| !b).collect(),
            ..self.clone()
        }
    }

    pub fn weights(&self) -> Vec<f64> {
        self.bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()
    }

    /// The low-pass version of this mask, whatever its polarity.
    fn low_weights(&self) -> Vec<f64> {
        match self.polarity {
            Polarity::Low => self.weights(),
            Polarity::High => self.complement().weights(),
        }
    }
}

/// Splits a full spectrum into `(low, high)` parts on the centered grid.
///
/// Both parts come back centered and sum to the centered input exactly.
pub fn decompose(s: &Spectrum, mask: &FrequencyMask) -> Result<(Spectrum, Spectrum)> {
    let centered = s.centered()?;
    if centered.height() != mask.height || centered.width() != mask.width {
        return Err(shape_err!(
            "mask {}×{} for spectrum {}×{}",
            mask.height,
            mask.width,
            centered.height(),
            centered.width()
        ));
    }
    let low_w = mask.low_weights();
    let high_w: Vec<f64> = low_w.iter().map(|b| 1.0 - b).collect();
    Ok((centered.masked(&low_w)?, centered.masked(&high_w)?))
}

/// Inverse transform of `x`'s spectrum restricted to a centered weight grid.
pub fn reconstruct_with(x: &Tensor, centered_weights: &[f64]) -> Result<Tensor> {
    let spec = fft2(x)?.centered()?;
    ifft2(&spec.masked(centered_weights)?)
}

/// Keeps bins with normalized radius in `[lo, hi)` (see [`in_band`]) and
/// inverse-transforms, without clamping.
pub fn band_reconstruct_raw(x: &Tensor, lo: f64, hi: f64) -> Result<Tensor> {
    validate_band(lo, hi)?;
    let (h, w) = match *x.shape() {
        [_, h, w] => (h, w),
        _ => return Err(shape_err!("band_reconstruct expects [C,H,W], got {:?}", x.shape())),
    };
    let weights = centered_band_weights(h, w, lo, hi);
    if weights.iter().all(|&b| b == 0.0) {
        return Err(Error::InvalidArgument(format!(
            "band [{lo}, {hi}) selects no bins of a {h}×{w} spectrum"
        )));
    }
    reconstruct_with(x, &weights)
}

/// [`band_reconstruct_raw`] clamped to the input's value range.
pub fn band_reconstruct(x: &Tensor, lo: f64, hi: f64) -> Result<Tensor> {
    let raw = band_reconstruct_raw(x, lo, hi)?;
    let (min, max) = value_range(x);
    Ok(raw.map(|v| v.clamp(min, max)))
}

/// Low-only and high-only images of `x` for a pixel radius `r`, without clamping.
///
/// The two parts sum to `x` up to rounding.
pub fn split_bands_raw(x: &Tensor, r: f64) -> Result<(Tensor, Tensor)> {
    let (h, w) = match *x.shape() {
        [_, h, w] => (h, w),
        _ => return Err(shape_err!("split_bands expects [C,H,W], got {:?}", x.shape())),
    };
    let spec = fft2(x)?;
    let (low, high) = decompose(&spec, &make_mask(h, w, r, Polarity::Low)?)?;
    Ok((ifft2(&low)?, ifft2(&high)?))
}

pub(crate) fn value_range(x: &Tensor) -> (f64, f64) {
    x.data()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn low_mask_r1_is_centered_3x3_block() {
        let m = make_mask(8, 8, 1.0, Polarity::Low).unwrap();
        assert_eq!(m.count_ones(), 9);
        for u in 3..=5 {
            for v in 3..=5 {
                assert!(m.get(u, v));
            }
        }
        assert!(!m.get(2, 4));
        assert!(!m.get(4, 6));
    }

    #[test]
    fn zero_radius_keeps_only_center() {
        let m = make_mask(7, 6, 0.0, Polarity::Low).unwrap();
        assert_eq!(m.count_ones(), 1);
        assert!(m.get(3, 3));
    }

    #[test]
    fn huge_radius_saturates() {
        let low = make_mask(5, 9, 9.0, Polarity::Low).unwrap();
        let high = make_mask(5, 9, 9.0, Polarity::High).unwrap();
        assert_eq!(low.count_ones(), 45);
        assert_eq!(high.count_ones(), 0);
    }

    #[test]
    fn negative_radius_rejected() {
        assert!(make_mask(4, 4, -0.5, Polarity::Low).is_err());
    }

    #[test]
    fn band_validation() {
        assert!(validate_band(0.5, 1.0).is_ok());
        assert!(validate_band(0.5, 0.5).is_err());
        assert!(validate_band(-0.1, 0.5).is_err());
        assert!(validate_band(0.2, 1.5).is_err());
    }

    #[test]
    fn half_band_matches_full_band_on_kept_rows() {
        // Stored half-layout bins must use the same distance as the full grid.
        let (h, w) = (6, 5);
        let half = half_band_weights(h, w, 0.5, 1.0);
        for u in 0..half_rows(h) {
            for v in 0..w {
                let d = normalized_radius(uncentered_distance(u, v, h, w), h, w);
                let cu = (u + h / 2) % h;
                let cv = (v + w / 2) % w;
                let d2 = normalized_radius(centered_distance(cu, cv, h, w), h, w);
                assert_eq!(d, d2);
                assert_eq!(half[u * w + v], if in_band(d, 0.5, 1.0) { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn empty_band_is_an_error() {
        // 2×2: normalized radii are 0 and 1, nothing lives in [0.2, 0.4)
        let x = Tensor::ones(&[1, 2, 2]);
        assert!(band_reconstruct(&x, 0.2, 0.4).is_err());
    }
}
