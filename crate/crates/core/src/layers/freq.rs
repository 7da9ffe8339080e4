//! High-frequency enhancement and global frequency filter layers.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{expect_feature_map, init_batch_norm, Conv, Forward, ParamStore};
use crate::autodiff::Var;
use crate::error::{shape_err, Error, Result};
use crate::frequency::{half_band_weights, half_rows, min_max_normalize, save_gray, validate_band};
use crate::tensor::Tensor;

/// What the enhancement convolutions see.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HfeInput {
    /// The band-masked half spectrum as a `[2C, ⌊H/2⌋+1, W]` real view.
    #[default]
    Freq,
    /// The band-masked spectrum transformed back to `[C, H, W]`.
    SpatialMasked,
    /// The unmasked spatial features.
    SpatialRaw,
}

/// Residual frequency branch: `f_res + BN(θ(mask ⊙ FFT(f_prev)))` in its
/// default mode.
///
/// Parameters under `{name}`: `conv1` (3×3), `bn1`, `conv2` (1×1, zero
/// initialized) and `post_bn` over the `C` output channels.
#[derive(Debug, Clone, PartialEq)]
pub struct HfeLayer {
    pub name: String,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub band: (f64, f64),
    pub input: HfeInput,
}

/// Counted multiply-accumulates of one convolution.
pub fn conv_macs(c_in: usize, c_out: usize, kernel: usize, h_out: usize, w_out: usize) -> u64 {
    (c_in * c_out * kernel * kernel * h_out * w_out) as u64
}

/// Multiply-accumulates of the enhancement convolutions for one feature map.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HfeCost {
    pub conv3x3: u64,
    pub conv1x1: u64,
}

impl HfeCost {
    pub fn total(&self) -> u64 {
        self.conv3x3 + self.conv1x1
    }
}

/// Convolution cost of the enhancement branch in `input` mode on a `C × H × W` map.
pub fn hfe_conv_cost(input: HfeInput, channels: usize, height: usize, width: usize) -> HfeCost {
    let (c, rows) = match input {
        HfeInput::Freq => (2 * channels, half_rows(height)),
        HfeInput::SpatialMasked | HfeInput::SpatialRaw => (channels, height),
    };
    HfeCost {
        conv3x3: conv_macs(c, c, 3, rows, width),
        conv1x1: conv_macs(c, c, 1, rows, width),
    }
}

impl HfeLayer {
    pub fn new(
        name: impl Into<String>,
        channels: usize,
        height: usize,
        width: usize,
        band: (f64, f64),
        input: HfeInput,
    ) -> Result<Self> {
        validate_band(band.0, band.1)?;
        if channels == 0 || height == 0 || width == 0 {
            return Err(shape_err!("HFE layer of size {channels}×{height}×{width}"));
        }
        Ok(HfeLayer {
            name: name.into(),
            channels,
            height,
            width,
            band,
            input,
        })
    }

    fn theta_channels(&self) -> usize {
        match self.input {
            HfeInput::Freq => 2 * self.channels,
            _ => self.channels,
        }
    }

    fn conv1(&self) -> Conv {
        let c = self.theta_channels();
        Conv::new(format!("{}.conv1", self.name), c, c, 3, 1, false)
    }

    fn conv2(&self) -> Conv {
        let c = self.theta_channels();
        Conv::new(format!("{}.conv2", self.name), c, c, 1, 1, true)
    }

    pub fn init<R: Rng + ?Sized>(&self, store: &mut ParamStore, rng: &mut R) {
        self.conv1().init(store, rng);
        init_batch_norm(store, &format!("{}.bn1", self.name), self.theta_channels());
        self.conv2().init_zero(store);
        init_batch_norm(store, &format!("{}.post_bn", self.name), self.channels);
    }

    /// `{0,1}` band weights over the half-spectrum real view `[2C, ⌊H/2⌋+1, W]`.
    pub fn band_mask(&self) -> Tensor {
        let grid = half_band_weights(self.height, self.width, self.band.0, self.band.1);
        let mut data = Vec::with_capacity(2 * self.channels * grid.len());
        for _ in 0..2 * self.channels {
            data.extend_from_slice(&grid);
        }
        Tensor::from_parts(vec![2 * self.channels, half_rows(self.height), self.width], data)
    }

    /// The band-masked half spectrum of `f_prev`, `[B, 2C, ⌊H/2⌋+1, W]`.
    pub fn masked_spectrum(&self, f: &mut Forward, f_prev: Var) -> Result<Var> {
        expect_feature_map(&f.tape, f_prev, self.channels, self.height, self.width, "HFE input")?;
        let spec = f.tape.rfft2(f_prev)?;
        let mask = f.input(self.band_mask());
        f.tape.mul_broadcast(spec, mask)
    }

    /// The branch added to the residual output, `[B, C, H, W]`.
    pub fn branch(&self, f: &mut Forward, f_prev: Var) -> Result<Var> {
        expect_feature_map(&f.tape, f_prev, self.channels, self.height, self.width, "HFE input")?;
        let theta_in = match self.input {
            HfeInput::Freq => self.masked_spectrum(f, f_prev)?,
            HfeInput::SpatialMasked => {
                let m = self.masked_spectrum(f, f_prev)?;
                f.tape.irfft2(m, self.height)?
            }
            HfeInput::SpatialRaw => f_prev,
        };
        let h = self.conv1().forward(f, theta_in)?;
        let h = f.batch_norm(&format!("{}.bn1", self.name), h)?;
        let h = f.tape.relu(h);
        let h = self.conv2().forward(f, h)?;
        let h = match self.input {
            HfeInput::Freq => f.tape.irfft2(h, self.height)?,
            _ => h,
        };
        f.batch_norm(&format!("{}.post_bn", self.name), h)
    }

    /// `f_res + branch(f_prev)`.
    pub fn forward(&self, f: &mut Forward, f_prev: Var, f_res: Var) -> Result<Var> {
        expect_feature_map(&f.tape, f_res, self.channels, self.height, self.width, "HFE residual")?;
        let b = self.branch(f, f_prev)?;
        f.tape.add(f_res, b)
    }

    pub fn cost(&self) -> HfeCost {
        hfe_conv_cost(self.input, self.channels, self.height, self.width)
    }
}

/// Learnable per-bin complex gain on the half spectrum; weights `{name}.weight`
/// of shape `[2C, ⌊H/2⌋+1, W]` (real parts, then imaginary parts).
#[derive(Debug, Clone, PartialEq)]
pub struct GffLayer {
    pub name: String,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl GffLayer {
    pub fn new(name: impl Into<String>, channels: usize, height: usize, width: usize) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(shape_err!("GFF layer of size {channels}×{height}×{width}"));
        }
        Ok(GffLayer {
            name: name.into(),
            channels,
            height,
            width,
        })
    }

    pub fn weight_name(&self) -> String {
        format!("{}.weight", self.name)
    }

    pub fn weight_shape(&self) -> [usize; 3] {
        [2 * self.channels, half_rows(self.height), self.width]
    }

    /// Ones on the real channels and zeros on the imaginary ones: the identity filter.
    pub fn identity_weights(&self) -> Tensor {
        let [c2, hh, w] = self.weight_shape();
        let half = c2 / 2 * hh * w;
        let mut data = vec![1.0; half];
        data.extend(std::iter::repeat_n(0.0, half));
        Tensor::from_parts(vec![c2, hh, w], data)
    }

    pub fn init(&self, store: &mut ParamStore) {
        store.params.insert(self.weight_name(), self.identity_weights());
    }

    pub fn forward(&self, f: &mut Forward, x: Var) -> Result<Var> {
        expect_feature_map(&f.tape, x, self.channels, self.height, self.width, "GFF input")?;
        let w = f.param(&self.weight_name())?;
        if f.tape.shape(w) != self.weight_shape() {
            return Err(shape_err!(
                "GFF weights {:?}, layer expects {:?}",
                f.tape.shape(w),
                self.weight_shape()
            ));
        }
        let spec = f.tape.rfft2(x)?;
        let filtered = f.tape.complex_mul_broadcast(spec, w)?;
        f.tape.irfft2(filtered, self.height)
    }
}

/// Channel-averaged weight magnitude per bin, min-max scaled to `[0,1]`.
///
/// `weights` is a `[2C, R, W]` filter; the result is an `R × W` grid.
pub fn export_filter_map(weights: &Tensor) -> Result<Vec<f64>> {
    let s = weights.shape();
    if s.len() != 3 || s[0] % 2 != 0 || s[0] == 0 {
        return Err(shape_err!("filter weights must be [2C,R,W], got {:?}", s));
    }
    let (c, plane) = (s[0] / 2, s[1] * s[2]);
    let d = weights.data();
    let mut map = vec![0.0; plane];
    for ch in 0..c {
        for (p, m) in map.iter_mut().enumerate() {
            *m += d[ch * plane + p].hypot(d[(c + ch) * plane + p]) / c as f64;
        }
    }
    Ok(min_max_normalize(&map))
}

/// Writes a filter map as a CSV grid and an 8-bit grayscale PNG.
pub fn write_filter_map(csv_path: &Path, png_path: &Path, grid: &[f64], rows: usize, cols: usize) -> Result<()> {
    if grid.len() != rows * cols {
        return Err(shape_err!("grid of {} values for {rows}×{cols}", grid.len()));
    }
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(csv_path)
        .map_err(Error::from)?;
    for row in grid.chunks_exact(cols) {
        w.write_record(row.iter().map(|v| format!("{v:.6}")))?;
    }
    w.flush().map_err(|e| Error::io(csv_path, e))?;
    save_gray(png_path, grid, rows, cols)
}
