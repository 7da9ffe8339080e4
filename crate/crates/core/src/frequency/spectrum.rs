use rustfft::num_complex::Complex64;

use super::fft::{expand_half, fft2_real, half_rows, ifft2_unnormalized};
use crate::error::{shape_err, Error, Result};
use crate::tensor::Tensor;

/// Largest tolerated imaginary residue (relative to `max(1, max|x|)`) when
/// inverting a full spectrum back to a real signal.
pub const HERMITIAN_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layout {
    /// All `H × W` bins.
    Full,
    /// Rows `0..=⌊H/2⌋` only; the rest follow from conjugate symmetry.
    Half,
}

/// Per-channel complex 2D spectrum stored as paired real tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    layout: Layout,
    height: usize,
    real: Tensor,
    imag: Tensor,
    centered: bool,
}

fn chw(t: &Tensor, what: &str) -> Result<(usize, usize, usize)> {
    match *t.shape() {
        [c, h, w] if h > 0 && w > 0 => Ok((c, h, w)),
        _ => Err(shape_err!("{what} expects [C,H,W] with H,W ≥ 1, got {:?}", t.shape())),
    }
}

fn split(values: &[Complex64]) -> (Vec<f64>, Vec<f64>) {
    values.iter().map(|z| (z.re, z.im)).unzip()
}

/// Moves bin `(u,v)` to `((u+sh) mod h, (v+sw) mod w)` in every channel.
fn roll(t: &Tensor, sh: usize, sw: usize) -> Tensor {
    let (c, h, w) = (t.shape()[0], t.shape()[1], t.shape()[2]);
    let src = t.data();
    let mut out = vec![0.0; src.len()];
    for ch in 0..c {
        for u in 0..h {
            let du = (u + sh) % h;
            for v in 0..w {
                out[(ch * h + du) * w + (v + sw) % w] = src[(ch * h + u) * w + v];
            }
        }
    }
    Tensor::from_parts(t.shape().to_vec(), out)
}

/// Moves the zero-frequency bin of each `[C,H,W]` plane to `(⌊H/2⌋, ⌊W/2⌋)`.
pub fn fftshift(t: &Tensor) -> Result<Tensor> {
    let (_, h, w) = chw(t, "fftshift")?;
    Ok(roll(t, h / 2, w / 2))
}

/// Inverse of [`fftshift`], also for odd sizes.
pub fn ifftshift(t: &Tensor) -> Result<Tensor> {
    let (_, h, w) = chw(t, "ifftshift")?;
    Ok(roll(t, h - h / 2, w - w / 2))
}

impl Spectrum {
    pub fn from_parts(layout: Layout, height: usize, real: Tensor, imag: Tensor, centered: bool) -> Result<Self> {
        if real.shape() != imag.shape() || real.rank() != 3 {
            return Err(shape_err!(
                "spectrum parts {:?} / {:?} must be equal [C,H,W]",
                real.shape(),
                imag.shape()
            ));
        }
        let rows = real.shape()[1];
        let expected = match layout {
            Layout::Full => height,
            Layout::Half => half_rows(height),
        };
        if rows != expected {
            return Err(shape_err!("{layout:?} spectrum of height {height} needs {expected} rows, has {rows}"));
        }
        if layout == Layout::Half && centered {
            return Err(Error::InvalidArgument("half spectra are never centered".into()));
        }
        Ok(Spectrum {
            layout,
            height,
            real,
            imag,
            centered,
        })
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    pub fn real(&self) -> &Tensor {
        &self.real
    }

    pub fn imag(&self) -> &Tensor {
        &self.imag
    }

    pub fn is_centered(&self) -> bool {
        self.centered
    }

    pub fn channels(&self) -> usize {
        self.real.shape()[0]
    }

    /// Spatial height of the signal this spectrum came from.
    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.real.shape()[2]
    }

    /// `Σ |X|²` over stored bins.
    pub fn energy(&self) -> f64 {
        self.real
            .data()
            .iter()
            .zip(self.imag.data())
            .map(|(r, i)| r * r + i * i)
            .sum()
    }

    fn require_full(&self, what: &str) -> Result<()> {
        if self.layout != Layout::Full {
            return Err(Error::InvalidArgument(format!("{what} needs a full-layout spectrum")));
        }
        Ok(())
    }

    /// Zero frequency moved to the grid center.
    pub fn centered(&self) -> Result<Spectrum> {
        self.require_full("centering")?;
        if self.centered {
            return Ok(self.clone());
        }
        Ok(Spectrum {
            real: fftshift(&self.real)?,
            imag: fftshift(&self.imag)?,
            centered: true,
            ..self.clone()
        })
    }

    /// Zero frequency moved back to index `(0,0)`.
    pub fn uncentered(&self) -> Result<Spectrum> {
        if !self.centered {
            return Ok(self.clone());
        }
        Ok(Spectrum {
            real: ifftshift(&self.real)?,
            imag: ifftshift(&self.imag)?,
            centered: false,
            ..self.clone()
        })
    }

    /// Full spectrum rebuilt from a half spectrum by conjugate symmetry.
    pub fn expand_to_full(&self) -> Spectrum {
        if self.layout == Layout::Full {
            return self.clone();
        }
        let (c, hh, w) = (self.channels(), self.real.shape()[1], self.width());
        let h = self.height;
        let mut re = Vec::with_capacity(c * h * w);
        let mut im = Vec::with_capacity(c * h * w);
        for ch in 0..c {
            let half: Vec<Complex64> = (0..hh * w)
                .map(|i| Complex64::new(self.real.data()[ch * hh * w + i], self.imag.data()[ch * hh * w + i]))
                .collect();
            let (r, i) = split(&expand_half(h, w, &half));
            re.extend(r);
            im.extend(i);
        }
        Spectrum {
            layout: Layout::Full,
            height: h,
            real: Tensor::from_parts(vec![c, h, w], re),
            imag: Tensor::from_parts(vec![c, h, w], im),
            centered: false,
        }
    }

    /// Channel-averaged `ln(1 + |X|)` on the centered grid, min-max scaled to `[0,1]`.
    pub fn log_magnitude_map(&self) -> Result<Vec<f64>> {
        let s = self.expand_to_full().centered()?;
        let (c, plane) = (s.channels(), s.height * s.width());
        let mut map = vec![0.0; plane];
        for ch in 0..c {
            for (i, m) in map.iter_mut().enumerate() {
                let k = ch * plane + i;
                *m += s.real.data()[k].hypot(s.imag.data()[k]).ln_1p() / c as f64;
            }
        }
        Ok(min_max_normalize(&map))
    }

    /// Channel-stacked real view `[2C, rows, W]`: real channels, then imaginary.
    pub fn to_real_view(&self) -> Tensor {
        let s = self.real.shape();
        let mut data = self.real.data().to_vec();
        data.extend_from_slice(self.imag.data());
        Tensor::from_parts(vec![2 * s[0], s[1], s[2]], data)
    }

    /// Inverse of [`Spectrum::to_real_view`] for an uncentered spectrum.
    pub fn from_real_view(view: &Tensor, layout: Layout, height: usize) -> Result<Spectrum> {
        let s = view.shape();
        if s.len() != 3 || s[0] % 2 != 0 {
            return Err(shape_err!("real view must be [2C,rows,W], got {:?}", s));
        }
        let half = view.numel() / 2;
        let shape = vec![s[0] / 2, s[1], s[2]];
        let real = Tensor::from_parts(shape.clone(), view.data()[..half].to_vec());
        let imag = Tensor::from_parts(shape, view.data()[half..].to_vec());
        Spectrum::from_parts(layout, height, real, imag, false)
    }

    /// Element-wise product with a real `[H,W]` grid, broadcast over channels.
    pub fn masked(&self, grid: &[f64]) -> Result<Spectrum> {
        let s = self.real.shape();
        let plane = s[1] * s[2];
        if grid.len() != plane {
            return Err(shape_err!("mask of {} bins for a {}×{} spectrum", grid.len(), s[1], s[2]));
        }
        let apply = |t: &Tensor| {
            Tensor::from_parts(
                t.shape().to_vec(),
                t.data().iter().enumerate().map(|(i, &x)| x * grid[i % plane]).collect(),
            )
        };
        Ok(Spectrum {
            real: apply(&self.real),
            imag: apply(&self.imag),
            ..self.clone()
        })
    }

    /// Bin-wise sum of two spectra with identical layout and centering.
    pub fn add(&self, other: &Spectrum) -> Result<Spectrum> {
        if self.layout != other.layout || self.centered != other.centered || self.height != other.height {
            return Err(Error::InvalidArgument(
                "adding spectra with different layout or centering".into(),
            ));
        }
        Ok(Spectrum {
            real: self.real.zip_map(&other.real, |a, b| a + b)?,
            imag: self.imag.zip_map(&other.imag, |a, b| a + b)?,
            ..self.clone()
        })
    }
}

/// Unnormalized forward transform of every channel of `x[C,H,W]`.
pub fn fft2(x: &Tensor) -> Result<Spectrum> {
    let (c, h, w) = chw(x, "fft2")?;
    let plane = h * w;
    let mut re = Vec::with_capacity(c * plane);
    let mut im = Vec::with_capacity(c * plane);
    for ch in 0..c {
        let (r, i) = split(&fft2_real(h, w, &x.data()[ch * plane..(ch + 1) * plane]));
        re.extend(r);
        im.extend(i);
    }
    Ok(Spectrum {
        layout: Layout::Full,
        height: h,
        real: Tensor::from_parts(vec![c, h, w], re),
        imag: Tensor::from_parts(vec![c, h, w], im),
        centered: false,
    })
}

/// `1/(H·W)`-normalized inverse of a full spectrum.
///
/// Fails with [`Error::NonHermitian`] when the result has a non-negligible
/// imaginary part; otherwise the residue is discarded.
pub fn ifft2(s: &Spectrum) -> Result<Tensor> {
    s.require_full("ifft2")?;
    let s = s.uncentered()?;
    let (c, h, w) = (s.channels(), s.height, s.width());
    let plane = h * w;
    let norm = 1.0 / plane as f64;
    let mut out = Vec::with_capacity(c * plane);
    let mut residue: f64 = 0.0;
    let mut peak: f64 = 0.0;
    for ch in 0..c {
        let bins: Vec<Complex64> = (ch * plane..(ch + 1) * plane)
            .map(|i| Complex64::new(s.real.data()[i], s.imag.data()[i]))
            .collect();
        for z in ifft2_unnormalized(h, w, &bins) {
            let z = z * norm;
            residue = residue.max(z.im.abs());
            peak = peak.max(z.re.abs());
            out.push(z.re);
        }
    }
    let tolerance = HERMITIAN_TOLERANCE * peak.max(1.0);
    if residue > tolerance {
        return Err(Error::NonHermitian { residue, tolerance });
    }
    Ok(Tensor::from_parts(vec![c, h, w], out))
}

/// Half-layout transform: rows `0..=⌊H/2⌋` of [`fft2`].
pub fn rfft2(x: &Tensor) -> Result<Spectrum> {
    let full = fft2(x)?;
    let (c, h, w) = (full.channels(), full.height, full.width());
    let hh = half_rows(h);
    let take = |t: &Tensor| {
        let mut data = Vec::with_capacity(c * hh * w);
        for ch in 0..c {
            data.extend_from_slice(&t.data()[ch * h * w..ch * h * w + hh * w]);
        }
        Tensor::from_parts(vec![c, hh, w], data)
    };
    Ok(Spectrum {
        layout: Layout::Half,
        height: h,
        real: take(&full.real),
        imag: take(&full.imag),
        centered: false,
    })
}

/// Inverse of [`rfft2`].
pub fn irfft2(s: &Spectrum) -> Result<Tensor> {
    if s.layout != Layout::Half {
        return Err(Error::InvalidArgument("irfft2 needs a half-layout spectrum".into()));
    }
    ifft2(&s.expand_to_full())
}

/// Scales values to `[0,1]`; a constant input maps to all zeros.
pub fn min_max_normalize(values: &[f64]) -> Vec<f64> {
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    if !(span > 0.0) {
        return vec![0.0; values.len()];
    }
    values.iter().map(|v| (v - lo) / span).collect()
}
