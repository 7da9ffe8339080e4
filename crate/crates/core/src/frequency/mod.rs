//! 2D Fourier transforms, centered masks, spectrum decomposition and
//! band-limited reconstruction of `[C,H,W]` tensors.
//!
//! Forward transforms are unnormalized and inverses carry the `1/(H·W)`
//! factor. Masks live on the centered grid, with the zero frequency at
//! `(⌊H/2⌋, ⌊W/2⌋)`.

pub(crate) mod fft;
mod image_io;
mod mask;
mod spectrum;

pub use fft::half_rows;
pub use image_io::{load_image, save_gray, save_image};
pub use mask::{
    band_reconstruct, band_reconstruct_raw, centered_band_weights, centered_distance, decompose,
    half_band_weights, in_band, make_mask, normalized_radius, reconstruct_with, split_bands_raw,
    uncentered_distance, validate_band, FrequencyMask, Polarity,
};
pub(crate) use mask::value_range;
pub use spectrum::{fft2, fftshift, ifft2, ifftshift, irfft2, min_max_normalize, rfft2, Layout, Spectrum, HERMITIAN_TOLERANCE};
