//! 8-bit PNG and binary PPM images as `[3,H,W]` tensors in `[0,1]`.

use std::path::Path;

use image::{GrayImage, ImageFormat, RgbImage};

use crate::error::{shape_err, Error, Result};
use crate::tensor::Tensor;

fn format_for(path: &Path) -> Result<ImageFormat> {
    match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("png") => Ok(ImageFormat::Png),
        Some("ppm") | Some("pgm") | Some("pnm") => Ok(ImageFormat::Pnm),
        _ => Err(Error::InvalidArgument(format!(
            "{}: only .png and .ppm images are supported",
            path.display()
        ))),
    }
}

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Loads an RGB image, scaling 8-bit samples to `[0,1]`.
pub fn load_image(path: &Path) -> Result<Tensor> {
    let format = format_for(path)?;
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let img = image::load_from_memory_with_format(&bytes, format)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?
        .to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut data = vec![0.0; 3 * h * w];
    for (x, y, px) in img.enumerate_pixels() {
        for c in 0..3 {
            data[(c * h + y as usize) * w + x as usize] = px[c] as f64 / 255.0;
        }
    }
    Ok(Tensor::from_parts(vec![3, h, w], data))
}

/// Saves a `[3,H,W]` tensor, clamping to `[0,1]` and rounding to 8 bits.
pub fn save_image(path: &Path, x: &Tensor) -> Result<()> {
    let (h, w) = match *x.shape() {
        [3, h, w] => (h, w),
        _ => return Err(shape_err!("save_image expects [3,H,W], got {:?}", x.shape())),
    };
    let format = format_for(path)?;
    let d = x.data();
    let img = RgbImage::from_fn(w as u32, h as u32, |col, row| {
        let at = |c: usize| quantize(d[(c * h + row as usize) * w + col as usize]);
        image::Rgb([at(0), at(1), at(2)])
    });
    img.save_with_format(path, format).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

/// Saves a row-major `h × w` grid of `[0,1]` values as 8-bit grayscale.
pub fn save_gray(path: &Path, grid: &[f64], h: usize, w: usize) -> Result<()> {
    if grid.len() != h * w {
        return Err(shape_err!("grid of {} values for {h}×{w}", grid.len()));
    }
    let format = format_for(path)?;
    let img = GrayImage::from_fn(w as u32, h as u32, |col, row| {
        image::Luma([quantize(grid[row as usize * w + col as usize])])
    });
    img.save_with_format(path, format).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quantized_ramp() -> Tensor {
        let data = (0..3 * 4 * 5).map(|i| ((i * 37) % 256) as f64 / 255.0).collect();
        Tensor::new(vec![3, 4, 5], data).unwrap()
    }

    #[test]
    fn png_and_ppm_roundtrip_quantized_values() {
        let dir = tempfile::tempdir().unwrap();
        let x = quantized_ramp();
        for name in ["a.png", "a.ppm"] {
            let p = dir.path().join(name);
            save_image(&p, &x).unwrap();
            let y = load_image(&p).unwrap();
            assert_eq!(y.shape(), &[3, 4, 5]);
            assert!(x.max_abs_diff(&y).unwrap() < 1e-12, "{name}");
        }
    }

    #[test]
    fn out_of_range_values_are_clamped_on_save() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.png");
        let x = Tensor::new(vec![3, 1, 2], vec![-1.0, 2.0, 0.0, 1.0, 0.5, 7.0]).unwrap();
        save_image(&p, &x).unwrap();
        let y = load_image(&p).unwrap();
        assert_eq!(y.data()[0], 0.0);
        assert_eq!(y.data()[1], 1.0);
        assert_eq!(y.data()[5], 1.0);
    }

    #[test]
    fn unknown_extension_rejected() {
        let x = quantized_ramp();
        assert!(save_image(Path::new("/tmp/x.jpg"), &x).is_err());
    }
}
