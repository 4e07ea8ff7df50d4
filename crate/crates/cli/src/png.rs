//! 8-bit PNG views and colorized scalar maps.

use std::io::Cursor;
use std::path::Path;

use image::{ImageFormat, RgbImage};
use ndarray::Array3;
use smd_core::sampling::DisparityField;
use smd_core::{Result, SmdError};

fn image_err(path: &Path, e: impl ToString) -> SmdError {
    SmdError::Image {
        path: path.to_path_buf(),
        reason: e.to_string(),
    }
}

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn save(path: &Path, img: &RgbImage) -> Result<()> {
    let mut buf = Cursor::new(Vec::new());
    img.write_to(&mut buf, ImageFormat::Png).map_err(|e| image_err(path, e))?;
    crate::fsutil::write_atomic(path, buf.get_ref())
}

/// Writes a `(3, H, W)` image with values in `[0, 1]`.
pub fn write_rgb(path: &Path, img: &Array3<f64>) -> Result<()> {
    let (c, h, w) = img.dim();
    if c != 3 {
        return Err(SmdError::Shape(format!("expected 3 channels, got {c}")));
    }
    let out = RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let (x, y) = (x as usize, y as usize);
        image::Rgb([0, 1, 2].map(|k| quantize(img[[k, y, x]])))
    });
    save(path, &out)
}

/// Reads an image as `(3, H, W)` in `[0, 1]`.
pub fn read_rgb(path: &Path) -> Result<Array3<f64>> {
    let img = image::open(path).map_err(|e| image_err(path, e))?.to_rgb8();
    let (w, h) = img.dimensions();
    Ok(Array3::from_shape_fn((3, h as usize, w as usize), |(k, y, x)| {
        img.get_pixel(x as u32, y as u32)[k] as f64 / 255.0
    }))
}

/// Maps `field` linearly from `[lo, hi]` onto the viridis colormap.
/// Invalid pixels are drawn black.
pub fn colorize(field: &DisparityField, lo: f64, hi: f64) -> RgbImage {
    let span = if hi > lo { hi - lo } else { 1.0 };
    RgbImage::from_fn(field.width() as u32, field.height() as u32, |x, y| {
        let (x, y) = (x as usize, y as usize);
        if !field.is_valid(x, y) {
            return image::Rgb([0, 0, 0]);
        }
        let t = ((field.get(x, y) - lo) / span).clamp(0.0, 1.0);
        let c = colorous::VIRIDIS.eval_continuous(t);
        image::Rgb([c.r, c.g, c.b])
    })
}

/// Colorizes over the field's own value range and writes it.
pub fn write_colormap(path: &Path, field: &DisparityField) -> Result<()> {
    let (lo, hi) = field
        .values()
        .iter()
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    save(path, &colorize(field, lo, hi))
}
