//! 8-bit sRGB PNG on disk, linear RGB in memory.

use std::path::Path;

use image::codecs::png::PngEncoder;
use image::{ExtendedColorType, ImageEncoder};

use super::atomic_write;
use crate::error::{io_at, Result};
use crate::scene::ImageRGB;

pub fn srgb_to_linear(c: f64) -> f64 {
    if c <= 0.04045 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

pub fn linear_to_srgb(c: f64) -> f64 {
    let c = c.clamp(0.0, 1.0);
    if c <= 0.003_130_8 {
        12.92 * c
    } else {
        1.055 * c.powf(1.0 / 2.4) - 0.055
    }
}

/// Quantized sRGB bytes, row-major RGB.
pub fn to_srgb8(img: &ImageRGB) -> Vec<u8> {
    img.data.iter().map(|&c| (linear_to_srgb(c) * 255.0).round() as u8).collect()
}

pub fn from_srgb8(width: usize, height: usize, bytes: &[u8]) -> Result<ImageRGB> {
    let data = bytes.iter().map(|&b| srgb_to_linear(b as f64 / 255.0)).collect();
    ImageRGB::from_data(width, height, data)
}

/// Loads any PNG color type; alpha is dropped.
pub fn load_png(path: &Path) -> Result<ImageRGB> {
    let file = std::fs::File::open(path).map_err(io_at(path))?;
    let img = image::ImageReader::new(std::io::BufReader::new(file)).with_guessed_format()?.decode()?.to_rgb8();
    let (w, h) = img.dimensions();
    from_srgb8(w as usize, h as usize, img.as_raw())
}

pub fn save_png(img: &ImageRGB, path: &Path) -> Result<()> {
    let bytes = to_srgb8(img);
    atomic_write(path, |w| {
        PngEncoder::new(w)
            .write_image(&bytes, img.width as u32, img.height as u32, ExtendedColorType::Rgb8)
            .map_err(std::io::Error::other)
    })
}
