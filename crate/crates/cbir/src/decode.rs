use std::io::Cursor;

use cbir_core::RasterImage;
use image::{DynamicImage, ImageFormat, RgbImage};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DecodeError {
    #[error("cannot decode image: {0}")]
    Malformed(#[from] image::ImageError),
    #[error("decoded image has zero size")]
    Empty,
}

/// Decodes JPEG or PNG bytes into an RGB raster; alpha is dropped.
pub fn decode_image(bytes: &[u8]) -> Result<RasterImage, DecodeError> {
    let img = image::load_from_memory(bytes)?;
    from_dynamic(img)
}

fn from_dynamic(img: DynamicImage) -> Result<RasterImage, DecodeError> {
    let rgb = img.into_rgb8();
    let (w, h) = rgb.dimensions();
    RasterImage::from_rgb_bytes(w as usize, h as usize, rgb.as_raw()).map_err(|_| DecodeError::Empty)
}

pub fn to_rgb_image(img: &RasterImage) -> RgbImage {
    RgbImage::from_raw(img.width() as u32, img.height() as u32, img.to_rgb_bytes()).expect("buffer matches dimensions")
}

/// Lossless PNG encoding of a raster.
pub fn encode_png(img: &RasterImage) -> Vec<u8> {
    let mut out = Cursor::new(Vec::new());
    to_rgb_image(img)
        .write_to(&mut out, ImageFormat::Png)
        .expect("in-memory PNG encoding");
    out.into_inner()
}

/// JPEG rendition whose longest side is at most `max_side`; never upscales.
pub fn thumbnail(bytes: &[u8], max_side: u32) -> Result<Vec<u8>, DecodeError> {
    let img = image::load_from_memory(bytes)?;
    let small = if img.width().max(img.height()) > max_side {
        img.thumbnail(max_side, max_side)
    } else {
        img
    };
    let mut out = Cursor::new(Vec::new());
    DynamicImage::ImageRgb8(small.into_rgb8()).write_to(&mut out, ImageFormat::Jpeg)?;
    Ok(out.into_inner())
}

/// Content type for an image file path, by extension.
pub fn content_type(path: &str) -> &'static str {
    let lower = path.to_ascii_lowercase();
    if lower.ends_with(".png") {
        "image/png"
    } else {
        "image/jpeg"
    }
}
