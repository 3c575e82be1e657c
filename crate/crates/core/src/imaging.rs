//! Raster types, gray-level quantization and rectangular cropping.

use alloc::vec::Vec;
use thiserror::Error;

use crate::math;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ImagingError {
    #[error("image dimensions must be at least 1x1, got {width}x{height}")]
    EmptyImage { width: usize, height: usize },
    #[error("pixel buffer holds {actual} pixels, expected {expected}")]
    BufferSize { expected: usize, actual: usize },
    #[error("crop {rect} exceeds image extent {width}x{height}")]
    OutOfBounds {
        rect: CropRect,
        width: usize,
        height: usize,
    },
    #[error("crop rectangle must have non-zero size")]
    EmptyCrop,
    #[error("gray level count must be in 2..=256, got {0}")]
    InvalidLevels(usize),
}

/// One RGB pixel, 8 bits per channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct Rgb {
    pub r: u8,
    pub g: u8,
    pub b: u8,
}

impl Rgb {
    pub const BLACK: Rgb = Rgb::new(0, 0, 0);
    pub const WHITE: Rgb = Rgb::new(255, 255, 255);

    pub const fn new(r: u8, g: u8, b: u8) -> Self {
        Self { r, g, b }
    }

    /// BT.601 luma rounded to the nearest integer.
    pub fn luma(self) -> u8 {
        let y = 0.299 * f64::from(self.r) + 0.587 * f64::from(self.g) + 0.114 * f64::from(self.b);
        math::round(y).clamp(0.0, 255.0) as u8
    }

    pub fn channels(self) -> [u8; 3] {
        [self.r, self.g, self.b]
    }
}

impl From<[u8; 3]> for Rgb {
    fn from([r, g, b]: [u8; 3]) -> Self {
        Self { r, g, b }
    }
}

/// A decoded RGB image stored row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RasterImage {
    width: usize,
    height: usize,
    pixels: Vec<Rgb>,
}

impl RasterImage {
    pub fn new(width: usize, height: usize, pixels: Vec<Rgb>) -> Result<Self, ImagingError> {
        if width == 0 || height == 0 {
            return Err(ImagingError::EmptyImage { width, height });
        }
        let expected = width * height;
        if pixels.len() != expected {
            return Err(ImagingError::BufferSize {
                expected,
                actual: pixels.len(),
            });
        }
        Ok(Self { width, height, pixels })
    }

    /// Builds an image from interleaved RGB bytes (3 bytes per pixel).
    pub fn from_rgb_bytes(width: usize, height: usize, bytes: &[u8]) -> Result<Self, ImagingError> {
        if bytes.len() != width * height * 3 {
            return Err(ImagingError::BufferSize {
                expected: width * height,
                actual: bytes.len() / 3,
            });
        }
        let pixels = bytes.chunks_exact(3).map(|c| Rgb::new(c[0], c[1], c[2])).collect();
        Self::new(width, height, pixels)
    }

    pub fn filled(width: usize, height: usize, color: Rgb) -> Result<Self, ImagingError> {
        Self::new(width, height, alloc::vec![color; width * height])
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> Rgb) -> Result<Self, ImagingError> {
        let mut pixels = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(x, y));
            }
        }
        Self::new(width, height, pixels)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[Rgb] {
        &self.pixels
    }

    pub fn pixel(&self, x: usize, y: usize) -> Rgb {
        self.pixels[y * self.width + x]
    }

    pub fn row(&self, y: usize) -> &[Rgb] {
        &self.pixels[y * self.width..(y + 1) * self.width]
    }

    pub fn full_frame(&self) -> CropRect {
        CropRect::new(0, 0, self.width, self.height)
    }

    pub fn to_rgb_bytes(&self) -> Vec<u8> {
        self.pixels.iter().flat_map(|p| p.channels()).collect()
    }
}

/// Quantized gray-level image; every level lies in `0..levels`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    levels: usize,
    data: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, levels: usize, data: Vec<u8>) -> Result<Self, ImagingError> {
        if width == 0 || height == 0 {
            return Err(ImagingError::EmptyImage { width, height });
        }
        if !(2..=256).contains(&levels) {
            return Err(ImagingError::InvalidLevels(levels));
        }
        if data.len() != width * height {
            return Err(ImagingError::BufferSize {
                expected: width * height,
                actual: data.len(),
            });
        }
        if data.iter().any(|&v| usize::from(v) >= levels) {
            return Err(ImagingError::InvalidLevels(levels));
        }
        Ok(Self {
            width,
            height,
            levels,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Number of quantization levels `L`.
    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn level(&self, x: usize, y: usize) -> u8 {
        self.data[y * self.width + x]
    }
}

/// Axis-aligned rectangle in pixel coordinates of a specific image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CropRect {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

impl CropRect {
    pub const fn new(x: usize, y: usize, w: usize, h: usize) -> Self {
        Self { x, y, w, h }
    }

    pub fn fits(&self, width: usize, height: usize) -> bool {
        self.w >= 1
            && self.h >= 1
            && self.x.checked_add(self.w).is_some_and(|r| r <= width)
            && self.y.checked_add(self.h).is_some_and(|b| b <= height)
    }

    /// `inner` expressed in the coordinate space that `self` was cut from.
    pub fn compose(&self, inner: CropRect) -> CropRect {
        CropRect::new(self.x + inner.x, self.y + inner.y, inner.w, inner.h)
    }
}

impl core::fmt::Display for CropRect {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(f, "{},{},{},{}", self.x, self.y, self.w, self.h)
    }
}

/// Copies the `rect` region of `img` into a new image.
pub fn crop(img: &RasterImage, rect: CropRect) -> Result<RasterImage, ImagingError> {
    if rect.w == 0 || rect.h == 0 {
        return Err(ImagingError::EmptyCrop);
    }
    if !rect.fits(img.width, img.height) {
        return Err(ImagingError::OutOfBounds {
            rect,
            width: img.width,
            height: img.height,
        });
    }
    let mut pixels = Vec::with_capacity(rect.w * rect.h);
    for y in rect.y..rect.y + rect.h {
        pixels.extend_from_slice(&img.row(y)[rect.x..rect.x + rect.w]);
    }
    RasterImage::new(rect.w, rect.h, pixels)
}

/// Maps a luma value onto one of `levels` uniform bins.
pub fn quantize_luma(luma: u8, levels: usize) -> u8 {
    let bin = usize::from(luma) * levels / 256;
    bin.min(levels - 1) as u8
}

/// Converts to BT.601 luma and quantizes uniformly into `levels` gray levels.
pub fn to_gray(img: &RasterImage, levels: usize) -> Result<GrayImage, ImagingError> {
    if !(2..=256).contains(&levels) {
        return Err(ImagingError::InvalidLevels(levels));
    }
    let data = img.pixels.iter().map(|p| quantize_luma(p.luma(), levels)).collect();
    Ok(GrayImage {
        width: img.width,
        height: img.height,
        levels,
        data,
    })
}
