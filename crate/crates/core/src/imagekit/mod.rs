//! Grayscale rasters, PNG I/O and ordered slice stacks.
//!
//! Coordinates follow the usual raster convention: the origin is the top-left
//! pixel, `x` indexes columns and `y` indexes rows, and pixel centers sit on
//! integer coordinates.

mod png_io;
mod stack;

pub use png_io::{load_png, save_png};
pub use stack::{load_stack, Manifest, ManifestSlice, Plane, SliceStack};

use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("file not found: {0}")]
    MissingFile(PathBuf),
    #[error("malformed PNG {path}: {reason}")]
    MalformedPng { path: PathBuf, reason: String },
    #[error("unsupported PNG bit depth {depth} in {path} (only 8 and 16 bit are accepted)")]
    UnsupportedBitDepth { path: PathBuf, depth: u8 },
    #[error("cannot parse manifest {path}: {reason}")]
    ManifestParse { path: PathBuf, reason: String },
    #[error("slice {file} is {found_width}x{found_height}, expected {width}x{height}")]
    DimensionMismatch { file: PathBuf, width: usize, height: usize, found_width: usize, found_height: usize },
    #[error("I/O failure on {path}: {source}")]
    IoFailure {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid image geometry: {0}")]
    InvalidGeometry(String),
}

/// 8-bit single-channel raster stored row-major.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl std::fmt::Debug for GrayImage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GrayImage").field("width", &self.width).field("height", &self.height).finish_non_exhaustive()
    }
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self, ImageError> {
        if width == 0 || height == 0 {
            return Err(ImageError::InvalidGeometry(format!("{width}x{height} has a zero dimension")));
        }
        if data.len() != width * height {
            return Err(ImageError::InvalidGeometry(format!("{} samples for a {width}x{height} image", data.len())));
        }
        Ok(Self { width, height, data })
    }

    /// Image of the given size with every pixel set to `value`.
    ///
    /// Panics if either dimension is zero.
    pub fn filled(width: usize, height: usize, value: u8) -> Self {
        assert!(width > 0 && height > 0, "image dimensions must be positive");
        Self { width, height, data: vec![value; width * height] }
    }

    /// Builds an image by evaluating `f(x, y)` at every pixel.
    ///
    /// Panics if either dimension is zero.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> u8) -> Self {
        assert!(width > 0 && height > 0, "image dimensions must be positive");
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self { width, height, data }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dimensions(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn as_raw(&self) -> &[u8] {
        &self.data
    }

    pub fn into_raw(self) -> Vec<u8> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: u8) {
        self.data[y * self.width + x] = value;
    }

    /// Pixel value, or 0 outside the raster.
    #[inline]
    pub fn get_or_zero(&self, x: i64, y: i64) -> u8 {
        if x < 0 || y < 0 || x >= self.width as i64 || y >= self.height as i64 {
            0
        } else {
            self.data[y as usize * self.width + x as usize]
        }
    }

    /// Bilinear sample where everything outside the raster reads as 0.
    pub fn sample_bilinear_zero(&self, x: f64, y: f64) -> f64 {
        let x0 = x.floor();
        let y0 = y.floor();
        let fx = x - x0;
        let fy = y - y0;
        let (xi, yi) = (x0 as i64, y0 as i64);
        let p00 = self.get_or_zero(xi, yi) as f64;
        let p10 = self.get_or_zero(xi + 1, yi) as f64;
        let p01 = self.get_or_zero(xi, yi + 1) as f64;
        let p11 = self.get_or_zero(xi + 1, yi + 1) as f64;
        let top = p00 + (p10 - p00) * fx;
        let bottom = p01 + (p11 - p01) * fx;
        top + (bottom - top) * fy
    }

    /// Bilinear sample with coordinates clamped to the raster (edge replication).
    pub fn sample_bilinear_clamped(&self, x: f64, y: f64) -> f64 {
        let x = x.clamp(0.0, (self.width - 1) as f64);
        let y = y.clamp(0.0, (self.height - 1) as f64);
        let x0 = x.floor() as usize;
        let y0 = y.floor() as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let fx = x - x0 as f64;
        let fy = y - y0 as f64;
        let p00 = self.get(x0, y0) as f64;
        let p10 = self.get(x1, y0) as f64;
        let p01 = self.get(x0, y1) as f64;
        let p11 = self.get(x1, y1) as f64;
        let top = p00 + (p10 - p00) * fx;
        let bottom = p01 + (p11 - p01) * fx;
        top + (bottom - top) * fy
    }

    /// Resamples to `new_width` x `new_height` with bilinear interpolation,
    /// aligning pixel centers (`src = (dst + 0.5) / scale - 0.5`).
    pub fn resize_bilinear(&self, new_width: usize, new_height: usize) -> GrayImage {
        assert!(new_width > 0 && new_height > 0, "resize target must be non-empty");
        if new_width == self.width && new_height == self.height {
            return self.clone();
        }
        let sx = self.width as f64 / new_width as f64;
        let sy = self.height as f64 / new_height as f64;
        GrayImage::from_fn(new_width, new_height, |x, y| {
            let src_x = (x as f64 + 0.5) * sx - 0.5;
            let src_y = (y as f64 + 0.5) * sy - 0.5;
            to_u8(self.sample_bilinear_clamped(src_x, src_y))
        })
    }

    /// Applies `f` to every pixel.
    pub fn map(&self, mut f: impl FnMut(u8) -> u8) -> GrayImage {
        GrayImage { width: self.width, height: self.height, data: self.data.iter().map(|&v| f(v)).collect() }
    }
}

/// Rounds half away from zero and clamps to the 8-bit range.
#[inline]
pub fn to_u8(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_geometry() {
        assert!(GrayImage::new(0, 3, vec![]).is_err());
        assert!(GrayImage::new(2, 2, vec![1, 2, 3]).is_err());
        assert!(GrayImage::new(2, 2, vec![1, 2, 3, 4]).is_ok());
    }

    #[test]
    fn bilinear_zero_fades_outside() {
        let img = GrayImage::filled(2, 2, 100);
        assert_eq!(img.sample_bilinear_zero(0.5, 0.5), 100.0);
        assert_eq!(img.sample_bilinear_zero(-0.5, 0.0), 50.0);
        assert_eq!(img.sample_bilinear_zero(5.0, 5.0), 0.0);
    }

    #[test]
    fn resize_constant_stays_constant() {
        let img = GrayImage::filled(5, 3, 77);
        let out = img.resize_bilinear(11, 7);
        assert!(out.as_raw().iter().all(|&v| v == 77));
    }
}
