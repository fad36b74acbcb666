//! Controlled image degradations: in-plane rotation, upscaling and additive
//! Gaussian noise.

use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imagekit::{to_u8, GrayImage};

#[derive(Debug, Error, PartialEq)]
pub enum DegradeError {
    #[error("scale factor {factor} gives a zero-sized {width}x{height} image")]
    ZeroDimension { factor: f64, width: usize, height: usize },
    #[error("invalid degradation parameter: {0}")]
    InvalidParameter(String),
}

/// One degradation applied to a query slice before localization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Degradation {
    /// Clockwise rotation about the image center, in degrees.
    Rotation { deg: f64 },
    /// Canvas-growing upscale by `factor`.
    Scaling { factor: f64 },
    /// Additive zero-mean Gaussian noise.
    Noise { std: f64, seed: u64 },
}

impl Degradation {
    pub fn validate(&self) -> Result<(), DegradeError> {
        match *self {
            Degradation::Rotation { deg } if !deg.is_finite() => {
                Err(DegradeError::InvalidParameter(format!("rotation {deg}")))
            }
            Degradation::Scaling { factor } if !(factor > 0.0 && factor.is_finite()) => {
                Err(DegradeError::InvalidParameter(format!("scale factor {factor} must be > 0")))
            }
            Degradation::Noise { std, .. } if !(std >= 0.0 && std.is_finite()) => {
                Err(DegradeError::InvalidParameter(format!("noise std {std} must be >= 0")))
            }
            _ => Ok(()),
        }
    }

    /// Short code used in reports: `r`, `s` or `N`.
    pub fn code(&self) -> &'static str {
        match self {
            Degradation::Rotation { .. } => "r",
            Degradation::Scaling { .. } => "s",
            Degradation::Noise { .. } => "N",
        }
    }

    /// Column label in robustness tables.
    pub fn family(&self) -> &'static str {
        match self {
            Degradation::Rotation { .. } => "rotation",
            Degradation::Scaling { .. } => "upscaling",
            Degradation::Noise { .. } => "noise",
        }
    }

    /// Applies the degradation. `seed_offset` is mixed into the noise seed so
    /// each slice of a stack gets an independent but replayable draw.
    pub fn apply(&self, img: &GrayImage, seed_offset: u64) -> Result<GrayImage, DegradeError> {
        self.validate()?;
        match *self {
            Degradation::Rotation { deg } => Ok(rotate(img, deg)),
            Degradation::Scaling { factor } => upscale(img, factor),
            Degradation::Noise { std, seed } => {
                add_gaussian_noise(img, std, seed ^ seed_offset.wrapping_mul(0x9E37_79B9_7F4A_7C15))
            }
        }
    }
}

impl fmt::Display for Degradation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Degradation::Rotation { deg } => write!(f, "rotation:{deg}"),
            Degradation::Scaling { factor } => write!(f, "scaling:{factor}"),
            Degradation::Noise { std, seed } => write!(f, "noise:{std}@{seed}"),
        }
    }
}

/// Rotates clockwise (on screen, y pointing down) by `deg` about the image
/// center. Bilinear interpolation; samples falling outside read as 0. The
/// canvas keeps the input size.
pub fn rotate(img: &GrayImage, deg: f64) -> GrayImage {
    let deg = deg.rem_euclid(360.0);
    if deg == 0.0 {
        return img.clone();
    }
    let (w, h) = img.dimensions();
    let cx = (w as f64 - 1.0) / 2.0;
    let cy = (h as f64 - 1.0) / 2.0;
    let (sin, cos) = deg.to_radians().sin_cos();
    // Inverse map: rotate each output coordinate counter-clockwise back into the source.
    GrayImage::from_fn(w, h, |x, y| {
        let dx = x as f64 - cx;
        let dy = y as f64 - cy;
        let sx = cx + cos * dx + sin * dy;
        let sy = cy - sin * dx + cos * dy;
        to_u8(img.sample_bilinear_zero(sx, sy))
    })
}

/// Output size of [`upscale`]: `round(width * factor) x round(height * factor)`.
pub fn upscaled_dimensions(width: usize, height: usize, factor: f64) -> (usize, usize) {
    ((width as f64 * factor).round() as usize, (height as f64 * factor).round() as usize)
}

/// Resamples by `factor`, growing (or shrinking) the canvas accordingly.
pub fn upscale(img: &GrayImage, factor: f64) -> Result<GrayImage, DegradeError> {
    if !(factor > 0.0 && factor.is_finite()) {
        return Err(DegradeError::InvalidParameter(format!("scale factor {factor} must be > 0")));
    }
    let (w, h) = upscaled_dimensions(img.width(), img.height(), factor);
    if w == 0 || h == 0 {
        return Err(DegradeError::ZeroDimension { factor, width: w, height: h });
    }
    Ok(img.resize_bilinear(w, h))
}

/// Adds independent `N(0, std^2)` noise to every pixel, rounding and clamping
/// to [0, 255]. Identical `(img, std, seed)` always gives identical output.
pub fn add_gaussian_noise(img: &GrayImage, std: f64, seed: u64) -> Result<GrayImage, DegradeError> {
    if !(std >= 0.0 && std.is_finite()) {
        return Err(DegradeError::InvalidParameter(format!("noise std {std} must be >= 0")));
    }
    if std == 0.0 {
        return Ok(img.clone());
    }
    let normal = Normal::new(0.0, std).map_err(|e| DegradeError::InvalidParameter(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(img.map(|v| to_u8(v as f64 + normal.sample(&mut rng))))
}
