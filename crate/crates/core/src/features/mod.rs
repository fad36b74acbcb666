//! Keypoint detectors: segment-test corners (AGAST-equivalent FAST-9),
//! Shi-Tomasi corners (GFTT), and oriented FAST on an image pyramid (ORB).

mod gftt;
pub(crate) mod gradient;
mod orb;
mod segment_test;

pub use gftt::{detect_gftt, min_eigenvalue_map};
pub use orb::{detect_orb_keypoints, harris_response, intensity_centroid_angle, pyramid_level, ORB_PATCH_SIZE};
pub use segment_test::{detect_agast, segment_test_score, CIRCLE};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imagekit::GrayImage;

#[derive(Debug, Error, PartialEq, Eq, Clone)]
pub enum FeatureError {
    #[error("image {width}x{height} is smaller than the required {min_width}x{min_height}")]
    ImageTooSmall { width: usize, height: usize, min_width: usize, min_height: usize },
    #[error("invalid detector configuration: {0}")]
    InvalidConfig(String),
}

/// A detected interest point. Coordinates are in the level-0 image frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Keypoint {
    pub x: f32,
    pub y: f32,
    #[serde(default)]
    pub response: f32,
    #[serde(default)]
    pub octave: u32,
    /// Orientation in degrees in [0, 360), measured from +x towards +y.
    #[serde(default)]
    pub angle: Option<f32>,
    #[serde(default = "default_diameter")]
    pub diameter: f32,
}

fn default_diameter() -> f32 {
    CORNER_DIAMETER
}

/// Diameter assigned to single-scale corner keypoints.
pub const CORNER_DIAMETER: f32 = 7.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DetectorKind {
    Agast,
    Gftt,
    Orb,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorConfig {
    pub kind: DetectorKind,
    pub fast_threshold: u16,
    pub gftt_quality: f64,
    pub gftt_min_distance: f64,
    pub gftt_max_corners: usize,
    pub orb_n_features: usize,
    pub orb_scale_factor: f64,
    pub orb_n_levels: usize,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            kind: DetectorKind::Gftt,
            fast_threshold: 20,
            gftt_quality: 0.01,
            gftt_min_distance: 8.0,
            gftt_max_corners: 1000,
            orb_n_features: 500,
            orb_scale_factor: 1.2,
            orb_n_levels: 8,
        }
    }
}

impl DetectorConfig {
    pub fn with_kind(kind: DetectorKind) -> Self {
        Self { kind, ..Self::default() }
    }

    // Written as negated comparisons so NaN is rejected too.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<(), FeatureError> {
        let bad = |m: &str| Err(FeatureError::InvalidConfig(m.to_string()));
        if self.fast_threshold == 0 {
            return bad("fast_threshold must be > 0");
        }
        if !(self.gftt_quality > 0.0) {
            return bad("gftt_quality must be > 0");
        }
        if !(self.gftt_min_distance > 0.0) {
            return bad("gftt_min_distance must be > 0");
        }
        if self.gftt_max_corners == 0 || self.orb_n_features == 0 || self.orb_n_levels == 0 {
            return bad("counts must be >= 1");
        }
        if !(self.orb_scale_factor > 1.0) {
            return bad("orb_scale_factor must be > 1");
        }
        Ok(())
    }
}

/// Runs the detector selected by `cfg.kind`.
pub fn detect(img: &GrayImage, cfg: &DetectorConfig) -> Result<Vec<Keypoint>, FeatureError> {
    match cfg.kind {
        DetectorKind::Agast => detect_agast(img, cfg),
        DetectorKind::Gftt => detect_gftt(img, cfg),
        DetectorKind::Orb => detect_orb_keypoints(img, cfg),
    }
}

fn ensure_min_size(img: &GrayImage, min_width: usize, min_height: usize) -> Result<(), FeatureError> {
    if img.width() < min_width || img.height() < min_height {
        return Err(FeatureError::ImageTooSmall { width: img.width(), height: img.height(), min_width, min_height });
    }
    Ok(())
}

/// Total order used when ranking keypoints: higher response, then lower y,
/// then lower x.
pub(crate) fn rank_order(a: (f32, f32, f32), b: (f32, f32, f32)) -> std::cmp::Ordering {
    b.0.total_cmp(&a.0).then(a.1.total_cmp(&b.1)).then(a.2.total_cmp(&b.2))
}
