//! Descriptor extraction: SIFT-style 128-float vectors and rotated-BRIEF
//! 256-bit strings, plus loading of externally computed feature files.

mod external;
mod rbrief;
mod sift;

pub use external::{load_external, read_external, write_external, ExternalFeatures, FeatureKey, FeatureStore};
pub use rbrief::{describe_rbrief, rbrief_pattern, TestPair, RBRIEF_ANGLE_STEPS, RBRIEF_SEED};
pub use sift::describe_sift;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::Keypoint;

pub const FLOAT_LEN: usize = 128;
pub const BINARY_BYTES: usize = 32;

pub type FloatDescriptor = [f32; FLOAT_LEN];
pub type BinaryDescriptor = [u8; BINARY_BYTES];

#[derive(Debug, Error)]
pub enum DescriptorError {
    #[error("keypoint {index} has no orientation")]
    UndefinedAngle { index: usize },
    #[error("{}: field `{field}`: {reason}", path.display())]
    SchemaError { path: PathBuf, field: String, reason: String },
    #[error("{}: descriptor {index} has zero norm", path.display())]
    NormViolation { path: PathBuf, index: usize },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("no external features for subject `{subject}`, slice {slice_index}, method `{method}`")]
    MissingFeature { subject: String, slice_index: i64, method: String },
    #[error("duplicate external features for subject `{subject}`, slice {slice_index}, method `{method}` ({})", path.display())]
    DuplicateEntry { subject: String, slice_index: i64, method: String, path: PathBuf },
    #[error("{0} keypoints but {1} descriptors")]
    LengthMismatch(usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DescriptorKind {
    #[serde(rename = "float128")]
    Float128,
    #[serde(rename = "binary256")]
    Binary256,
}

impl std::fmt::Display for DescriptorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            DescriptorKind::Float128 => "float128",
            DescriptorKind::Binary256 => "binary256",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Descriptors {
    Float(Vec<FloatDescriptor>),
    Binary(Vec<BinaryDescriptor>),
}

impl Descriptors {
    pub fn len(&self) -> usize {
        match self {
            Descriptors::Float(v) => v.len(),
            Descriptors::Binary(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn kind(&self) -> DescriptorKind {
        match self {
            Descriptors::Float(_) => DescriptorKind::Float128,
            Descriptors::Binary(_) => DescriptorKind::Binary256,
        }
    }
}

/// Descriptors with the keypoints they were computed at; entry `i` of both
/// lists belongs together.
#[derive(Debug, Clone, PartialEq)]
pub struct DescriptorSet {
    keypoints: Vec<Keypoint>,
    descriptors: Descriptors,
    dropped: usize,
}

impl DescriptorSet {
    pub fn new(keypoints: Vec<Keypoint>, descriptors: Descriptors) -> Result<Self, DescriptorError> {
        if keypoints.len() != descriptors.len() {
            return Err(DescriptorError::LengthMismatch(keypoints.len(), descriptors.len()));
        }
        Ok(Self { keypoints, descriptors, dropped: 0 })
    }

    pub fn empty(kind: DescriptorKind) -> Self {
        let descriptors = match kind {
            DescriptorKind::Float128 => Descriptors::Float(Vec::new()),
            DescriptorKind::Binary256 => Descriptors::Binary(Vec::new()),
        };
        Self { keypoints: Vec::new(), descriptors, dropped: 0 }
    }

    pub fn kind(&self) -> DescriptorKind {
        self.descriptors.kind()
    }

    pub fn keypoints(&self) -> &[Keypoint] {
        &self.keypoints
    }

    pub fn descriptors(&self) -> &Descriptors {
        &self.descriptors
    }

    pub fn len(&self) -> usize {
        self.keypoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keypoints.is_empty()
    }

    /// Keypoints discarded during extraction because their patch left the image.
    pub fn dropped(&self) -> usize {
        self.dropped
    }

    /// A float descriptor is degenerate when its patch had no gradient at all.
    pub fn is_degenerate(&self, i: usize) -> bool {
        match &self.descriptors {
            Descriptors::Float(v) => v[i].iter().all(|&c| c == 0.0),
            Descriptors::Binary(_) => false,
        }
    }

    pub fn degenerate_count(&self) -> usize {
        (0..self.len()).filter(|&i| self.is_degenerate(i)).count()
    }
}

/// Descriptor families computed natively.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DescriptorMethod {
    Sift,
    Rbrief,
}

pub fn describe(
    img: &crate::imagekit::GrayImage,
    keypoints: &[Keypoint],
    method: DescriptorMethod,
) -> Result<DescriptorSet, DescriptorError> {
    match method {
        DescriptorMethod::Sift => Ok(describe_sift(img, keypoints)),
        DescriptorMethod::Rbrief => describe_rbrief(img, keypoints),
    }
}

/// Bit `i` of a binary descriptor lives in byte `i / 8`, bit `i % 8`.
#[inline]
pub fn bit(d: &BinaryDescriptor, i: usize) -> bool {
    d[i / 8] >> (i % 8) & 1 == 1
}
