//! Slice preprocessing: rotation alignment (`r`), scaling alignment (`s`),
//! skull extraction (`b`) and histogram equalization (`e`).
//!
//! A [`PreprocSpec`] is an ordered list of step codes, applied exactly in the
//! listed order. Order matters: equalizing after skull extraction only sees
//! brain pixels, equalizing before it sees the whole canvas.

mod align;
mod equalize;
mod mask;
mod skull;

pub use align::{align, estimate, transform_about_centroid, wrap_half_turn, Alignment, MaskMoments};
pub use equalize::{equalize, histogram};
pub use mask::{head_mask, otsu_foreground, otsu_level, Mask};
pub use skull::{skull_extract, SKULL_MARGIN_PX};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::imagekit::GrayImage;

#[derive(Debug, Error, PartialEq, Eq, Clone)]
pub enum PreprocessError {
    #[error("image has no Otsu foreground")]
    EmptyForeground,
    #[error("mask moments are isotropic; orientation is undefined")]
    DegenerateMoments,
    #[error("step `{0}` needs a reference image")]
    MissingReference(PreprocStep),
    #[error("invalid preprocessing spec `{spec}`: {reason}")]
    InvalidSpec { spec: String, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PreprocStep {
    /// Rotation alignment against the reference.
    Rotation,
    /// Scale alignment against the reference.
    Scaling,
    /// Skull extraction.
    SkullExtraction,
    /// Histogram equalization.
    Equalization,
}

impl PreprocStep {
    pub fn code(self) -> char {
        match self {
            PreprocStep::Rotation => 'r',
            PreprocStep::Scaling => 's',
            PreprocStep::SkullExtraction => 'b',
            PreprocStep::Equalization => 'e',
        }
    }

    pub fn from_code(c: char) -> Option<Self> {
        match c {
            'r' => Some(PreprocStep::Rotation),
            's' => Some(PreprocStep::Scaling),
            'b' => Some(PreprocStep::SkullExtraction),
            'e' => Some(PreprocStep::Equalization),
            _ => None,
        }
    }

    pub fn needs_reference(self) -> bool {
        matches!(self, PreprocStep::Rotation | PreprocStep::Scaling)
    }
}

impl fmt::Display for PreprocStep {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.code())
    }
}

/// Ordered, duplicate-free list of preprocessing steps. Written as the
/// concatenated step codes (`"rebs"`), or `"none"` when empty.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PreprocSpec {
    steps: Vec<PreprocStep>,
}

impl PreprocSpec {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn new(steps: Vec<PreprocStep>) -> Result<Self, PreprocessError> {
        for (i, s) in steps.iter().enumerate() {
            if steps[..i].contains(s) {
                let spec: String = steps.iter().map(|s| s.code()).collect();
                return Err(PreprocessError::InvalidSpec { spec, reason: format!("duplicate step `{s}`") });
            }
        }
        Ok(Self { steps })
    }

    pub fn steps(&self) -> &[PreprocStep] {
        &self.steps
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn needs_reference(&self) -> bool {
        self.steps.iter().any(|s| s.needs_reference())
    }

    /// The seven combinations compared in the cross-patient study, in table order.
    pub fn standard_grid() -> Vec<PreprocSpec> {
        ["none", "r", "rb", "rs", "rbs", "e", "rebs"]
            .iter()
            .map(|s| s.parse().expect("grid entries are valid"))
            .collect()
    }
}

impl fmt::Display for PreprocSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.steps.is_empty() {
            return f.write_str("none");
        }
        for s in &self.steps {
            write!(f, "{}", s.code())?;
        }
        Ok(())
    }
}

impl FromStr for PreprocSpec {
    type Err = PreprocessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let trimmed = s.trim();
        if trimmed.is_empty() || trimmed == "none" {
            return Ok(Self::none());
        }
        let steps = trimmed
            .chars()
            .map(|c| {
                PreprocStep::from_code(c).ok_or_else(|| PreprocessError::InvalidSpec {
                    spec: s.to_string(),
                    reason: format!("unknown step code `{c}` (expected r, s, b or e)"),
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(steps)
    }
}

impl Serialize for PreprocSpec {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for PreprocSpec {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Applies `spec` to `img`. Steps `r` and `s` align against `reference` and
/// keep only the rotation or only the scale component respectively.
pub fn apply(spec: &PreprocSpec, img: &GrayImage, reference: Option<&GrayImage>) -> Result<GrayImage, PreprocessError> {
    apply_traced(spec, img, reference).map(|(out, _)| out)
}

/// Like [`apply`], also returning the steps in the order they ran.
///
/// Once skull extraction has run, later alignment steps compare against a
/// skull-extracted copy of the reference so both masks describe the same
/// tissue.
pub fn apply_traced(
    spec: &PreprocSpec,
    img: &GrayImage,
    reference: Option<&GrayImage>,
) -> Result<(GrayImage, Vec<PreprocStep>), PreprocessError> {
    let mut current = img.clone();
    let mut trace = Vec::with_capacity(spec.steps.len());
    let mut stripped_reference: Option<GrayImage> = None;
    let mut skull_done = false;
    for &step in &spec.steps {
        log::debug!("preprocess step {step}");
        current = match step {
            PreprocStep::Equalization => equalize(&current),
            PreprocStep::SkullExtraction => {
                skull_done = true;
                skull_extract(&current)?.0
            }
            PreprocStep::Rotation | PreprocStep::Scaling => {
                let reference = reference.ok_or(PreprocessError::MissingReference(step))?;
                let reference = if skull_done {
                    if stripped_reference.is_none() {
                        stripped_reference = Some(skull_extract(reference)?.0);
                    }
                    stripped_reference.as_ref().expect("just set")
                } else {
                    reference
                };
                let (rotation, scale) = estimate(&current, reference)?;
                if step == PreprocStep::Rotation {
                    transform_about_centroid(&current, rotation, 1.0)?
                } else {
                    transform_about_centroid(&current, 0.0, scale)?
                }
            }
        };
        trace.push(step);
    }
    Ok((current, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::degrade::rotate;
    use crate::phantom::ellipse_phantom;

    #[test]
    fn spec_parsing() {
        let s: PreprocSpec = "rebs".parse().unwrap();
        assert_eq!(
            s.steps(),
            &[PreprocStep::Rotation, PreprocStep::Equalization, PreprocStep::SkullExtraction, PreprocStep::Scaling]
        );
        assert_eq!(s.to_string(), "rebs");
        assert_eq!("none".parse::<PreprocSpec>().unwrap(), PreprocSpec::none());
        assert_eq!(PreprocSpec::none().to_string(), "none");
        assert!("rr".parse::<PreprocSpec>().is_err());
        assert!("rx".parse::<PreprocSpec>().is_err());
        let json = serde_json::to_string(&s).unwrap();
        assert_eq!(json, "\"rebs\"");
        assert_eq!(serde_json::from_str::<PreprocSpec>(&json).unwrap(), s);
    }

    #[test]
    fn standard_grid_has_seven_entries() {
        let names: Vec<String> = PreprocSpec::standard_grid().iter().map(|s| s.to_string()).collect();
        assert_eq!(names, ["none", "r", "rb", "rs", "rbs", "e", "rebs"]);
    }

    #[test]
    fn empty_spec_is_identity() {
        let img = ellipse_phantom(64, 64);
        assert_eq!(apply(&PreprocSpec::none(), &img, None).unwrap(), img);
    }

    #[test]
    fn equalizing_a_constant_image() {
        let img = GrayImage::filled(10, 10, 42);
        assert_eq!(apply(&"e".parse().unwrap(), &img, None).unwrap(), img);
    }

    #[test]
    fn alignment_steps_need_reference() {
        let img = ellipse_phantom(64, 64);
        assert_eq!(
            apply(&"br".parse().unwrap(), &img, None).unwrap_err(),
            PreprocessError::MissingReference(PreprocStep::Rotation)
        );
    }

    #[test]
    fn steps_run_in_listed_order() {
        let reference = ellipse_phantom(128, 128);
        let moving = rotate(&reference, 5.0);
        let spec: PreprocSpec = "rebs".parse().unwrap();
        let (_, trace) = apply_traced(&spec, &moving, Some(&reference)).unwrap();
        assert_eq!(trace, spec.steps());
        let spec: PreprocSpec = "ser".parse().unwrap();
        let (_, trace) = apply_traced(&spec, &moving, Some(&reference)).unwrap();
        assert_eq!(trace, spec.steps());
    }

    #[test]
    fn rotation_step_undoes_rotation() {
        let reference = ellipse_phantom(128, 128);
        let moving = rotate(&reference, 8.0);
        let out = apply(&"r".parse().unwrap(), &moving, Some(&reference)).unwrap();
        let (rot, _) = estimate(&out, &reference).unwrap();
        assert!(rot.abs() < 1.0, "residual rotation {rot}");
    }
}
