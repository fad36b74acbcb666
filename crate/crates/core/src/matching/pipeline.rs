use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::descriptors::{describe, DescriptorMethod, DescriptorSet};
use crate::features::{detect, DetectorConfig, DetectorKind};
use crate::imagekit::GrayImage;

use super::{filter_matches, MatchError, MatchFilter, DEFAULT_LOWE_RATIO, DEFAULT_MNN_THRESHOLD};

/// Where a pipeline's descriptors come from.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum FeatureSource {
    Native {
        detector: DetectorKind,
        descriptor: DescriptorMethod,
    },
    /// Precomputed features looked up by method name.
    External(String),
}

/// A detector + descriptor + match filter combination, written as
/// `agast+sift`, `gftt+sift`, `orb` (= `orb+rbrief`) or `ext:<method>`,
/// optionally followed by `/lowe:<ratio>` or `/mnn:<threshold>`. Native
/// pipelines default to the Lowe ratio 0.75, external ones to mutual NN 0.95.
#[derive(Debug, Clone, PartialEq)]
pub struct Pipeline {
    pub source: FeatureSource,
    pub filter: MatchFilter,
}

impl Pipeline {
    pub fn native(detector: DetectorKind, descriptor: DescriptorMethod) -> Self {
        Self {
            source: FeatureSource::Native { detector, descriptor },
            filter: MatchFilter::LoweRatio(DEFAULT_LOWE_RATIO),
        }
    }

    pub fn external(method: impl Into<String>) -> Self {
        Self { source: FeatureSource::External(method.into()), filter: MatchFilter::MutualNn(DEFAULT_MNN_THRESHOLD) }
    }

    pub fn is_external(&self) -> bool {
        matches!(self.source, FeatureSource::External(_))
    }

    fn default_filter(&self) -> MatchFilter {
        match self.source {
            FeatureSource::Native { .. } => MatchFilter::LoweRatio(DEFAULT_LOWE_RATIO),
            FeatureSource::External(_) => MatchFilter::MutualNn(DEFAULT_MNN_THRESHOLD),
        }
    }

    /// Detects and describes features of `img`. `base` supplies detector
    /// parameters; its `kind` is replaced by the pipeline's detector.
    pub fn features(&self, img: &GrayImage, base: &DetectorConfig) -> Result<DescriptorSet, MatchError> {
        match &self.source {
            FeatureSource::Native { detector, descriptor } => {
                let cfg = DetectorConfig { kind: *detector, ..base.clone() };
                let kps = detect(img, &cfg)?;
                Ok(describe(img, &kps, *descriptor)?)
            }
            FeatureSource::External(_) => Err(MatchError::ExternalFeatures(self.to_string())),
        }
    }

    /// Number of filtered matches between two descriptor sets.
    pub fn count(&self, query: &DescriptorSet, reference: &DescriptorSet) -> Result<usize, MatchError> {
        Ok(filter_matches(query, reference, self.filter)?.len())
    }
}

impl fmt::Display for Pipeline {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.source {
            FeatureSource::Native { detector: DetectorKind::Orb, descriptor: DescriptorMethod::Rbrief } => {
                f.write_str("orb")?
            }
            FeatureSource::Native { detector, descriptor } => {
                let d = serde_json::to_value(detector).expect("enum serializes");
                let s = serde_json::to_value(descriptor).expect("enum serializes");
                write!(f, "{}+{}", d.as_str().unwrap_or_default(), s.as_str().unwrap_or_default())?
            }
            FeatureSource::External(m) => write!(f, "ext:{m}")?,
        }
        if self.filter != self.default_filter() {
            write!(f, "/{}", self.filter)?;
        }
        Ok(())
    }
}

impl FromStr for Pipeline {
    type Err = MatchError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = |reason: &str| MatchError::InvalidPipeline { spec: s.to_string(), reason: reason.to_string() };
        let (body, filter) = match s.split_once('/') {
            Some((b, f)) => (b, Some(f.parse::<MatchFilter>()?)),
            None => (s, None),
        };
        let mut pipeline = if let Some(method) = body.strip_prefix("ext:") {
            if method.is_empty() || method.contains(char::is_whitespace) {
                return Err(bad("external method name must be a non-empty word"));
            }
            Pipeline::external(method)
        } else {
            let (det, desc) = match body.split_once('+') {
                Some((d, x)) => (d, x),
                None if body == "orb" => ("orb", "rbrief"),
                None => return Err(bad("expected <detector>+<descriptor>, `orb` or `ext:<method>`")),
            };
            let detector = match det {
                "agast" => DetectorKind::Agast,
                "gftt" => DetectorKind::Gftt,
                "orb" => DetectorKind::Orb,
                _ => return Err(bad("unknown detector (agast, gftt, orb)")),
            };
            let descriptor = match desc {
                "sift" => DescriptorMethod::Sift,
                "rbrief" => DescriptorMethod::Rbrief,
                _ => return Err(bad("unknown descriptor (sift, rbrief)")),
            };
            if descriptor == DescriptorMethod::Rbrief && detector != DetectorKind::Orb {
                return Err(bad("rbrief needs oriented keypoints from the orb detector"));
            }
            Pipeline::native(detector, descriptor)
        };
        if let Some(f) = filter {
            pipeline.filter = f;
        }
        Ok(pipeline)
    }
}

impl Serialize for Pipeline {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Pipeline {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

/// Number of filtered matches between two images under a native pipeline
/// with default detector parameters.
pub fn match_count(a: &GrayImage, b: &GrayImage, pipeline: &Pipeline) -> Result<usize, MatchError> {
    match_count_with(a, b, pipeline, &DetectorConfig::default())
}

pub fn match_count_with(
    a: &GrayImage,
    b: &GrayImage,
    pipeline: &Pipeline,
    base: &DetectorConfig,
) -> Result<usize, MatchError> {
    let fa = pipeline.features(a, base)?;
    let fb = pipeline.features(b, base)?;
    pipeline.count(&fa, &fb)
}
