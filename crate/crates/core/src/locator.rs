//! Slice localization: match a query slice against every slice of a
//! reference stack, standardize and smooth the match counts, and pick the
//! best index.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::descriptors::{DescriptorError, DescriptorSet, FeatureStore};
use crate::features::DetectorConfig;
use crate::imagekit::{GrayImage, Plane, SliceStack};
use crate::matching::{FeatureSource, MatchError, Pipeline};
use crate::metrics::{snr_series, LocalizationOutcome, MetricsError, SnrSeries};
use crate::preprocess::{self, PreprocSpec, PreprocessError};

pub const DEFAULT_WINDOW: usize = 7;

#[derive(Debug, Error)]
pub enum LocatorError {
    #[error("reference stack is empty")]
    EmptyStack,
    #[error("hemisphere restriction needs a sagittal stack, got {0}")]
    HemisphereOnNonSagittal(Plane),
    #[error("pipeline `{0}` reads external features, so preprocessing `{1}` cannot be applied")]
    PreprocWithExternal(String, PreprocSpec),
    #[error("pipeline `{0}` reads external features but no feature store was given")]
    MissingStore(String),
    #[error("invalid hemisphere `{0}` (none, left, right)")]
    InvalidHemisphere(String),
    #[error(transparent)]
    Preprocess(#[from] PreprocessError),
    #[error(transparent)]
    Match(#[from] MatchError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Descriptor(#[from] DescriptorError),
}

/// Half of a sagittal stack the search is limited to. The left half holds
/// the lower slice positions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Hemisphere {
    #[default]
    None,
    Left,
    Right,
}

impl Hemisphere {
    /// Positions searched in a stack of `n` slices. Both halves include the
    /// middle slice when `n` is odd.
    pub fn range(self, n: usize) -> Range<usize> {
        match self {
            Hemisphere::None => 0..n,
            Hemisphere::Left => 0..n.div_ceil(2),
            Hemisphere::Right => n / 2..n,
        }
    }

    /// Side of the stack that position `pos` of `n` lies on.
    pub fn of_position(pos: usize, n: usize) -> Hemisphere {
        if 2 * pos < n {
            Hemisphere::Left
        } else {
            Hemisphere::Right
        }
    }
}

impl fmt::Display for Hemisphere {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Hemisphere::None => "none",
            Hemisphere::Left => "left",
            Hemisphere::Right => "right",
        })
    }
}

impl FromStr for Hemisphere {
    type Err = LocatorError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "none" => Ok(Hemisphere::None),
            "left" => Ok(Hemisphere::Left),
            "right" => Ok(Hemisphere::Right),
            _ => Err(LocatorError::InvalidHemisphere(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocatorConfig {
    pub pipeline: Pipeline,
    pub preproc: PreprocSpec,
    /// Moving-average window, odd.
    pub window: usize,
    pub hemisphere: Hemisphere,
    /// Detector parameters for native pipelines (`kind` is taken from the pipeline).
    pub detector: DetectorConfig,
}

impl LocatorConfig {
    pub fn new(pipeline: Pipeline) -> Self {
        Self {
            pipeline,
            preproc: PreprocSpec::none(),
            window: DEFAULT_WINDOW,
            hemisphere: Hemisphere::None,
            detector: DetectorConfig::default(),
        }
    }
}

/// Result of locating one query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Location {
    /// Slice index (not position) with the highest smoothed SNR.
    pub best_index: i64,
    /// Slice index with the highest raw SNR.
    pub raw_best_index: i64,
    pub peak_snr: f64,
    pub series: SnrSeries,
    /// Positions the argmax was taken over.
    pub searched: Range<usize>,
}

/// Affine map from query slice index to expected reference slice index:
/// `round(offset + scale * index)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IndexMap {
    pub offset: f64,
    pub scale: f64,
}

impl Default for IndexMap {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl IndexMap {
    pub const IDENTITY: IndexMap = IndexMap { offset: 0.0, scale: 1.0 };

    pub fn expected(&self, query_index: i64) -> i64 {
        (self.offset + self.scale * query_index as f64).round() as i64
    }
}

/// Reference stack with its descriptors computed once.
pub struct Locator<'a> {
    stack: &'a SliceStack,
    cfg: LocatorConfig,
    store: Option<&'a FeatureStore>,
    reference: Vec<DescriptorSet>,
}

impl<'a> Locator<'a> {
    /// Prepares `stack` for queries. External pipelines read reference
    /// features from `store`.
    pub fn new(
        stack: &'a SliceStack,
        cfg: LocatorConfig,
        store: Option<&'a FeatureStore>,
    ) -> Result<Self, LocatorError> {
        if stack.is_empty() {
            return Err(LocatorError::EmptyStack);
        }
        if cfg.hemisphere != Hemisphere::None && stack.plane() != Plane::Sagittal {
            return Err(LocatorError::HemisphereOnNonSagittal(stack.plane()));
        }
        if cfg.window.is_multiple_of(2) {
            return Err(MetricsError::EvenWindow(cfg.window).into());
        }
        let reference = match &cfg.pipeline.source {
            FeatureSource::Native { .. } => stack
                .slices()
                .par_iter()
                .map(|img| cfg.pipeline.features(img, &cfg.detector))
                .collect::<Result<Vec<_>, _>>()?,
            FeatureSource::External(method) => {
                if !cfg.preproc.is_empty() {
                    return Err(LocatorError::PreprocWithExternal(cfg.pipeline.to_string(), cfg.preproc.clone()));
                }
                let store = store.ok_or_else(|| LocatorError::MissingStore(cfg.pipeline.to_string()))?;
                stack
                    .indices()
                    .map(|i| store.get(stack.subject_id(), i, method).cloned())
                    .collect::<Result<Vec<_>, _>>()?
            }
        };
        Ok(Self { stack, cfg, store, reference })
    }

    pub fn stack(&self) -> &SliceStack {
        self.stack
    }

    pub fn config(&self) -> &LocatorConfig {
        &self.cfg
    }

    pub fn reference_features(&self) -> &[DescriptorSet] {
        &self.reference
    }

    /// Slice that alignment steps register queries to: position `n / 2`.
    pub fn alignment_reference(&self) -> &GrayImage {
        self.stack.slice(self.stack.len() / 2)
    }

    /// Applies the configured preprocessing to a query image.
    pub fn preprocess_query(&self, query: &GrayImage) -> Result<GrayImage, LocatorError> {
        if self.cfg.preproc.is_empty() {
            return Ok(query.clone());
        }
        Ok(preprocess::apply(&self.cfg.preproc, query, Some(self.alignment_reference()))?)
    }

    /// Query descriptors: computed from the preprocessed image for native
    /// pipelines, looked up by `(subject, index)` for external ones.
    pub fn query_features(&self, query: &GrayImage, subject: &str, index: i64) -> Result<DescriptorSet, LocatorError> {
        match &self.cfg.pipeline.source {
            FeatureSource::Native { .. } => {
                let img = self.preprocess_query(query)?;
                Ok(self.cfg.pipeline.features(&img, &self.cfg.detector)?)
            }
            FeatureSource::External(method) => {
                let store = self.store.ok_or_else(|| LocatorError::MissingStore(self.cfg.pipeline.to_string()))?;
                Ok(store.get(subject, index, method)?.clone())
            }
        }
    }

    /// Locates a query image under the configured hemisphere. Native pipelines only.
    pub fn locate(&self, query: &GrayImage) -> Result<Location, LocatorError> {
        if let FeatureSource::External(_) = self.cfg.pipeline.source {
            return Err(MatchError::ExternalFeatures(self.cfg.pipeline.to_string()).into());
        }
        let features = self.query_features(query, "", 0)?;
        self.locate_features(&features, self.cfg.hemisphere)
    }

    /// Locates a query given its descriptors, searching the positions of
    /// `hemisphere`.
    pub fn locate_features(&self, query: &DescriptorSet, hemisphere: Hemisphere) -> Result<Location, LocatorError> {
        if hemisphere != Hemisphere::None && self.stack.plane() != Plane::Sagittal {
            return Err(LocatorError::HemisphereOnNonSagittal(self.stack.plane()));
        }
        let counts = self
            .reference
            .par_iter()
            .map(|r| self.cfg.pipeline.count(query, r).map(|c| c as u64))
            .collect::<Result<Vec<_>, _>>()?;
        let mut series = snr_series(&counts)?;
        series.reference_subject = self.stack.subject_id().to_string();
        series.smooth(self.cfg.window)?;
        let searched = hemisphere.range(self.stack.len());
        let best = argmax(&series.smoothed, searched.clone());
        let raw_best = argmax(&series.snr, searched.clone());
        Ok(Location {
            best_index: self.stack.index_of(best),
            raw_best_index: self.stack.index_of(raw_best),
            peak_snr: series.smoothed[best],
            series,
            searched,
        })
    }

    /// Locates every slice of `queries` (restricted to `options.query_range`)
    /// and compares the result with `options.index_map`. Queries whose
    /// expected index falls outside the reference stack are skipped.
    pub fn locate_all(&self, queries: &SliceStack, options: &LocateAllOptions) -> Result<LocateAll, LocatorError> {
        let mut result = LocateAll::default();
        for pos in 0..queries.len() {
            let qi = queries.index_of(pos);
            if let Some((lo, hi)) = options.query_range {
                if qi < lo || qi > hi {
                    continue;
                }
            }
            let expected = options.index_map.expected(qi);
            let Some(expected_pos) = self.stack.position_of(expected) else {
                result.skipped += 1;
                continue;
            };
            let hemisphere =
                if options.same_hemisphere { Hemisphere::of_position(pos, queries.len()) } else { self.cfg.hemisphere };
            let features = self.query_features(queries.slice(pos), queries.subject_id(), qi)?;
            let loc = self.locate_features(&features, hemisphere)?;
            let mut outcome = LocalizationOutcome {
                query_subject: queries.subject_id().to_string(),
                query_index: qi,
                expected_index: expected,
                best_index: loc.best_index,
                raw_best_index: loc.raw_best_index,
                peak_snr: loc.peak_snr,
                expected_snr: loc.searched.contains(&expected_pos).then(|| loc.series.smoothed[expected_pos]),
                correct_within: BTreeMap::new(),
            };
            outcome.mark(&options.d_values);
            result.outcomes.push(outcome);
            if options.keep_series {
                result.series.push(loc.series);
            }
        }
        Ok(result)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocateAllOptions {
    pub index_map: IndexMap,
    /// Inclusive range of query slice indices to locate.
    pub query_range: Option<(i64, i64)>,
    /// Search only the reference half on the query slice's side (sagittal).
    pub same_hemisphere: bool,
    pub d_values: Vec<u32>,
    pub keep_series: bool,
}

impl Default for LocateAllOptions {
    fn default() -> Self {
        Self {
            index_map: IndexMap::IDENTITY,
            query_range: None,
            same_hemisphere: false,
            d_values: vec![5],
            keep_series: false,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LocateAll {
    pub outcomes: Vec<LocalizationOutcome>,
    /// Series in the order of `outcomes`, when requested.
    pub series: Vec<SnrSeries>,
    /// Queries whose expected index is not in the reference stack.
    pub skipped: usize,
}

/// Position of the largest value within `range`; ties go to the lower position.
fn argmax(values: &[f64], range: Range<usize>) -> usize {
    let mut best = range.start;
    for i in range {
        if values[i] > values[best] {
            best = i;
        }
    }
    best
}

/// Locates `query` in `stack`, returning the best slice index and the SNR series.
pub fn locate(query: &GrayImage, stack: &SliceStack, cfg: &LocatorConfig) -> Result<(i64, SnrSeries), LocatorError> {
    let loc = Locator::new(stack, cfg.clone(), None)?.locate(query)?;
    Ok((loc.best_index, loc.series))
}

/// Locates every slice of `query_stack` in `ref_stack`.
pub fn locate_all(
    query_stack: &SliceStack,
    ref_stack: &SliceStack,
    cfg: &LocatorConfig,
    index_map: IndexMap,
) -> Result<Vec<LocalizationOutcome>, LocatorError> {
    let locator = Locator::new(ref_stack, cfg.clone(), None)?;
    let options = LocateAllOptions { index_map, ..Default::default() };
    Ok(locator.locate_all(query_stack, &options)?.outcomes)
}
