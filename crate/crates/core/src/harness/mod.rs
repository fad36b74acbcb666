//! Experiment orchestration: identity, robustness, cross-patient and atlas
//! studies over slice stacks, producing auditable reports.
//!
//! A run is described by an [`ExperimentSpec`] (usually read from JSON) and
//! produces an [`ExperimentReport`] whose aggregates can all be recomputed
//! from the per-query records it stores.

mod plot;
mod report;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::degrade::{Degradation, DegradeError};
use crate::descriptors::{DescriptorError, FeatureStore};
use crate::features::DetectorConfig;
use crate::imagekit::{load_stack, ImageError, Plane, SliceStack};
use crate::locator::{IndexMap, LocateAll, LocateAllOptions, Locator, LocatorConfig, LocatorError, DEFAULT_WINDOW};
use crate::matching::Pipeline;
use crate::metrics::{robustness, SnrSeries};
use crate::phantom::{gamma_warp, SyntheticVolume, VolumeParams};
use crate::preprocess::PreprocSpec;

pub use report::{
    emit_report, summary_csv, Cell, CellSummary, ExperimentReport, Provenance, ReportFormat, RobustnessRow, SelfSnr,
    StackDigest,
};

/// Environment variable capping the number of worker threads.
pub const THREADS_ENV: &str = "SLICEFIND_THREADS";

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid experiment spec: {0}")]
    InvalidSpec(String),
    #[error("cannot read experiment spec {path}: {reason}")]
    SpecParse { path: PathBuf, reason: String },
    #[error("I/O error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Descriptor(#[from] DescriptorError),
    #[error(transparent)]
    Locator(#[from] LocatorError),
    #[error(transparent)]
    Degrade(#[from] DegradeError),
    #[error("cannot build thread pool: {0}")]
    ThreadPool(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Identity,
    Robustness,
    CrossPatient,
    Atlas,
}

/// Where a stack comes from: a manifest on disk (relative paths resolve
/// against the spec file's directory) or the procedural generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StackSource {
    Manifest(PathBuf),
    Synthetic(SyntheticStack),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticStack {
    pub subject_id: String,
    pub seed: u64,
    pub slices: usize,
    pub size: usize,
    #[serde(default = "default_plane")]
    pub plane: Plane,
    #[serde(default)]
    pub structures: Option<usize>,
    /// Left-right symmetric volume (slice `k` equals slice `n - 1 - k`).
    #[serde(default)]
    pub mirrored: bool,
    /// Jitter the anatomy to make a different "subject" of the same seed.
    #[serde(default)]
    pub perturb: Option<Perturbation>,
    /// Gamma curve applied to every slice, changing the intensity statistics.
    #[serde(default)]
    pub gamma: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Perturbation {
    pub seed: u64,
    pub amount: f64,
}

fn default_plane() -> Plane {
    Plane::Axial
}

impl SyntheticStack {
    pub fn new(subject_id: impl Into<String>, seed: u64, slices: usize, size: usize) -> Self {
        Self {
            subject_id: subject_id.into(),
            seed,
            slices,
            size,
            plane: Plane::Axial,
            structures: None,
            mirrored: false,
            perturb: None,
            gamma: None,
        }
    }

    pub fn generate(&self) -> Result<SliceStack, HarnessError> {
        if self.slices == 0 || self.size < 16 {
            return Err(HarnessError::InvalidSpec(format!(
                "synthetic stack `{}` needs at least one slice and 16 px",
                self.subject_id
            )));
        }
        let mut params = VolumeParams::new(self.size, self.slices, self.seed);
        if let Some(s) = self.structures {
            params.structures = s;
        }
        let mut volume = SyntheticVolume::generate(params);
        if let Some(p) = self.perturb {
            volume = volume.perturbed(p.seed, p.amount);
        }
        if self.mirrored {
            volume = volume.mirrored();
        }
        let stack = volume.stack(&self.subject_id, self.plane);
        Ok(match self.gamma {
            Some(g) => stack.map_slices(|img| gamma_warp(img, g)),
            None => stack,
        })
    }
}

impl StackSource {
    pub fn load(&self, base_dir: &Path) -> Result<SliceStack, HarnessError> {
        match self {
            StackSource::Manifest(p) => Ok(load_stack(base_dir.join(p))?),
            StackSource::Synthetic(s) => s.generate(),
        }
    }
}

/// Full description of one experiment. Serialized with every default filled
/// in, which is what the config hash is computed over.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub kind: ExperimentKind,
    pub methods: Vec<Pipeline>,
    /// Defaults to the seven-combination grid for cross-patient and atlas
    /// runs and to `none` otherwise.
    #[serde(default)]
    pub preprocs: Option<Vec<PreprocSpec>>,
    #[serde(default)]
    pub degradations: Vec<Degradation>,
    #[serde(default = "default_d_values")]
    pub d_values: Vec<u32>,
    pub stacks: Vec<StackSource>,
    /// Subject id of the reference stack in cross-patient runs; the first
    /// stack when absent.
    #[serde(default)]
    pub reference: Option<String>,
    /// Reference stacks of atlas runs, at most one per plane.
    #[serde(default)]
    pub atlases: Vec<StackSource>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_window")]
    pub window: usize,
    /// Query slice indices whose SNR curves are kept for plotting.
    #[serde(default = "default_plot_slices")]
    pub plot_slices: Vec<i64>,
    #[serde(default)]
    pub index_map: IndexMap,
    #[serde(default)]
    pub query_range: Option<(i64, i64)>,
    /// Directory of external feature files for `ext:` methods.
    #[serde(default)]
    pub features_dir: Option<PathBuf>,
    #[serde(default)]
    pub detector: DetectorConfig,
}

fn default_d_values() -> Vec<u32> {
    vec![5]
}

fn default_window() -> usize {
    DEFAULT_WINDOW
}

fn default_plot_slices() -> Vec<i64> {
    vec![25, 50, 100, 150]
}

impl ExperimentSpec {
    pub fn new(kind: ExperimentKind, methods: Vec<Pipeline>, stacks: Vec<StackSource>) -> Self {
        Self {
            kind,
            methods,
            preprocs: None,
            degradations: Vec::new(),
            d_values: default_d_values(),
            stacks,
            reference: None,
            atlases: Vec::new(),
            seed: 0,
            window: DEFAULT_WINDOW,
            plot_slices: default_plot_slices(),
            index_map: IndexMap::IDENTITY,
            query_range: None,
            features_dir: None,
            detector: DetectorConfig::default(),
        }
    }

    /// Reads a spec from JSON.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, HarnessError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| HarnessError::Io { path: path.to_path_buf(), source })?;
        serde_json::from_str(&text)
            .map_err(|e| HarnessError::SpecParse { path: path.to_path_buf(), reason: e.to_string() })
    }

    pub fn preproc_list(&self) -> Vec<PreprocSpec> {
        match &self.preprocs {
            Some(p) => p.clone(),
            None => match self.kind {
                ExperimentKind::CrossPatient | ExperimentKind::Atlas => PreprocSpec::standard_grid(),
                ExperimentKind::Identity | ExperimentKind::Robustness => vec![PreprocSpec::none()],
            },
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::InvalidSpec(m));
        if self.methods.is_empty() {
            return bad("`methods` must not be empty".into());
        }
        if self.stacks.is_empty() {
            return bad("`stacks` must not be empty".into());
        }
        if self.d_values.is_empty() {
            return bad("`d_values` must not be empty".into());
        }
        if self.window.is_multiple_of(2) {
            return bad(format!("`window` must be odd, got {}", self.window));
        }
        if self.preproc_list().is_empty() {
            return bad("`preprocs` must not be empty".into());
        }
        if !(self.index_map.scale.is_finite() && self.index_map.offset.is_finite()) {
            return bad("`index_map` must be finite".into());
        }
        if let Some((lo, hi)) = self.query_range {
            if lo > hi {
                return bad(format!("`query_range` {lo}..{hi} is empty"));
            }
        }
        for d in &self.degradations {
            d.validate()?;
        }
        self.detector.validate().map_err(|e| HarnessError::InvalidSpec(e.to_string()))?;
        match self.kind {
            ExperimentKind::Robustness if self.degradations.is_empty() => {
                bad("robustness runs need at least one degradation".into())
            }
            ExperimentKind::CrossPatient if self.stacks.len() < 2 => {
                bad("cross-patient runs need a reference and at least one query stack".into())
            }
            ExperimentKind::Atlas if self.atlases.is_empty() => bad("atlas runs need `atlases`".into()),
            _ => Ok(()),
        }
    }

    /// SHA-256 of the spec's JSON form with all defaults filled in.
    pub fn config_hash(&self) -> String {
        // serde_json::Value keeps object keys sorted, so this is canonical.
        let value = serde_json::to_value(self).expect("spec serializes");
        hex::encode(Sha256::digest(value.to_string().as_bytes()))
    }
}

/// Reads the external feature store used by `ext:` pipelines.
pub fn ingest_features(dir: impl AsRef<Path>) -> Result<FeatureStore, HarnessError> {
    Ok(FeatureStore::ingest(dir)?)
}

/// Runs `spec`, resolving relative paths against `base_dir`. Uses at most
/// `SLICEFIND_THREADS` worker threads when that variable is set.
pub fn run(spec: &ExperimentSpec, base_dir: &Path) -> Result<ExperimentReport, HarnessError> {
    let threads = match std::env::var(THREADS_ENV) {
        Ok(v) => Some(
            v.trim()
                .parse::<usize>()
                .ok()
                .filter(|&n| n > 0)
                .ok_or_else(|| HarnessError::InvalidSpec(format!("{THREADS_ENV}={v} is not a positive integer")))?,
        ),
        Err(_) => None,
    };
    run_with_threads(spec, base_dir, threads)
}

/// Like [`run`] with an explicit thread cap (`None` uses rayon's default).
pub fn run_with_threads(
    spec: &ExperimentSpec,
    base_dir: &Path,
    threads: Option<usize>,
) -> Result<ExperimentReport, HarnessError> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| HarnessError::ThreadPool(e.to_string()))?;
    pool.install(|| run_in_pool(spec, base_dir))
}

fn run_in_pool(spec: &ExperimentSpec, base_dir: &Path) -> Result<ExperimentReport, HarnessError> {
    spec.validate()?;
    let ctx = Context::load(spec, base_dir)?;
    let mut report = match spec.kind {
        ExperimentKind::Identity => run_identity(&ctx),
        ExperimentKind::Robustness => run_robustness(&ctx),
        ExperimentKind::CrossPatient => run_cross_patient(&ctx)?,
        ExperimentKind::Atlas => run_atlas(&ctx)?,
    };
    report.finish();
    Ok(report)
}

/// Loaded inputs shared by every cell of a run.
struct Context<'a> {
    spec: &'a ExperimentSpec,
    stacks: Vec<SliceStack>,
    atlases: Vec<SliceStack>,
    store: Option<FeatureStore>,
}

impl<'a> Context<'a> {
    fn load(spec: &'a ExperimentSpec, base_dir: &Path) -> Result<Self, HarnessError> {
        let stacks = spec.stacks.iter().map(|s| s.load(base_dir)).collect::<Result<Vec<_>, _>>()?;
        let atlases = spec.atlases.iter().map(|s| s.load(base_dir)).collect::<Result<Vec<_>, _>>()?;
        let mut seen = BTreeMap::new();
        for s in stacks.iter().chain(&atlases) {
            if seen.insert(s.subject_id().to_string(), ()).is_some() {
                return Err(HarnessError::InvalidSpec(format!(
                    "subject id `{}` is used by two stacks",
                    s.subject_id()
                )));
            }
        }
        let store = spec.features_dir.as_ref().map(|d| ingest_features(base_dir.join(d))).transpose()?;
        Ok(Self { spec, stacks, atlases, store })
    }

    fn locator<'s>(
        &'s self,
        stack: &'s SliceStack,
        pipeline: &Pipeline,
        preproc: &PreprocSpec,
    ) -> Result<Locator<'s>, LocatorError> {
        let mut cfg = LocatorConfig::new(pipeline.clone());
        cfg.preproc = preproc.clone();
        cfg.window = self.spec.window;
        cfg.detector = self.spec.detector.clone();
        Locator::new(stack, cfg, self.store.as_ref())
    }

    fn options(&self, index_map: IndexMap, same_hemisphere: bool) -> LocateAllOptions {
        LocateAllOptions {
            index_map,
            query_range: self.spec.query_range,
            same_hemisphere,
            d_values: self.spec.d_values.clone(),
            keep_series: true,
        }
    }

    fn report(&self, cells: Vec<Cell>) -> ExperimentReport {
        let digests = self.stacks.iter().chain(&self.atlases).map(StackDigest::of).collect();
        ExperimentReport::new(self.spec, digests, cells)
    }
}

/// Accumulates located queries into a cell.
fn absorb(cell: &mut Cell, located: LocateAll, plot_slices: &[i64]) {
    cell.skipped += located.skipped;
    for (outcome, series) in located.outcomes.into_iter().zip(located.series) {
        if plot_slices.contains(&outcome.query_index) {
            cell.curves.push(series);
        }
        cell.outcomes.push(outcome);
    }
}

/// Raw SNR of the query's own (expected) slice, and whether its count is the
/// series maximum.
fn self_snr(series: &SnrSeries, stack: &SliceStack, subject: &str, query_index: i64, expected_index: i64) -> SelfSnr {
    let pos = stack.position_of(expected_index).expect("located queries have an expected slice");
    let max = series.counts.iter().copied().max().unwrap_or(0);
    SelfSnr {
        query_subject: subject.to_string(),
        query_index,
        snr: series.snr[pos],
        baseline: None,
        robustness: None,
        self_is_max: series.counts[pos] == max,
        degenerate: series.degenerate,
    }
}

/// Every slice of every stack located in its own stack.
fn run_identity(ctx: &Context) -> ExperimentReport {
    let spec = ctx.spec;
    let jobs: Vec<(Plane, &Pipeline, PreprocSpec)> = planes(&ctx.stacks)
        .into_iter()
        .flat_map(|plane| {
            spec.methods.iter().flat_map(move |m| spec.preproc_list().into_iter().map(move |p| (plane, m, p)))
        })
        .collect();
    let cells = jobs
        .par_iter()
        .map(|(plane, method, preproc)| {
            let mut cell = Cell::new(method, preproc, "none", *plane, false);
            let result = (|| -> Result<(), HarnessError> {
                for stack in ctx.stacks.iter().filter(|s| s.plane() == *plane) {
                    let located = ctx
                        .locator(stack, method, preproc)?
                        .locate_all(stack, &ctx.options(IndexMap::IDENTITY, false))?;
                    for (o, s) in located.outcomes.iter().zip(&located.series) {
                        cell.self_snr.push(self_snr(s, stack, stack.subject_id(), o.query_index, o.expected_index));
                    }
                    cell.set_reference(stack);
                    absorb(&mut cell, located, &spec.plot_slices);
                }
                Ok(())
            })();
            cell.fail_on(result);
            cell
        })
        .collect();
    ctx.report(cells)
}

/// Degraded queries located in their own clean stack; one clean cell plus
/// one cell per degradation for each method and preprocessing.
fn run_robustness(ctx: &Context) -> ExperimentReport {
    let spec = ctx.spec;
    let jobs: Vec<(Plane, &Pipeline, PreprocSpec)> = planes(&ctx.stacks)
        .into_iter()
        .flat_map(|plane| {
            spec.methods.iter().flat_map(move |m| spec.preproc_list().into_iter().map(move |p| (plane, m, p)))
        })
        .collect();
    let cells: Vec<Vec<Cell>> =
        jobs.par_iter().map(|(plane, method, preproc)| robustness_cells(ctx, *plane, method, preproc)).collect();
    ctx.report(cells.into_iter().flatten().collect())
}

fn robustness_cells(ctx: &Context, plane: Plane, method: &Pipeline, preproc: &PreprocSpec) -> Vec<Cell> {
    let spec = ctx.spec;
    let mut clean = Cell::new(method, preproc, "none", plane, false);
    let mut degraded: Vec<Cell> =
        spec.degradations.iter().map(|d| Cell::new(method, preproc, &d.to_string(), plane, false)).collect();
    let result = (|| -> Result<(), HarnessError> {
        for stack in ctx.stacks.iter().filter(|s| s.plane() == plane) {
            let locator = ctx.locator(stack, method, preproc)?;
            let options = ctx.options(IndexMap::IDENTITY, false);
            let located = locator.locate_all(stack, &options)?;
            let baseline: BTreeMap<i64, f64> = located
                .outcomes
                .iter()
                .zip(&located.series)
                .map(|(o, s)| {
                    let rec = self_snr(s, stack, stack.subject_id(), o.query_index, o.expected_index);
                    clean.self_snr.push(rec.clone());
                    (o.query_index, rec.snr)
                })
                .collect();
            clean.set_reference(stack);
            absorb(&mut clean, located, &spec.plot_slices);

            for (d, cell) in spec.degradations.iter().zip(degraded.iter_mut()) {
                let queries = degrade_stack(stack, d, spec.seed)?;
                let located = locator.locate_all(&queries, &options)?;
                for (o, s) in located.outcomes.iter().zip(&located.series) {
                    let mut rec = self_snr(s, stack, stack.subject_id(), o.query_index, o.expected_index);
                    let base = baseline[&o.query_index];
                    rec.baseline = Some(base);
                    rec.robustness = robustness(rec.snr, base).ok();
                    cell.self_snr.push(rec);
                }
                cell.set_reference(stack);
                absorb(cell, located, &spec.plot_slices);
            }
        }
        Ok(())
    })();
    if let Err(e) = result {
        let msg = e.to_string();
        clean.error = Some(msg.clone());
        for c in &mut degraded {
            c.error = Some(msg.clone());
        }
    }
    std::iter::once(clean).chain(degraded).collect()
}

/// Applies `d` to every slice; each slice gets its own noise draw derived
/// from `seed` and its index.
fn degrade_stack(stack: &SliceStack, d: &Degradation, seed: u64) -> Result<SliceStack, HarnessError> {
    let slices = stack
        .slices()
        .iter()
        .enumerate()
        .map(|(pos, img)| d.apply(img, seed.wrapping_add(stack.index_of(pos) as u64)))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(SliceStack::new(stack.subject_id(), stack.plane(), stack.slice_thickness_mm(), stack.first_index(), slices)?)
}

/// Every slice of every non-reference stack located in the reference stack.
fn run_cross_patient(ctx: &Context) -> Result<ExperimentReport, HarnessError> {
    let spec = ctx.spec;
    let reference =
        match &spec.reference {
            Some(id) => ctx.stacks.iter().find(|s| s.subject_id() == id).ok_or_else(|| {
                HarnessError::InvalidSpec(format!("reference subject `{id}` is not among the stacks"))
            })?,
            None => &ctx.stacks[0],
        };
    let queries: Vec<&SliceStack> = ctx
        .stacks
        .iter()
        .filter(|s| s.subject_id() != reference.subject_id() && s.plane() == reference.plane())
        .collect();
    if queries.is_empty() {
        return Err(HarnessError::InvalidSpec(format!(
            "no query stacks share the plane of `{}`",
            reference.subject_id()
        )));
    }
    let cells = reference_cells(ctx, reference, &queries);
    Ok(ctx.report(cells))
}

/// Query stacks located in the atlas of their plane. Sagittal atlases also
/// get a cell restricted to the query's own hemisphere.
fn run_atlas(ctx: &Context) -> Result<ExperimentReport, HarnessError> {
    let mut cells = Vec::new();
    let mut seen = Vec::new();
    for atlas in &ctx.atlases {
        if seen.contains(&atlas.plane()) {
            return Err(HarnessError::InvalidSpec(format!("two atlases for the {} plane", atlas.plane())));
        }
        seen.push(atlas.plane());
        let queries: Vec<&SliceStack> = ctx.stacks.iter().filter(|s| s.plane() == atlas.plane()).collect();
        if queries.is_empty() {
            log::warn!("atlas `{}` ({}) has no query stacks in its plane", atlas.subject_id(), atlas.plane());
            continue;
        }
        cells.extend(reference_cells(ctx, atlas, &queries));
    }
    if cells.is_empty() {
        return Err(HarnessError::InvalidSpec("no query stack shares a plane with any atlas".into()));
    }
    Ok(ctx.report(cells))
}

fn reference_cells(ctx: &Context, reference: &SliceStack, queries: &[&SliceStack]) -> Vec<Cell> {
    let spec = ctx.spec;
    let restricted: &[bool] = if reference.plane() == Plane::Sagittal { &[false, true] } else { &[false] };
    let jobs: Vec<(&Pipeline, PreprocSpec, bool)> = spec
        .methods
        .iter()
        .flat_map(|m| {
            spec.preproc_list().into_iter().flat_map(move |p| restricted.iter().map(move |&r| (m, p.clone(), r)))
        })
        .collect();
    jobs.par_iter()
        .map(|(method, preproc, restricted)| {
            let mut cell = Cell::new(method, preproc, "none", reference.plane(), *restricted);
            cell.set_reference(reference);
            let result = (|| -> Result<(), HarnessError> {
                let locator = ctx.locator(reference, method, preproc)?;
                for q in queries {
                    let located = locator.locate_all(q, &ctx.options(spec.index_map, *restricted))?;
                    absorb(&mut cell, located, &spec.plot_slices);
                }
                Ok(())
            })();
            cell.fail_on(result);
            cell
        })
        .collect()
}

fn planes(stacks: &[SliceStack]) -> Vec<Plane> {
    let mut p: Vec<Plane> = stacks.iter().map(|s| s.plane()).collect();
    p.sort();
    p.dedup();
    p
}
