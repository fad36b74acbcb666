use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{plot, ExperimentKind, ExperimentSpec, HarnessError};
use crate::degrade::Degradation;
use crate::imagekit::{Plane, SliceStack};
use crate::locator::Hemisphere;
use crate::matching::Pipeline;
use crate::metrics::{accuracy, cumulative_distance, LocalizationOutcome, SnrSeries};
use crate::preprocess::PreprocSpec;

/// Identifies a stack's pixels so a report can be tied to its inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackDigest {
    pub subject_id: String,
    pub plane: Plane,
    pub first_index: i64,
    pub slices: usize,
    pub width: usize,
    pub height: usize,
    /// SHA-256 over the dimensions and raw pixels of every slice.
    pub sha256: String,
}

impl StackDigest {
    pub fn of(stack: &SliceStack) -> Self {
        let mut h = Sha256::new();
        let (width, height) = stack.slices().first().map(|s| s.dimensions()).unwrap_or((0, 0));
        for img in stack.slices() {
            h.update((img.width() as u64).to_le_bytes());
            h.update((img.height() as u64).to_le_bytes());
            h.update(img.as_raw());
        }
        Self {
            subject_id: stack.subject_id().to_string(),
            plane: stack.plane(),
            first_index: stack.first_index(),
            slices: stack.len(),
            width,
            height,
            sha256: hex::encode(h.finalize()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    /// SHA-256 of the canonical spec JSON.
    pub config_hash: String,
    pub seed: u64,
    pub tool_version: String,
    pub stacks: Vec<StackDigest>,
}

/// Self-slice SNR of one query: the raw SNR at the query's own slice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelfSnr {
    pub query_subject: String,
    pub query_index: i64,
    pub snr: f64,
    /// Self-SNR of the clean query (robustness cells).
    pub baseline: Option<f64>,
    /// `snr / baseline`; absent when the baseline is zero.
    pub robustness: Option<f64>,
    /// The own slice has the largest match count.
    pub self_is_max: bool,
    pub degenerate: bool,
}

/// Aggregates of one cell, all derived from its stored records.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub n: usize,
    /// `d -> A_d`.
    pub accuracy: BTreeMap<u32, f64>,
    pub cumulative_distance: u64,
    /// Mean smoothed SNR at the chosen slice.
    pub mean_snr: Option<f64>,
    /// Queries whose chosen slice lies outside the half of a sagittal
    /// reference stack that holds the expected slice.
    pub opposite_side: Option<usize>,
    pub mean_self_snr: Option<f64>,
    /// Fraction of non-degenerate queries whose own slice has the top count.
    pub self_max_fraction: Option<f64>,
    pub mean_robustness: Option<f64>,
    /// Queries left out of `mean_robustness` because their clean self-SNR is zero.
    pub zero_baseline: usize,
}

/// Results of one method x preprocessing x degradation x plane x
/// restriction combination.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub method: String,
    pub preproc: String,
    pub degradation: String,
    pub plane: Plane,
    /// Search limited to the query's own hemisphere.
    pub restricted: bool,
    pub reference_subject: String,
    pub reference_first_index: i64,
    pub reference_len: usize,
    pub summary: CellSummary,
    pub outcomes: Vec<LocalizationOutcome>,
    pub self_snr: Vec<SelfSnr>,
    /// SNR series of the nominated plot slices.
    pub curves: Vec<SnrSeries>,
    /// Queries whose expected slice is outside the reference stack.
    pub skipped: usize,
    pub error: Option<String>,
}

/// Marks a cell whose queries were located in several reference stacks.
const MIXED_REFERENCE: &str = "*";

impl Cell {
    pub(super) fn new(
        method: &Pipeline,
        preproc: &PreprocSpec,
        degradation: &str,
        plane: Plane,
        restricted: bool,
    ) -> Self {
        Self {
            method: method.to_string(),
            preproc: preproc.to_string(),
            degradation: degradation.to_string(),
            plane,
            restricted,
            reference_subject: String::new(),
            reference_first_index: 0,
            reference_len: 0,
            summary: CellSummary::default(),
            outcomes: Vec::new(),
            self_snr: Vec::new(),
            curves: Vec::new(),
            skipped: 0,
            error: None,
        }
    }

    pub(super) fn set_reference(&mut self, stack: &SliceStack) {
        if self.reference_subject.is_empty() {
            self.reference_subject = stack.subject_id().to_string();
            self.reference_first_index = stack.first_index();
            self.reference_len = stack.len();
        } else if self.reference_subject != stack.subject_id() {
            self.reference_subject = MIXED_REFERENCE.to_string();
            self.reference_len = 0;
        }
    }

    pub(super) fn fail_on(&mut self, result: Result<(), HarnessError>) {
        if let Err(e) = result {
            self.error = Some(e.to_string());
        }
    }

    pub fn label(&self) -> String {
        format!(
            "{} / {} / {} / {}{}",
            self.method,
            self.preproc,
            self.degradation,
            self.plane,
            if self.restricted { " / same hemisphere" } else { "" }
        )
    }

    /// File-name friendly form of the cell key.
    pub fn slug(&self) -> String {
        let raw = format!(
            "{}_{}_{}_{}{}",
            self.method,
            self.preproc,
            self.degradation,
            self.plane,
            if self.restricted { "_restricted" } else { "" }
        );
        file_safe(&raw)
    }

    /// Recomputes the summary from the stored records.
    pub fn compute_summary(&self, d_values: &[u32]) -> CellSummary {
        let n = self.outcomes.len();
        let accuracy = if n == 0 {
            BTreeMap::new()
        } else {
            d_values.iter().map(|&d| (d, accuracy(&self.outcomes, d).expect("non-empty outcomes"))).collect()
        };
        let opposite_side = (self.plane == Plane::Sagittal && self.reference_len > 0 && n > 0).then(|| {
            let n = self.reference_len;
            let pos = |index: i64| (index - self.reference_first_index).clamp(0, n as i64 - 1) as usize;
            // The middle slice of an odd stack belongs to both halves.
            self.outcomes
                .iter()
                .filter(|o| !Hemisphere::of_position(pos(o.expected_index), n).range(n).contains(&pos(o.best_index)))
                .count()
        });
        let non_degenerate: Vec<&SelfSnr> = self.self_snr.iter().filter(|r| !r.degenerate).collect();
        let ratios: Vec<f64> = self.self_snr.iter().filter_map(|r| r.robustness).collect();
        CellSummary {
            n,
            accuracy,
            cumulative_distance: cumulative_distance(&self.outcomes),
            mean_snr: mean(self.outcomes.iter().map(|o| o.peak_snr)),
            opposite_side,
            mean_self_snr: mean(self.self_snr.iter().map(|r| r.snr)),
            self_max_fraction: (!non_degenerate.is_empty())
                .then(|| non_degenerate.iter().filter(|r| r.self_is_max).count() as f64 / non_degenerate.len() as f64),
            mean_robustness: mean(ratios.iter().copied()),
            zero_baseline: self.self_snr.iter().filter(|r| r.baseline.is_some() && r.robustness.is_none()).count(),
        }
    }
}

fn file_safe(raw: &str) -> String {
    raw.chars().map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '-' { c } else { '_' }).collect()
}

/// Sequential mean; `None` for no values.
fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (mut sum, mut n) = (0.0, 0usize);
    for v in values {
        sum += v;
        n += 1;
    }
    (n > 0).then(|| sum / n as f64)
}

/// One row of the robustness table: mean self-SNR per degradation family
/// and the mean robustness ratio of each family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessRow {
    pub method: String,
    pub preproc: String,
    pub plane: Plane,
    pub none: Option<f64>,
    pub rotation: Option<f64>,
    pub upscaling: Option<f64>,
    pub noise: Option<f64>,
    pub r_rotation: Option<f64>,
    pub r_upscaling: Option<f64>,
    pub r_noise: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub kind: ExperimentKind,
    pub provenance: Provenance,
    pub spec: ExperimentSpec,
    pub cells: Vec<Cell>,
    /// Robustness runs only.
    pub robustness_table: Vec<RobustnessRow>,
    /// One line per failed cell.
    pub failures: Vec<String>,
    /// Observations that are logged but do not fail the run.
    pub notes: Vec<String>,
}

impl ExperimentReport {
    pub(super) fn new(spec: &ExperimentSpec, stacks: Vec<StackDigest>, cells: Vec<Cell>) -> Self {
        Self {
            kind: spec.kind,
            provenance: Provenance {
                config_hash: spec.config_hash(),
                seed: spec.seed,
                tool_version: env!("CARGO_PKG_VERSION").to_string(),
                stacks,
            },
            spec: spec.clone(),
            cells,
            robustness_table: Vec::new(),
            failures: Vec::new(),
            notes: Vec::new(),
        }
    }

    /// Fills summaries, the robustness table, failures and notes.
    pub(super) fn finish(&mut self) {
        for cell in &mut self.cells {
            cell.summary = cell.compute_summary(&self.spec.d_values);
        }
        self.robustness_table = self.compute_robustness_table();
        self.failures =
            self.cells.iter().filter_map(|c| c.error.as_ref().map(|e| format!("{}: {e}", c.label()))).collect();
        for f in &self.failures {
            log::error!("cell failed: {f}");
        }
        self.notes = self.noise_sweep_notes();
        for n in &self.notes {
            log::warn!("{n}");
        }
    }

    pub fn has_failures(&self) -> bool {
        !self.failures.is_empty()
    }

    fn compute_robustness_table(&self) -> Vec<RobustnessRow> {
        if self.kind != ExperimentKind::Robustness {
            return Vec::new();
        }
        let mut groups: BTreeMap<(String, String, Plane), Vec<&Cell>> = BTreeMap::new();
        let mut order = Vec::new();
        for c in &self.cells {
            let key = (c.method.clone(), c.preproc.clone(), c.plane);
            if !groups.contains_key(&key) {
                order.push(key.clone());
            }
            groups.entry(key).or_default().push(c);
        }
        let degradations: BTreeMap<String, Degradation> =
            self.spec.degradations.iter().map(|d| (d.to_string(), *d)).collect();
        order
            .into_iter()
            .map(|key| {
                let cells = &groups[&key];
                let family = |name: &str, pick: fn(&SelfSnr) -> Option<f64>| {
                    mean(
                        cells
                            .iter()
                            .filter(|c| degradations.get(&c.degradation).is_some_and(|d| d.family() == name))
                            .flat_map(|c| c.self_snr.iter().filter_map(pick)),
                    )
                };
                let snr: fn(&SelfSnr) -> Option<f64> = |r| Some(r.snr);
                let ratio: fn(&SelfSnr) -> Option<f64> = |r| r.robustness;
                let (method, preproc, plane) = key;
                RobustnessRow {
                    none: cells
                        .iter()
                        .find(|c| c.degradation == "none")
                        .and_then(|c| mean(c.self_snr.iter().map(|r| r.snr))),
                    rotation: family("rotation", snr),
                    upscaling: family("upscaling", snr),
                    noise: family("noise", snr),
                    r_rotation: family("rotation", ratio),
                    r_upscaling: family("upscaling", ratio),
                    r_noise: family("noise", ratio),
                    method,
                    preproc,
                    plane,
                }
            })
            .collect()
    }

    /// Notes where mean self-SNR rises with the noise level of a sweep.
    fn noise_sweep_notes(&self) -> Vec<String> {
        let mut sweeps: BTreeMap<(String, String, Plane), Vec<(f64, f64)>> = BTreeMap::new();
        for c in &self.cells {
            let Some(Degradation::Noise { std, .. }) =
                self.spec.degradations.iter().find(|d| d.to_string() == c.degradation).copied()
            else {
                continue;
            };
            if let Some(m) = c.summary.mean_self_snr {
                sweeps.entry((c.method.clone(), c.preproc.clone(), c.plane)).or_default().push((std, m));
            }
        }
        let mut notes = Vec::new();
        for ((method, preproc, plane), mut points) in sweeps {
            points.sort_by(|a, b| a.0.total_cmp(&b.0));
            for w in points.windows(2) {
                if w[1].1 > w[0].1 {
                    notes.push(format!(
                        "{method} / {preproc} / {plane}: mean self-SNR rises from {:.4} at noise std {} to {:.4} at std {}",
                        w[0].1, w[0].0, w[1].1, w[1].0
                    ));
                }
            }
        }
        notes
    }

    /// Checks that every stored aggregate equals its recomputation.
    pub fn verify(&self) -> Result<(), String> {
        for c in &self.cells {
            let again = c.compute_summary(&self.spec.d_values);
            if again != c.summary {
                return Err(format!("summary of `{}` does not match its outcomes", c.label()));
            }
        }
        if self.compute_robustness_table() != self.robustness_table {
            return Err("robustness table does not match the cells".into());
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, HarnessError> {
        let path = path.as_ref();
        let text = read(path)?;
        serde_json::from_str(&text)
            .map_err(|e| HarnessError::SpecParse { path: path.to_path_buf(), reason: e.to_string() })
    }
}

fn read(path: &Path) -> Result<String, HarnessError> {
    fs::read_to_string(path).map_err(|source| HarnessError::Io { path: path.to_path_buf(), source })
}

fn write(path: &Path, contents: &str) -> Result<(), HarnessError> {
    fs::write(path, contents).map_err(|source| HarnessError::Io { path: path.to_path_buf(), source })
}

#[derive(Debug, Serialize)]
struct CsvRow<'a> {
    kind: ExperimentKind,
    method: &'a str,
    preproc: &'a str,
    degradation: &'a str,
    plane: Plane,
    restricted: bool,
    d: u32,
    n: usize,
    accuracy: Option<f64>,
    accuracy_pct: Option<f64>,
    cumulative_distance: Option<u64>,
    mean_snr: Option<f64>,
}

/// One row per cell and `d`. Failed cells keep their rows with empty values.
pub fn summary_csv(report: &ExperimentReport) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for c in &report.cells {
        let ok = c.error.is_none() && c.summary.n > 0;
        for &d in &report.spec.d_values {
            let a = c.summary.accuracy.get(&d).copied().filter(|_| ok);
            w.serialize(CsvRow {
                kind: report.kind,
                method: &c.method,
                preproc: &c.preproc,
                degradation: &c.degradation,
                plane: c.plane,
                restricted: c.restricted,
                d,
                n: c.summary.n,
                accuracy: a,
                accuracy_pct: a.map(|a| a * 100.0),
                cumulative_distance: ok.then_some(c.summary.cumulative_distance),
                mean_snr: c.summary.mean_snr.filter(|_| ok),
            })
            .expect("in-memory CSV write");
        }
    }
    String::from_utf8(w.into_inner().expect("in-memory CSV flush")).expect("CSV is UTF-8")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Json,
    Csv,
    Svg,
}

impl ReportFormat {
    pub const ALL: [ReportFormat; 3] = [ReportFormat::Json, ReportFormat::Csv, ReportFormat::Svg];
}

/// Writes `report.json`, `summary.csv` and the SVG plots into `dir`,
/// returning the written paths.
pub fn emit_report(
    report: &ExperimentReport,
    dir: impl AsRef<Path>,
    formats: &[ReportFormat],
) -> Result<Vec<PathBuf>, HarnessError> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|source| HarnessError::Io { path: dir.to_path_buf(), source })?;
    let mut written = Vec::new();
    let mut put = |name: String, contents: String| -> Result<(), HarnessError> {
        let path = dir.join(name);
        write(&path, &contents)?;
        written.push(path);
        Ok(())
    };
    if formats.contains(&ReportFormat::Json) {
        put("report.json".into(), report.to_json())?;
    }
    if formats.contains(&ReportFormat::Csv) {
        put("summary.csv".into(), summary_csv(report))?;
    }
    if formats.contains(&ReportFormat::Svg) {
        let d = report.spec.d_values[0];
        for c in report.cells.iter().filter(|c| c.error.is_none() && c.summary.n > 0) {
            if !c.curves.is_empty() {
                put(format!("snr_{}.svg", c.slug()), plot::snr_curves(c))?;
            }
            put(format!("scatter_{}.svg", c.slug()), plot::accuracy_scatter(c, d))?;
            put(format!("strips_{}.svg", c.slug()), plot::correctness_strips(c, d))?;
        }
        if report.kind == ExperimentKind::Robustness {
            let mut groups: Vec<(String, String, Plane)> = Vec::new();
            for c in &report.cells {
                let key = (c.method.clone(), c.preproc.clone(), c.plane);
                if !groups.contains(&key) {
                    groups.push(key);
                }
            }
            for (method, preproc, plane) in groups {
                let cells: Vec<&Cell> = report
                    .cells
                    .iter()
                    .filter(|c| {
                        c.method == method && c.preproc == preproc && c.plane == plane && c.degradation != "none"
                    })
                    .collect();
                if !cells.is_empty() {
                    let slug = file_safe(&format!("{method}_{preproc}_{plane}"));
                    put(format!("robustness_{slug}.svg"), plot::robustness_curves(&cells))?;
                }
            }
        }
        let summarized: Vec<&Cell> = report.cells.iter().filter(|c| c.error.is_none() && c.summary.n > 0).collect();
        if !summarized.is_empty() {
            put("bubble.svg".into(), plot::bubble_chart(&summarized, d))?;
        }
    }
    Ok(written)
}
