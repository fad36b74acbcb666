use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use slicefind::degrade::Degradation;
use slicefind::descriptors::{read_external, write_external, ExternalFeatures};
use slicefind::features::{detect, DetectorConfig, DetectorKind};
use slicefind::harness::{self, emit_report, ExperimentSpec, ReportFormat, SyntheticStack};
use slicefind::imagekit::{load_png, load_stack, save_png, Plane};
use slicefind::locator::{Hemisphere, Locator, LocatorConfig};
use slicefind::matching::{filter_matches, MatchFilter, Metric, Pipeline};
use slicefind::preprocess::{self, PreprocSpec};

/// Localize MRI slices within reference stacks by keypoint matching.
#[derive(Parser)]
#[command(name = "slicefind", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Rotate, upscale or add noise to an image.
    Degrade(DegradeArgs),
    /// Apply preprocessing steps (r, e, b, s) in the given order.
    Preprocess(PreprocessArgs),
    /// Detect keypoints and write them as JSON.
    Detect(DetectArgs),
    /// Detect and describe keypoints, writing an external-feature file.
    Describe(DescribeArgs),
    /// Match two feature files.
    Match(MatchArgs),
    /// Find the reference slice that best matches a query image.
    Locate(LocateArgs),
    /// Run an experiment spec and write its report.
    Experiment(ExperimentArgs),
    /// Write a synthetic textured stack with its manifest.
    Synth(SynthArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Op {
    Rotate,
    Scale,
    Noise,
}

#[derive(clap::Args)]
struct DegradeArgs {
    #[arg(long, value_enum)]
    op: Op,
    /// Clockwise rotation in degrees.
    #[arg(long, default_value_t = 0.0)]
    deg: f64,
    #[arg(long, default_value_t = 1.0)]
    factor: f64,
    #[arg(long, default_value_t = 0.0)]
    std: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    input: PathBuf,
    output: PathBuf,
}

#[derive(clap::Args)]
struct PreprocessArgs {
    /// Step codes, e.g. `rebs`, or `none`.
    #[arg(long)]
    steps: String,
    /// Reference image for the alignment steps.
    #[arg(long)]
    reference: Option<PathBuf>,
    input: PathBuf,
    output: PathBuf,
}

#[derive(clap::Args)]
struct DetectArgs {
    #[arg(long, value_enum)]
    method: DetectorArg,
    /// Detector parameters as JSON; missing fields take defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum DetectorArg {
    Agast,
    Gftt,
    Orb,
}

impl From<DetectorArg> for DetectorKind {
    fn from(d: DetectorArg) -> Self {
        match d {
            DetectorArg::Agast => DetectorKind::Agast,
            DetectorArg::Gftt => DetectorKind::Gftt,
            DetectorArg::Orb => DetectorKind::Orb,
        }
    }
}

#[derive(clap::Args)]
struct DescribeArgs {
    /// Native pipeline: `agast+sift`, `gftt+sift` or `orb`.
    #[arg(long)]
    method: String,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Method name recorded in the file; defaults to `--method`.
    #[arg(long)]
    name: Option<String>,
    #[arg(long)]
    subject: Option<String>,
    #[arg(long, default_value_t = 0)]
    index: i64,
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum MetricArg {
    Auto,
    Euclidean,
    Hamming,
}

#[derive(clap::Args)]
struct MatchArgs {
    #[arg(long, value_enum, default_value = "auto")]
    metric: MetricArg,
    /// `lowe:<ratio>` or `mnn:<threshold>`; defaults by descriptor kind.
    #[arg(long)]
    filter: Option<String>,
    query: PathBuf,
    reference: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(clap::Args)]
struct LocateArgs {
    #[arg(long, default_value = "gftt+sift")]
    method: String,
    #[arg(long, default_value = "none")]
    preproc: String,
    #[arg(long, default_value_t = 7)]
    window: usize,
    /// Restrict the search to one half of the stack: none, left or right.
    #[arg(long, default_value = "none")]
    hemisphere: String,
    #[arg(long)]
    config: Option<PathBuf>,
    query: PathBuf,
    /// Reference stack manifest.
    #[arg(long)]
    stack: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(clap::Args)]
struct ExperimentArgs {
    #[arg(long)]
    spec: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Report formats to write.
    #[arg(long, value_enum, value_delimiter = ',', default_values = ["json", "csv", "svg"])]
    format: Vec<FormatArg>,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum FormatArg {
    Json,
    Csv,
    Svg,
}

#[derive(clap::Args)]
struct SynthArgs {
    #[arg(long, default_value = "synthetic")]
    subject: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 40)]
    slices: usize,
    #[arg(long, default_value_t = 160)]
    size: usize,
    #[arg(long, default_value = "axial")]
    plane: String,
    /// Output directory for the PNG slices and manifest.json.
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Degrade(a) => degrade(a)?,
        Command::Preprocess(a) => preprocess(a)?,
        Command::Detect(a) => detect_cmd(a)?,
        Command::Describe(a) => describe(a)?,
        Command::Match(a) => match_cmd(a)?,
        Command::Locate(a) => locate(a)?,
        Command::Experiment(a) => return experiment(a),
        Command::Synth(a) => synth(a)?,
    }
    Ok(ExitCode::SUCCESS)
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn detector_config(path: Option<&Path>) -> Result<DetectorConfig> {
    let Some(path) = path else {
        return Ok(DetectorConfig::default());
    };
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing detector config {}", path.display()))
}

fn degrade(a: DegradeArgs) -> Result<()> {
    let op = match a.op {
        Op::Rotate => Degradation::Rotation { deg: a.deg },
        Op::Scale => Degradation::Scaling { factor: a.factor },
        Op::Noise => Degradation::Noise { std: a.std, seed: a.seed },
    };
    let img = load_png(&a.input)?;
    save_png(&op.apply(&img, 0)?, &a.output)?;
    Ok(())
}

fn preprocess(a: PreprocessArgs) -> Result<()> {
    let spec: PreprocSpec = a.steps.parse()?;
    let img = load_png(&a.input)?;
    let reference = a.reference.as_deref().map(load_png).transpose()?;
    let (out, trace) = preprocess::apply_traced(&spec, &img, reference.as_ref())?;
    log::info!("applied {} steps", trace.len());
    save_png(&out, &a.output)?;
    Ok(())
}

fn detect_cmd(a: DetectArgs) -> Result<()> {
    let cfg = DetectorConfig { kind: a.method.into(), ..detector_config(a.config.as_deref())? };
    let keypoints = detect(&load_png(&a.input)?, &cfg)?;
    write_json(&a.out, &keypoints)
}

fn describe(a: DescribeArgs) -> Result<()> {
    let pipeline: Pipeline = a.method.parse()?;
    if pipeline.is_external() {
        bail!("{} names precomputed features; describe needs a native pipeline", a.method);
    }
    let set = pipeline.features(&load_png(&a.input)?, &detector_config(a.config.as_deref())?)?;
    let features =
        ExternalFeatures { subject_id: a.subject, method: a.name.unwrap_or(a.method), slice_index: a.index, set };
    write_external(&features, &a.out)?;
    Ok(())
}

fn match_cmd(a: MatchArgs) -> Result<()> {
    let query_file = read_external(&a.query)?;
    let query = query_file.set;
    let reference = read_external(&a.reference)?.set;
    let native = Metric::for_kind(query.kind());
    let wanted = match a.metric {
        MetricArg::Auto => native,
        MetricArg::Euclidean => Metric::Euclidean,
        MetricArg::Hamming => Metric::Hamming,
    };
    if wanted != native {
        bail!("{} descriptors cannot be compared with the {wanted:?} metric", query.kind());
    }
    // Features from a native pipeline default to the Lowe ratio, anything else to mutual NN.
    let filter: MatchFilter = match a.filter {
        Some(f) => f.parse()?,
        None => match query_file.method.parse::<Pipeline>() {
            Ok(p) if !p.is_external() => p.filter,
            _ => Pipeline::external(query_file.method).filter,
        },
    };
    write_json(&a.out, &filter_matches(&query, &reference, filter)?)
}

#[derive(Serialize)]
struct LocateResult<'a> {
    query: &'a Path,
    subject_id: &'a str,
    method: String,
    preproc: String,
    window: usize,
    hemisphere: String,
    #[serde(flatten)]
    location: slicefind::locator::Location,
}

fn locate(a: LocateArgs) -> Result<()> {
    let stack = load_stack(&a.stack)?;
    let mut cfg = LocatorConfig::new(a.method.parse()?);
    cfg.preproc = a.preproc.parse()?;
    cfg.window = a.window;
    cfg.hemisphere = a.hemisphere.parse::<Hemisphere>()?;
    cfg.detector = detector_config(a.config.as_deref())?;
    let locator = Locator::new(&stack, cfg.clone(), None)?;
    let location = locator.locate(&load_png(&a.query)?)?;
    let result = LocateResult {
        query: &a.query,
        subject_id: stack.subject_id(),
        method: cfg.pipeline.to_string(),
        preproc: cfg.preproc.to_string(),
        window: cfg.window,
        hemisphere: cfg.hemisphere.to_string(),
        location,
    };
    write_json(&a.out, &result)
}

fn experiment(a: ExperimentArgs) -> Result<ExitCode> {
    let spec = ExperimentSpec::from_file(&a.spec)?;
    let base = a.spec.parent().unwrap_or(Path::new("."));
    let report = harness::run(&spec, base)?;
    let formats: Vec<ReportFormat> = a
        .format
        .iter()
        .map(|f| match f {
            FormatArg::Json => ReportFormat::Json,
            FormatArg::Csv => ReportFormat::Csv,
            FormatArg::Svg => ReportFormat::Svg,
        })
        .collect();
    let written = emit_report(&report, &a.out, &formats)?;
    log::info!("wrote {} files to {}", written.len(), a.out.display());
    if report.has_failures() {
        eprintln!("{} of {} cells failed; see {}", report.failures.len(), report.cells.len(), a.out.display());
        return Ok(ExitCode::from(2));
    }
    Ok(ExitCode::SUCCESS)
}

fn synth(a: SynthArgs) -> Result<()> {
    let mut source = SyntheticStack::new(a.subject, a.seed, a.slices, a.size);
    source.plane = a.plane.parse::<Plane>().map_err(anyhow::Error::msg)?;
    let manifest = source.generate()?.save(&a.out)?;
    println!("{}", manifest.display());
    Ok(())
}
