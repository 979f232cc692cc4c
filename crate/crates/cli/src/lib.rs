//! Command implementations behind the `qdaa` binary.
//!
//! Every command writes its artifacts under the output directory with fixed
//! file names and returns a short human-readable summary.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use qdaa::model::{parse_model, serialize_model, BiochemicalSystem};
use qdaa::rats::{rats_reach, reach_json, RatsSystem};
use qdaa::reach::{self, rectangle_bounds, ReachReport, DEFAULT_HEATMAP_LIMIT};
use qdaa::sim::SimSettings;
use qdaa::{bundled, QdaaConfig};
use thiserror::Error;

pub const REPORT_JSON: &str = "report.json";
pub const AUTOMATON_JSON: &str = "automaton.json";
pub const AUTOMATON_DOT: &str = "automaton.dot";
pub const HEATMAP_SVG: &str = "heatmap.svg";
pub const BOUNDS_CSV: &str = "bounds.csv";
pub const SWEEP_CSV: &str = "sweep.csv";
pub const RATS_JSON: &str = "rats.json";
pub const RATS_DOT: &str = "rats.dot";
pub const MODEL_JSON: &str = "model.json";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("reading {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("writing {path}: {source}")]
    Write {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Model {
        path: PathBuf,
        source: qdaa::model::ModelError,
    },
    #[error(transparent)]
    Analysis(#[from] qdaa::Error),
    #[error("writing CSV: {0}")]
    Csv(#[from] csv::Error),
    #[error("{0}")]
    Usage(String),
}

impl CliError {
    /// 1 for bad input, 2 for failures during analysis or output.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Analysis(e) if e.is_runtime() => 2,
            CliError::Write { .. } | CliError::Csv(_) => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "qdaa", version, about = "Reachability analysis of multi-affine ODE systems")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build the QDAA and report reachable rectangles, bounds and heatmap.
    Reach(ReachArgs),
    /// Reachability over the rectangular abstraction.
    Rats(ModelArgs),
    /// Run `reach` for several values of κ and tabulate the results.
    Sweep(SweepArgs),
    /// Write the normalized model file or the full abstraction graph.
    Export(ModelArgs),
    /// Parse and check a model, printing a summary.
    Validate(ModelArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Dot,
    Svg,
    Csv,
}

#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    /// Bundled model name or path to a model file.
    #[arg(long)]
    pub model: String,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    /// Restrict outputs to these formats (default: all).
    #[arg(long, value_enum)]
    pub format: Vec<Format>,
}

#[derive(Debug, Clone, Args)]
pub struct ReachArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, default_value_t = 8, value_parser = clap::value_parser!(u32).range(1..))]
    pub kappa: u32,
    /// Trajectories per successor computation.
    #[arg(long, default_value_t = 500, value_parser = clap::value_parser!(u32).range(1..))]
    pub samples: u32,
    #[arg(long, env = "QDAA_SEED", default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub tmax: Option<f64>,
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long, overrides_with = "no_backward")]
    pub backward: bool,
    #[arg(long, overrides_with = "backward")]
    pub no_backward: bool,
    /// Variable pair `i,j` for a heatmap panel; repeatable.
    #[arg(long, value_parser = parse_pair)]
    pub project: Vec<(usize, usize)>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    pub threads: Option<usize>,
    /// Largest component solved exactly for the heatmap.
    #[arg(long, default_value_t = DEFAULT_HEATMAP_LIMIT)]
    pub heatmap_limit: usize,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub reach: ReachArgs,
    /// Comma-separated κ values.
    #[arg(long, value_delimiter = ',', required = true, num_args = 1..)]
    pub kappas: Vec<u32>,
}

fn parse_pair(s: &str) -> Result<(usize, usize), String> {
    let (a, b) = s
        .split_once(',')
        .ok_or_else(|| format!("expected `i,j`, got `{s}`"))?;
    let parse = |t: &str| {
        t.trim()
            .parse::<usize>()
            .map_err(|e| format!("`{t}`: {e}"))
    };
    Ok((parse(a)?, parse(b)?))
}

impl ModelArgs {
    fn wants(&self, f: Format) -> bool {
        self.format.is_empty() || self.format.contains(&f)
    }
}

impl ReachArgs {
    pub fn config(&self) -> QdaaConfig {
        let sim = SimSettings {
            dt: self.dt,
            t_max: self.tmax,
            ..SimSettings::with_samples(self.samples as usize)
        };
        QdaaConfig::new(self.kappa as usize)
            .with_sim(sim)
            .with_seed(self.seed)
            .with_backward_filter(!self.no_backward)
    }
}

/// Bundled model by name, otherwise a model file.
pub fn load_model(name_or_path: &str) -> Result<BiochemicalSystem, CliError> {
    if let Some(text) = bundled::source(name_or_path) {
        return parse_model(text).map_err(|source| CliError::Model {
            path: name_or_path.into(),
            source,
        });
    }
    let path = Path::new(name_or_path);
    if !path.exists() {
        return Err(CliError::Usage(format!(
            "`{name_or_path}` is neither a file nor a bundled model ({})",
            bundled::NAMES.join(", ")
        )));
    }
    let text = fs::read_to_string(path).map_err(|source| CliError::Read {
        path: path.into(),
        source,
    })?;
    parse_model(&text).map_err(|source| CliError::Model {
        path: path.into(),
        source,
    })
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|source| CliError::Write {
        path: dir.into(),
        source,
    })?;
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|source| CliError::Write { path, source })
}

fn pretty(value: &serde_json::Value) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("JSON values serialize");
    s.push('\n');
    s
}

fn check_projections(system: &BiochemicalSystem, planes: &[(usize, usize)]) -> Result<(), CliError> {
    let n = system.dimension();
    for &(i, j) in planes {
        if i >= n || j >= n || i == j {
            return Err(CliError::Usage(format!(
                "projection {i},{j} needs two distinct variables below {n}"
            )));
        }
    }
    Ok(())
}

fn bounds_csv(report: &ReachReport) -> Result<String, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["species", "lower", "upper"])?;
    for (s, lo, hi) in report.bounds_rows() {
        w.write_record([s, lo.to_string(), hi.to_string()])?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Csv(e.into_error().into()))?;
    Ok(String::from_utf8(bytes).expect("CSV of UTF-8 fields"))
}

/// Plain notation for ordinary magnitudes, scientific otherwise.
fn number(x: f64) -> String {
    if x != 0.0 && !(1e-3..1e6).contains(&x.abs()) {
        format!("{x:e}")
    } else {
        format!("{x}")
    }
}

fn summarize(report: &ReachReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "reachable rectangles: {}", report.rectangles.len());
    let _ = writeln!(s, "states: {}", report.states.len());
    match report.rho {
        Some(rho) => {
            let _ = writeln!(s, "rho: {rho:.4}");
        }
        None => s.push_str("rho: undefined (empty initial set)\n"),
    }
    for (name, lo, hi) in report.bounds_rows() {
        let _ = writeln!(s, "[{name}]: [{}, {}]", number(lo), number(hi));
    }
    let _ = writeln!(s, "sink mass: {:.6}", report.sink_mass);
    s
}

/// Builds the QDAA and writes the report artifacts.
pub fn cmd_reach(args: &ReachArgs) -> Result<String, CliError> {
    let system = load_model(&args.model.model)?;
    check_projections(&system, &args.project)?;
    let report = reach::analyze_with_limit(&system, &args.config(), args.heatmap_limit)?;
    let out = &args.model.out;
    if args.model.wants(Format::Json) {
        write(out, REPORT_JSON, &pretty(&report.to_json()))?;
        write(out, AUTOMATON_JSON, &pretty(&report.automaton.to_json()))?;
    }
    if args.model.wants(Format::Dot) {
        write(out, AUTOMATON_DOT, &report.automaton.to_dot())?;
    }
    if args.model.wants(Format::Svg) {
        write(out, HEATMAP_SVG, &reach::heatmap_svg(&report, &system, &args.project))?;
    }
    if args.model.wants(Format::Csv) {
        write(out, BOUNDS_CSV, &bounds_csv(&report)?)?;
    }
    Ok(summarize(&report))
}

pub fn cmd_rats(args: &ModelArgs) -> Result<String, CliError> {
    let system = load_model(&args.model)?;
    let reach = rats_reach(&system, system.initial());
    let doc = reach_json(&system, &reach);
    if args.wants(Format::Json) {
        write(&args.out, RATS_JSON, &pretty(&doc))?;
    }
    if args.wants(Format::Dot) {
        write(&args.out, RATS_DOT, &RatsSystem::build(&system).to_dot(Some(&reach)))?;
    }
    let mut s = format!("reachable rectangles: {}\n", reach.len());
    for (name, b) in system.species().iter().zip(rectangle_bounds(&system, &reach)) {
        let _ = writeln!(s, "[{name}]: [{}, {}]", number(b[0]), number(b[1]));
    }
    Ok(s)
}

pub fn cmd_sweep(args: &SweepArgs) -> Result<String, CliError> {
    if args.kappas.is_empty() {
        return Err(CliError::Usage("at least one κ is required".into()));
    }
    if args.kappas.contains(&0) {
        return Err(CliError::Usage("κ must be at least 1".into()));
    }
    let system = load_model(&args.reach.model.model)?;
    let rats = rats_reach(&system, system.initial()).len();
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["kappa", "rectangles", "states", "rho", "sink_mass", "rats_rectangles", "seconds"])?;
    let mut summary = String::new();
    for &kappa in &args.kappas {
        let mut reach_args = args.reach.clone();
        reach_args.kappa = kappa;
        let start = Instant::now();
        let report = reach::analyze_with_limit(&system, &reach_args.config(), args.reach.heatmap_limit)?;
        let secs = start.elapsed().as_secs_f64();
        let rho = report.rho.map_or(String::new(), |r| r.to_string());
        w.write_record([
            kappa.to_string(),
            report.rectangles.len().to_string(),
            report.states.len().to_string(),
            rho.clone(),
            report.sink_mass.to_string(),
            rats.to_string(),
            format!("{secs:.3}"),
        ])?;
        let _ = writeln!(
            summary,
            "kappa {kappa}: {} rectangles, {} states, rho {rho}, {secs:.2}s",
            report.rectangles.len(),
            report.states.len()
        );
    }
    let bytes = w.into_inner().map_err(|e| CliError::Csv(e.into_error().into()))?;
    write(&args.reach.model.out, SWEEP_CSV, &String::from_utf8(bytes).expect("UTF-8"))?;
    let _ = writeln!(summary, "abstraction: {rats} rectangles");
    Ok(summary)
}

pub fn cmd_export(args: &ModelArgs) -> Result<String, CliError> {
    let system = load_model(&args.model)?;
    let mut written = Vec::new();
    if args.wants(Format::Json) {
        write(&args.out, MODEL_JSON, &serialize_model(&system))?;
        written.push(MODEL_JSON);
    }
    if args.wants(Format::Dot) {
        write(&args.out, RATS_DOT, &RatsSystem::build(&system).to_dot(None))?;
        written.push(RATS_DOT);
    }
    if written.is_empty() {
        return Err(CliError::Usage("export supports --format json and dot".into()));
    }
    Ok(format!("wrote {}\n", written.join(", ")))
}

pub fn cmd_validate(args: &ModelArgs) -> Result<String, CliError> {
    let system = load_model(&args.model)?;
    Ok(format!("{system}\n"))
}

/// Runs a parsed command line.
pub fn run(cli: &Cli) -> Result<String, CliError> {
    let threads = match &cli.command {
        Command::Reach(a) => a.threads,
        Command::Sweep(a) => a.reach.threads,
        _ => None,
    };
    if let Some(n) = threads {
        // a pool that already exists keeps its size
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match &cli.command {
        Command::Reach(a) => cmd_reach(a),
        Command::Rats(a) => cmd_rats(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Export(a) => cmd_export(a),
        Command::Validate(a) => cmd_validate(a),
    }
}
