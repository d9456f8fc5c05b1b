//! `moran-dim`: dimension estimates, box counts and rasters for self-affine
//! Moran sets.
//!
//! Exit codes: 0 success, 1 config or usage error, 2 inapplicable estimator
//! or violated invariant, 3 budget exhausted or trend indeterminate.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};

use moran_dim::attractor::{self, SampleMode};
use moran_dim::dims::{self, DimensionReport, LineFit, Quantity, ScheduleInfo, TraceEntry};
use moran_dim::symbolic::{self, DEFAULT_NODE_BUDGET};
use moran_dim::system::Severity;
use moran_dim::{fixtures, validate, AttractorError, DimsError, SpecError, SystemSpec};

#[derive(Parser, Debug)]
#[command(
    name = "moran-dim",
    version,
    about = "Dimension estimates for self-affine Moran sets"
)]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true, env = "MORAN_DIM_THREADS")]
    threads: Option<usize>,

    /// Indented JSON instead of one object per line.
    #[arg(long, global = true)]
    pretty: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Source {
    /// Path to a JSON config.
    config: Option<PathBuf>,

    /// Use a bundled fixture instead of a config file.
    #[arg(long, conflicts_with = "config")]
    fixture: Option<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Check the standing assumptions of a config.
    Validate {
        #[command(flatten)]
        source: Source,
    },
    /// Estimate s*, s_A, the affinity dimension or the Moran bounds.
    Dims(DimsArgs),
    /// Box-counting slope of a sampled point cloud.
    Boxdim(BoxdimArgs),
    /// Rasterise a sampled point cloud as a binary PGM.
    Render(RenderArgs),
    /// Dump the cut-set Σ*(s, ε) as CSV.
    Cutset(CutsetArgs),
    /// List bundled fixtures.
    Fixtures,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Which {
    Sstar,
    Sa,
    Falconer,
    Moran,
}

#[derive(Args, Debug)]
struct DimsArgs {
    #[command(flatten)]
    source: Source,
    /// Estimators to run (default: sstar,sa plus every applicable extra).
    #[arg(long, value_enum, value_delimiter = ',')]
    which: Option<Vec<Which>>,
    #[arg(long, default_value_t = dims::DEFAULT_TOL)]
    tol: f64,
    #[arg(long, default_value_t = DEFAULT_NODE_BUDGET)]
    node_budget: u64,
    /// Pressure depth for falconer, k_max for moran (default 256).
    #[arg(long)]
    depth: Option<usize>,
    /// Explicit decreasing ε schedule for sstar.
    #[arg(long, value_delimiter = ',')]
    scales: Option<Vec<f64>>,
    /// Also write the reports (one per line) to this file.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Mode {
    Full,
    Random,
}

#[derive(Args, Debug)]
struct SampleArgs {
    /// Word length K.
    #[arg(long)]
    depth: Option<usize>,
    /// Number of random words.
    #[arg(long)]
    count: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// full enumeration or random codes (default: random codes, full for
    /// renders that fit).
    #[arg(long, value_enum)]
    mode: Option<Mode>,
}

#[derive(Args, Debug)]
struct BoxdimArgs {
    #[command(flatten)]
    source: Source,
    #[command(flatten)]
    sample: SampleArgs,
    /// Box sizes, comma separated.
    #[arg(long, value_delimiter = ',')]
    scales: Option<Vec<f64>>,
    /// CSV output path for the counts.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct RenderArgs {
    #[command(flatten)]
    source: Source,
    #[command(flatten)]
    sample: SampleArgs,
    /// Pixels per side.
    #[arg(long, default_value_t = 512)]
    resolution: usize,
    /// PGM output path.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct CutsetArgs {
    #[command(flatten)]
    source: Source,
    #[arg(long)]
    s: f64,
    #[arg(long)]
    epsilon: f64,
    #[arg(long, default_value_t = DEFAULT_NODE_BUDGET)]
    node_budget: u64,
    /// CSV output path (default: standard output).
    #[arg(long)]
    out: Option<PathBuf>,
}

/// An error with a fixed exit code.
#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for Failure {}

fn fail(code: u8, message: impl Into<String>) -> anyhow::Error {
    Failure {
        code,
        message: message.into(),
    }
    .into()
}

fn exit_code(e: &anyhow::Error) -> u8 {
    if let Some(f) = e.downcast_ref::<Failure>() {
        return f.code;
    }
    if let Some(e) = e.downcast_ref::<SpecError>() {
        return match e {
            SpecError::Invariant(_) => 2,
            _ => 1,
        };
    }
    if let Some(e) = e.downcast_ref::<DimsError>() {
        return match e {
            DimsError::NonScalarMap { .. } | DimsError::NotStationary => 2,
            DimsError::BudgetExhausted { .. } | DimsError::IndeterminateTrend { .. } => 3,
            _ => 1,
        };
    }
    if let Some(e) = e.downcast_ref::<AttractorError>() {
        return match e {
            AttractorError::NotPlanar(_) | AttractorError::UnresolvedTranslation(_) => 2,
            AttractorError::EnumerationTooLarge { .. } => 3,
            _ => 1,
        };
    }
    1
}

struct Output {
    pretty: bool,
}

impl Output {
    fn line<T: Serialize>(&self, v: &T) -> Result<String> {
        Ok(if self.pretty {
            serde_json::to_string_pretty(v)?
        } else {
            serde_json::to_string(v)?
        })
    }

    fn emit<T: Serialize>(&self, v: &T) -> Result<()> {
        println!("{}", self.line(v)?);
        Ok(())
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn run(cli: Cli) -> Result<u8> {
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(fail(1, "--threads must be positive"));
        }
        pool = pool.num_threads(n);
    }
    pool.build_global().context("starting worker threads")?;
    let out = Output { pretty: cli.pretty };
    match cli.command {
        Command::Validate { source } => cmd_validate(&source, &out),
        Command::Dims(a) => cmd_dims(&a, &out),
        Command::Boxdim(a) => cmd_boxdim(&a, &out),
        Command::Render(a) => cmd_render(&a, &out),
        Command::Cutset(a) => cmd_cutset(&a, &out),
        Command::Fixtures => {
            for name in fixtures::names() {
                println!("{name}");
            }
            Ok(0)
        }
    }
}

// ---------------------------------------------------------------------------
// Config loading and manifests

fn load(source: &Source) -> Result<SystemSpec> {
    match (&source.config, &source.fixture) {
        (_, Some(name)) => Ok(fixtures::load(name)?),
        (Some(path), None) => {
            let text = fs::read_to_string(path)
                .map_err(|e| fail(1, format!("cannot read {}: {e}", path.display())))?;
            Ok(SystemSpec::parse_unvalidated(&text)?)
        }
        (None, None) => Err(fail(1, "give a config path or --fixture NAME")),
    }
}

/// Loads and refuses configs with error-severity findings.
fn load_valid(source: &Source) -> Result<SystemSpec> {
    let spec = load(source)?;
    let errors: Vec<_> = validate(&spec)
        .into_iter()
        .filter(|f| f.severity() == Severity::Error)
        .collect();
    if !errors.is_empty() {
        return Err(SpecError::Invariant(errors).into());
    }
    Ok(spec)
}

fn source_json(source: &Source) -> Value {
    match (&source.config, &source.fixture) {
        (_, Some(name)) => json!({ "fixture": name }),
        (Some(path), None) => json!({ "config": path.display().to_string() }),
        (None, None) => Value::Null,
    }
}

/// Writes `<first output>.manifest.json` listing every output.
fn write_manifest(
    command: &str,
    source: &Source,
    parameters: Value,
    seed: Option<u64>,
    outputs: &[&Path],
    started: Instant,
) -> Result<()> {
    let Some(first) = outputs.first() else {
        return Ok(());
    };
    let manifest = json!({
        "command": command,
        "source": source_json(source),
        "parameters": parameters,
        "seed": seed,
        "outputs": outputs.iter().map(|p| p.display().to_string()).collect::<Vec<_>>(),
        "tool_version": env!("CARGO_PKG_VERSION"),
        "wall_time_s": started.elapsed().as_secs_f64(),
    });
    let mut path = first.as_os_str().to_owned();
    path.push(".manifest.json");
    fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n")
        .with_context(|| format!("writing {}", PathBuf::from(&path).display()))?;
    Ok(())
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

// ---------------------------------------------------------------------------
// Commands

fn cmd_validate(source: &Source, out: &Output) -> Result<u8> {
    let spec = load(source)?;
    let findings = validate(&spec);
    let ok = findings.iter().all(|f| f.severity() != Severity::Error);
    out.emit(&json!({ "findings": findings, "ok": ok }))?;
    Ok(if ok { 0 } else { 2 })
}

fn cmd_dims(a: &DimsArgs, out: &Output) -> Result<u8> {
    let started = Instant::now();
    let spec = load_valid(&a.source)?;
    let stationary = spec.schedule().is_stationary();
    let non_scalar = spec.first_non_scalar();
    let which = match &a.which {
        Some(w) => {
            for q in w {
                match q {
                    Which::Moran => {
                        if let Some((level, map)) = non_scalar {
                            return Err(DimsError::NonScalarMap { level, map }.into());
                        }
                    }
                    Which::Falconer if !stationary => return Err(DimsError::NotStationary.into()),
                    _ => {}
                }
            }
            w.clone()
        }
        None => {
            let mut w = vec![Which::Sstar, Which::Sa];
            if stationary {
                w.push(Which::Falconer);
            }
            if non_scalar.is_none() {
                w.push(Which::Moran);
            }
            w
        }
    };

    let mut reports: Vec<DimensionReport> = Vec::new();
    for q in &which {
        match q {
            Which::Sstar => reports.push(dims::estimate_sstar(
                &spec,
                &dims::SstarOptions {
                    tol: a.tol,
                    eps_schedule: a.scales.clone(),
                    node_budget: a.node_budget,
                },
            )?),
            Which::Sa => reports.push(dims::estimate_sa(
                &spec,
                &dims::SaOptions {
                    tol: a.tol,
                    depth_schedule: None,
                    node_budget: a.node_budget,
                },
            )?),
            Which::Falconer => reports.push(dims::pressure_root(
                spec.level(1),
                a.tol.min(1e-9),
                a.depth,
                a.node_budget,
            )?),
            Which::Moran => {
                let (lo, hi) = dims::moran_dims(&spec, a.depth.unwrap_or(256))?;
                reports.push(lo);
                reports.push(hi);
            }
        }
    }

    let mut text = String::new();
    for r in &reports {
        text.push_str(&out.line(r)?);
        text.push('\n');
    }
    print!("{text}");
    if let Some(path) = &a.out {
        write_file(path, text.as_bytes())?;
        write_manifest(
            "dims",
            &a.source,
            json!({
                "which": which.iter().map(|w| format!("{w:?}").to_lowercase()).collect::<Vec<_>>(),
                "tol": a.tol,
                "node_budget": a.node_budget,
                "depth": a.depth,
                "scales": a.scales,
            }),
            None,
            &[path],
            started,
        )?;
    }
    let indeterminate: Vec<_> = reports.iter().filter(|r| r.estimate.is_none()).collect();
    if !indeterminate.is_empty() {
        for r in indeterminate {
            eprintln!(
                "{:?}: trend indeterminate, bracket [{}, {}]",
                r.quantity, r.bracket.0, r.bracket.1
            );
        }
        return Ok(3);
    }
    Ok(0)
}

struct Sampling {
    depth: usize,
    count: usize,
    mode: SampleMode,
    defaults: Option<fixtures::SamplingDefaults>,
}

fn sampling(source: &Source, a: &SampleArgs, spec: &SystemSpec, full_limit: f64) -> Sampling {
    let defaults = source
        .fixture
        .as_deref()
        .and_then(fixtures::sampling_defaults);
    let depth = a.depth.or(defaults.as_ref().map(|d| d.depth)).unwrap_or(12);
    let count = a
        .count
        .or(defaults.as_ref().map(|d| d.count))
        .unwrap_or(200_000);
    let mode = match a.mode {
        Some(Mode::Full) => SampleMode::FullEnumeration,
        Some(Mode::Random) => SampleMode::RandomCodes,
        None if attractor::word_count(spec, depth) <= full_limit => SampleMode::FullEnumeration,
        None => SampleMode::RandomCodes,
    };
    Sampling {
        depth,
        count,
        mode,
        defaults,
    }
}

fn cmd_boxdim(a: &BoxdimArgs, out: &Output) -> Result<u8> {
    let started = Instant::now();
    let spec = load_valid(&a.source)?;
    let s = sampling(&a.source, &a.sample, &spec, 0.0);
    let cloud = attractor::sample_cloud(&spec, s.depth, s.mode, s.count, a.sample.seed)?;
    let scales = match (&a.scales, &s.defaults) {
        (Some(sc), _) => sc.clone(),
        (None, Some(d)) => d.scales.clone(),
        (None, None) => attractor::default_scales(&cloud),
    };
    let curve = attractor::boxdim_fit(&cloud, &scales)?;
    let report = DimensionReport {
        quantity: Quantity::BoxdimSlope,
        estimate: Some(curve.slope),
        bracket: (curve.slope, curve.slope),
        schedule: ScheduleInfo {
            kind: "scales".into(),
            scales: Some(scales.clone()),
            max_depth: Some(s.depth),
            ..Default::default()
        },
        flags: Vec::new(),
        trace: curve
            .scales
            .iter()
            .zip(&curve.counts)
            .map(|(e, c)| TraceEntry::Scale {
                epsilon: *e,
                count: *c,
            })
            .collect(),
        dimension_bound: None,
        fit: Some(LineFit {
            slope: curve.slope,
            intercept: curve.intercept,
            r2: curve.r2,
        }),
    };
    out.emit(&report)?;
    if let Some(path) = &a.out {
        write_file(path, curve.to_csv().as_bytes())?;
        write_manifest(
            "boxdim",
            &a.source,
            json!({
                "depth": s.depth,
                "count": cloud.len(),
                "mode": cloud.generation.mode,
                "scales": scales,
            }),
            Some(a.sample.seed),
            &[path],
            started,
        )?;
    }
    Ok(0)
}

fn cmd_render(a: &RenderArgs, out: &Output) -> Result<u8> {
    let started = Instant::now();
    let spec = load_valid(&a.source)?;
    if spec.dim() != 2 {
        return Err(AttractorError::NotPlanar(spec.dim()).into());
    }
    let path = a
        .out
        .as_deref()
        .ok_or_else(|| fail(1, "render needs --out PATH"))?;
    let s = sampling(&a.source, &a.sample, &spec, 1e6);
    let count = a.sample.count.unwrap_or(1_000_000);
    let cloud = attractor::sample_cloud(&spec, s.depth, s.mode, count, a.sample.seed)?;
    let raster = attractor::render(&cloud, spec.seed_region(), a.resolution)?;
    write_file(path, &raster.to_pgm())?;
    write_manifest(
        "render",
        &a.source,
        json!({
            "depth": s.depth,
            "count": cloud.len(),
            "mode": cloud.generation.mode,
            "resolution": a.resolution,
        }),
        Some(a.sample.seed),
        &[path],
        started,
    )?;
    out.emit(&json!({
        "out": path.display().to_string(),
        "resolution": a.resolution,
        "points": cloud.len(),
        "occupied": raster.occupied(),
    }))?;
    Ok(0)
}

fn cmd_cutset(a: &CutsetArgs, out: &Output) -> Result<u8> {
    let started = Instant::now();
    let spec = load_valid(&a.source)?;
    if !(a.epsilon > 0.0 && a.epsilon < 1.0) {
        return Err(fail(1, "--epsilon must lie in (0, 1)"));
    }
    if a.s.is_nan() || a.s <= 0.0 {
        return Err(fail(1, "--s must be positive"));
    }
    if a.node_budget == 0 {
        return Err(fail(1, "--node-budget must be positive"));
    }
    let c = symbolic::cutset(&spec, a.s, a.epsilon, a.node_budget);
    let mut csv = String::from("word,depth,log_phi,log_multiplicity\n");
    for e in &c.entries {
        csv.push_str(&format!(
            "{},{},{},{}\n",
            e.word.label(),
            e.word.len(),
            e.log_phi,
            e.log_multiplicity
        ));
    }
    let sum = symbolic::cutset_sum(&c);
    match &a.out {
        Some(path) => {
            write_file(path, csv.as_bytes())?;
            write_manifest(
                "cutset",
                &a.source,
                json!({ "s": a.s, "epsilon": a.epsilon, "node_budget": a.node_budget }),
                None,
                &[path],
                started,
            )?;
            out.emit(&json!({
                "entries": c.entries.len(),
                "m": c.m,
                "sum": sum.value,
                "log_sum": sum.log_value,
                "truncated": c.truncated,
            }))?;
        }
        None => print!("{csv}"),
    }
    Ok(if c.truncated { 3 } else { 0 })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_follow_error_kinds() {
        assert_eq!(exit_code(&fail(3, "x")), 3);
        assert_eq!(exit_code(&DimsError::NotStationary.into()), 2);
        assert_eq!(
            exit_code(&DimsError::BudgetExhausted { budget: 1 }.into()),
            3
        );
        assert_eq!(exit_code(&AttractorError::NotPlanar(1).into()), 2);
        assert_eq!(exit_code(&SpecError::UnknownFixture("x".into()).into()), 1);
        assert_eq!(exit_code(&anyhow::anyhow!("other")), 1);
    }

    #[test]
    fn cli_parses() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
