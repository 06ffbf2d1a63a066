//! Command-line front end: `sweep`, `validate` and `pair`.
//!
//! Exit codes: 0 success, 1 run failure or analytic/empirical
//! disagreement, 2 usage or configuration error.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};
use serde::Serialize;
use thiserror::Error;

use crate::config::{self, ConfigError, RunConfig};
use crate::detector::{self, Detector};
use crate::experiment::{self, CurveResult, ExperimentError};
use crate::raychannel::Vec3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Disagreement(String),
    #[error(transparent)]
    Experiment(#[from] ExperimentError),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => 2,
            CliError::Disagreement(_) | CliError::Experiment(_) | CliError::Io(_) => 1,
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "chanauth", version, about = "Channel-based spoofing detection simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sweep one parameter and write average miss-rate curves as CSV.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Worker threads (default: available parallelism).
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Compare analytic and Monte-Carlo error rates for the configured pair.
    Validate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 100_000)]
        trials: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Print the test quantities for a single pair of positions.
    Pair {
        #[arg(long)]
        config: PathBuf,
        /// Legitimate transmitter as `x,y,z` in meters.
        #[arg(long, allow_hyphen_values = true)]
        point_a: String,
        /// Spoofing transmitter as `x,y,z` in meters.
        #[arg(long, allow_hyphen_values = true)]
        point_b: String,
    },
}

/// Reproducibility record written next to every sweep output.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub artifact_version: &'static str,
    pub command: &'static str,
    pub config_path: String,
    pub config_text: String,
    pub seed: u64,
    pub workers: usize,
    pub grid_points: usize,
    pub pair_count: usize,
    pub rows: usize,
    pub output: String,
    pub wall_clock_s: f64,
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let mut out = std::io::stdout().lock();
    let result = match cli.command {
        Command::Sweep {
            config,
            output,
            seed,
            workers,
        } => cmd_sweep(&config, &output, seed, workers, &mut out),
        Command::Validate {
            config,
            trials,
            seed,
            workers,
        } => cmd_validate(&config, trials, seed, workers, &mut out),
        Command::Pair {
            config,
            point_a,
            point_b,
        } => parse_point(&point_a)
            .and_then(|a| parse_point(&point_b).map(|b| (a, b)))
            .and_then(|(a, b)| cmd_pair(&config, a, b, &mut out)),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn parse_point(s: &str) -> Result<Vec3> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        return Err(CliError::Usage(format!("point {s:?} must be x,y,z")));
    }
    let mut v = [0.0; 3];
    for (slot, p) in v.iter_mut().zip(&parts) {
        *slot = p
            .parse()
            .map_err(|_| CliError::Usage(format!("point {s:?}: {p:?} is not a number")))?;
    }
    Ok(Vec3::from_array(v))
}

/// Shortest round-trip text for `x`, switching to exponent form for very
/// small or very large magnitudes.
pub fn format_float(x: f64) -> String {
    let a = x.abs();
    if a != 0.0 && a.is_finite() && !(1e-4..1e15).contains(&a) {
        format!("{x:e}")
    } else {
        x.to_string()
    }
}

fn pool(workers: Option<usize>) -> Result<rayon::ThreadPool> {
    let n = match workers {
        Some(0) => return Err(CliError::Usage("--workers must be at least 1".into())),
        Some(n) => n,
        None => std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1),
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build()
        .map_err(|e| CliError::Io(format!("cannot start worker pool: {e}")))
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| CliError::Io(format!("{}: {e}", path.display()))
}

/// Renders curve rows as CSV: `param,value,config_label,avg_miss_rate,security_gain`.
///
/// Floats use shortest round-trip formatting; an unbounded gain is `inf`.
pub fn curve_csv(curve: &CurveResult) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| CliError::Io(format!("csv: {e}"));
    w.write_record(["param", "value", "config_label", "avg_miss_rate", "security_gain"])
        .map_err(csv_err)?;
    for r in &curve.rows {
        let gain = match r.security_gain_vs_siso {
            Some(g) => format_float(g),
            None => "inf".to_string(),
        };
        w.write_record([
            curve.parameter.symbol().to_string(),
            format_float(r.parameter_value),
            r.configuration_label.clone(),
            format_float(r.average_miss_rate),
            gain,
        ])
        .map_err(csv_err)?;
    }
    w.into_inner().map_err(|e| CliError::Io(format!("csv: {e}")))
}

/// Writes `bytes` to `path` atomically (temp file in the same directory,
/// then rename), so a failed run leaves no partial file behind.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io_err(path))?;
    tmp.write_all(bytes).map_err(io_err(path))?;
    tmp.flush().map_err(io_err(path))?;
    tmp.persist(path).map_err(|e| io_err(path)(e.error))?;
    Ok(())
}

pub fn manifest_path(output: &Path) -> PathBuf {
    output.with_extension("manifest.json")
}

fn load(config_path: &Path) -> Result<RunConfig> {
    Ok(config::parse_config(config_path)?)
}

pub fn cmd_sweep(
    config_path: &Path,
    output: &Path,
    seed: u64,
    workers: Option<usize>,
    out: &mut dyn Write,
) -> Result<()> {
    let started = Instant::now();
    let cfg = load(config_path)?;
    let pool = pool(workers)?;
    let threads = pool.current_num_threads();
    let curve = pool.install(|| experiment::run_sweep(&cfg.scenario, &cfg.sweep, &cfg.configurations))?;
    let csv = curve_csv(&curve)?;
    write_atomic(output, &csv)?;

    let n = experiment::grid_points(&cfg.scenario)?.len();
    let manifest = RunManifest {
        artifact_version: env!("CARGO_PKG_VERSION"),
        command: "sweep",
        config_path: config_path.display().to_string(),
        config_text: cfg.source_text.clone(),
        seed,
        workers: threads,
        grid_points: n,
        pair_count: n * (n - 1) / 2,
        rows: curve.rows.len(),
        output: output.display().to_string(),
        wall_clock_s: started.elapsed().as_secs_f64(),
    };
    let json = serde_json::to_vec_pretty(&manifest).map_err(|e| CliError::Io(e.to_string()))?;
    let mpath = manifest_path(output);
    write_atomic(&mpath, &json)?;
    writeln!(
        out,
        "wrote {} rows to {} ({} points, {} pairs, {:.1} s)",
        curve.rows.len(),
        output.display(),
        n,
        manifest.pair_count,
        manifest.wall_clock_s
    )
    .map_err(|e| CliError::Io(e.to_string()))?;
    Ok(())
}

/// Analytic value, empirical value, and whether they agree within three
/// binomial standard errors of the analytic rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RateCheck {
    pub analytic: f64,
    pub empirical: f64,
    pub standard_error: f64,
    pub agrees: bool,
}

impl RateCheck {
    pub fn new(analytic: f64, empirical: f64, trials: u64) -> Self {
        let standard_error = (analytic * (1.0 - analytic) / trials as f64).sqrt();
        RateCheck {
            analytic,
            empirical,
            standard_error,
            agrees: (empirical - analytic).abs() <= 3.0 * standard_error,
        }
    }

    fn interval(&self) -> (f64, f64) {
        (
            (self.analytic - 3.0 * self.standard_error).max(0.0),
            (self.analytic + 3.0 * self.standard_error).min(1.0),
        )
    }
}

pub fn cmd_validate(
    config_path: &Path,
    trials: u64,
    seed: u64,
    workers: Option<usize>,
    out: &mut dyn Write,
) -> Result<()> {
    if trials == 0 {
        return Err(CliError::Usage("--trials must be at least 1".into()));
    }
    let cfg = load(config_path)?;
    let pool = pool(workers)?;
    let points = experiment::grid_points(&cfg.scenario)?;
    let (i, j) = cfg.validate_pair;
    let (a, b) = (points[i], points[j]);
    let beta = experiment::pair_miss_rate(a, b, &cfg.scenario, &cfg.radio)?.value();
    let mc = pool.install(|| experiment::monte_carlo_rates(a, b, &cfg.scenario, &cfg.radio, trials, seed))?;
    let alpha = RateCheck::new(cfg.radio.false_alarm_target, mc.empirical_alpha, trials);
    let beta = RateCheck::new(beta, mc.empirical_beta, trials);

    let w = |e: std::io::Error| CliError::Io(e.to_string());
    writeln!(out, "pair = {i}, {j}  ({a} -> {b})").map_err(w)?;
    writeln!(out, "trials = {trials}").map_err(w)?;
    for (name, c) in [("alpha", alpha), ("beta", beta)] {
        let (lo, hi) = c.interval();
        writeln!(
            out,
            "{name}: analytic = {}  empirical = {}  3-sigma interval = [{}, {}]  {}",
            format_float(c.analytic),
            format_float(c.empirical),
            format_float(lo),
            format_float(hi),
            if c.agrees { "agree" } else { "DISAGREE" }
        )
        .map_err(w)?;
    }
    if alpha.agrees && beta.agrees {
        Ok(())
    } else {
        Err(CliError::Disagreement(format!(
            "analytic and empirical rates differ: alpha {} vs {}, beta {} vs {}",
            alpha.analytic, alpha.empirical, beta.analytic, beta.empirical
        )))
    }
}

pub fn cmd_pair(config_path: &Path, a: Vec3, b: Vec3, out: &mut dyn Write) -> Result<()> {
    let cfg = load(config_path)?;
    let det = Detector::new(&cfg.radio).map_err(ExperimentError::from)?;
    let ha = cfg
        .scenario
        .channel(a, &cfg.radio)
        .map_err(|e| CliError::Usage(format!("point a: {e}")))?;
    let hb = cfg
        .scenario
        .channel(b, &cfg.radio)
        .map_err(|e| CliError::Usage(format!("point b: {e}")))?;
    let mu = detector::noncentrality(&ha, &hb, &det.noise).map_err(ExperimentError::from)?;
    let beta = det.miss_rate(mu).map_err(ExperimentError::from)?;
    let w = |e: std::io::Error| CliError::Io(e.to_string());
    writeln!(out, "sigma_sq = {}", format_float(det.noise.sigma_sq)).map_err(w)?;
    writeln!(
        out,
        "noise_power_mw = {}",
        format_float(det.noise.noise_power_per_tone_mw)
    )
    .map_err(w)?;
    writeln!(out, "dof = {}", det.dof).map_err(w)?;
    writeln!(out, "alpha = {}", cfg.radio.false_alarm_target).map_err(w)?;
    writeln!(out, "threshold = {}", format_float(det.threshold)).map_err(w)?;
    writeln!(out, "mu = {}", format_float(mu)).map_err(w)?;
    writeln!(out, "beta = {}", format_float(beta.value())).map_err(w)?;
    Ok(())
}
