//! `haes`: run hybrid extremum-seeking experiments from JSON configs.

mod config;
mod output;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use haes::dither::{common_period_exact, verify_average, DitherParams, Rational};
use haes::harness::{run_config, sweep, SweepParam};
use log::info;
use serde_json::json;

/// Residual bound for `dither-check`.
const DITHER_TOL: f64 = 1e-6;
/// Upper limit on quadrature nodes for `dither-check`.
const MAX_NODES: f64 = 2e9;

#[derive(Debug)]
pub enum CliError {
    Core(haes::Error),
    Parse(String),
    Io(PathBuf, std::io::Error),
}

impl CliError {
    pub fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Io(path.to_path_buf(), e)
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(haes::Error::Diverged { .. }) => 3,
            CliError::Core(_) | CliError::Parse(_) => 2,
            CliError::Io(..) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Parse(m) => write!(f, "parse error: {m}"),
            CliError::Io(p, e) => write!(f, "{}: {e}", p.display()),
        }
    }
}

impl From<haes::Error> for CliError {
    fn from(e: haes::Error) -> Self {
        CliError::Core(e)
    }
}

#[derive(Debug, Parser)]
#[command(name = "haes", version, about = "Hybrid accelerated extremum-seeking simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// JSON config: a full experiment or {"preset": NAME, "overrides": {...}}.
    #[arg(long)]
    config: PathBuf,
    /// Keep every N-th flow sample in written trajectories.
    #[arg(long)]
    stride: Option<usize>,
    /// Seed for random jump selection.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate one run; writes a CSV trajectory and a JSON sidecar.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// CSV output path; metrics go to the same path with a .json extension.
        #[arg(long)]
        out: PathBuf,
        /// Label of the run to simulate (default: the first).
        #[arg(long)]
        run: Option<String>,
    },
    /// Simulate every run; writes <label>.csv per run and metrics.json.
    Compare {
        #[command(flatten)]
        common: Common,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Vary one parameter across all runs; writes a JSON table.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// One of T_max, T_med, k, a, epsilon.
        #[arg(long)]
        param: String,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the common dither period and the averaging residuals.
    DitherCheck {
        /// Frequencies as decimals or p/q; repeat the flag or separate with commas.
        #[arg(long = "kappa", value_delimiter = ',', required = true)]
        kappas: Vec<String>,
        /// Number of common periods to integrate over.
        #[arg(long, default_value_t = 1)]
        periods: usize,
        /// Quadrature intervals per unit of dither time.
        #[arg(long)]
        grid: Option<usize>,
    },
}

fn simulate(common: &Common, out: &Path, label: Option<&str>) -> Result<ExitCode, CliError> {
    let mut cfg = config::load(&common.config)?;
    config::apply_flags(&mut cfg, common.stride, common.seed);
    cfg.keep_arcs = true;
    let pick = match label {
        Some(l) => cfg
            .runs
            .iter()
            .position(|r| r.label == l)
            .ok_or_else(|| CliError::Parse(format!("no run labelled '{l}'")))?,
        None => 0,
    };
    cfg.runs = vec![cfg.runs[pick].clone()];
    let res = run_config(&cfg)?;
    let run = &res.runs[0];
    let rows = output::write_trajectory(out, run)?;
    let mut sidecar = output::run_metrics(run);
    sidecar["manifest"] = res.manifest.clone();
    output::write_json(&out.with_extension("json"), &sidecar)?;
    info!("{}: wrote {rows} rows to {}", run.label, out.display());
    println!("{}: {} jumps, final error {:e}", run.label, run.metrics.jump_count, run.metrics.final_error);
    Ok(ExitCode::SUCCESS)
}

fn compare(common: &Common, out: &Path) -> Result<ExitCode, CliError> {
    let mut cfg = config::load(&common.config)?;
    config::apply_flags(&mut cfg, common.stride, common.seed);
    cfg.keep_arcs = true;
    let res = run_config(&cfg)?;
    let mut runs = serde_json::Map::new();
    for run in &res.runs {
        output::write_trajectory(&out.join(format!("{}.csv", run.label)), run)?;
        runs.insert(run.label.clone(), output::run_metrics(run));
        let times: Vec<String> =
            run.metrics.time_to.iter().map(|(nu, t)| format!("{nu}: {}", t.map_or("never".into(), |t| format!("{t:.3}")))).collect();
        println!("{:<12} jumps {:>6}  time_to {{{}}}", run.label, run.metrics.jump_count, times.join(", "));
    }
    output::write_json(&out.join("metrics.json"), &json!({"name": res.name, "runs": runs, "manifest": res.manifest}))?;
    Ok(ExitCode::SUCCESS)
}

fn run_sweep(common: &Common, param: &str, values: &[f64], out: &Path) -> Result<ExitCode, CliError> {
    let mut cfg = config::load(&common.config)?;
    config::apply_flags(&mut cfg, common.stride, common.seed);
    let param: SweepParam = param.parse()?;
    let rows = sweep(param, values, &cfg)?;
    for row in &rows {
        let cells: Vec<String> = row.runs.iter().map(|(l, m)| format!("{l}: final {:.3e}", m.final_error)).collect();
        println!("{param} = {:<10} {}", row.value, cells.join("  "));
    }
    output::write_json(out, &json!({"param": param, "rows": rows, "manifest": cfg.manifest()?}))?;
    Ok(ExitCode::SUCCESS)
}

fn dither_check(kappas: &[String], periods: usize, grid: Option<usize>) -> Result<ExitCode, CliError> {
    let kappas = kappas.iter().map(|s| s.parse::<Rational>()).collect::<Result<Vec<_>, _>>()?;
    let params = DitherParams::new(kappas, 1.0)?;
    let period = common_period_exact(&params.kappas)?;
    let kmax = params.kappas.iter().map(Rational::to_f64).fold(1.0, f64::max);
    let grid = grid.unwrap_or((1e4 * kmax).ceil() as usize);
    let nodes = period as f64 * periods as f64 * grid as f64;
    println!("T={period}");
    if nodes > MAX_NODES {
        return Err(CliError::Parse(format!("quadrature would need {nodes:.3e} nodes; lower --grid or --periods")));
    }
    let r = verify_average(&params, periods, grid)?;
    println!("matrix_residual={:.3e}", r.matrix_max());
    println!("vector_residual={:.3e}", r.vector_max());
    let ok = r.matrix_max() <= DITHER_TOL && r.vector_max() <= DITHER_TOL;
    Ok(if ok { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Simulate { common, out, run } => simulate(common, out, run.as_deref()),
        Command::Compare { common, out } => compare(common, out),
        Command::Sweep { common, param, values, out } => run_sweep(common, param, values, out),
        Command::DitherCheck { kappas, periods, grid } => dither_check(kappas, *periods, *grid),
    };
    outcome.unwrap_or_else(|e| {
        eprintln!("error: {e}");
        ExitCode::from(e.exit_code())
    })
}
