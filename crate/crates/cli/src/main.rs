use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use rwre_cli::config::{self, Kind};
use rwre_cli::manifest::{self, Status};
use std::fmt::Display;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

/// Experiments on balanced random walks in random environments.
///
/// Exit status: 0 when every check passed, 2 when some check failed (or a
/// replay diverged), 1 on errors.
#[derive(Parser)]
#[command(name = "rwre", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate an environment file.
    GenEnv(RunArgs),
    /// Stationary density of the periodized walk.
    Stationary(RunArgs),
    /// Norm diagnostics of the stationary density, cluster and exit-time checks.
    Phi(RunArgs),
    /// Maximum principle for the nearest-neighbour operator.
    Mp(RunArgs),
    /// Mean value inequality and exit-time bounds.
    Mvi(RunArgs),
    /// Cutoff-function inequality with explicit constants.
    Cutoff(RunArgs),
    /// Connectivity statistics of the small-ellipticity percolation.
    Perc(RunArgs),
    /// Maximum principle for coarse jump operators, explicit constants.
    Mp2(RunArgs),
    /// Mean value ratios for coarse jump operators.
    Mvi2(RunArgs),
    /// Covariance of the rescaled walk.
    Clt(RunArgs),
    /// Visits to the origin by annulus and by time horizon.
    Transience(RunArgs),
    /// Re-run a recorded experiment and compare output digests.
    Replay(ReplayArgs),
}

#[derive(Args)]
struct RunArgs {
    /// TOML config file.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set phi.n=[4,8]` or `--set env.kind=uniform-srw`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    dim: Option<usize>,
    /// Output directory (default `runs/<experiment>-<seed>`).
    #[arg(long, short)]
    out: Option<PathBuf>,
    /// Worker threads; results do not depend on it.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args)]
struct ReplayArgs {
    manifest: PathBuf,
    /// Where to write the replayed outputs (default: a temporary directory).
    #[arg(long, short)]
    out: Option<PathBuf>,
    #[arg(long)]
    threads: Option<usize>,
}

/// Prints a line, ignoring a closed pipe (`rwre ... | head`).
fn say(line: impl Display) {
    let _ = writeln!(std::io::stdout().lock(), "{line}");
}

fn threads(n: Option<usize>) -> Result<()> {
    if let Some(n) = n {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("building the worker pool")?;
    }
    Ok(())
}

fn run_experiment(kind: Kind, a: RunArgs) -> Result<ExitCode> {
    threads(a.threads)?;
    let mut overrides = a.overrides;
    if let Some(s) = a.seed {
        overrides.push(format!("seed={s}"));
    }
    if let Some(d) = a.dim {
        overrides.push(format!("dim={d}"));
    }
    let mut cfg = config::load(kind, a.config.as_deref(), &overrides)?;
    if let Some(o) = a.out {
        cfg.output = Some(o);
    }
    let dir = cfg.output.clone().unwrap_or_else(|| manifest::default_output(&cfg));
    let m = manifest::run(&cfg, &dir)?;
    let summary: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.join("summary.json"))?)?;
    for c in summary["checks"].as_array().into_iter().flatten() {
        let pass = c["pass"].as_bool().unwrap_or(false);
        say(format_args!("{} {}: {}", if pass { "PASS" } else { "FAIL" }, c["name"].as_str().unwrap_or(""), c["detail"].as_str().unwrap_or("")));
    }
    say(format_args!("wrote {} files to {} in {:.2}s", m.outputs.len(), dir.display(), m.wall_clock_seconds));
    Ok(if m.status == Status::Pass { ExitCode::SUCCESS } else { ExitCode::from(2) })
}

fn replay(a: ReplayArgs) -> Result<ExitCode> {
    threads(a.threads)?;
    let tmp;
    let dir = match a.out {
        Some(d) => d,
        None => {
            tmp = tempfile::tempdir()?;
            tmp.path().to_path_buf()
        }
    };
    let (report, _) = manifest::replay(&a.manifest, &dir)?;
    say(serde_json::to_string_pretty(&report)?);
    Ok(if report.is_identical() { ExitCode::SUCCESS } else { ExitCode::from(2) })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.command {
        Command::GenEnv(a) => run_experiment(Kind::GenEnv, a),
        Command::Stationary(a) => run_experiment(Kind::Stationary, a),
        Command::Phi(a) => run_experiment(Kind::Phi, a),
        Command::Mp(a) => run_experiment(Kind::Mp, a),
        Command::Mvi(a) => run_experiment(Kind::Mvi, a),
        Command::Cutoff(a) => run_experiment(Kind::Cutoff, a),
        Command::Perc(a) => run_experiment(Kind::Perc, a),
        Command::Mp2(a) => run_experiment(Kind::Mp2, a),
        Command::Mvi2(a) => run_experiment(Kind::Mvi2, a),
        Command::Clt(a) => run_experiment(Kind::Clt, a),
        Command::Transience(a) => run_experiment(Kind::Transience, a),
        Command::Replay(a) => replay(a),
    };
    match res {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
