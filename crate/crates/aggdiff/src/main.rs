use std::path::PathBuf;
use std::process::ExitCode;

use aggdiff::config::{parse_fraction, RunConfig};
use aggdiff::error::{AppError, Result};
use aggdiff::runner::run_to_dir;
use aggdiff::suites::Suites;
use aggdiff::sweep::{run_sweep, worker_count, SweepPlan};
use aggdiff_core::diagnostics::{predicted_rates, DEFAULT_DELTA};
use aggdiff_core::kernels::{KernelKind, KernelSpec};
use aggdiff_core::ProblemParams;
use clap::{Parser, Subcommand};

/// Aggregation-diffusion equations in self-similar variables.
#[derive(Debug, Parser)]
#[command(name = "aggdiff", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one configuration and write diagnostics.csv, snapshots/ and summary.json.
    Run {
        config: PathBuf,
        /// Override a key, e.g. `--set grid.cells=800`. Repeatable.
        #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
        set: Vec<String>,
        /// Output directory; overrides output.directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run every cell of a sweep file and write rates.csv.
    Sweep {
        config: PathBuf,
        #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
        set: Vec<String>,
        /// Concurrent cells; defaults to $AGGDIFF_WORKERS or the core count.
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Run the property suites; exit status 2 if any fails.
    Verify {
        /// Only these suites (1 to 12).
        #[arg(long = "only", value_delimiter = ',')]
        only: Vec<usize>,
    },
    /// Print the predicted decay and convergence rates.
    Rates {
        #[arg(long)]
        d: usize,
        /// Diffusion exponent, a number or a fraction such as 4/3.
        #[arg(long, value_parser = fraction)]
        m: f64,
        /// none, smooth_compact, power_tail, newtonian or gaussian; `--gamma`
        /// alone implies power_tail.
        #[arg(long)]
        kernel: Option<String>,
        #[arg(long)]
        gamma: Option<f64>,
        #[arg(long, default_value_t = DEFAULT_DELTA)]
        delta: f64,
    },
}

fn fraction(s: &str) -> std::result::Result<f64, String> {
    parse_fraction(s).ok_or_else(|| format!("{s:?} is not a number or fraction"))
}

fn cmd_run(config: PathBuf, set: Vec<String>, out: Option<PathBuf>) -> Result<()> {
    let mut cfg = RunConfig::load(&config, &set)?;
    if let Some(dir) = out {
        cfg.output.directory = dir;
    }
    let dir = cfg.output.directory.clone();
    let result = run_to_dir(&cfg, &dir, None)?;
    for w in &result.warnings {
        eprintln!("warning: {w}");
    }
    println!("status: {}", result.trajectory.status.as_str());
    for r in &result.reports {
        let fmt = |x: Option<f64>| x.map_or_else(|| String::from("-"), |v| format!("{v:.4}"));
        println!(
            "{:<14} fitted {:>9} predicted {:>9} [{}]",
            r.quantity,
            fmt(r.fitted_exponent),
            fmt(r.predicted_exponent),
            r.verdict.as_str()
        );
    }
    println!("wrote {}", dir.display());
    Ok(())
}

fn cmd_sweep(config: PathBuf, set: Vec<String>, workers: Option<usize>) -> Result<()> {
    let plan = SweepPlan::load(&config, &set)?;
    let workers = match workers {
        Some(0) => return Err(AppError::config("--workers must be positive")),
        Some(n) => n,
        None => worker_count()?,
    };
    let rows = run_sweep(&plan, workers)?;
    let errors = rows.iter().filter(|r| r.verdict == "error").count();
    println!("{} cells, {errors} errors; wrote {}", rows.len(), plan.root.join("rates.csv").display());
    Ok(())
}

fn cmd_verify(only: Vec<usize>) -> Result<bool> {
    let ids: Vec<usize> = if only.is_empty() { (1..=12).collect() } else { only };
    if let Some(bad) = ids.iter().find(|i| !(1..=12).contains(*i)) {
        return Err(AppError::config(format!("no suite {bad}; suites are numbered 1 to 12")));
    }
    let mut suites = Suites::new();
    let mut ok = true;
    for id in ids {
        let outcome = suites.check(id);
        ok &= outcome.passed;
        println!("{outcome}");
    }
    Ok(ok)
}

fn cmd_rates(d: usize, m: f64, kernel: Option<String>, gamma: Option<f64>, delta: f64) -> Result<()> {
    let params = ProblemParams::new(d, m, 1.0)?;
    let kind = match (kernel.as_deref(), gamma) {
        (None | Some("none"), None) => None,
        (None, Some(_)) => Some(KernelKind::PowerTail),
        (Some("none"), Some(_)) => return Err(AppError::config("--gamma needs a kernel")),
        (Some(k), _) => Some(KernelKind::parse(k).ok_or_else(|| AppError::config(format!("unknown kernel {k:?}")))?),
    };
    let spec = match kind {
        None => None,
        Some(KernelKind::PowerTail) => {
            let g = gamma.ok_or_else(|| AppError::config("power_tail needs --gamma"))?;
            Some(KernelSpec::power_tail(g, 1.0, 1.0))
        }
        Some(_) if gamma.is_some() => return Err(AppError::config("--gamma only applies to power_tail")),
        Some(KernelKind::Gaussian) => Some(KernelSpec::gaussian(1.0, 1.0)),
        Some(KernelKind::SmoothCompact) => Some(KernelSpec::smooth_compact(1.0, 1.0)),
        Some(KernelKind::Newtonian) => Some(KernelSpec::newtonian(1.0)),
    };
    if let Some(s) = &spec {
        s.bind(d)?;
    }
    let p = predicted_rates(&params, spec.as_ref(), delta)?;
    let show = |x: Option<f64>| x.map_or_else(|| String::from("not-applicable"), |v| format!("{v}"));
    println!("beta = {}", params.beta);
    println!("gamma = {}", p.gamma);
    println!("linf = {}", p.linf_decay_t);
    println!("l1 = {}", show(p.l1_conv_t));
    println!("l1_tau = {}", show(p.l1_conv_tau));
    println!("l1_ceiling = {}", show(p.l1_ceiling_t));
    println!("source = {}", p.source);
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config, set, out } => cmd_run(config, set, out).map(|_| true),
        Command::Sweep { config, set, workers } => cmd_sweep(config, set, workers).map(|_| true),
        Command::Verify { only } => cmd_verify(only),
        Command::Rates { d, m, kernel, gamma, delta } => cmd_rates(d, m, kernel, gamma, delta).map(|_| true),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
