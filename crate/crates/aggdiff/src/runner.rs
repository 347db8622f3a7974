//! Single runs: configuration in, trajectory, diagnostics and rate reports out.

use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use aggdiff_core::diagnostics::{convergence_report, predicted_rates, DiagnosticsContext, PredictedRates};
use aggdiff_core::kernels::{OperatorCache, RadialVelocity, VelocityQuadrature};
use aggdiff_core::solver::{initial_data, Solver, SolverState, StepSettings, Trajectory};
use aggdiff_core::{DiagnosticsRow, RateReport};

use crate::config::{RunConfig, Validated};
use crate::error::{AppError, Result};
use crate::output::{diagnostics_csv, write_file, write_snapshots, RatesRow, RunSummary};

/// Everything a run produced.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub validated: Validated,
    pub trajectory: Trajectory,
    pub rows: Vec<DiagnosticsRow>,
    pub predicted: PredictedRates,
    pub reports: Vec<RateReport>,
    pub warnings: Vec<String>,
}

impl RunOutput {
    pub fn report(&self, quantity: &str) -> Option<&RateReport> {
        self.reports.iter().find(|r| r.quantity == quantity)
    }

    /// The `rates.csv` row of this run, built from the `L^1` convergence report
    /// and converted to rates in `(1 + t)`.
    pub fn rates_row(&self, config: &RunConfig) -> RatesRow {
        let beta = self.validated.params.beta;
        let l1 = self.report("l1_to_ground");
        RatesRow {
            d: config.params.d,
            m: config.params.m,
            gamma: self.validated.kernel.as_ref().map(|_| self.predicted.gamma),
            mass: config.params.mass,
            predicted: self.predicted.l1_conv_t,
            fitted: l1.and_then(|r| r.fitted_exponent).map(|s| -s * beta),
            residual: l1.filter(|r| r.fitted_exponent.is_some()).map(|r| r.residual),
            verdict: match l1 {
                Some(r) => RatesRow::verdict_of(r.verdict),
                None => String::from("no-fit"),
            },
        }
    }
}

/// Runs `config` without touching the file system. `cache` shares assembled
/// velocity operators between runs on the same grid and kernel.
pub fn execute(config: &RunConfig, cache: Option<Arc<OperatorCache>>) -> Result<RunOutput> {
    let v = config.validate()?;
    let mut warnings = v.warnings.clone();
    let velocity = match &v.kernel {
        Some(k) => Some(RadialVelocity::with_cache(
            k,
            v.grid.clone(),
            VelocityQuadrature::default(),
            cache.unwrap_or_else(|| Arc::new(OperatorCache::new(4))),
        )?),
        None => None,
    };
    let mut solver = Solver::with_velocity(&v.params, velocity, v.grid.clone(), StepSettings::default())?;
    let theta0 = initial_data(&v.initial, &v.params, &v.grid)?;
    let traj = solver.run(SolverState::new(theta0, 0.0), config.time.tau_max, config.time.snapshot_dtau)?;
    let ctx = DiagnosticsContext::new(&v.params, &v.grid, &v.diagnostics)?;
    let rows = ctx.rows(&traj)?;
    let predicted = predicted_rates(&v.params, v.kernel.as_ref(), v.report.delta)?;
    let reports = match convergence_report(&traj, &rows, v.kernel.as_ref(), &v.report) {
        Ok(r) => r,
        Err(aggdiff_core::Error::Domain(msg)) => {
            warnings.push(format!("rate fits skipped: {msg}"));
            Vec::new()
        }
        Err(e) => return Err(e.into()),
    };
    Ok(RunOutput { validated: v, trajectory: traj, rows, predicted, reports, warnings })
}

/// Writes the artifacts of a finished run into `dir`.
pub fn write_artifacts(dir: &Path, config: &RunConfig, out: &RunOutput, wall_time_s: f64) -> Result<RunSummary> {
    std::fs::create_dir_all(dir).map_err(|e| AppError::io(dir, e))?;
    if config.output.wants("csv") {
        let ctx_levels: Vec<f64> = out.rows.first().map(|r| r.e_k.iter().map(|x| x.0).collect()).unwrap_or_default();
        let p_list = &out.validated.diagnostics.p_list;
        write_file(&dir.join("diagnostics.csv"), &diagnostics_csv(&out.rows, &ctx_levels, p_list))?;
    }
    if config.output.wants("tsv") {
        write_snapshots(dir, &out.trajectory)?;
    }
    let summary = RunSummary::from_run(
        config,
        out.warnings.clone(),
        &out.trajectory,
        Some(&out.predicted),
        &out.reports,
        wall_time_s,
    );
    // summary.json is part of the contract whatever the format list says.
    summary.write(dir)?;
    Ok(summary)
}

/// Runs `config` and writes its artifacts to `dir`. A `summary.json` is left
/// in `dir` even when the run fails.
pub fn run_to_dir(config: &RunConfig, dir: &Path, cache: Option<Arc<OperatorCache>>) -> Result<RunOutput> {
    let start = Instant::now();
    let result = execute(config, cache).and_then(|out| {
        write_artifacts(dir, config, &out, start.elapsed().as_secs_f64())?;
        Ok(out)
    });
    if let Err(e) = &result {
        let _ = std::fs::create_dir_all(dir);
        RunSummary::failed(Some(config.clone()), e, start.elapsed().as_secs_f64()).write(dir)?;
    }
    result
}
