//! Files written by the command line tool.
//!
//! A run directory holds
//!
//! * `diagnostics.csv`: one row per snapshot. Header
//!   `tau,t,mass,linf,l1_to_ground,H,I,H_rel`, then `E_k_<k>` for every
//!   equi-integrability level and `lp_<p>` for every norm exponent. `linf` and
//!   the norms are rescaled-frame values. Numbers use 17 significant digits.
//! * `snapshots/snapshot_<i>.tsv`: two tab separated columns `r` and `theta`
//!   (cell centers and cell averages) with a `# tau=... t=... step=...` comment
//!   line above the header. `snapshots/manifest.tsv` lists
//!   `index, file, tau, t, step, mass`.
//! * `summary.json`: see [`RunSummary`].
//!
//! A sweep adds `rates.csv` with columns
//! `d,m,gamma,M,predicted,fitted,residual,verdict`, where `predicted` and
//! `fitted` are convergence rates in `(1 + t)` (positive means decay).

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use aggdiff_core::diagnostics::{PredictedRates, Verdict};
use aggdiff_core::solver::{RunStatus, Trajectory};
use aggdiff_core::{DiagnosticsRow, RateReport};
use serde::Serialize;

use crate::config::RunConfig;
use crate::error::{AppError, Result};

pub const CSV_FIXED_COLUMNS: [&str; 8] = ["tau", "t", "mass", "linf", "l1_to_ground", "H", "I", "H_rel"];
pub const RATES_COLUMNS: [&str; 8] = ["d", "m", "gamma", "M", "predicted", "fitted", "residual", "verdict"];

/// `{:.16e}`: 17 significant digits, enough to round trip an `f64`.
pub fn num(x: f64) -> String {
    format!("{x:.16e}")
}

/// Formats a level or exponent for a column name: shortest round-trip form.
pub fn label(x: f64) -> String {
    format!("{x}")
}

pub fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| AppError::io(parent, e))?;
    }
    fs::write(path, contents).map_err(|e| AppError::io(path, e))
}

pub fn diagnostics_header(k_levels: &[f64], p_list: &[f64]) -> String {
    let mut cols: Vec<String> = CSV_FIXED_COLUMNS.iter().map(|s| s.to_string()).collect();
    cols.extend(k_levels.iter().map(|k| format!("E_k_{}", label(*k))));
    cols.extend(p_list.iter().map(|p| format!("lp_{}", label(*p))));
    cols.join(",")
}

pub fn diagnostics_csv(rows: &[DiagnosticsRow], k_levels: &[f64], p_list: &[f64]) -> String {
    let mut out = diagnostics_header(k_levels, p_list);
    out.push('\n');
    for r in rows {
        let fixed = [r.tau, r.t, r.mass, r.linf, r.l1_to_ground, r.h, r.i, r.h_rel];
        let values: Vec<String> = fixed
            .into_iter()
            .chain(r.e_k.iter().map(|x| x.1))
            .chain(r.lp.iter().map(|x| x.1))
            .map(num)
            .collect();
        out.push_str(&values.join(","));
        out.push('\n');
    }
    out
}

/// Writes `snapshots/` under `dir`.
pub fn write_snapshots(dir: &Path, traj: &Trajectory) -> Result<()> {
    let snap_dir = dir.join("snapshots");
    fs::create_dir_all(&snap_dir).map_err(|e| AppError::io(&snap_dir, e))?;
    let mut manifest = String::from("index\tfile\ttau\tt\tstep\tmass\n");
    for (i, s) in traj.snapshots.iter().enumerate() {
        let name = format!("snapshot_{i:05}.tsv");
        let mut body = format!("# tau={} t={} step={}\nr\ttheta\n", num(s.tau), num(s.t), s.step);
        for (r, v) in s.theta.grid().centers().iter().zip(s.theta.values()) {
            let _ = writeln!(body, "{}\t{}", num(*r), num(*v));
        }
        write_file(&snap_dir.join(&name), &body)?;
        let _ = writeln!(manifest, "{i}\t{name}\t{}\t{}\t{}\t{}", num(s.tau), num(s.t), s.step, num(s.theta.mass()));
    }
    write_file(&snap_dir.join("manifest.tsv"), &manifest)
}

#[derive(Debug, Clone, Serialize)]
pub struct ReportJson {
    pub quantity: String,
    pub frame: &'static str,
    pub window: [f64; 2],
    pub fitted_exponent: Option<f64>,
    pub predicted_exponent: Option<f64>,
    pub ceiling_exponent: Option<f64>,
    pub residual: f64,
    pub samples: usize,
    pub tolerance: f64,
    pub one_sided: bool,
    pub verdict: &'static str,
}

impl From<&RateReport> for ReportJson {
    fn from(r: &RateReport) -> Self {
        ReportJson {
            quantity: r.quantity.clone(),
            frame: r.frame.as_str(),
            window: [r.window.0, r.window.1],
            fitted_exponent: r.fitted_exponent,
            predicted_exponent: r.predicted_exponent,
            ceiling_exponent: r.ceiling_exponent,
            residual: r.residual,
            samples: r.samples,
            tolerance: r.tolerance,
            one_sided: r.one_sided,
            verdict: r.verdict.as_str(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct PredictedJson {
    pub gamma: f64,
    pub delta: f64,
    pub linf_decay_t: f64,
    pub l1_conv_t: Option<f64>,
    pub l1_conv_tau: Option<f64>,
    pub l1_ceiling_t: Option<f64>,
    pub source: &'static str,
}

impl From<&PredictedRates> for PredictedJson {
    fn from(p: &PredictedRates) -> Self {
        PredictedJson {
            gamma: p.gamma,
            delta: p.delta,
            linf_decay_t: p.linf_decay_t,
            l1_conv_t: p.l1_conv_t,
            l1_conv_tau: p.l1_conv_tau,
            l1_ceiling_t: p.l1_ceiling_t,
            source: p.source,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BlowUpJson {
    pub tau: f64,
    pub max_theta: f64,
    pub dt: f64,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct SchemeJson {
    pub cells: usize,
    pub radius: f64,
    pub steps: u64,
    pub dt_min: Option<f64>,
    pub dt_max: Option<f64>,
    pub dt_mean: Option<f64>,
    pub max_mass_drift: f64,
    pub final_mass_drift: f64,
    pub min_theta: f64,
}

/// Contents of `summary.json`. Written for every run, including rejected
/// configurations and runs that stop with an error; `wall_time_s` is the only
/// field that differs between identical runs.
#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    /// `completed`, `blow-up` or `error`.
    pub status: String,
    pub error: Option<String>,
    pub config: Option<RunConfig>,
    pub warnings: Vec<String>,
    pub blow_up: Option<BlowUpJson>,
    pub predicted: Option<PredictedJson>,
    pub reports: Vec<ReportJson>,
    pub scheme: SchemeJson,
    pub snapshots: usize,
    pub wall_time_s: f64,
}

impl RunSummary {
    pub fn failed(config: Option<RunConfig>, err: &AppError, wall_time_s: f64) -> Self {
        RunSummary {
            status: String::from("error"),
            error: Some(err.to_string()),
            config,
            warnings: Vec::new(),
            blow_up: None,
            predicted: None,
            reports: Vec::new(),
            scheme: SchemeJson::default(),
            snapshots: 0,
            wall_time_s,
        }
    }

    pub fn from_run(
        config: &RunConfig,
        warnings: Vec<String>,
        traj: &Trajectory,
        predicted: Option<&PredictedRates>,
        reports: &[RateReport],
        wall_time_s: f64,
    ) -> Self {
        let s = &traj.stats;
        let grid = traj.snapshots[0].theta.grid();
        let dt = |x: f64| (s.steps > 0).then_some(x);
        RunSummary {
            status: traj.status.as_str().to_string(),
            error: None,
            config: Some(config.clone()),
            warnings,
            blow_up: match traj.status {
                RunStatus::BlowUp(e) => Some(BlowUpJson { tau: e.tau, max_theta: e.max_theta, dt: e.dt }),
                RunStatus::Completed => None,
            },
            predicted: predicted.map(PredictedJson::from),
            reports: reports.iter().map(ReportJson::from).collect(),
            scheme: SchemeJson {
                cells: grid.len(),
                radius: grid.radius(),
                steps: s.steps,
                dt_min: dt(s.dt_min),
                dt_max: dt(s.dt_max),
                dt_mean: dt(s.dt_mean()),
                max_mass_drift: s.max_mass_drift,
                final_mass_drift: s.final_mass_drift,
                min_theta: traj
                    .snapshots
                    .iter()
                    .flat_map(|x| x.theta.values().iter().copied())
                    .fold(f64::INFINITY, f64::min),
            },
            snapshots: traj.snapshots.len(),
            wall_time_s,
        }
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        write_file(&dir.join("summary.json"), &(serde_json::to_string_pretty(self)? + "\n"))
    }
}

/// One `rates.csv` row.
#[derive(Debug, Clone, PartialEq)]
pub struct RatesRow {
    pub d: usize,
    pub m: f64,
    /// Empty for kernel-free cells.
    pub gamma: Option<f64>,
    pub mass: f64,
    pub predicted: Option<f64>,
    pub fitted: Option<f64>,
    pub residual: Option<f64>,
    /// A [`Verdict`] string or `error`.
    pub verdict: String,
}

impl RatesRow {
    pub fn verdict_of(v: Verdict) -> String {
        v.as_str().to_string()
    }
}

pub fn rates_csv(rows: &[RatesRow]) -> String {
    let opt = |x: Option<f64>| x.map(num).unwrap_or_default();
    let mut out = RATES_COLUMNS.join(",");
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.d,
            num(r.m),
            opt(r.gamma),
            num(r.mass),
            opt(r.predicted),
            opt(r.fitted),
            opt(r.residual),
            r.verdict
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numbers_round_trip() {
        for x in [0.1, 1.0 / 3.0, 2.0f64.sqrt(), 1e-300, -7.25e17] {
            assert_eq!(num(x).parse::<f64>().unwrap(), x);
        }
        assert_eq!(num(0.5), "5.0000000000000000e-1");
    }

    #[test]
    fn header_layout() {
        assert_eq!(
            diagnostics_header(&[0.25, 1.0], &[2.0, 4.5]),
            "tau,t,mass,linf,l1_to_ground,H,I,H_rel,E_k_0.25,E_k_1,lp_2,lp_4.5"
        );
    }

    #[test]
    fn rates_layout() {
        let row = RatesRow {
            d: 3,
            m: 1.0,
            gamma: None,
            mass: 0.5,
            predicted: Some(0.5),
            fitted: None,
            residual: None,
            verdict: String::from("error"),
        };
        let csv = rates_csv(&[row]);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "d,m,gamma,M,predicted,fitted,residual,verdict");
        assert_eq!(lines[1].split(',').count(), 8);
        assert!(lines[1].ends_with(",,,error"));
    }
}
