//! Diagnostics along trajectories: norms, entropies, distance to the ground
//! state, least-squares rate fits and the rates predicted by the decay and
//! intermediate asymptotics estimates.

use alloc::format;
use alloc::string::String;

use crate::barenblatt::BarenblattProfile;
use crate::entropy;
use crate::error::{domain, Result};
use crate::grid::RadialGridFunction;
use crate::kernels::KernelSpec;
use crate::params::{ProblemParams, Regime};
use crate::prelude::*;
use crate::solver::{RunStatus, Trajectory};

/// Default slack `delta` in the critical and infinite length-scale rates.
pub const DEFAULT_DELTA: f64 = 0.05;
/// Default relative tolerance on fitted exponents.
pub const DEFAULT_TOLERANCE: f64 = 0.3;
/// Default start of the fit window in `tau`.
pub const DEFAULT_WINDOW_START: f64 = 2.0;
/// Minimum number of samples in a fit window.
pub const MIN_FIT_SAMPLES: usize = 8;

/// Predicted exponents, all positive decay rates.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictedRates {
    /// Tail exponent used (`d` when `grad K` is integrable or there is no kernel).
    pub gamma: f64,
    pub delta: f64,
    /// `||u(t)||_inf <~ (1 + t)^{-linf_decay_t}`.
    pub linf_decay_t: f64,
    /// `||theta - theta_M||_1 <~ (1 + t)^{-l1_conv_t}`; `None` when no estimate applies.
    pub l1_conv_t: Option<f64>,
    /// Same in `tau`: `||theta - theta_M||_1 <~ e^{-l1_conv_tau tau}`.
    pub l1_conv_tau: Option<f64>,
    /// The `delta`-free ceiling of `l1_conv_t`.
    pub l1_ceiling_t: Option<f64>,
    /// Which estimate produced the rate, or why none applies.
    pub source: &'static str,
}

impl PredictedRates {
    pub fn l1_ceiling_tau(&self, params: &ProblemParams) -> Option<f64> {
        self.l1_ceiling_t.map(|r| r / params.beta)
    }
}

/// Decay and convergence rates predicted for `params` and `kernel`.
pub fn predicted_rates(params: &ProblemParams, kernel: Option<&KernelSpec>, delta: f64) -> Result<PredictedRates> {
    if !(0.0..1.0).contains(&delta) {
        return Err(domain(format!("delta = {delta} must lie in [0, 1)")));
    }
    let d = params.d as f64;
    let beta = params.beta;
    let linf = d * beta;
    let finish = |gamma, ceiling: Option<f64>, rate: Option<f64>, source| PredictedRates {
        gamma,
        delta,
        linf_decay_t: linf,
        l1_conv_t: rate,
        l1_conv_tau: rate.map(|r| r / beta),
        l1_ceiling_t: ceiling,
        source,
    };
    let Some(kernel) = kernel else {
        return Ok(finish(d, Some(beta), Some(beta), "pure diffusion"));
    };
    let gamma = kernel.tail_exponent(params.d);
    if !(gamma >= d - 1.0 - 1e-12 && gamma <= d + 1e-12) {
        return Err(domain(format!("tail exponent gamma = {gamma} lies outside [d - 1, d] = [{}, {d}]", d - 1.0)));
    }
    let critical = params.regime == Regime::Critical;
    if kernel.gradient_integrable() || (gamma - d).abs() < 1e-12 {
        return Ok(if critical {
            finish(gamma, Some(beta), Some(beta * (1.0 - delta)), "finite length-scale, critical")
        } else {
            finish(gamma, Some(beta), Some(beta), "finite length-scale, supercritical")
        });
    }
    if critical && (gamma - (d - 1.0)).abs() < 1e-12 {
        return Ok(finish(gamma, None, None, "not applicable: gamma = d - 1 requires m < 2 - 2/d"));
    }
    let excess = 1.0 + gamma - 1.0 / beta;
    Ok(finish(
        gamma,
        Some(beta * excess.min(1.0)),
        Some(beta * (excess - delta).min(1.0)),
        "infinite length-scale",
    ))
}

/// Abscissa of a fit: `ln(1 + t)` for power laws in `t`, `tau` for exponentials.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FitFrame {
    Physical,
    Rescaled,
}

impl FitFrame {
    pub fn as_str(self) -> &'static str {
        match self {
            FitFrame::Physical => "t",
            FitFrame::Rescaled => "tau",
        }
    }
}

/// Least-squares line through `(x, ln v)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerFit {
    pub slope: f64,
    pub intercept: f64,
    /// Root mean square of the residuals in `ln v`.
    pub residual: f64,
    pub samples: usize,
}

/// Fits `ln v` against `ln(1 + time)` or `time` over samples with `time` in `window`.
pub fn fit_power_law(series: &[(f64, f64)], window: (f64, f64), frame: FitFrame) -> Result<PowerFit> {
    let (lo, hi) = window;
    if !(lo < hi) {
        return Err(domain(format!("fit window [{lo}, {hi}] is empty")));
    }
    let mut pts = Vec::new();
    for &(time, v) in series.iter().filter(|(time, _)| *time >= lo && *time <= hi) {
        if !(v > 0.0 && v.is_finite()) {
            return Err(domain(format!("value {v} at time {time} is not positive")));
        }
        let x = match frame {
            FitFrame::Physical => time.ln_1p(),
            FitFrame::Rescaled => time,
        };
        pts.push((x, v.ln()));
    }
    let n = pts.len();
    if n < MIN_FIT_SAMPLES {
        return Err(domain(format!("fit window [{lo}, {hi}] holds {n} samples, need {MIN_FIT_SAMPLES}")));
    }
    let nf = n as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / nf;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / nf;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss: f64 = pts.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum();
    Ok(PowerFit { slope, intercept, residual: (ss / nf).sqrt(), samples: n })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Pass,
    Fail,
    /// Decays faster than predicted by more than the tolerance; recorded, not failed.
    Exceeds,
    NotApplicable,
    BlowUp,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Pass => "pass",
            Verdict::Fail => "fail",
            Verdict::Exceeds => "exceeds",
            Verdict::NotApplicable => "not-applicable",
            Verdict::BlowUp => "blow-up",
        }
    }

    pub fn is_failure(self) -> bool {
        self == Verdict::Fail
    }
}

/// A fitted exponent next to its prediction. Exponents are slopes, so decay
/// is negative.
#[derive(Debug, Clone, PartialEq)]
pub struct RateReport {
    pub quantity: String,
    pub frame: FitFrame,
    pub window: (f64, f64),
    pub fitted_exponent: Option<f64>,
    pub predicted_exponent: Option<f64>,
    /// `delta`-free prediction.
    pub ceiling_exponent: Option<f64>,
    pub residual: f64,
    pub samples: usize,
    pub tolerance: f64,
    /// Faster than predicted only counts as `Exceeds`.
    pub one_sided: bool,
    pub verdict: Verdict,
}

impl RateReport {
    /// Measured decay rate minus predicted decay rate.
    pub fn excess_rate(&self) -> Option<f64> {
        Some(self.predicted_exponent? - self.fitted_exponent?)
    }

    fn judge(fitted: f64, predicted: f64, tolerance: f64, one_sided: bool) -> Verdict {
        let err = (fitted - predicted) / predicted.abs().max(1e-300);
        if err.abs() <= tolerance {
            Verdict::Pass
        } else if one_sided && fitted < predicted {
            Verdict::Exceeds
        } else {
            Verdict::Fail
        }
    }

    /// Fits `series` and compares the slope with `predicted`.
    #[allow(clippy::too_many_arguments)]
    pub fn from_series(
        quantity: &str,
        series: &[(f64, f64)],
        window: (f64, f64),
        frame: FitFrame,
        predicted: Option<f64>,
        ceiling: Option<f64>,
        tolerance: f64,
        one_sided: bool,
    ) -> Result<Self> {
        let fit = fit_power_law(series, window, frame)?;
        let verdict = match predicted {
            Some(p) => Self::judge(fit.slope, p, tolerance, one_sided),
            None => Verdict::NotApplicable,
        };
        Ok(RateReport {
            quantity: String::from(quantity),
            frame,
            window,
            fitted_exponent: Some(fit.slope),
            predicted_exponent: predicted,
            ceiling_exponent: ceiling,
            residual: fit.residual,
            samples: fit.samples,
            tolerance,
            one_sided,
            verdict,
        })
    }

    fn blow_up(quantity: &str, frame: FitFrame, window: (f64, f64), predicted: Option<f64>, tolerance: f64) -> Self {
        RateReport {
            quantity: String::from(quantity),
            frame,
            window,
            fitted_exponent: None,
            predicted_exponent: predicted,
            ceiling_exponent: None,
            residual: 0.0,
            samples: 0,
            tolerance,
            one_sided: false,
            verdict: Verdict::BlowUp,
        }
    }
}

/// `E_k = int (theta - k)_+` for each level.
pub fn equi_integrability(theta: &RadialGridFunction, k_levels: &[f64]) -> Result<Vec<f64>> {
    if k_levels.iter().any(|k| !(*k > 0.0)) || k_levels.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(domain(format!("k levels {k_levels:?} must be positive and ascending")));
    }
    Ok(k_levels.iter().map(|&k| theta.integrate(|_, th| (th - k).max(0.0))).collect())
}

/// What to record in each diagnostics row.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagnosticsConfig {
    /// Exponents of the recorded `||theta||_p`.
    pub p_list: Vec<f64>,
    /// Levels of the equi-integrability functional; empty means
    /// `{1/4, 1/2, 3/4} theta_M(0)`.
    pub k_levels: Vec<f64>,
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        DiagnosticsConfig { p_list: vec![2.0, 4.0], k_levels: Vec::new() }
    }
}

impl DiagnosticsConfig {
    pub fn levels_for(&self, profile: &BarenblattProfile) -> Vec<f64> {
        if self.k_levels.is_empty() {
            [0.25, 0.5, 0.75].iter().map(|f| f * profile.peak()).collect()
        } else {
            self.k_levels.clone()
        }
    }
}

/// Diagnostics of one snapshot.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagnosticsRow {
    pub tau: f64,
    pub t: f64,
    pub mass: f64,
    /// `||theta||_inf`; the physical `||u||_inf` is `e^{-d tau}` times this.
    pub linf: f64,
    pub l1_to_ground: f64,
    pub h: f64,
    pub i: f64,
    pub i_flux: f64,
    pub h_rel: f64,
    /// `(k, E_k)`.
    pub e_k: Vec<(f64, f64)>,
    /// `(p, ||theta||_p)`.
    pub lp: Vec<(f64, f64)>,
}

impl DiagnosticsRow {
    pub fn physical_linf(&self, d: usize) -> f64 {
        (-(d as f64) * self.tau).exp() * self.linf
    }
}

/// Precomputed ground state for a run.
#[derive(Debug, Clone)]
pub struct DiagnosticsContext {
    pub params: ProblemParams,
    pub profile: BarenblattProfile,
    pub ground: RadialGridFunction,
    pub k_levels: Vec<f64>,
    pub p_list: Vec<f64>,
}

impl DiagnosticsContext {
    pub fn new(params: &ProblemParams, grid: &crate::grid::RadialGrid, config: &DiagnosticsConfig) -> Result<Self> {
        let profile = BarenblattProfile::new(params)?;
        let ground = profile.discrete(grid)?;
        let k_levels = config.levels_for(&profile);
        equi_integrability(&ground, &k_levels)?;
        if let Some(p) = config.p_list.iter().find(|p| !(**p >= 1.0)) {
            return Err(domain(format!("diagnostics p = {p} must be >= 1")));
        }
        Ok(DiagnosticsContext { params: *params, profile, ground, k_levels, p_list: config.p_list.clone() })
    }

    pub fn row(&self, tau: f64, t: f64, theta: &RadialGridFunction) -> Result<DiagnosticsRow> {
        let e = entropy::EntropyReport::new(&self.params, tau, theta, &self.ground);
        let e_k = equi_integrability(theta, &self.k_levels)?;
        Ok(DiagnosticsRow {
            tau,
            t,
            mass: theta.mass(),
            linf: theta.sup(),
            l1_to_ground: theta.l1_distance(&self.ground),
            h: e.h,
            i: e.i,
            i_flux: e.i_flux,
            h_rel: e.h_rel,
            e_k: self.k_levels.iter().copied().zip(e_k).collect(),
            lp: self.p_list.iter().map(|&p| (p, theta.lp_norm(p))).collect(),
        })
    }

    /// One row per snapshot, in order.
    pub fn rows(&self, traj: &Trajectory) -> Result<Vec<DiagnosticsRow>> {
        #[cfg(feature = "std")]
        {
            use rayon::prelude::*;
            traj.snapshots.par_iter().map(|s| self.row(s.tau, s.t, &s.theta)).collect()
        }
        #[cfg(not(feature = "std"))]
        {
            traj.snapshots.iter().map(|s| self.row(s.tau, s.t, &s.theta)).collect()
        }
    }
}

/// Fit settings for [`convergence_report`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReportSettings {
    pub delta: f64,
    pub tolerance: f64,
    /// Window in `tau`; `None` as the end means the last snapshot.
    pub window_tau: (f64, Option<f64>),
}

impl Default for ReportSettings {
    fn default() -> Self {
        ReportSettings { delta: DEFAULT_DELTA, tolerance: DEFAULT_TOLERANCE, window_tau: (DEFAULT_WINDOW_START, None) }
    }
}

/// Fits the physical `L^inf` decay, the `L^1` distance to the ground state and
/// the relative entropy, and compares them with [`predicted_rates`].
pub fn convergence_report(
    traj: &Trajectory,
    rows: &[DiagnosticsRow],
    kernel: Option<&KernelSpec>,
    settings: &ReportSettings,
) -> Result<Vec<RateReport>> {
    let params = &traj.params;
    let predicted = predicted_rates(params, kernel, settings.delta)?;
    let tau_end = settings.window_tau.1.unwrap_or_else(|| rows.last().map_or(0.0, |r| r.tau));
    let tau_window = (settings.window_tau.0, tau_end);
    let t_window = (params.t_of_tau(tau_window.0.max(0.0))?, params.t_of_tau(tau_end.max(0.0))?);
    let linf_pred = Some(-predicted.linf_decay_t);
    let l1_pred = predicted.l1_conv_tau.map(|r| -r);
    let h_pred = l1_pred.map(|r| 2.0 * r);
    let tol = settings.tolerance;
    if let RunStatus::BlowUp(_) = traj.status {
        return Ok(vec![
            RateReport::blow_up("linf_decay", FitFrame::Physical, t_window, linf_pred, tol),
            RateReport::blow_up("l1_to_ground", FitFrame::Rescaled, tau_window, l1_pred, tol),
            RateReport::blow_up("h_rel", FitFrame::Rescaled, tau_window, h_pred, tol),
        ]);
    }
    let linf: Vec<(f64, f64)> = rows.iter().map(|r| (r.t, r.physical_linf(params.d))).collect();
    let l1: Vec<(f64, f64)> = rows.iter().map(|r| (r.tau, r.l1_to_ground)).collect();
    let h: Vec<(f64, f64)> = rows.iter().map(|r| (r.tau, r.h_rel)).collect();
    let ceiling = predicted.l1_ceiling_tau(params).map(|r| -r);
    Ok(vec![
        RateReport::from_series("linf_decay", &linf, t_window, FitFrame::Physical, linf_pred, linf_pred, tol, false)?,
        RateReport::from_series("l1_to_ground", &l1, tau_window, FitFrame::Rescaled, l1_pred, ceiling, tol, true)?,
        RateReport::from_series("h_rel", &h, tau_window, FitFrame::Rescaled, h_pred, ceiling.map(|c| 2.0 * c), tol, true)?,
    ])
}

/// `L^p` exponent interpolated between an `L^1` and an `L^inf` exponent,
/// from `||f||_p <= ||f||_1^{1/p} ||f||_inf^{1 - 1/p}`.
pub fn interpolated_exponent(l1: f64, linf: f64, p: f64) -> f64 {
    l1 / p + linf * (1.0 - 1.0 / p)
}

/// Whether `||theta||_p` stays below twice its running plateau after `tau_from`:
/// every value is at most `2 max(value at tau_from, max over [tau_from, tau])`.
pub fn lp_bounded_by_plateau(rows: &[DiagnosticsRow], p: f64, tau_from: f64) -> bool {
    let series = rows.iter().filter(|r| r.tau >= tau_from).filter_map(|r| r.lp.iter().find(|(q, _)| *q == p).map(|x| x.1));
    let mut plateau: Option<f64> = None;
    for v in series {
        let base = *plateau.get_or_insert(v);
        if v > 2.0 * base {
            return false;
        }
        plateau = Some(base.max(v));
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};

    #[test]
    fn predicted_rate_examples() {
        let p = ProblemParams::new(3, 1.0, 1.0).unwrap();
        let r = predicted_rates(&p, Some(&KernelSpec::newtonian(1.0)), 0.05).unwrap();
        assert_relative_eq!(r.linf_decay_t, 1.5, epsilon = 1e-15);
        assert_relative_eq!(r.l1_conv_t.unwrap(), 0.5 * 0.95, epsilon = 1e-15);
        assert_relative_eq!(r.l1_ceiling_t.unwrap(), 0.5, epsilon = 1e-15);
        let r = predicted_rates(&p, Some(&KernelSpec::power_tail(2.5, 1.0, 1.0)), 0.05).unwrap();
        assert_relative_eq!(r.l1_conv_t.unwrap(), 0.5, epsilon = 1e-15);
        let crit = ProblemParams::new(3, 4.0 / 3.0, 1.0).unwrap();
        let r = predicted_rates(&crit, Some(&KernelSpec::smooth_compact(1.0, 1.0)), 0.05).unwrap();
        assert_relative_eq!(r.linf_decay_t, 1.0, epsilon = 1e-15);
        assert_relative_eq!(r.l1_conv_t.unwrap(), 0.95 / 3.0, epsilon = 1e-15);
        assert_relative_eq!(r.l1_conv_tau.unwrap(), 0.95, epsilon = 1e-14);
        let r = predicted_rates(&crit, Some(&KernelSpec::power_tail(2.0, 1.0, 1.0)), 0.05).unwrap();
        assert!(r.l1_conv_t.is_none());
        assert!(r.source.starts_with("not applicable"));
        assert!(predicted_rates(&p, Some(&KernelSpec::power_tail(1.5, 1.0, 1.0)), 0.05).is_err());
    }

    #[test]
    fn predicted_rates_reduce_at_gamma_d() {
        for m in [1.0, 1.1, 1.2, 4.0 / 3.0] {
            let p = ProblemParams::new(3, m, 1.0).unwrap();
            let tail = predicted_rates(&p, Some(&KernelSpec::power_tail(3.0, 1.0, 1.0)), 0.05).unwrap();
            let finite = predicted_rates(&p, Some(&KernelSpec::gaussian(1.0, 1.0)), 0.05).unwrap();
            assert_relative_eq!(tail.l1_conv_t.unwrap(), finite.l1_conv_t.unwrap(), epsilon = 1e-14);
        }
    }

    #[test]
    fn predicted_rate_vanishes_toward_critical_with_newtonian_tail() {
        let mut last = f64::INFINITY;
        for j in 1..=6 {
            let m = 4.0 / 3.0 - 10f64.powi(-j);
            let p = ProblemParams::new(3, m, 1.0).unwrap();
            let c = predicted_rates(&p, Some(&KernelSpec::newtonian(1.0)), 0.0).unwrap().l1_ceiling_t.unwrap();
            assert!(c < last);
            last = c;
        }
        assert!(last < 1e-5);
    }

    #[test]
    fn predicted_rate_nondecreasing_in_gamma() {
        let p = ProblemParams::new(3, 1.0, 1.0).unwrap();
        let rates: Vec<f64> = [2.0, 2.25, 2.5]
            .iter()
            .map(|&g| predicted_rates(&p, Some(&KernelSpec::power_tail(g, 1.0, 1.0)), 0.05).unwrap().l1_conv_t.unwrap())
            .collect();
        assert!(rates.windows(2).all(|w| w[0] <= w[1]), "{rates:?}");
    }

    #[test]
    fn exact_fits() {
        let s: Vec<(f64, f64)> = (0..40).map(|i| i as f64 * 0.5).map(|t| (t, 1.0 / (1.0 + t))).collect();
        let f = fit_power_law(&s, (0.0, 20.0), FitFrame::Physical).unwrap();
        assert!((f.slope + 1.0).abs() < 1e-10);
        assert!(f.residual < 1e-12);
        let s: Vec<(f64, f64)> = (0..40).map(|i| i as f64 * 0.2).map(|t| (t, 3.0 * (-0.5 * t).exp())).collect();
        let f = fit_power_law(&s, (2.0, 8.0), FitFrame::Rescaled).unwrap();
        assert!((f.slope + 0.5).abs() < 1e-10);
    }

    #[test]
    fn noisy_fit_within_tolerance() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let s: Vec<(f64, f64)> = (0..60)
            .map(|i| 2.0 + i as f64 * 0.1)
            .map(|t| (t, (-0.8 * t).exp() * (1.0 + rng.random_range(-0.05..0.05))))
            .collect();
        let f = fit_power_law(&s, (2.0, 8.0), FitFrame::Rescaled).unwrap();
        assert!((f.slope + 0.8).abs() < 0.05);
        assert!(f.residual > 0.0);
    }

    #[test]
    fn fit_preconditions() {
        let s: Vec<(f64, f64)> = (0..5).map(|i| (i as f64, 1.0)).collect();
        assert!(fit_power_law(&s, (0.0, 10.0), FitFrame::Rescaled).is_err());
        let s: Vec<(f64, f64)> = (0..10).map(|i| (i as f64, i as f64 - 1.0)).collect();
        assert!(fit_power_law(&s, (0.0, 10.0), FitFrame::Rescaled).is_err());
        assert!(fit_power_law(&s, (3.0, 3.0), FitFrame::Rescaled).is_err());
    }

    #[test]
    fn verdicts() {
        assert_eq!(RateReport::judge(-1.05, -1.0, 0.1, false), Verdict::Pass);
        assert_eq!(RateReport::judge(-1.5, -1.0, 0.1, false), Verdict::Fail);
        assert_eq!(RateReport::judge(-1.5, -1.0, 0.1, true), Verdict::Exceeds);
        assert_eq!(RateReport::judge(-0.5, -1.0, 0.1, true), Verdict::Fail);
    }

    #[test]
    fn equi_integrability_levels() {
        let grid = crate::grid::RadialGrid::new(3, 4.0, 400).unwrap();
        let p = ProblemParams::new(3, 4.0 / 3.0, 1.0).unwrap();
        let b = BarenblattProfile::new(&p).unwrap();
        let g = b.discrete(&grid).unwrap();
        let e = equi_integrability(&g, &[0.5 * b.peak(), b.peak(), 2.0 * b.peak()]).unwrap();
        assert!(e[0] > 0.0 && e[1] < 1e-3 * e[0] && e[2] == 0.0);
        assert!(equi_integrability(&g, &[1.0, 0.5]).is_err());
    }

    // E_{theta_M(0)/2}(theta_M) = int (theta_M - theta_M(0)/2)_+ by adaptive quadrature.
    #[test]
    fn capped_excess_matches_refined_quadrature() {
        let p = ProblemParams::new(3, 4.0 / 3.0, 1.0).unwrap();
        let b = BarenblattProfile::new(&p).unwrap();
        let k = 0.5 * b.peak();
        let exact = crate::quadrature::integrate(
            |r| 4.0 * core::f64::consts::PI * r * r * (b.value(r) - k).max(0.0),
            0.0,
            b.support_radius(),
            1e-14,
            1e-12,
        )
        .unwrap()
        .value;
        let grid = crate::grid::RadialGrid::new(3, 1.5 * b.support_radius(), 4000).unwrap();
        let e = equi_integrability(&b.sample(&grid), &[k]).unwrap()[0];
        assert_relative_eq!(e, exact, max_relative = 1e-3);
    }

    #[test]
    fn plateau_check() {
        let row = |tau: f64, v: f64| DiagnosticsRow {
            tau,
            t: 0.0,
            mass: 1.0,
            linf: 0.0,
            l1_to_ground: 0.0,
            h: 0.0,
            i: 0.0,
            i_flux: 0.0,
            h_rel: 0.0,
            e_k: Vec::new(),
            lp: vec![(2.0, v)],
        };
        let ok = [row(0.5, 9.0), row(1.0, 1.0), row(2.0, 1.5), row(3.0, 1.9)];
        assert!(lp_bounded_by_plateau(&ok, 2.0, 1.0));
        let bad = [row(1.0, 1.0), row(2.0, 2.5)];
        assert!(!lp_bounded_by_plateau(&bad, 2.0, 1.0));
    }

    #[test]
    fn interpolation_of_exponents() {
        assert_relative_eq!(interpolated_exponent(-1.0, 0.0, 2.0), -0.5);
        assert_relative_eq!(interpolated_exponent(-1.0, -1.0, 3.0), -1.0);
    }
}
