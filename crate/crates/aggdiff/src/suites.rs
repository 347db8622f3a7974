//! The property suites behind `aggdiff verify`: decay and convergence rates on
//! reference runs, ground state stationarity, entropy dissipation, the
//! functional inequalities over pinned perturbations, kernel growth, mass
//! conservation and the planar cross-check. Every suite is deterministic.

use std::fmt;

use aggdiff_core::barenblatt::BarenblattProfile;
use aggdiff_core::cartesian::{CartesianGrid, CartesianSolver, CartesianState, Field2d};
use aggdiff_core::entropy::{ck_check, dilated_ground_state, lsi_check};
use aggdiff_core::kernels::{rescaled_norms, KernelSpec};
use aggdiff_core::perturb::perturbations;
use aggdiff_core::solver::{initial_data, InitialData, Solver, SolverState, StepOutcome};
use aggdiff_core::{ProblemParams, RadialGrid, RadialGridFunction};

use crate::config::RunConfig;
use crate::error::{AppError, Result};
use crate::runner::{execute, RunOutput};

/// Seed of every perturbation family.
pub const SEED: u64 = 20240601;
/// Perturbations per `(d, m)` pair.
pub const PERTURBATIONS: usize = 50;

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub id: usize,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let status = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "[{status}] {:>2} {}: {}", self.id, self.name, self.detail)
    }
}

pub const NAMES: [&str; 12] = [
    "heat equation decay",
    "porous medium decay and support",
    "diffusion-only convergence rate",
    "newtonian tail convergence rate",
    "compact kernel critical convergence rate",
    "ground state stationarity",
    "entropy dissipation identity",
    "generalized log-Sobolev inequality",
    "csiszar-kullback inequality",
    "kernel growth exponents",
    "mass conservation and positivity",
    "planar cross-check",
];

const HEAT: &str = r#"
[params]
d = 2
m = 1
mass = 1.0
[initial]
kind = "gaussian_offcenter_radialized"
"#;

const PME: &str = r#"
[params]
d = 3
m = "4/3"
mass = 1.0
[initial]
kind = "annulus"
"#;

const NEWTON: &str = r#"
[params]
d = 3
m = 1
mass = 0.5
[kernel]
kind = "newtonian"
[initial]
kind = "annulus"
"#;

const COMPACT: &str = r#"
[params]
d = 3
m = "4/3"
mass = 0.5
[kernel]
kind = "smooth_compact"
[initial]
kind = "annulus"
"#;

/// Reference run configurations by name, at `cells` radial cells.
pub fn reference_config(name: &str, cells: usize) -> Result<RunConfig> {
    let text = match name {
        "heat" => HEAT,
        "pme" => PME,
        "newton" => NEWTON,
        "compact" => COMPACT,
        other => return Err(AppError::config(format!("no reference run named {other:?}"))),
    };
    RunConfig::parse(
        text,
        &[
            format!("grid.cells={cells}"),
            "time.tau_max=8.0".into(),
            "time.snapshot_dtau=0.05".into(),
            "diagnostics.fit_window=[2.0, 8.0]".into(),
        ],
    )
}

/// Lazily computed reference runs shared between suites.
#[derive(Debug, Default)]
pub struct Suites {
    cells: usize,
    runs: Vec<(&'static str, RunOutput)>,
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

impl Suites {
    pub fn new() -> Self {
        Suites { cells: 400, runs: Vec::new() }
    }

    fn run(&mut self, name: &'static str) -> Result<&RunOutput> {
        if let Some(i) = self.runs.iter().position(|(n, _)| *n == name) {
            return Ok(&self.runs[i].1);
        }
        let out = execute(&reference_config(name, self.cells)?, None)?;
        self.runs.push((name, out));
        Ok(&self.runs.last().expect("just pushed").1)
    }

    /// Runs suite `id` (1 to 12). Errors inside a suite count as failures.
    pub fn check(&mut self, id: usize) -> Outcome {
        let name = NAMES.get(id.wrapping_sub(1)).copied().unwrap_or("unknown");
        let result = match id {
            1 => self.heat_decay(),
            2 => self.pme_decay(),
            3 => self.diffusion_rate(),
            4 => self.newtonian_rate(),
            5 => self.compact_rate(),
            6 => stationarity(),
            7 => self.dissipation(),
            8 => log_sobolev(),
            9 => csiszar_kullback(),
            10 => kernel_growth(),
            11 => self.conservation(),
            12 => cross_check(),
            _ => Err(AppError::config(format!("no suite {id}"))),
        };
        match result {
            Ok((passed, detail)) => Outcome { id, name, passed, detail },
            Err(e) => Outcome { id, name, passed: false, detail: format!("error: {e}") },
        }
    }

    pub fn check_all(&mut self) -> Vec<Outcome> {
        (1..=NAMES.len()).map(|id| self.check(id)).collect()
    }

    fn fitted(out: &RunOutput, quantity: &str) -> Result<(f64, f64)> {
        let r = out
            .report(quantity)
            .ok_or_else(|| AppError::config(format!("no {quantity} report")))?;
        match (r.fitted_exponent, r.predicted_exponent) {
            (Some(f), Some(p)) => Ok((f, p)),
            _ => Err(AppError::config(format!("{quantity}: verdict {}", r.verdict.as_str()))),
        }
    }

    fn heat_decay(&mut self) -> Result<(bool, String)> {
        let out = self.run("heat")?;
        let (fit, pred) = Self::fitted(out, "linf_decay")?;
        let err = rel(fit, pred);
        Ok((err <= 0.05, format!("L^inf exponent {fit:.4} vs {pred:.4} (rel. error {err:.3}, limit 0.05)")))
    }

    fn pme_decay(&mut self) -> Result<(bool, String)> {
        let out = self.run("pme")?;
        let (fit, pred) = Self::fitted(out, "linf_decay")?;
        let err = rel(fit, pred);
        let profile = BarenblattProfile::new(&out.validated.params)?;
        let snap = out
            .trajectory
            .snapshots
            .iter()
            .find(|s| (s.tau - 5.0).abs() < 1e-9)
            .ok_or_else(|| AppError::config("no snapshot at tau = 5"))?;
        let dr = snap.theta.grid().dr();
        let support = snap.theta.support_radius(1e-9 * snap.theta.sup());
        let gap = (support - profile.support_radius()).abs() / dr;
        Ok((
            err <= 0.10 && gap <= 2.0,
            format!(
                "L^inf exponent {fit:.4} vs {pred:.4} (rel. error {err:.3}, limit 0.10); \
                 support at tau=5 {support:.4} vs {:.4} ({gap:.2} dr, limit 2)",
                profile.support_radius()
            ),
        ))
    }

    fn diffusion_rate(&mut self) -> Result<(bool, String)> {
        let out = self.run("pme")?;
        let (fit, pred) = Self::fitted(out, "l1_to_ground")?;
        let (rate, target) = (-fit, -pred);
        Ok((rate >= 0.7 * target, format!("L^1 tau-rate {rate:.3}, floor 0.7 x {target:.3}")))
    }

    fn newtonian_rate(&mut self) -> Result<(bool, String)> {
        let out = self.run("newton")?;
        let (fit, _) = Self::fitted(out, "l1_to_ground")?;
        // The band is taken around the slack-free rate.
        let ceiling = out.report("l1_to_ground").and_then(|r| r.ceiling_exponent);
        let target = -ceiling.ok_or_else(|| AppError::config("no predicted rate for the newtonian run"))?;
        let rate = -fit;
        let peak0 = BarenblattProfile::new(&out.validated.params)?.peak();
        let peak = out.rows.iter().map(|r| r.linf).fold(0.0, f64::max);
        let ratio = rate / target;
        Ok((
            (0.7..=1.5).contains(&ratio) && peak < 2.0 * peak0,
            format!("L^1 tau-rate {rate:.3} = {ratio:.3} x {target:.3} (band [0.7, 1.5]); max theta {:.3} theta_M(0)", peak / peak0),
        ))
    }

    fn compact_rate(&mut self) -> Result<(bool, String)> {
        let out = self.run("compact")?;
        let (fit, pred) = Self::fitted(out, "l1_to_ground")?;
        let (rate, target) = (-fit, -pred);
        Ok((rate >= 0.7 * target, format!("L^1 tau-rate {rate:.3}, floor 0.7 x {target:.3}")))
    }

    fn dissipation(&mut self) -> Result<(bool, String)> {
        let mut passed = true;
        let mut parts = Vec::new();
        for name in ["heat", "pme"] {
            let rows = &self.run(name)?.rows;
            let increases = rows.windows(2).filter(|w| w[1].h > w[0].h + 1e-12 * w[0].h.abs().max(1.0)).count();
            let (mut err, mut prod, mut count) = (0.0, 0.0, 0usize);
            for w in rows.windows(2).filter(|w| w[0].tau >= 0.5 - 1e-9 && w[1].tau <= 3.0 + 1e-9) {
                let i_mid = 0.5 * (w[0].i + w[1].i);
                err += ((w[1].h - w[0].h) / (w[1].tau - w[0].tau) + i_mid).abs();
                prod += i_mid;
                count += 1;
            }
            let ratio = err / prod;
            passed &= increases == 0 && count > 0 && ratio <= 0.05;
            parts.push(format!("{name}: {increases} increases, mean |dH/dtau + I| / mean I = {ratio:.4}"));
        }
        Ok((passed, parts.join("; ")))
    }

    fn conservation(&mut self) -> Result<(bool, String)> {
        let mut passed = true;
        let mut parts = Vec::new();
        for name in ["heat", "pme", "newton", "compact"] {
            let traj = &self.run(name)?.trajectory;
            let stats = traj.stats;
            let allowed = 1e-9 * (stats.steps as f64 / 1e4).max(1.0);
            let min = traj
                .snapshots
                .iter()
                .flat_map(|s| s.theta.values().iter().copied())
                .fold(f64::INFINITY, f64::min);
            passed &= stats.max_mass_drift <= allowed && min >= 0.0;
            parts.push(format!("{name}: drift {:.1e} over {} steps, min {min:.1e}", stats.max_mass_drift, stats.steps));
        }
        Ok((passed, parts.join("; ")))
    }
}

/// Drift of the sampled ground state over `tau` in `[0, 1]`, in units of `M`.
pub fn stationarity_drift(cells: usize) -> Result<f64> {
    let params = ProblemParams::new(3, 4.0 / 3.0, 1.0)?;
    let profile = BarenblattProfile::new(&params)?;
    let grid = RadialGrid::new(3, 3.0 * profile.support_radius(), cells)?;
    let mut ground = profile.sample(&grid);
    ground.normalize_to(params.mass)?;
    let traj = Solver::new(&params, None, grid)?.run(SolverState::new(ground.clone(), 0.0), 1.0, 1.0)?;
    let last = &traj.snapshots.last().expect("final snapshot").theta;
    Ok(last.l1_distance(&ground) / params.mass)
}

fn stationarity() -> Result<(bool, String)> {
    let coarse = stationarity_drift(400)?;
    let fine = stationarity_drift(800)?;
    let gain = coarse / fine;
    Ok((
        coarse <= 1e-2 && gain >= 1.7,
        format!("drift {coarse:.3e} M at N=400, {fine:.3e} M at N=800 (reduction {gain:.2}, floor 1.7)"),
    ))
}

fn inequality_grid(profile: &BarenblattProfile, d: usize, cells: usize) -> Result<RadialGrid> {
    let r = profile.support_radius();
    Ok(RadialGrid::new(d, if r.is_finite() { 3.0 * r } else { 8.0 }, cells)?)
}

fn log_sobolev() -> Result<(bool, String)> {
    let mut passed = true;
    let mut parts = Vec::new();
    for (d, m, label) in [(2, 1.0, "1"), (3, 1.0, "1"), (3, 4.0 / 3.0, "4/3")] {
        let params = ProblemParams::new(d, m, 1.0)?;
        let profile = BarenblattProfile::new(&params)?;
        let grid = inequality_grid(&profile, d, 400)?;
        let mut worst = 0.0f64;
        let mut resolved = 0;
        for q in perturbations(&profile, &grid, SEED, PERTURBATIONS)? {
            let c = lsi_check(&params, &q.theta)?;
            if let Some(r) = c.ratio {
                resolved += 1;
                worst = worst.max(r);
            }
            passed &= c.lhs >= -1e-12;
        }
        passed &= resolved == PERTURBATIONS && worst <= 0.55;
        parts.push(format!("(d={d}, m={label}) max H_rel/I {worst:.4} over {resolved}"));
    }
    Ok((passed, parts.join("; ")))
}

fn csiszar_kullback() -> Result<(bool, String)> {
    let mut passed = true;
    let mut parts = Vec::new();
    for d in [2, 3] {
        let params = ProblemParams::new(d, 1.0, 1.0)?;
        let profile = BarenblattProfile::new(&params)?;
        let grid = inequality_grid(&profile, d, 400)?;
        let mut worst = 0.0f64;
        for q in perturbations(&profile, &grid, SEED, PERTURBATIONS)? {
            let c = ck_check(&params, &q.theta)?;
            if let (Some(r), Some(b)) = (c.ratio, c.bound) {
                worst = worst.max(r / b);
            }
            passed &= c.holds(0.05);
        }
        parts.push(format!("(d={d}, m=1) max ratio/sqrt(2M) {worst:.4}"));
    }
    let params = ProblemParams::new(3, 4.0 / 3.0, 1.0)?;
    let profile = BarenblattProfile::new(&params)?;
    let grid = inequality_grid(&profile, 3, 800)?;
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    for j in 0..50 {
        let lambda = 1.01 + 0.49 * j as f64 / 49.0;
        let c = ck_check(&params, &dilated_ground_state(&profile, &grid, lambda)?)?;
        let r = c.ratio.ok_or_else(|| AppError::config(format!("unresolved dilation {lambda}")))?;
        lo = lo.min(r);
        hi = hi.max(r);
    }
    passed &= hi / lo <= 3.0;
    parts.push(format!("(d=3, m=4/3) dilation ratios in [{lo:.3}, {hi:.3}], spread {:.3} (limit 3)", hi / lo));
    Ok((passed, parts.join("; ")))
}

/// `lambda` values, log spaced over `[1e2, 1e4]`.
pub fn growth_lambdas() -> Vec<f64> {
    (0..=8).map(|j| 10f64.powf(2.0 + 0.25 * j as f64)).collect()
}

/// Least squares slope and intercept of `y` against `x`.
pub fn line_fit(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

/// Log-log slopes of the near-field `L^1` norm for `gamma = 2, 2.5` and, for
/// `gamma = d`, the slope of the norm against `ln lambda` with the largest
/// relative deviation from that line.
pub fn growth_measurements() -> Result<([f64; 2], f64, f64)> {
    let lambdas = growth_lambdas();
    let logs: Vec<f64> = lambdas.iter().map(|l| l.ln()).collect();
    let near = |gamma: f64| -> Result<Vec<f64>> {
        let spec = KernelSpec::power_tail(gamma, 1.0, 1.0);
        lambdas.iter().map(|&l| Ok(rescaled_norms(&spec, 3, l, 2.0)?.near_l1)).collect()
    };
    let mut slopes = [0.0; 2];
    for (s, gamma) in slopes.iter_mut().zip([2.0, 2.5]) {
        let y: Vec<f64> = near(gamma)?.iter().map(|v| v.ln()).collect();
        *s = line_fit(&logs, &y).0;
    }
    let y = near(3.0)?;
    let (b, a) = line_fit(&logs, &y);
    let dev = logs.iter().zip(&y).map(|(x, v)| rel(a + b * x, *v)).fold(0.0, f64::max);
    Ok((slopes, b, dev))
}

fn kernel_growth() -> Result<(bool, String)> {
    let (slopes, b, dev) = growth_measurements()?;
    // k'(r) = -r^{-3} in the tail, so the norm grows like 4 pi ln lambda.
    let expected = 4.0 * std::f64::consts::PI;
    let passed =
        (slopes[0] - 1.0).abs() <= 0.1 && (slopes[1] - 0.5).abs() <= 0.1 && rel(b, expected) <= 0.1 && dev <= 0.1;
    Ok((
        passed,
        format!(
            "slopes {:.4} (gamma=2, want 1), {:.4} (gamma=2.5, want 0.5); gamma=3: d/dln(lambda) {b:.4} vs 4 pi, \
             max deviation from log line {dev:.2e}",
            slopes[0], slopes[1]
        ),
    ))
}

/// Mass-conserving coarsening by merging `factor` neighbouring cells.
fn coarsen(f: &RadialGridFunction, coarse: &RadialGrid) -> RadialGridFunction {
    let factor = f.grid().len() / coarse.len();
    let masses = f.values().iter().zip(f.grid().volumes()).map(|(v, w)| v * w).collect::<Vec<_>>();
    let values = masses
        .chunks(factor)
        .zip(coarse.volumes())
        .map(|(c, w)| c.iter().sum::<f64>() / w)
        .collect();
    RadialGridFunction::new(coarse.clone(), values)
}

/// `L^1` distance, relative to `M`, between the radial solver and the planar
/// solver at `t = 0, 1, ..., 10` for `d = 2`, `m = 1` and the Gaussian kernel.
/// Both are compared on `compare_cells` rescaled radial cells; the planar
/// field is averaged over the physical cells `e^tau` times larger.
pub fn cross_check_distance(
    radial_cells: usize,
    planar_cells: usize,
    half_width: f64,
    compare_cells: usize,
) -> Result<Vec<(f64, f64)>> {
    let params = ProblemParams::new(2, 1.0, 1.0)?;
    let spec = KernelSpec::gaussian(1.0, 1.0);
    let radius = 8.0;
    let grid = RadialGrid::new(2, radius, radial_cells)?;
    let coarse = RadialGrid::new(2, radius, compare_cells)?;
    if !radial_cells.is_multiple_of(compare_cells) {
        return Err(AppError::config("comparison cells must divide the radial cells"));
    }
    let theta0 = initial_data(&InitialData::gaussian_offcenter(), &params, &grid)?;
    let mut radial = Solver::new(&params, Some(&spec), grid.clone())?;
    let mut state = SolverState::new(theta0.clone(), 0.0);

    let plane = CartesianGrid::new(planar_cells, half_width)?;
    let mut u0 = Field2d::from_radial(plane, &theta0, 4);
    u0.normalize_to(params.mass)?;
    let mut planar = CartesianSolver::new(Some(&spec), plane)?;
    let mut pstate = CartesianState { u: u0, t: 0.0, steps: 0 };

    let mut out = Vec::new();
    for k in 0..=10 {
        let t = k as f64;
        let tau = params.tau_of_t(t)?;
        while state.tau < tau {
            let cap = tau - state.tau;
            if let StepOutcome::BlowUp(e) = radial.step_capped(&mut state, cap)? {
                return Err(AppError::config(format!("radial run blew up at tau = {}", e.tau)));
            }
            if tau - state.tau < 1e-12 {
                state.tau = tau;
            }
        }
        if let StepOutcome::BlowUp(e) = planar.run_until(&mut pstate, t)? {
            return Err(AppError::config(format!("planar run blew up at t = {}", e.tau)));
        }
        if pstate.u.boundary_fraction() > 1e-6 {
            return Err(AppError::config(format!("planar box too small at t = {t}")));
        }
        let scale = tau.exp();
        let avg = pstate.u.radial_average(&coarse.scaled(scale), 4)?;
        let theta_planar: Vec<f64> = avg.values().iter().map(|v| v * scale * scale).collect();
        let theta_planar = RadialGridFunction::new(coarse.clone(), theta_planar);
        out.push((t, coarsen(&state.theta, &coarse).l1_distance(&theta_planar) / params.mass));
    }
    Ok(out)
}

fn cross_check() -> Result<(bool, String)> {
    let dist = cross_check_distance(400, 192, 24.0, 40)?;
    let (t, worst) = dist.iter().copied().fold((0.0, 0.0f64), |a, b| if b.1 > a.1 { b } else { a });
    Ok((worst <= 5e-2, format!("max L^1 distance {worst:.3e} M at t = {t} over t = 0..10 (limit 5e-2 M)")))
}
