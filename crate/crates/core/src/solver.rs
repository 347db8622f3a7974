//! Explicit finite volume scheme for the rescaled equation
//!
//! ```text
//! d_tau theta = div(eta theta) + Lap theta^m - c(tau) div(theta V),   c(tau) = e^{(1 - alpha - beta) tau / beta}
//! ```
//!
//! on a radial grid with no-flux boundaries and forward Euler in time.
//!
//! For `m > 1` the diffusion is written as transport, `Lap theta^m =
//! div(theta grad h(theta))` with `h = m/(m-1) theta^{m-1}`, and the flux is
//! `theta_upwind * u` with the face velocity
//! `u = -(h_i - h_{i-1})/dr - eta + c V` upwinded as a whole. For `m = 1` the
//! face flux is the exponentially fitted (Scharfetter-Gummel) flux for the
//! velocity `-eta + c V`. In both cases the sampled ground state
//! `(C - (m-1)/(2m) r_i^2)_+^{1/(m-1)}`, resp. `C e^{-r_i^2/2}`, is an exact
//! discrete equilibrium of the kernel-free scheme. Each cell is updated as
//! `theta_i (1 - dt * outflow rate) + dt * inflow`, which is nonnegative
//! whenever the outflow fraction is below one; the time step guarantees that.

use alloc::format;
use alloc::string::String;
use alloc::sync::Arc;

use crate::barenblatt::BarenblattProfile;
use crate::error::{domain, Error, Result};
use crate::grid::{RadialGrid, RadialGridFunction};
use crate::kernels::{KernelSpec, OperatorCache, RadialVelocity, VelocityQuadrature};
use crate::params::ProblemParams;
use crate::prelude::*;
use crate::quadrature;

/// `x / (e^x - 1)`.
fn bernoulli(x: f64) -> f64 {
    if x.abs() < 1e-10 {
        1.0 - 0.5 * x
    } else {
        x / x.exp_m1()
    }
}

/// Step size and blow-up controls.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepSettings {
    /// Safety factor applied to the diffusive and advective step limits.
    pub safety: f64,
    /// Largest fraction of a cell's content that may leave in one step.
    pub max_outflow_fraction: f64,
    /// Blow-up when `max theta` exceeds this multiple of `theta_M(0)`.
    pub blowup_factor: f64,
    /// Blow-up when `dt` falls below this multiple of `dr^2`.
    pub dt_floor: f64,
}

impl Default for StepSettings {
    fn default() -> Self {
        StepSettings { safety: 0.4, max_outflow_fraction: 0.9, blowup_factor: 1e6, dt_floor: 1e-12 }
    }
}

/// Default domain radius: three Barenblatt support radii for `m > 1`, 8 for `m = 1`.
pub fn default_radius(params: &ProblemParams) -> Result<f64> {
    if params.is_linear() {
        return Ok(8.0);
    }
    Ok(3.0 * BarenblattProfile::new(params)?.support_radius())
}

/// Evolving solution.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverState {
    pub theta: RadialGridFunction,
    pub tau: f64,
    pub step_count: u64,
    pub dt_last: f64,
    /// Mass at the start of the run.
    pub initial_mass: f64,
}

impl SolverState {
    pub fn new(theta: RadialGridFunction, tau: f64) -> Self {
        let initial_mass = theta.mass();
        SolverState { theta, tau, step_count: 0, dt_last: 0.0, initial_mass }
    }

    /// `|mass - initial mass| / initial mass`, zero for the zero state.
    pub fn mass_drift(&self) -> f64 {
        if self.initial_mass == 0.0 {
            return self.theta.mass().abs();
        }
        (self.theta.mass() - self.initial_mass).abs() / self.initial_mass
    }
}

/// Terminal event raised when the solution concentrates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlowUpEvent {
    pub tau: f64,
    pub max_theta: f64,
    pub dt: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepOutcome {
    Advanced { dt: f64 },
    BlowUp(BlowUpEvent),
}

/// Advances [`SolverState`]s for one problem on one grid.
#[derive(Debug, Clone)]
pub struct Solver {
    params: ProblemParams,
    grid: RadialGrid,
    velocity: Option<RadialVelocity>,
    settings: StepSettings,
    ground_peak: f64,
    centers: Vec<f64>,
    face_velocity: Vec<f64>,
    to_right: Vec<f64>,
    to_left: Vec<f64>,
    rate: Vec<f64>,
    inflow: Vec<f64>,
}

impl Solver {
    /// `kernel = None` solves the kernel-free (pure diffusion) problem.
    pub fn new(params: &ProblemParams, kernel: Option<&KernelSpec>, grid: RadialGrid) -> Result<Self> {
        let velocity = match kernel {
            Some(k) => Some(RadialVelocity::with_cache(
                k,
                grid.clone(),
                VelocityQuadrature::default(),
                Arc::new(OperatorCache::new(4)),
            )?),
            None => None,
        };
        Self::with_velocity(params, velocity, grid, StepSettings::default())
    }

    pub fn with_velocity(
        params: &ProblemParams,
        velocity: Option<RadialVelocity>,
        grid: RadialGrid,
        settings: StepSettings,
    ) -> Result<Self> {
        if grid.dim() != params.d {
            return Err(Error::Config(format!("grid dimension {} but d = {}", grid.dim(), params.d)));
        }
        if let Some(v) = &velocity {
            if v.grid() != &grid {
                return Err(Error::InvalidCache(String::from("velocity operator built for a different grid")));
            }
        }
        if !(settings.safety > 0.0 && settings.safety <= 1.0)
            || !(settings.max_outflow_fraction > 0.0 && settings.max_outflow_fraction <= 1.0)
        {
            return Err(Error::Config(format!("invalid step settings {settings:?}")));
        }
        let n = grid.len();
        Ok(Solver {
            params: *params,
            ground_peak: BarenblattProfile::new(params)?.peak(),
            grid,
            velocity,
            settings,
            centers: vec![0.0; n],
            face_velocity: vec![0.0; n + 1],
            to_right: vec![0.0; n + 1],
            to_left: vec![0.0; n + 1],
            rate: vec![0.0; n],
            inflow: vec![0.0; n],
        })
    }

    pub fn params(&self) -> &ProblemParams {
        &self.params
    }

    pub fn grid(&self) -> &RadialGrid {
        &self.grid
    }

    pub fn settings(&self) -> &StepSettings {
        &self.settings
    }

    /// Performs one step, taking at most `dt_cap`.
    pub fn step_capped(&mut self, state: &mut SolverState, dt_cap: f64) -> Result<StepOutcome> {
        let n = self.grid.len();
        if state.theta.grid() != &self.grid {
            return Err(Error::Config(String::from("state lives on a different grid")));
        }
        let m = self.params.m;
        let dr = self.grid.dr();
        let faces = self.grid.faces();

        let max_theta = state.theta.sup();
        if !max_theta.is_finite() || max_theta > self.settings.blowup_factor * self.ground_peak {
            return Ok(StepOutcome::BlowUp(BlowUpEvent { tau: state.tau, max_theta, dt: state.dt_last }));
        }

        // Face velocities u = -eta + c V; u = 0 at both boundaries.
        match &self.velocity {
            Some(v) => {
                v.faces_into(state.tau, state.theta.values(), &mut self.centers, &mut self.face_velocity)?;
                let c = self.params.nonlocal_prefactor(state.tau);
                for (u, &r) in self.face_velocity.iter_mut().zip(faces) {
                    *u = -r + c * *u;
                }
            }
            None => {
                for (u, &r) in self.face_velocity.iter_mut().zip(faces) {
                    *u = -r;
                }
            }
        }
        self.face_velocity[0] = 0.0;
        self.face_velocity[n] = 0.0;

        let theta = state.theta.values();
        let areas = self.grid.face_areas();
        let volumes = self.grid.volumes();

        let max_speed = self.face_velocity.iter().fold(0.0f64, |a, u| a.max(u.abs()));
        let max_diff = if m == 1.0 { 1.0 } else { max_theta.powf(m - 1.0) };
        let d = self.params.d as f64;
        let mut dt = dt_cap;
        if max_diff > 0.0 {
            dt = dt.min(self.settings.safety * dr * dr / (2.0 * d * m * max_diff));
        }
        if max_speed > 0.0 {
            dt = dt.min(self.settings.safety * dr / max_speed);
        }

        // Per-face transfer coefficients: content moving right is `to_right * theta_{f-1}`,
        // moving left is `to_left * theta_f`.
        for f in 1..n {
            let u = self.face_velocity[f];
            let (l, r) = (f - 1, f);
            let (right, left) = if m == 1.0 {
                // Exponential fitting: exact for discrete Gaussians.
                let p = u * dr;
                (bernoulli(-p) / dr, bernoulli(p) / dr)
            } else {
                let h = |th: f64| m / (m - 1.0) * th.powf(m - 1.0);
                let total = u - (h(theta[r]) - h(theta[l])) / dr;
                (total.max(0.0), (-total).max(0.0))
            };
            self.to_right[f] = areas[f] * right;
            self.to_left[f] = areas[f] * left;
        }

        let mut worst = 0.0f64;
        for i in 0..n {
            self.rate[i] = (self.to_right[i + 1] + self.to_left[i]) / volumes[i];
            worst = worst.max(self.rate[i]);
        }
        if worst > 0.0 {
            dt = dt.min(self.settings.max_outflow_fraction / worst);
        }
        if dt < self.settings.dt_floor * dr * dr && dt < dt_cap {
            return Ok(StepOutcome::BlowUp(BlowUpEvent { tau: state.tau, max_theta, dt }));
        }

        for i in 0..n {
            let from_left = if i > 0 { self.to_right[i] * theta[i - 1] } else { 0.0 };
            let from_right = if i + 1 < n { self.to_left[i + 1] * theta[i + 1] } else { 0.0 };
            self.inflow[i] = from_left + from_right;
        }
        let tau = state.tau;
        let values = state.theta.values_mut();
        for i in 0..n {
            let keep = 1.0 - dt * self.rate[i];
            let next = values[i] * keep + dt * self.inflow[i] / volumes[i];
            if !(next >= 0.0) {
                return Err(Error::Negative { cell: i, value: next, tau });
            }
            values[i] = next;
        }
        state.tau += dt;
        state.step_count += 1;
        state.dt_last = dt;
        Ok(StepOutcome::Advanced { dt })
    }

    /// One step with the internally chosen `dt`.
    pub fn step(&mut self, state: &mut SolverState) -> Result<StepOutcome> {
        self.step_capped(state, f64::INFINITY)
    }

    /// Evolves until `tau_max`, recording a snapshot every `snapshot_dtau`
    /// (the step size is shortened to land on snapshot times exactly).
    pub fn run(&mut self, mut state: SolverState, tau_max: f64, snapshot_dtau: f64) -> Result<Trajectory> {
        if !(tau_max >= state.tau) {
            return Err(domain(format!("tau_max = {tau_max} precedes the initial time {}", state.tau)));
        }
        if !(snapshot_dtau > 0.0) {
            return Err(domain(format!("snapshot interval {snapshot_dtau} must be positive")));
        }
        let mut traj = Trajectory {
            params: self.params,
            snapshots: vec![Snapshot::of(&self.params, &state)?],
            status: RunStatus::Completed,
            stats: StepStats::default(),
        };
        let start = state.tau;
        let mut next_index = 1u64;
        loop {
            let target = (start + next_index as f64 * snapshot_dtau).min(tau_max);
            if state.tau >= tau_max {
                break;
            }
            let before_tau = state.tau;
            let cap = target - state.tau;
            match self.step_capped(&mut state, cap)? {
                StepOutcome::Advanced { dt } => {
                    traj.stats.record(dt, state.mass_drift());
                    // Absorb rounding so the snapshot lands on `target`.
                    if (target - state.tau).abs() <= 1e-12 * target.abs().max(1.0) || state.tau > target {
                        state.tau = target;
                        traj.snapshots.push(Snapshot::of(&self.params, &state)?);
                        next_index += 1;
                    }
                    if state.tau <= before_tau {
                        return Err(Error::Convergence {
                            method: "time stepping",
                            detail: format!("no progress at tau = {before_tau}"),
                        });
                    }
                }
                StepOutcome::BlowUp(event) => {
                    if traj.snapshots.last().map(|s| s.tau) != Some(state.tau) {
                        traj.snapshots.push(Snapshot::of(&self.params, &state)?);
                    }
                    traj.status = RunStatus::BlowUp(event);
                    break;
                }
            }
        }
        traj.stats.final_mass_drift = state.mass_drift();
        Ok(traj)
    }
}

/// Recorded state.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub tau: f64,
    pub t: f64,
    pub step: u64,
    pub theta: RadialGridFunction,
}

impl Snapshot {
    fn of(params: &ProblemParams, state: &SolverState) -> Result<Self> {
        Ok(Snapshot { tau: state.tau, t: params.t_of_tau(state.tau)?, step: state.step_count, theta: state.theta.clone() })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RunStatus {
    Completed,
    BlowUp(BlowUpEvent),
}

impl RunStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            RunStatus::Completed => "completed",
            RunStatus::BlowUp(_) => "blow-up",
        }
    }
}

/// Time step statistics of a run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepStats {
    pub steps: u64,
    pub dt_min: f64,
    pub dt_max: f64,
    pub dt_sum: f64,
    pub max_mass_drift: f64,
    pub final_mass_drift: f64,
}

impl Default for StepStats {
    fn default() -> Self {
        StepStats { steps: 0, dt_min: f64::INFINITY, dt_max: 0.0, dt_sum: 0.0, max_mass_drift: 0.0, final_mass_drift: 0.0 }
    }
}

impl StepStats {
    fn record(&mut self, dt: f64, drift: f64) {
        self.steps += 1;
        self.dt_min = self.dt_min.min(dt);
        self.dt_max = self.dt_max.max(dt);
        self.dt_sum += dt;
        self.max_mass_drift = self.max_mass_drift.max(drift);
    }

    pub fn dt_mean(&self) -> f64 {
        if self.steps == 0 {
            0.0
        } else {
            self.dt_sum / self.steps as f64
        }
    }
}

/// Snapshots of one run and how it ended.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub params: ProblemParams,
    pub snapshots: Vec<Snapshot>,
    pub status: RunStatus,
    pub stats: StepStats,
}

/// Builtin initial densities. All are normalized to the mass `M`.
#[derive(Debug, Clone, PartialEq)]
pub enum InitialData {
    /// The ground state itself.
    Barenblatt,
    /// Spherical average of a Gaussian of width `width` centered at distance `offset`.
    GaussianOffcenter { offset: f64, width: f64 },
    /// Indicator of `inner <= r <= outer`.
    Annulus { inner: f64, outer: f64 },
    /// Two radial Gaussian shells `w_k exp(-(r - c_k)^2 / (2 width^2))`.
    DoubleBump { centers: [f64; 2], weights: [f64; 2], width: f64 },
    /// Piecewise linear profile through `(r, value)` pairs, zero beyond the last radius.
    Table(Vec<(f64, f64)>),
}

impl InitialData {
    pub fn kind(&self) -> &'static str {
        match self {
            InitialData::Barenblatt => "barenblatt",
            InitialData::GaussianOffcenter { .. } => "gaussian_offcenter_radialized",
            InitialData::Annulus { .. } => "annulus",
            InitialData::DoubleBump { .. } => "double_bump_radial",
            InitialData::Table(_) => "custom_table",
        }
    }

    pub fn gaussian_offcenter() -> Self {
        InitialData::GaussianOffcenter { offset: 1.5, width: 0.5 }
    }

    pub fn annulus() -> Self {
        InitialData::Annulus { inner: 1.0, outer: 2.0 }
    }

    pub fn double_bump() -> Self {
        InitialData::DoubleBump { centers: [0.5, 2.0], weights: [1.0, 0.5], width: 0.3 }
    }
}

/// Mean of `exp(z (cos psi - 1))` over the sphere `S^{d-1}`.
fn spherical_mean_exp(d: usize, z: f64) -> Result<f64> {
    let w = |psi: f64| psi.sin().powi(d as i32 - 2);
    let num = quadrature::integrate(|psi| (z * (psi.cos() - 1.0)).exp() * w(psi), 0.0, core::f64::consts::PI, 1e-300, 1e-12)?;
    let den = quadrature::integrate(w, 0.0, core::f64::consts::PI, 0.0, 1e-13)?;
    Ok(num.value / den.value)
}

/// Samples a builtin initial density on `grid` and normalizes it to `params.mass`.
pub fn initial_data(data: &InitialData, params: &ProblemParams, grid: &RadialGrid) -> Result<RadialGridFunction> {
    if grid.dim() != params.d {
        return Err(domain(format!("grid dimension {} does not match d = {}", grid.dim(), params.d)));
    }
    let mut f = match data {
        InitialData::Barenblatt => return BarenblattProfile::new(params)?.discrete(grid),
        InitialData::GaussianOffcenter { offset, width } => {
            if !(*width > 0.0) || !(*offset >= 0.0) {
                return Err(domain(format!("gaussian offset {offset} / width {width} invalid")));
            }
            let s2 = width * width;
            let mut values = Vec::with_capacity(grid.len());
            for &r in grid.centers() {
                let radial = (-(r - offset) * (r - offset) / (2.0 * s2)).exp();
                values.push(radial * spherical_mean_exp(params.d, r * offset / s2)?);
            }
            RadialGridFunction::new(grid.clone(), values)
        }
        InitialData::Annulus { inner, outer } => {
            if !(*inner >= 0.0 && outer > inner) {
                return Err(domain(format!("annulus [{inner}, {outer}] is empty")));
            }
            // Exact cell averages of the indicator.
            let d = params.d as i32;
            let faces = grid.faces();
            let values = (0..grid.len())
                .map(|i| {
                    let (a, b) = (faces[i].max(*inner), faces[i + 1].min(*outer));
                    if a >= b {
                        0.0
                    } else {
                        (b.powi(d) - a.powi(d)) / (faces[i + 1].powi(d) - faces[i].powi(d))
                    }
                })
                .collect();
            RadialGridFunction::new(grid.clone(), values)
        }
        InitialData::DoubleBump { centers, weights, width } => {
            if !(*width > 0.0) || weights.iter().any(|w| !(*w >= 0.0)) {
                return Err(domain("double bump needs positive width and nonnegative weights"));
            }
            RadialGridFunction::from_fn(grid.clone(), |r| {
                centers
                    .iter()
                    .zip(weights)
                    .map(|(c, w)| w * (-(r - c) * (r - c) / (2.0 * width * width)).exp())
                    .sum()
            })
        }
        InitialData::Table(points) => {
            if points.len() < 2 || points.windows(2).any(|w| !(w[1].0 > w[0].0)) {
                return Err(domain("custom table needs at least two points with increasing radii"));
            }
            if let Some(bad) = points.iter().find(|p| !(p.1 >= 0.0) || !(p.0 >= 0.0)) {
                return Err(domain(format!("custom table entry ({}, {}) must be nonnegative", bad.0, bad.1)));
            }
            RadialGridFunction::from_fn(grid.clone(), |r| {
                if r < points[0].0 {
                    return points[0].1;
                }
                match points.windows(2).find(|w| r <= w[1].0) {
                    Some(w) => {
                        let s = (r - w[0].0) / (w[1].0 - w[0].0);
                        w[0].1 + s * (w[1].1 - w[0].1)
                    }
                    None => 0.0,
                }
            })
        }
    };
    f.normalize_to(params.mass)?;
    Ok(f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn pme() -> ProblemParams {
        ProblemParams::new(3, 4.0 / 3.0, 1.0).unwrap()
    }

    #[test]
    fn zero_is_a_fixed_point() {
        let p = ProblemParams::new(3, 1.0, 1.0).unwrap();
        let grid = RadialGrid::new(3, 8.0, 50).unwrap();
        let mut solver = Solver::new(&p, Some(&KernelSpec::newtonian(1.0)), grid.clone()).unwrap();
        let mut state = SolverState::new(RadialGridFunction::zeros(grid), 0.0);
        for _ in 0..20 {
            solver.step(&mut state).unwrap();
        }
        assert!(state.theta.values().iter().all(|&v| v == 0.0));
        assert!(state.tau > 0.0);
    }

    #[test]
    fn mass_and_positivity_over_many_steps() {
        let p = pme();
        let grid = RadialGrid::new(3, default_radius(&p).unwrap(), 60).unwrap();
        let theta = initial_data(&InitialData::annulus(), &p, &grid).unwrap();
        let mut solver = Solver::new(&p, None, grid).unwrap();
        let mut state = SolverState::new(theta, 0.0);
        for _ in 0..10_000 {
            solver.step(&mut state).unwrap();
        }
        assert!(state.mass_drift() < 1e-9, "{}", state.mass_drift());
        assert!(state.theta.values().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn run_with_zero_horizon_has_one_snapshot() {
        let p = pme();
        let grid = RadialGrid::new(3, 6.0, 40).unwrap();
        let theta = initial_data(&InitialData::Barenblatt, &p, &grid).unwrap();
        let traj = Solver::new(&p, None, grid).unwrap().run(SolverState::new(theta, 0.0), 0.0, 0.1).unwrap();
        assert_eq!(traj.snapshots.len(), 1);
        assert_eq!(traj.status, RunStatus::Completed);
    }

    #[test]
    fn snapshots_land_on_cadence() {
        let p = ProblemParams::new(2, 1.0, 1.0).unwrap();
        let grid = RadialGrid::new(2, 8.0, 64).unwrap();
        let theta = initial_data(&InitialData::gaussian_offcenter(), &p, &grid).unwrap();
        let traj = Solver::new(&p, None, grid).unwrap().run(SolverState::new(theta, 0.0), 1.0, 0.25).unwrap();
        let taus: Vec<f64> = traj.snapshots.iter().map(|s| s.tau).collect();
        assert_eq!(taus, vec![0.0, 0.25, 0.5, 0.75, 1.0]);
    }

    #[test]
    fn initial_data_normalized() {
        for p in [pme(), ProblemParams::new(2, 1.0, 2.5).unwrap()] {
            let grid = RadialGrid::new(p.d, 8.0, 200).unwrap();
            for data in [
                InitialData::Barenblatt,
                InitialData::gaussian_offcenter(),
                InitialData::annulus(),
                InitialData::double_bump(),
                InitialData::Table(vec![(0.0, 1.0), (1.0, 0.5), (2.0, 0.0)]),
            ] {
                let f = initial_data(&data, &p, &grid).unwrap();
                assert_relative_eq!(f.mass(), p.mass, max_relative = 1e-10);
                assert!(f.values().iter().all(|&v| v >= 0.0));
                assert!(f.second_moment().is_finite());
            }
        }
        let grid = RadialGrid::new(3, 8.0, 20).unwrap();
        let empty = InitialData::Table(vec![(0.0, 0.0), (1.0, 0.0)]);
        assert!(initial_data(&empty, &pme(), &grid).is_err());
    }

    #[test]
    fn spherical_mean_closed_forms() {
        // d = 3: sinh(z)/z e^{-z}; d = 2: I0(z) e^{-z}.
        let z: f64 = 2.5;
        assert_relative_eq!(spherical_mean_exp(3, z).unwrap(), (1.0 - (-2.0 * z).exp()) / (2.0 * z), max_relative = 1e-10);
        let i0 = 3.289_839_144_050_123_f64; // I0(2.5)
        assert_relative_eq!(spherical_mean_exp(2, z).unwrap(), i0 * (-z).exp(), max_relative = 1e-10);
    }
}
