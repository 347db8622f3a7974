//! Two-dimensional Cartesian solver for `u_t + div(u grad K*u) = Lap u` in the
//! physical frame, used to cross-check the radial rescaled solver.
//!
//! The square `[-L, L]^2` carries `n x n` cells. The velocity `grad K * u` is a
//! discrete linear convolution evaluated by FFT on a `2n x 2n` zero-padded
//! grid. Advection is upwinded with face velocities averaged from cell
//! centers, diffusion uses the five-point flux, and the update has the same
//! outflow/inflow form as the radial scheme, so it is positive under the step
//! restriction. All faces on the boundary of the square are closed.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{domain, Error, Result};
use crate::grid::{RadialGrid, RadialGridFunction};
use crate::kernels::{KernelSpec, RadialProfile};
use crate::solver::{BlowUpEvent, StepOutcome};

/// Mass fraction allowed in the outermost ring of cells before the box is
/// considered too small.
pub const PADDING_TOLERANCE: f64 = 1e-6;

/// Uniform grid on `[-L, L]^2`, row-major with `x` varying fastest.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CartesianGrid {
    n: usize,
    half_width: f64,
}

impl CartesianGrid {
    pub fn new(n: usize, half_width: f64) -> Result<Self> {
        if n < 4 {
            return Err(domain(format!("Cartesian grid needs at least 4 cells per side, got {n}")));
        }
        if !(half_width > 0.0 && half_width.is_finite()) {
            return Err(domain(format!("half width {half_width} must be positive")));
        }
        Ok(CartesianGrid { n, half_width })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    pub fn h(&self) -> f64 {
        2.0 * self.half_width / self.n as f64
    }

    pub fn center(&self, i: usize) -> f64 {
        -self.half_width + (i as f64 + 0.5) * self.h()
    }

    pub fn cell_area(&self) -> f64 {
        self.h() * self.h()
    }
}

/// Cell averages on a [`CartesianGrid`].
#[derive(Debug, Clone, PartialEq)]
pub struct Field2d {
    pub grid: CartesianGrid,
    pub values: Vec<f64>,
}

impl Field2d {
    pub fn zeros(grid: CartesianGrid) -> Self {
        Field2d { grid, values: vec![0.0; grid.n * grid.n] }
    }

    pub fn from_fn(grid: CartesianGrid, f: impl Fn(f64, f64) -> f64) -> Self {
        let n = grid.n;
        let values = (0..n * n).map(|k| f(grid.center(k % n), grid.center(k / n))).collect();
        Field2d { grid, values }
    }

    /// Cell averages of the radial function `f(|x|)` from `sub x sub` samples per cell.
    pub fn from_radial(grid: CartesianGrid, f: &RadialGridFunction, sub: usize) -> Self {
        let h = grid.h();
        let sub = sub.max(1);
        Field2d::from_fn(grid, |x, y| {
            let mut acc = 0.0;
            for a in 0..sub {
                for b in 0..sub {
                    let px = x + h * ((a as f64 + 0.5) / sub as f64 - 0.5);
                    let py = y + h * ((b as f64 + 0.5) / sub as f64 - 0.5);
                    acc += f.sample_at(px.hypot(py));
                }
            }
            acc / (sub * sub) as f64
        })
    }

    pub fn mass(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.grid.cell_area()
    }

    pub fn sup(&self) -> f64 {
        self.values.iter().fold(0.0, |a, &b| a.max(b.abs()))
    }

    pub fn lp_norm(&self, p: f64) -> f64 {
        if p.is_infinite() {
            return self.sup();
        }
        (self.values.iter().map(|v| v.abs().powf(p)).sum::<f64>() * self.grid.cell_area()).powf(1.0 / p)
    }

    pub fn normalize_to(&mut self, mass: f64) -> Result<()> {
        let have = self.mass();
        if !(have > 0.0 && have.is_finite()) {
            return Err(domain(format!("density with mass {have} cannot be normalized")));
        }
        self.values.iter_mut().for_each(|v| *v *= mass / have);
        Ok(())
    }

    /// Mass fraction in the outermost ring of cells.
    pub fn boundary_fraction(&self) -> f64 {
        let n = self.grid.n;
        let ring: f64 = (0..n * n)
            .filter(|k| {
                let (i, j) = (k % n, k / n);
                i == 0 || j == 0 || i == n - 1 || j == n - 1
            })
            .map(|k| self.values[k].abs())
            .sum();
        let total: f64 = self.values.iter().map(|v| v.abs()).sum();
        if total > 0.0 {
            ring / total
        } else {
            0.0
        }
    }

    /// Radial average onto `target`: each cell is split into `sub x sub`
    /// pieces whose mass goes to the radial cell holding the piece center.
    pub fn radial_average(&self, target: &RadialGrid, sub: usize) -> Result<RadialGridFunction> {
        if target.dim() != 2 {
            return Err(domain("radial average of a planar field needs a d = 2 grid"));
        }
        let g = self.grid;
        let n = g.n;
        let h = g.h();
        let sub = sub.max(1);
        let piece = g.cell_area() / (sub * sub) as f64;
        let mut mass = vec![0.0; target.len()];
        for k in 0..n * n {
            let (x, y) = (g.center(k % n), g.center(k / n));
            for a in 0..sub {
                for b in 0..sub {
                    let px = x + h * ((a as f64 + 0.5) / sub as f64 - 0.5);
                    let py = y + h * ((b as f64 + 0.5) / sub as f64 - 0.5);
                    if let Some(i) = target.cell_of(px.hypot(py)) {
                        mass[i] += self.values[k] * piece;
                    }
                }
            }
        }
        let values = mass.iter().zip(target.volumes()).map(|(m, v)| m / v).collect();
        Ok(RadialGridFunction::new(target.clone(), values))
    }
}

/// Precomputed FFT convolution with `lambda^2 grad K(lambda .)` on a grid.
pub struct ConvolutionPlan {
    grid: CartesianGrid,
    size: usize,
    kx: Vec<Complex<f64>>,
    ky: Vec<Complex<f64>>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    buf: Vec<Complex<f64>>,
    bx: Vec<Complex<f64>>,
    by: Vec<Complex<f64>>,
    column: Vec<Complex<f64>>,
}

impl core::fmt::Debug for ConvolutionPlan {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("ConvolutionPlan").field("grid", &self.grid).field("size", &self.size).finish()
    }
}

impl ConvolutionPlan {
    pub fn new(spec: &KernelSpec, grid: CartesianGrid, lambda: f64) -> Result<Self> {
        let kernel = spec.bind(2)?;
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(domain(format!("kernel scale factor {lambda} must be positive")));
        }
        let size = 2 * grid.n;
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(size);
        let inverse = planner.plan_fft_inverse(size);
        let h = grid.h();
        let mut kx = vec![Complex::new(0.0, 0.0); size * size];
        let mut ky = kx.clone();
        let offset = |a: usize| if a < grid.n { a as f64 } else { a as f64 - size as f64 };
        for b in 0..size {
            for a in 0..size {
                let (ox, oy) = (offset(a) * h, offset(b) * h);
                let rho = ox.hypot(oy);
                if rho == 0.0 {
                    continue;
                }
                let g = lambda * lambda * kernel.dk(lambda * rho) * h * h / rho;
                kx[b * size + a].re = g * ox;
                ky[b * size + a].re = g * oy;
            }
        }
        let mut plan = ConvolutionPlan {
            grid,
            size,
            kx: Vec::new(),
            ky: Vec::new(),
            forward,
            inverse,
            buf: vec![Complex::new(0.0, 0.0); size * size],
            bx: vec![Complex::new(0.0, 0.0); size * size],
            by: vec![Complex::new(0.0, 0.0); size * size],
            column: vec![Complex::new(0.0, 0.0); size],
        };
        plan.transform(&mut kx, true);
        plan.transform(&mut ky, true);
        plan.kx = kx;
        plan.ky = ky;
        Ok(plan)
    }

    pub fn grid(&self) -> &CartesianGrid {
        &self.grid
    }

    fn transform(&mut self, data: &mut [Complex<f64>], forward: bool) {
        let s = self.size;
        let fft = if forward { &self.forward } else { &self.inverse };
        for row in data.chunks_exact_mut(s) {
            fft.process(row);
        }
        for a in 0..s {
            for b in 0..s {
                self.column[b] = data[b * s + a];
            }
            fft.process(&mut self.column);
            for b in 0..s {
                data[b * s + a] = self.column[b];
            }
        }
    }

    /// Writes `grad K * u` at the cell centers into `vx`, `vy`.
    pub fn velocity(&mut self, u: &[f64], vx: &mut [f64], vy: &mut [f64]) -> Result<()> {
        let n = self.grid.n;
        let s = self.size;
        if u.len() != n * n || vx.len() != n * n || vy.len() != n * n {
            return Err(Error::Config(format!("convolution planned for {n} x {n} cells")));
        }
        let mut buf = core::mem::take(&mut self.buf);
        buf.iter_mut().for_each(|c| *c = Complex::new(0.0, 0.0));
        for j in 0..n {
            for i in 0..n {
                buf[j * s + i].re = u[j * n + i];
            }
        }
        self.transform(&mut buf, true);
        let mut bx = core::mem::take(&mut self.bx);
        let mut by = core::mem::take(&mut self.by);
        for k in 0..s * s {
            bx[k] = buf[k] * self.kx[k];
            by[k] = buf[k] * self.ky[k];
        }
        self.transform(&mut bx, false);
        self.transform(&mut by, false);
        let norm = 1.0 / (s * s) as f64;
        for j in 0..n {
            for i in 0..n {
                vx[j * n + i] = bx[j * s + i].re * norm;
                vy[j * n + i] = by[j * s + i].re * norm;
            }
        }
        self.buf = buf;
        self.bx = bx;
        self.by = by;
        Ok(())
    }
}

/// `grad K * u` for a planar density; fails when `u` reaches the edge of the box.
pub fn velocity_cartesian_2d(spec: &KernelSpec, u: &Field2d) -> Result<(Vec<f64>, Vec<f64>)> {
    let frac = u.boundary_fraction();
    if frac > PADDING_TOLERANCE {
        return Err(Error::Config(format!(
            "density has mass fraction {frac:e} in the outermost cells; enlarge the box"
        )));
    }
    let n = u.grid.n;
    let mut plan = ConvolutionPlan::new(spec, u.grid, 1.0)?;
    let (mut vx, mut vy) = (vec![0.0; n * n], vec![0.0; n * n]);
    plan.velocity(&u.values, &mut vx, &mut vy)?;
    Ok((vx, vy))
}

/// Empirical constant `||grad(lambda^2 grad K(lambda .) * u)||_p / (lambda ||u||_p)`,
/// with the gradient from centered differences and the pointwise Frobenius norm.
pub fn cz_rescaling_constant(spec: &KernelSpec, u: &Field2d, lambda: f64, p: f64) -> Result<f64> {
    let g = u.grid;
    let n = g.n;
    let mut plan = ConvolutionPlan::new(spec, g, lambda)?;
    let (mut vx, mut vy) = (vec![0.0; n * n], vec![0.0; n * n]);
    plan.velocity(&u.values, &mut vx, &mut vy)?;
    let h = g.h();
    let mut total = 0.0;
    for j in 1..n - 1 {
        for i in 1..n - 1 {
            let k = j * n + i;
            let dx = |v: &[f64]| (v[k + 1] - v[k - 1]) / (2.0 * h);
            let dy = |v: &[f64]| (v[k + n] - v[k - n]) / (2.0 * h);
            let frob = (dx(&vx).powi(2) + dy(&vx).powi(2) + dx(&vy).powi(2) + dy(&vy).powi(2)).sqrt();
            total += frob.powf(p);
        }
    }
    let grad = (total * g.cell_area()).powf(1.0 / p);
    Ok(grad / (lambda * u.lp_norm(p)))
}

/// State of the planar solver.
#[derive(Debug, Clone, PartialEq)]
pub struct CartesianState {
    pub u: Field2d,
    pub t: f64,
    pub steps: u64,
}

/// Explicit scheme for `u_t + div(u grad K*u) = Lap u` on a closed box.
#[derive(Debug)]
pub struct CartesianSolver {
    grid: CartesianGrid,
    plan: Option<ConvolutionPlan>,
    /// Largest fraction of a cell's content that may leave in one step.
    pub max_outflow_fraction: f64,
    vx: Vec<f64>,
    vy: Vec<f64>,
    rate: Vec<f64>,
    next: Vec<f64>,
}

impl CartesianSolver {
    pub fn new(kernel: Option<&KernelSpec>, grid: CartesianGrid) -> Result<Self> {
        let plan = kernel.map(|k| ConvolutionPlan::new(k, grid, 1.0)).transpose()?;
        let cells = grid.n * grid.n;
        Ok(CartesianSolver {
            grid,
            plan,
            max_outflow_fraction: 0.9,
            vx: vec![0.0; cells],
            vy: vec![0.0; cells],
            rate: vec![0.0; cells],
            next: vec![0.0; cells],
        })
    }

    /// One step of at most `dt_cap`.
    pub fn step_capped(&mut self, state: &mut CartesianState, dt_cap: f64) -> Result<StepOutcome> {
        let g = self.grid;
        let n = g.n;
        if state.u.grid != g {
            return Err(Error::Config(String::from("state lives on a different Cartesian grid")));
        }
        let h = g.h();
        let max_u = state.u.sup();
        if !max_u.is_finite() {
            return Ok(StepOutcome::BlowUp(BlowUpEvent { tau: state.t, max_theta: max_u, dt: 0.0 }));
        }
        match &mut self.plan {
            Some(plan) => plan.velocity(&state.u.values, &mut self.vx, &mut self.vy)?,
            None => {
                self.vx.iter_mut().for_each(|v| *v = 0.0);
                self.vy.iter_mut().for_each(|v| *v = 0.0);
            }
        }
        let u = &state.u.values;
        // Transfer coefficient from cell `a` into neighbour `b` across a face with
        // velocity `v` pointing from `a` to `b`.
        let coeff = |v: f64| (v.max(0.0) + 1.0 / h) / h;
        let face = |a: usize, b: usize, vel: &[f64]| 0.5 * (vel[a] + vel[b]);
        let mut worst = 0.0f64;
        for k in 0..n * n {
            let (i, j) = (k % n, k / n);
            let mut r = 0.0;
            if i > 0 {
                r += coeff(-face(k - 1, k, &self.vx));
            }
            if i + 1 < n {
                r += coeff(face(k, k + 1, &self.vx));
            }
            if j > 0 {
                r += coeff(-face(k - n, k, &self.vy));
            }
            if j + 1 < n {
                r += coeff(face(k, k + n, &self.vy));
            }
            self.rate[k] = r;
            worst = worst.max(r);
        }
        let dt = dt_cap.min(self.max_outflow_fraction / worst);
        if dt < 1e-12 * h * h && dt < dt_cap {
            return Ok(StepOutcome::BlowUp(BlowUpEvent { tau: state.t, max_theta: max_u, dt }));
        }
        for k in 0..n * n {
            let (i, j) = (k % n, k / n);
            let mut inflow = 0.0;
            if i > 0 {
                inflow += coeff(face(k - 1, k, &self.vx)) * u[k - 1];
            }
            if i + 1 < n {
                inflow += coeff(-face(k, k + 1, &self.vx)) * u[k + 1];
            }
            if j > 0 {
                inflow += coeff(face(k - n, k, &self.vy)) * u[k - n];
            }
            if j + 1 < n {
                inflow += coeff(-face(k, k + n, &self.vy)) * u[k + n];
            }
            let next = u[k] * (1.0 - dt * self.rate[k]) + dt * inflow;
            if !(next >= 0.0) {
                return Err(Error::Negative { cell: k, value: next, tau: state.t });
            }
            self.next[k] = next;
        }
        core::mem::swap(&mut state.u.values, &mut self.next);
        state.t += dt;
        state.steps += 1;
        Ok(StepOutcome::Advanced { dt })
    }

    /// Advances to exactly `t_end`.
    pub fn run_until(&mut self, state: &mut CartesianState, t_end: f64) -> Result<StepOutcome> {
        let mut last = StepOutcome::Advanced { dt: 0.0 };
        while state.t < t_end {
            last = self.step_capped(state, t_end - state.t)?;
            if let StepOutcome::BlowUp(_) = last {
                return Ok(last);
            }
            if t_end - state.t < 1e-12 * t_end.max(1.0) {
                state.t = t_end;
            }
        }
        Ok(last)
    }
}

/// One step with the internally chosen time step.
pub fn step_cartesian_2d(solver: &mut CartesianSolver, state: &mut CartesianState) -> Result<StepOutcome> {
    solver.step_capped(state, f64::INFINITY)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::velocity_radial;
    use crate::params::ProblemParams;
    use approx::assert_relative_eq;

    fn blob(grid: CartesianGrid, cx: f64, cy: f64) -> Field2d {
        Field2d::from_fn(grid, |x, y| (-((x - cx).powi(2) + (y - cy).powi(2)) / 2.0).exp())
    }

    #[test]
    fn zero_density_is_fixed() {
        let g = CartesianGrid::new(32, 5.0).unwrap();
        let mut s = CartesianState { u: Field2d::zeros(g), t: 0.0, steps: 0 };
        let mut solver = CartesianSolver::new(Some(&KernelSpec::gaussian(1.0, 1.0)), g).unwrap();
        for _ in 0..10 {
            step_cartesian_2d(&mut solver, &mut s).unwrap();
        }
        assert!(s.u.values.iter().all(|v| *v == 0.0));
        let (vx, vy) = velocity_cartesian_2d(&KernelSpec::gaussian(1.0, 1.0), &Field2d::zeros(g)).unwrap();
        assert!(vx.iter().chain(&vy).all(|v| *v == 0.0));
    }

    #[test]
    fn translation_equivariance() {
        let g = CartesianGrid::new(48, 8.0).unwrap();
        let spec = KernelSpec::gaussian(1.0, 1.0);
        let (ax, ay) = velocity_cartesian_2d(&spec, &blob(g, 0.0, 0.0)).unwrap();
        let (bx, by) = velocity_cartesian_2d(&spec, &blob(g, g.h(), 0.0)).unwrap();
        let n = g.n();
        for j in 0..n {
            for i in 0..n - 1 {
                assert!((ax[j * n + i] - bx[j * n + i + 1]).abs() < 1e-12);
                assert!((ay[j * n + i] - by[j * n + i + 1]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn padding_error_for_edge_mass() {
        let g = CartesianGrid::new(16, 2.0).unwrap();
        assert!(matches!(
            velocity_cartesian_2d(&KernelSpec::gaussian(1.0, 1.0), &blob(g, 0.0, 0.0)),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn matches_radial_velocity_in_the_bulk() {
        let g = CartesianGrid::new(128, 8.0).unwrap();
        let spec = KernelSpec::gaussian(1.0, 1.0);
        let u = blob(g, 0.0, 0.0);
        let (vx, vy) = velocity_cartesian_2d(&spec, &u).unwrap();
        let params = ProblemParams::new(2, 1.0, 1.0).unwrap();
        let radial = RadialGrid::new(2, 8.0, 400).unwrap();
        let theta = RadialGridFunction::from_fn(radial.clone(), |r| (-r * r / 2.0).exp());
        let v = velocity_radial(&spec, &params, 0.0, &theta).unwrap();
        let n = g.n();
        let scale = v.iter().fold(0.0f64, |a, b| a.max(b.abs()));
        for k in 0..n * n {
            let (x, y) = (g.center(k % n), g.center(k / n));
            let r = x.hypot(y);
            if !(0.5..3.0).contains(&r) {
                continue;
            }
            let vr = (vx[k] * x + vy[k] * y) / r;
            let i = radial.cell_of(r).unwrap();
            let w = r / radial.dr() - 0.5 - i as f64;
            let expect = if w >= 0.0 { v[i] * (1.0 - w) + v[i + 1] * w } else { v[i - 1] * -w + v[i] * (1.0 + w) };
            assert!((vr - expect).abs() <= 1e-2 * scale, "r = {r}: {vr} vs {expect}");
        }
    }

    #[test]
    fn heat_kernel_sup_decay() {
        let g = CartesianGrid::new(200, 50.0).unwrap();
        let mut u = blob(g, 0.0, 0.0);
        u.normalize_to(1.0).unwrap();
        let mut s = CartesianState { u, t: 0.0, steps: 0 };
        let mut solver = CartesianSolver::new(None, g).unwrap();
        solver.run_until(&mut s, 50.0).unwrap();
        assert_relative_eq!(s.t, 50.0);
        assert_relative_eq!(s.u.mass(), 1.0, max_relative = 1e-12);
        let scaled = s.u.sup() * 4.0 * core::f64::consts::PI * s.t;
        assert!((scaled - 1.0).abs() < 0.02, "{scaled}");
    }

    #[test]
    fn aggregation_preserves_mass_and_positivity() {
        let g = CartesianGrid::new(64, 10.0).unwrap();
        let mut u = blob(g, 1.0, -0.5);
        u.normalize_to(3.0).unwrap();
        let mut s = CartesianState { u, t: 0.0, steps: 0 };
        let mut solver = CartesianSolver::new(Some(&KernelSpec::gaussian(1.0, 1.0)), g).unwrap();
        solver.run_until(&mut s, 1.0).unwrap();
        assert_relative_eq!(s.u.mass(), 3.0, max_relative = 1e-12);
        assert!(s.u.values.iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn radial_average_conserves_mass() {
        let g = CartesianGrid::new(100, 6.0).unwrap();
        let u = blob(g, 0.0, 0.0);
        let radial = RadialGrid::new(2, 6.0 * 2f64.sqrt(), 150).unwrap();
        let avg = u.radial_average(&radial, 4).unwrap();
        assert_relative_eq!(avg.mass(), u.mass(), max_relative = 1e-12);
        let back = Field2d::from_radial(g, &avg, 4);
        assert_relative_eq!(back.mass(), u.mass(), max_relative = 1e-2);
    }

    #[test]
    fn cz_constant_stable_under_rescaling() {
        let g = CartesianGrid::new(128, 8.0).unwrap();
        let spec = KernelSpec::power_tail(1.0, 1.0, 1.0);
        let tests = [blob(g, 0.0, 0.0), blob(g, 1.0, 1.0), Field2d::from_fn(g, |x, y| if x.hypot(y) < 2.0 { 1.0 } else { 0.0 })];
        for p in [2.0, 4.0] {
            for u in &tests {
                let c: Vec<f64> = [1.0, 4.0, 16.0].iter().map(|&l| cz_rescaling_constant(&spec, u, l, p).unwrap()).collect();
                let (lo, hi) = c.iter().fold((f64::MAX, 0.0f64), |(a, b), &x| (a.min(x), b.max(x)));
                assert!(hi <= 2.0 * lo, "p = {p}: {c:?}");
            }
        }
    }
}
