//! Ground states of the rescaled diffusion equation and the self-similar
//! solutions of the pure diffusion equation built from them.
//!
//! For `m = 1` the ground state is the Gaussian `M (2 pi)^{-d/2} e^{-|eta|^2/2}`.
//! For `m > 1` it is the Barenblatt profile
//! `(C1 - (m-1)/(2m) |eta|^2)_+^{1/(m-1)}` with `C1` fixed by the mass.

use alloc::format;
use core::f64::consts::PI;

use crate::error::{domain, Error, Result};
use crate::grid::{RadialGrid, RadialGridFunction};
use crate::params::ProblemParams;
#[allow(unused_imports)]
use crate::prelude::*;
use crate::quadrature::{self, sphere_area};

/// Default bisection bracket for `C1`.
pub const C1_BRACKET: (f64, f64) = (1e-6, 1e3);

/// The stationary profile `theta_M` of the kernel-free rescaled flow.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BarenblattProfile {
    params: ProblemParams,
    c1: f64,
    support_radius: f64,
    peak: f64,
}

fn beta_fn(a: f64, b: f64) -> f64 {
    (libm::lgamma(a) + libm::lgamma(b) - libm::lgamma(a + b)).exp()
}

/// `int_{R^d} (C - a |eta|^2)_+^s d eta` in closed form.
fn parabola_power_integral(d: usize, c: f64, a: f64, s: f64) -> f64 {
    let h = d as f64 / 2.0;
    sphere_area(d) * c.powf(s) * (c / a).powf(h) * 0.5 * beta_fn(h, s + 1.0)
}

impl BarenblattProfile {
    /// Ground state with the default `C1` bracket.
    pub fn new(params: &ProblemParams) -> Result<Self> {
        Self::with_bracket(params, C1_BRACKET)
    }

    /// Ground state with `C1` searched in `bracket`.
    pub fn with_bracket(params: &ProblemParams, bracket: (f64, f64)) -> Result<Self> {
        let d = params.d as f64;
        if params.is_linear() {
            let peak = params.mass * (2.0 * PI).powf(-d / 2.0);
            return Ok(BarenblattProfile { params: *params, c1: peak, support_radius: f64::INFINITY, peak });
        }
        let (lo, hi) = bracket;
        if !(lo > 0.0 && hi > lo) {
            return Err(domain(format!("C1 bracket [{lo}, {hi}] must satisfy 0 < lo < hi")));
        }
        let m = params.m;
        let a = (m - 1.0) / (2.0 * m);
        let s = 1.0 / (m - 1.0);
        let mass = |c: f64| parabola_power_integral(params.d, c, a, s);
        // mass(C1) is a power of C1; bisect in log C1 for uniform relative accuracy.
        let target = params.mass;
        let c1 = quadrature::bisect(
            |lc| mass(lc.exp()) / target - 1.0,
            lo.ln(),
            hi.ln(),
            0.0,
            1e-13,
        )
        .map_err(|e| match e {
            Error::Convergence { detail, .. } => Error::Convergence {
                method: "ground state normalization",
                detail: format!(
                    "mass {target} not reached for C1 in [{lo:e}, {hi:e}] (masses [{:e}, {:e}]): {detail}",
                    mass(lo),
                    mass(hi)
                ),
            },
            other => other,
        })?
        .exp();
        Ok(BarenblattProfile {
            params: *params,
            c1,
            support_radius: (c1 / a).sqrt(),
            peak: c1.powf(s),
        })
    }

    pub fn params(&self) -> &ProblemParams {
        &self.params
    }

    /// Normalization constant; for `m = 1` this is the peak value.
    pub fn c1(&self) -> f64 {
        self.c1
    }

    /// Radius of the support, infinite for `m = 1`.
    pub fn support_radius(&self) -> f64 {
        self.support_radius
    }

    /// `theta_M(0)`, the maximum of the profile.
    pub fn peak(&self) -> f64 {
        self.peak
    }

    /// `theta_M(eta)` at `|eta| = r`.
    pub fn value(&self, r: f64) -> f64 {
        let m = self.params.m;
        if self.params.is_linear() {
            return self.peak * (-0.5 * r * r).exp();
        }
        let base = self.c1 - (m - 1.0) / (2.0 * m) * r * r;
        if base <= 0.0 {
            0.0
        } else {
            base.powf(1.0 / (m - 1.0))
        }
    }

    /// Exact point values at the cell centers.
    pub fn sample(&self, grid: &RadialGrid) -> RadialGridFunction {
        RadialGridFunction::from_fn(grid.clone(), |r| self.value(r))
    }

    /// Discrete ground state on `grid` with discrete mass exactly `M`.
    ///
    /// For `m = 1` these are the point values rescaled to mass `M`. For `m > 1`
    /// the constant is refitted instead, `(C_h - (m-1)/(2m) r_i^2)_+^{1/(m-1)}`,
    /// so the profile keeps its exact form. Both are stationary for the
    /// kernel-free scheme and are the reference for all grid diagnostics.
    pub fn discrete(&self, grid: &RadialGrid) -> Result<RadialGridFunction> {
        if self.params.is_linear() {
            let mut f = self.sample(grid);
            f.normalize_to(self.params.mass)?;
            return Ok(f);
        }
        let m = self.params.m;
        let a = (m - 1.0) / (2.0 * m);
        let profile = |c: f64| {
            RadialGridFunction::from_fn(grid.clone(), |r| {
                let base = c - a * r * r;
                if base <= 0.0 {
                    0.0
                } else {
                    base.powf(1.0 / (m - 1.0))
                }
            })
        };
        let target = self.params.mass;
        // The cells resolving the support must fit inside the grid.
        let c_max = a * grid.radius() * grid.radius();
        let lc = quadrature::bisect(
            |lc| profile(lc.exp()).mass() / target - 1.0,
            (0.25 * self.c1).ln(),
            (4.0 * self.c1).min(c_max).ln(),
            0.0,
            1e-14,
        )?;
        Ok(profile(lc.exp()))
    }

    /// `||theta_M||_p` for `1 <= p <= inf`.
    pub fn lp_norm(&self, p: f64) -> Result<f64> {
        if !(p >= 1.0) {
            return Err(domain(format!("norm index p = {p} must be >= 1")));
        }
        if p.is_infinite() {
            return Ok(self.peak);
        }
        let d = self.params.d as f64;
        let integral = if self.params.is_linear() {
            self.peak.powf(p) * (2.0 * PI / p).powf(d / 2.0)
        } else {
            let m = self.params.m;
            parabola_power_integral(self.params.d, self.c1, (m - 1.0) / (2.0 * m), p / (m - 1.0))
        };
        Ok(integral.powf(1.0 / p))
    }

    /// Self-similar solution of the pure diffusion equation with initial datum
    /// `theta_M`: `U(t, x) = (1 + t/beta)^{-d beta} theta_M((1 + t/beta)^{-beta} x)`.
    pub fn selfsim_solution(&self, t: f64, x: f64) -> Result<f64> {
        if !(t >= 0.0) {
            return Err(domain(format!("physical time t = {t} must be >= 0")));
        }
        let b = self.params.beta;
        let stretch = (t / b).ln_1p() * b;
        let d = self.params.d as f64;
        Ok((-d * stretch).exp() * self.value((-stretch).exp() * x.abs()))
    }
}

/// Ground state for `params`.
pub fn ground_state(params: &ProblemParams) -> Result<BarenblattProfile> {
    BarenblattProfile::new(params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    /// Independent oracle: mass by adaptive quadrature of the radial profile.
    fn quadrature_mass(p: &BarenblattProfile) -> f64 {
        let d = p.params.d;
        let upper = if p.support_radius.is_finite() { p.support_radius } else { 40.0 };
        let f = |r: f64| p.value(r) * r.powi(d as i32 - 1);
        sphere_area(d) * quadrature::integrate(f, 0.0, upper, 0.0, 1e-13).unwrap().value
    }

    #[test]
    fn gaussian_peak() {
        let p = ground_state(&ProblemParams::new(2, 1.0, 1.0).unwrap()).unwrap();
        assert_relative_eq!(p.peak(), 1.0 / (2.0 * PI), max_relative = 1e-15);
        assert!(p.support_radius().is_infinite());
    }

    #[test]
    fn mass_constraint() {
        for (d, m, mass) in [(2, 1.0, 1.0), (3, 1.0, 2.0), (3, 4.0 / 3.0, 0.5), (3, 1.2, 1.0), (4, 1.5, 3.0)] {
            let p = ground_state(&ProblemParams::new(d, m, mass).unwrap()).unwrap();
            assert_relative_eq!(quadrature_mass(&p), mass, max_relative = 1e-8);
            assert_relative_eq!(p.lp_norm(1.0).unwrap(), mass, max_relative = 1e-12);
        }
    }

    #[test]
    fn critical_pme_constant() {
        // Oracle: 4 pi int_0^{sqrt(8C)} (C - s^2/8)^3 s^2 ds = 4 pi (16/315) 8^{3/2} C^{9/2}.
        let p = ground_state(&ProblemParams::new(3, 4.0 / 3.0, 1.0).unwrap()).unwrap();
        let oracle = (1.0 / (4.0 * PI * 16.0 / 315.0 * 8f64.powf(1.5))).powf(1.0 / 4.5);
        assert_relative_eq!(p.c1(), oracle, max_relative = 1e-11);
        assert_relative_eq!(p.c1(), 0.552_457_724_594_065_6, max_relative = 1e-10);
        assert_relative_eq!(p.support_radius(), (8.0 * p.c1()).sqrt(), max_relative = 1e-14);
        assert_relative_eq!(p.peak(), p.c1().powi(3), max_relative = 1e-13);
        assert_eq!(p.value(p.support_radius() * 1.0001), 0.0);
        assert_relative_eq!(p.lp_norm(f64::INFINITY).unwrap(), p.c1().powi(3));
    }

    #[test]
    fn bracket_doubling_invariance() {
        let params = ProblemParams::new(3, 4.0 / 3.0, 0.7).unwrap();
        let a = BarenblattProfile::with_bracket(&params, C1_BRACKET).unwrap();
        let b = BarenblattProfile::with_bracket(&params, (C1_BRACKET.0 / 2.0, C1_BRACKET.1 * 2.0)).unwrap();
        assert_relative_eq!(a.c1(), b.c1(), max_relative = 1e-10);
    }

    #[test]
    fn bracket_failure_reports_bracket() {
        let params = ProblemParams::new(3, 4.0 / 3.0, 1.0).unwrap();
        let err = BarenblattProfile::with_bracket(&params, (1.0, 2.0)).unwrap_err();
        assert!(format!("{err}").contains("C1 in [1e0, 2e0]"), "{err}");
    }

    #[test]
    fn gaussian_l2_norm() {
        for d in [2, 3] {
            let p = ground_state(&ProblemParams::new(d, 1.0, 1.5).unwrap()).unwrap();
            let oracle = 1.5 / (4.0 * PI).powf(d as f64 / 4.0);
            assert_relative_eq!(p.lp_norm(2.0).unwrap(), oracle, max_relative = 1e-13);
        }
    }

    #[test]
    fn lp_norm_matches_quadrature() {
        let p = ground_state(&ProblemParams::new(3, 4.0 / 3.0, 1.0).unwrap()).unwrap();
        for q in [2.0, 3.5] {
            let f = |r: f64| p.value(r).powf(q) * r * r;
            let oracle = (4.0 * PI * quadrature::integrate(f, 0.0, p.support_radius(), 0.0, 1e-13).unwrap().value)
                .powf(1.0 / q);
            assert_relative_eq!(p.lp_norm(q).unwrap(), oracle, max_relative = 1e-10);
        }
        assert!(p.lp_norm(0.5).is_err());
    }

    #[test]
    fn selfsim_solution_identities() {
        let params = ProblemParams::new(2, 1.0, 1.0).unwrap();
        let p = ground_state(&params).unwrap();
        assert_eq!(p.selfsim_solution(0.0, 0.7).unwrap(), p.value(0.7));
        assert_relative_eq!(p.selfsim_solution(1.0, 0.0).unwrap(), 1.0 / (3.0 * 2.0 * PI), max_relative = 1e-14);
        // Heat kernel started at t = -1/2: M / (4 pi (t + 1/2)) e^{-x^2 / (4 (t + 1/2))}.
        let t = 2.0;
        let x = 1.3;
        let heat = 1.0 / (4.0 * PI * (t + 0.5)) * (-x * x / (4.0 * (t + 0.5))).exp();
        assert_relative_eq!(p.selfsim_solution(t, x).unwrap(), heat, max_relative = 1e-13);
        assert!(p.selfsim_solution(-1.0, 0.0).is_err());
    }

    #[test]
    fn selfsim_mass_conserved() {
        let params = ProblemParams::new(3, 4.0 / 3.0, 1.0).unwrap();
        let p = ground_state(&params).unwrap();
        for t in [0.0, 1.0, 10.0] {
            let edge = p.support_radius() * (1.0 + t / params.beta).powf(params.beta);
            let f = |r: f64| p.selfsim_solution(t, r).unwrap() * r * r;
            let mass = 4.0 * PI * quadrature::integrate(f, 0.0, edge, 0.0, 1e-12).unwrap().value;
            assert_relative_eq!(mass, 1.0, max_relative = 1e-8);
        }
    }

    #[test]
    fn zero_flux_on_support_interior() {
        // max |eta theta + d/deta theta^m| over interior faces is O(dr^2).
        let params = ProblemParams::new(3, 4.0 / 3.0, 1.0).unwrap();
        let p = ground_state(&params).unwrap();
        let residual = |n: usize| {
            let grid = RadialGrid::new(3, 1.5 * p.support_radius(), n).unwrap();
            let c = grid.centers();
            let dr = grid.dr();
            let mut worst = 0.0f64;
            for i in 0..n - 1 {
                let face = grid.faces()[i + 1];
                if face + dr >= 0.9 * p.support_radius() {
                    break;
                }
                let (a, b) = (p.value(c[i]), p.value(c[i + 1]));
                let flux = face * 0.5 * (a + b) + (b.powf(params.m) - a.powf(params.m)) / dr;
                worst = worst.max(flux.abs());
            }
            worst
        };
        let (coarse, fine) = (residual(200), residual(400));
        assert!(coarse < 1e-3, "{coarse}");
        assert!(coarse / fine > 3.5, "{coarse} {fine}");
    }
}
