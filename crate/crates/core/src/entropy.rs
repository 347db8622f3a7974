//! Entropy, entropy production and relative entropy of radial densities, plus
//! numerical checks of the log-Sobolev, Csiszar-Kullback and
//! Gagliardo-Nirenberg-Sobolev inequalities.
//!
//! ```text
//! m = 1:  H = int theta ln theta + |eta|^2/2 theta,        I = int theta |grad ln theta + eta|^2
//! m > 1:  H = int theta^m/(m-1) + |eta|^2/2 theta,         I = int theta |m/(m-1) grad theta^{m-1} + eta|^2
//! ```
//!
//! Cell integrals use the same volume-weighted midpoint rule as the solver.
//! Gradients live on interior faces, weighted by the dual cell volume
//! `area_f * dr`.

use alloc::format;

use crate::barenblatt::BarenblattProfile;
use crate::error::{domain, Result};
use crate::grid::{RadialGrid, RadialGridFunction};
use crate::params::ProblemParams;
#[allow(unused_imports)]
use crate::prelude::*;
use crate::quadrature::GaussLegendre;

/// Cells below this fraction of `max theta` are outside the numerical support.
pub const SUPPORT_FLOOR: f64 = 1e-12;

/// Default relative slack on the inequality bounds.
pub const DEFAULT_TOLERANCE: f64 = 0.05;

fn density(params: &ProblemParams, th: f64) -> f64 {
    if params.is_linear() {
        if th > 0.0 {
            th * th.ln()
        } else {
            0.0
        }
    } else {
        th.powf(params.m) / (params.m - 1.0)
    }
}

/// `H(theta)`, with `0 ln 0 = 0`.
pub fn entropy(params: &ProblemParams, theta: &RadialGridFunction) -> f64 {
    theta.integrate(|r, th| density(params, th) + 0.5 * r * r * th)
}

/// Entropy variable `h` with `Lap theta^m = div(theta grad h)`.
fn potential(params: &ProblemParams, th: f64) -> f64 {
    if params.is_linear() {
        th.ln()
    } else {
        params.m / (params.m - 1.0) * th.powf(params.m - 1.0)
    }
}

/// `I(theta)` from centered face differences, restricted to faces whose two
/// neighbouring cells lie above `SUPPORT_FLOOR * max theta`.
pub fn production(params: &ProblemParams, theta: &RadialGridFunction) -> f64 {
    let grid = theta.grid();
    let dr = grid.dr();
    let v = theta.values();
    let floor = SUPPORT_FLOOR * theta.sup();
    let mut total = 0.0;
    for f in 1..grid.len() {
        let (a, b) = (v[f - 1], v[f]);
        if a <= floor || b <= floor {
            continue;
        }
        let g = (potential(params, b) - potential(params, a)) / dr + grid.faces()[f];
        total += grid.face_areas()[f] * dr * 0.5 * (a + b) * g * g;
    }
    total
}

/// `I(theta)` as the dissipation of the kernel-free scheme: `dH/dtau = -I`
/// holds exactly for the semi-discrete flow.
pub fn production_flux(params: &ProblemParams, theta: &RadialGridFunction) -> f64 {
    let grid = theta.grid();
    let dr = grid.dr();
    let v = theta.values();
    let mut total = 0.0;
    for f in 1..grid.len() {
        let (a, b) = (v[f - 1], v[f]);
        let area = grid.face_areas()[f];
        let rf = grid.faces()[f];
        if params.is_linear() {
            if a <= 0.0 || b <= 0.0 {
                continue;
            }
            let p = -rf * dr;
            let bern = |x: f64| if x.abs() < 1e-10 { 1.0 - 0.5 * x } else { x / x.exp_m1() };
            let flux = bern(p) * b - bern(-p) * a;
            total += area / dr * flux * ((b / a).ln() - p);
        } else {
            let u = -rf - (potential(params, b) - potential(params, a)) / dr;
            let up = if u > 0.0 { a } else { b };
            total += area * dr * up * u * u;
        }
    }
    total
}

/// Estimate of the quadrature error in `H`: the midpoint rule compared with
/// two-point Gauss-Legendre on the piecewise linear reconstruction.
pub fn entropy_quadrature_residual(params: &ProblemParams, theta: &RadialGridFunction) -> f64 {
    let grid = theta.grid();
    let gl = GaussLegendre::new(2);
    let d = grid.dim() as i32;
    let sphere = crate::quadrature::sphere_area(grid.dim());
    let refined: f64 = grid
        .faces()
        .windows(2)
        .map(|w| {
            gl.integrate(w[0], w[1], |r| {
                let th = theta.sample_at(r).max(0.0);
                sphere * r.powi(d - 1) * (density(params, th) + 0.5 * r * r * th)
            })
        })
        .sum();
    (refined - entropy(params, theta)).abs()
}

/// The discrete ground state of mass `mass(theta)` on the grid of `theta`.
pub fn ground_state_like(params: &ProblemParams, theta: &RadialGridFunction) -> Result<RadialGridFunction> {
    let mass = theta.mass();
    let p = params.with_mass(mass)?;
    BarenblattProfile::new(&p)?.discrete(theta.grid())
}

/// `H(theta | theta_M) = H(theta) - H(theta_M)` against a precomputed discrete
/// ground state of the same mass.
pub fn relative_entropy_to(params: &ProblemParams, theta: &RadialGridFunction, ground: &RadialGridFunction) -> f64 {
    entropy(params, theta) - entropy(params, ground)
}

/// `H(theta | theta_M)` with `theta_M` the ground state of mass `mass(theta)`.
pub fn relative_entropy(params: &ProblemParams, theta: &RadialGridFunction) -> Result<f64> {
    let ground = ground_state_like(params, theta)?;
    Ok(relative_entropy_to(params, theta, &ground))
}

/// Entropy functionals of one density.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EntropyReport {
    pub tau: f64,
    pub h: f64,
    /// Gradient form of the production.
    pub i: f64,
    /// Scheme (flux) form of the production.
    pub i_flux: f64,
    pub h_rel: f64,
    pub quadrature_residual: f64,
}

impl EntropyReport {
    pub fn new(params: &ProblemParams, tau: f64, theta: &RadialGridFunction, ground: &RadialGridFunction) -> Self {
        EntropyReport {
            tau,
            h: entropy(params, theta),
            i: production(params, theta),
            i_flux: production_flux(params, theta),
            h_rel: relative_entropy_to(params, theta, ground),
            quadrature_residual: entropy_quadrature_residual(params, theta),
        }
    }
}

/// Outcome of a numerical inequality check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InequalityCheck {
    /// Left-hand side, e.g. `H_rel`.
    pub lhs: f64,
    /// Right-hand side before the constant, e.g. `I`.
    pub rhs: f64,
    /// `lhs / rhs`, `None` when `rhs` is at the numerical floor.
    pub ratio: Option<f64>,
    /// Bound on the ratio the inequality asserts, if any.
    pub bound: Option<f64>,
}

impl InequalityCheck {
    pub fn inconclusive(&self) -> bool {
        self.ratio.is_none()
    }

    /// Whether the ratio is within `bound * (1 + tolerance)`. Inconclusive and
    /// unbounded checks count as satisfied.
    pub fn holds(&self, tolerance: f64) -> bool {
        match (self.ratio, self.bound) {
            (Some(r), Some(b)) => r <= b * (1.0 + tolerance),
            _ => true,
        }
    }
}

/// Generalized log-Sobolev inequality `H(theta | theta_M) <= I(theta) / 2`.
pub fn lsi_check(params: &ProblemParams, theta: &RadialGridFunction) -> Result<InequalityCheck> {
    let h_rel = relative_entropy(params, theta)?;
    let i = production(params, theta);
    let floor = 1e-12 * theta.mass() * (1.0 + theta.grid().radius().powi(2));
    Ok(InequalityCheck {
        lhs: h_rel,
        rhs: i,
        ratio: (i > floor).then(|| h_rel / i),
        bound: Some(0.5),
    })
}

/// Csiszar-Kullback inequality `||theta - theta_M||_1 <= C H(theta | theta_M)^{1/2}`.
/// The bound `C = sqrt(2M)` is attached for `m = 1` only.
pub fn ck_check(params: &ProblemParams, theta: &RadialGridFunction) -> Result<InequalityCheck> {
    let ground = ground_state_like(params, theta)?;
    let h_rel = relative_entropy_to(params, theta, &ground);
    let dist = theta.l1_distance(&ground);
    let floor = 1e-13 * theta.mass();
    let root = h_rel.max(0.0).sqrt();
    Ok(InequalityCheck {
        lhs: dist,
        rhs: root,
        ratio: (h_rel > floor).then(|| dist / root),
        bound: params.is_linear().then(|| (2.0 * theta.mass()).sqrt()),
    })
}

/// Exponents of `||f||_q <= C ||f||_p^{alpha2} ||grad f^k||_r^{alpha1}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GnsExponents {
    pub p: f64,
    pub q: f64,
    pub r: f64,
    pub k: f64,
    pub alpha1: f64,
    pub alpha2: f64,
}

impl GnsExponents {
    /// Solves the amplitude balance `alpha1 k + alpha2 = 1` and the scaling
    /// balance `d/q = alpha2 d/p + alpha1 (d/r - 1)` for the two exponents.
    pub fn balanced(d: usize, p: f64, q: f64, r: f64, k: f64) -> Result<Self> {
        let d = d as f64;
        let denom = d / r - 1.0 - k * d / p;
        if denom.abs() < 1e-14 {
            return Err(domain(format!("no balanced exponents for p = {p}, q = {q}, r = {r}, k = {k}")));
        }
        let alpha1 = (d / q - d / p) / denom;
        let e = GnsExponents { p, q, r, k, alpha1, alpha2: 1.0 - alpha1 * k };
        if !(e.alpha1 > 0.0 && e.alpha1 <= 1.0 && e.alpha2 >= 0.0) {
            return Err(domain(format!(
                "balanced exponents alpha1 = {}, alpha2 = {} fall outside (0, 1] x [0, 1)",
                e.alpha1, e.alpha2
            )));
        }
        Ok(e)
    }

    /// The instance controlling `||theta||_{p+1}` by `||theta||_qbar` and the
    /// production: `q = p + 1`, `k = (p + m - 1)/2`, `r = 2`.
    pub fn for_lp_growth(params: &ProblemParams, p: f64) -> Result<Self> {
        GnsExponents::balanced(params.d, params.qbar, p + 1.0, 2.0, (p + params.m - 1.0) / 2.0)
    }

    /// Checks both balance relations to `1e-10`.
    pub fn validate(&self, d: usize) -> Result<()> {
        let df = d as f64;
        let amplitude = self.alpha1 * self.k + self.alpha2;
        if (amplitude - 1.0).abs() > 1e-10 {
            return Err(domain(format!(
                "alpha1 k + alpha2 = {amplitude} violates alpha1 k + alpha2 = 1"
            )));
        }
        let scaling = self.alpha2 * df / self.p + self.alpha1 * (df / self.r - 1.0);
        if (scaling - df / self.q).abs() > 1e-10 {
            return Err(domain(format!(
                "alpha2 d/p + alpha1 (d/r - 1) = {scaling} violates the scaling balance d/q = {}",
                df / self.q
            )));
        }
        if self.p < 1.0 - 1e-12 || self.q < 1.0 - 1e-12 || self.r < 1.0 - 1e-12 || self.k <= 0.0 {
            return Err(domain(format!("indices p = {}, q = {}, r = {} must be >= 1 and k > 0", self.p, self.q, self.r)));
        }
        Ok(())
    }
}

/// `||grad f^k||_r` from face differences over interior faces.
fn gradient_norm(theta: &RadialGridFunction, k: f64, r: f64) -> f64 {
    let grid = theta.grid();
    let dr = grid.dr();
    let v = theta.values();
    let mut total = 0.0;
    for f in 1..grid.len() {
        let g = (v[f].max(0.0).powf(k) - v[f - 1].max(0.0).powf(k)) / dr;
        total += grid.face_areas()[f] * dr * g.abs().powf(r);
    }
    total.powf(1.0 / r)
}

/// Ratio `||f||_q / (||f||_p^{alpha2} ||grad f^k||_r^{alpha1})`.
pub fn gns_check(theta: &RadialGridFunction, exponents: &GnsExponents) -> Result<f64> {
    exponents.validate(theta.grid().dim())?;
    let e = exponents;
    let grad = gradient_norm(theta, e.k, e.r);
    let low = theta.lp_norm(e.p);
    if !(grad > 0.0 && low > 0.0) {
        return Err(domain("GNS ratio undefined for a constant or zero density"));
    }
    Ok(theta.lp_norm(e.q) / (low.powf(e.alpha2) * grad.powf(e.alpha1)))
}

/// Mass-preserving dilation `lambda^{-d} theta_M(r / lambda)` of the ground state,
/// sampled at cell centers and renormalized to the discrete mass `M`.
pub fn dilated_ground_state(profile: &BarenblattProfile, grid: &RadialGrid, lambda: f64) -> Result<RadialGridFunction> {
    let d = grid.dim() as i32;
    let mut f = RadialGridFunction::from_fn(grid.clone(), |r| profile.value(r / lambda) / lambda.powi(d));
    f.normalize_to(profile.params().mass)?;
    Ok(f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn setup(d: usize, m: f64, mass: f64, radius: f64, n: usize) -> (ProblemParams, BarenblattProfile, RadialGrid) {
        let p = ProblemParams::new(d, m, mass).unwrap();
        let b = BarenblattProfile::new(&p).unwrap();
        (p, b, RadialGrid::new(d, radius, n).unwrap())
    }

    #[test]
    fn ground_state_has_zero_relative_entropy_and_small_production() {
        for (d, m) in [(2, 1.0), (3, 1.0), (3, 4.0 / 3.0)] {
            let (p, b, _) = setup(d, m, 1.0, 1.0, 2);
            let radius = if m == 1.0 { 8.0 } else { 3.0 * b.support_radius() };
            let grid = RadialGrid::new(d, radius, 400).unwrap();
            let g = b.discrete(&grid).unwrap();
            assert!(relative_entropy(&p, &g).unwrap().abs() < 1e-12);
            assert!(production(&p, &g) <= 1e-4 * radius * radius, "{d} {m}: {}", production(&p, &g));
            assert!(production_flux(&p, &g) < 1e-20);
        }
    }

    #[test]
    fn linear_relative_entropy_is_kullback_leibler() {
        let (p, _, grid) = setup(3, 1.0, 1.0, 8.0, 300);
        for j in 0..20 {
            let w = 0.3 + 0.05 * j as f64;
            let mut f = RadialGridFunction::from_fn(grid.clone(), |r| (-(r - 0.1 * j as f64).powi(2) / (2.0 * w * w)).exp());
            f.normalize_to(1.0).unwrap();
            let g = ground_state_like(&p, &f).unwrap();
            let kl = f.integrate(|r, th| if th > 0.0 { th * (th / g.sample_at(r)).ln() } else { 0.0 });
            assert_relative_eq!(relative_entropy(&p, &f).unwrap(), kl, epsilon = 1e-6);
        }
    }

    #[test]
    fn dilations_are_strictly_positive() {
        for m in [1.0, 4.0 / 3.0] {
            let (p, b, grid) = setup(3, m, 1.0, 8.0, 400);
            let f = dilated_ground_state(&b, &grid, 1.2).unwrap();
            assert!(production(&p, &f) > 1e-3);
            let f = dilated_ground_state(&b, &grid, 1.1).unwrap();
            assert!(relative_entropy(&p, &f).unwrap() > 1e-4);
        }
    }

    // Closed forms for dilations of the Gaussian, s = lambda^2:
    // H_rel = d/2 (s - 1 - ln s), I = d (s - 1)^2 / s.
    fn gaussian_dilation_oracle(d: f64, lambda: f64) -> (f64, f64) {
        let s = lambda * lambda;
        (0.5 * d * (s - 1.0 - s.ln()), d * (s - 1.0).powi(2) / s)
    }

    #[test]
    fn gaussian_dilations_match_closed_form() {
        let (p, b, grid) = setup(3, 1.0, 1.0, 12.0, 1200);
        for lambda in [0.8, 1.05, 1.3] {
            let f = dilated_ground_state(&b, &grid, lambda).unwrap();
            let (h, i) = gaussian_dilation_oracle(3.0, lambda);
            assert_relative_eq!(relative_entropy(&p, &f).unwrap(), h, max_relative = 2e-3);
            assert_relative_eq!(production(&p, &f), i, max_relative = 2e-3);
            assert_relative_eq!(production_flux(&p, &f), i, max_relative = 2e-3);
        }
        // The dilation ratio tends to 1/4 as lambda -> 1 and to 1/2 as lambda -> infinity.
        let r = |l: f64| {
            let (h, i) = gaussian_dilation_oracle(3.0, l);
            h / i
        };
        assert!((r(1.0 + 1e-4) - 0.25).abs() < 1e-4);
        assert!((r(1e3) - 0.5).abs() < 1e-5);
        let f = dilated_ground_state(&b, &grid, 1.02).unwrap();
        let c = lsi_check(&p, &f).unwrap();
        assert!((c.ratio.unwrap() - r(1.02)).abs() < 5e-3);
    }

    #[test]
    fn flux_and_gradient_production_agree_on_resolved_profiles() {
        for m in [1.0, 4.0 / 3.0] {
            // The flux form weights by the upwind value, so it converges at first order.
            let (p, b, grid) = setup(3, m, 1.0, 8.0, 3200);
            let f = dilated_ground_state(&b, &grid, 1.3).unwrap();
            assert_relative_eq!(production(&p, &f), production_flux(&p, &f), max_relative = 1e-2);
        }
    }

    #[test]
    fn ck_bound_for_linear_diffusion() {
        let (p, b, grid) = setup(2, 1.0, 2.0, 8.0, 400);
        for lambda in [0.5, 0.9, 1.1, 2.0] {
            let f = dilated_ground_state(&b, &grid, lambda).unwrap();
            let c = ck_check(&p, &f).unwrap();
            assert!(c.holds(0.0), "{c:?}");
        }
        let g = b.discrete(&grid).unwrap();
        let c = ck_check(&p, &g).unwrap();
        assert!(c.inconclusive());
        assert!(c.lhs < 1e-14);
    }

    #[test]
    fn gns_instance_exponents() {
        let p = ProblemParams::new(3, 4.0 / 3.0, 1.0).unwrap();
        let e = GnsExponents::for_lp_growth(&p, 2.0).unwrap();
        assert_relative_eq!(e.alpha1, 2.0 / 3.0, epsilon = 1e-14);
        assert_relative_eq!(e.alpha2, 2.0 / 9.0, epsilon = 1e-14);
        assert_relative_eq!(e.k, 7.0 / 6.0, epsilon = 1e-14);
        let bad = GnsExponents { alpha2: 0.3, ..e };
        assert!(bad.validate(3).is_err());
    }

    #[test]
    fn gns_ratio_is_dilation_invariant() {
        let (p, b, _) = setup(3, 4.0 / 3.0, 1.0, 1.0, 2);
        let e = GnsExponents::for_lp_growth(&p, 2.0).unwrap();
        let ratios: Vec<f64> = [0.5, 1.0, 2.0]
            .iter()
            .map(|&l| {
                let grid = RadialGrid::new(3, 1.2 * l * b.support_radius(), 1000).unwrap();
                gns_check(&dilated_ground_state(&b, &grid, l).unwrap(), &e).unwrap()
            })
            .collect();
        for r in &ratios {
            assert_relative_eq!(*r, ratios[1], max_relative = 1e-2);
        }
        let ball = RadialGridFunction::from_fn(RadialGrid::new(3, 2.0, 200).unwrap(), |r| if r < 1.0 { 1.0 } else { 0.0 });
        assert!(gns_check(&ball, &e).unwrap().is_finite());
    }

    #[test]
    fn quadrature_residual_is_small_for_smooth_profiles() {
        let (p, b, grid) = setup(3, 1.0, 1.0, 8.0, 400);
        let g = b.discrete(&grid).unwrap();
        let res = entropy_quadrature_residual(&p, &g);
        assert!(res < 1e-3, "{res}");
    }
}
