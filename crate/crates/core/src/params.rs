//! Problem parameters, scaling exponents and the change of variables between
//! the physical frame `(t, x, u)` and the self-similar frame `(tau, eta, theta)`.
//!
//! The frames are related by
//!
//! ```text
//! t = beta e^{tau / beta} - beta,    x = e^tau eta,    u(t, x) = e^{-d tau} theta(tau, eta)
//! ```
//!
//! with `beta = 1 / (d (m - 1) + 2)`.

use alloc::format;

use crate::error::{domain, Result};
use crate::grid::RadialGridFunction;
use crate::prelude::*;

/// Absolute tolerance used when comparing `m` against the critical exponent `2 - 2/d`.
pub const CRITICAL_TOLERANCE: f64 = 1e-12;

/// Whether diffusion balances aggregation at high concentration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    /// `m = 2 - 2/d`.
    Critical,
    /// `1 <= m < 2 - 2/d`.
    Supercritical,
}

impl Regime {
    pub fn as_str(self) -> &'static str {
        match self {
            Regime::Critical => "critical",
            Regime::Supercritical => "supercritical",
        }
    }
}

/// Dimension, diffusion exponent and mass together with the derived exponents.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProblemParams {
    /// Space dimension, at least 2.
    pub d: usize,
    /// Diffusion exponent in `[1, 2 - 2/d]`.
    pub m: f64,
    /// Total mass.
    pub mass: f64,
    /// Scaling exponent `1 / (d (m - 1) + 2)`.
    pub beta: f64,
    /// `d * beta`.
    pub alpha: f64,
    /// Critical norm index `(2 - m) d / 2`.
    pub qbar: f64,
    pub regime: Regime,
}

/// The critical diffusion exponent `2 - 2/d`.
pub fn critical_exponent(d: usize) -> f64 {
    2.0 - 2.0 / d as f64
}

impl ProblemParams {
    /// Validates `(d, m, M)` and fills in the derived exponents.
    ///
    /// A value of `m` within [`CRITICAL_TOLERANCE`] of `2 - 2/d` is snapped to the
    /// critical exponent so that `alpha = 1` holds exactly in that case.
    pub fn new(d: usize, m: f64, mass: f64) -> Result<Self> {
        if d < 2 {
            return Err(domain(format!("dimension d = {d} violates d >= 2")));
        }
        if !m.is_finite() || m < 1.0 {
            return Err(domain(format!("diffusion exponent m = {m} violates m >= 1")));
        }
        let m_crit = critical_exponent(d);
        let (m, regime) = if (m - m_crit).abs() <= CRITICAL_TOLERANCE {
            (m_crit, Regime::Critical)
        } else if m > m_crit {
            return Err(domain(format!(
                "diffusion exponent m = {m} violates m <= 2 - 2/d = {m_crit} for d = {d}"
            )));
        } else {
            (m, Regime::Supercritical)
        };
        if !mass.is_finite() || mass <= 0.0 {
            return Err(domain(format!("mass M = {mass} violates M > 0")));
        }
        let df = d as f64;
        let beta = 1.0 / (df * (m - 1.0) + 2.0);
        let alpha = if regime == Regime::Critical { 1.0 } else { df * beta };
        Ok(ProblemParams {
            d,
            m,
            mass,
            beta,
            alpha,
            qbar: if regime == Regime::Critical { 1.0 } else { (2.0 - m) * df / 2.0 },
            regime,
        })
    }

    /// Same dimension and exponent, different mass.
    pub fn with_mass(&self, mass: f64) -> Result<Self> {
        ProblemParams::new(self.d, self.m, mass)
    }

    pub fn is_linear(&self) -> bool {
        self.m == 1.0
    }

    /// Exponent `(1 - alpha - beta) / beta` of the prefactor of the nonlocal term
    /// in the rescaled equation.
    pub fn nonlocal_rate(&self) -> f64 {
        (1.0 - self.alpha - self.beta) / self.beta
    }

    /// `e^{(1 - alpha - beta) tau / beta}`.
    pub fn nonlocal_prefactor(&self, tau: f64) -> f64 {
        (self.nonlocal_rate() * tau).exp()
    }

    /// Rescaled time of physical time `t >= 0`.
    pub fn tau_of_t(&self, t: f64) -> Result<f64> {
        if !(t >= 0.0) {
            return Err(domain(format!("physical time t = {t} must be >= 0")));
        }
        Ok(self.beta * (t / self.beta).ln_1p())
    }

    /// Physical time of rescaled time `tau >= 0`.
    pub fn t_of_tau(&self, tau: f64) -> Result<f64> {
        if !(tau >= 0.0) {
            return Err(domain(format!("rescaled time tau = {tau} must be >= 0")));
        }
        Ok(self.beta * (tau / self.beta).exp_m1())
    }

    /// Spatial dilation factor `e^tau = (1 + t/beta)^beta`.
    pub fn length_scale(&self, tau: f64) -> f64 {
        tau.exp()
    }
}

/// A time instant expressed in both frames.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FramePoint {
    pub t: f64,
    pub tau: f64,
}

impl FramePoint {
    pub fn from_t(params: &ProblemParams, t: f64) -> Result<Self> {
        Ok(FramePoint { t, tau: params.tau_of_t(t)? })
    }

    pub fn from_tau(params: &ProblemParams, tau: f64) -> Result<Self> {
        Ok(FramePoint { t: params.t_of_tau(tau)?, tau })
    }
}

/// Maps a physical density at time `t` to the self-similar frame.
///
/// The returned profile lives on the grid `eta = x e^{-tau}` (radius shrunk by
/// `e^tau`, same cell count) with values `e^{d tau} u`, so the conversion is
/// exact and conserves mass to rounding. Use [`RadialGridFunction::resample`] to
/// bring it onto another grid.
pub fn to_selfsim(
    params: &ProblemParams,
    t: f64,
    u: &RadialGridFunction,
) -> Result<(f64, RadialGridFunction)> {
    check_dims(params, u)?;
    if let Some(bad) = u.values().iter().find(|v| !(**v >= 0.0)) {
        return Err(domain(format!("density must be nonnegative, found {bad}")));
    }
    let tau = params.tau_of_t(t)?;
    Ok((tau, rescale(params, tau, u, -1.0)))
}

/// Inverse of [`to_selfsim`]: returns `(t, u)` on the grid `x = e^tau eta`.
pub fn from_selfsim(
    params: &ProblemParams,
    tau: f64,
    theta: &RadialGridFunction,
) -> Result<(f64, RadialGridFunction)> {
    check_dims(params, theta)?;
    let t = params.t_of_tau(tau)?;
    Ok((t, rescale(params, tau, theta, 1.0)))
}

fn check_dims(params: &ProblemParams, f: &RadialGridFunction) -> Result<()> {
    if f.grid().dim() != params.d {
        return Err(domain(format!(
            "grid dimension {} does not match d = {}",
            f.grid().dim(),
            params.d
        )));
    }
    Ok(())
}

/// `direction = -1`: physical to rescaled. `direction = +1`: rescaled to physical.
fn rescale(params: &ProblemParams, tau: f64, f: &RadialGridFunction, direction: f64) -> RadialGridFunction {
    let stretch = (direction * tau).exp();
    let amplitude = (-direction * params.d as f64 * tau).exp();
    let grid = f.grid().scaled(stretch);
    let values = f.values().iter().map(|v| v * amplitude).collect::<Vec<_>>();
    RadialGridFunction::new(grid, values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::RadialGrid;
    use approx::assert_relative_eq;

    #[test]
    fn derive_params_examples() {
        let p = ProblemParams::new(2, 1.0, 1.0).unwrap();
        assert_eq!((p.beta, p.alpha, p.qbar, p.regime), (0.5, 1.0, 1.0, Regime::Critical));

        let p = ProblemParams::new(3, 4.0 / 3.0, 1.0).unwrap();
        assert_relative_eq!(p.beta, 1.0 / 3.0, epsilon = 1e-15);
        assert_eq!(p.alpha, 1.0);
        assert_relative_eq!(p.qbar, 1.0, epsilon = 1e-15);
        assert_eq!(p.regime, Regime::Critical);

        let p = ProblemParams::new(3, 1.0, 1.0).unwrap();
        assert_eq!((p.beta, p.alpha, p.qbar, p.regime), (0.5, 1.5, 1.5, Regime::Supercritical));
    }

    #[test]
    fn rejects_out_of_range() {
        let err = ProblemParams::new(3, 1.9, 1.0).unwrap_err();
        assert!(format!("{err}").contains("2 - 2/d"));
        assert!(ProblemParams::new(1, 1.0, 1.0).is_err());
        assert!(ProblemParams::new(2, 1.2, 1.0).is_err());
        assert!(ProblemParams::new(3, 0.9, 1.0).is_err());
        assert!(ProblemParams::new(3, 1.0, 0.0).is_err());
        assert!(ProblemParams::new(3, 1.0, f64::NAN).is_err());
    }

    #[test]
    fn tau_of_t_examples() {
        let p = ProblemParams::new(2, 1.0, 1.0).unwrap();
        assert_eq!(p.tau_of_t(0.0).unwrap(), 0.0);
        let e2 = core::f64::consts::E * core::f64::consts::E;
        assert_relative_eq!(p.tau_of_t(e2 / 2.0 - 0.5).unwrap(), 1.0, epsilon = 1e-14);
        let t = 7.3;
        let back = p.t_of_tau(p.tau_of_t(t).unwrap()).unwrap();
        assert_relative_eq!(back, t, max_relative = 1e-12);
        assert!(p.tau_of_t(-1.0).is_err());
        assert!(p.t_of_tau(-1e-3).is_err());
    }

    #[test]
    fn frame_conversion_identities() {
        let p = ProblemParams::new(3, 1.0, 1.0).unwrap();
        let grid = RadialGrid::new(3, 4.0, 64).unwrap();
        let u = RadialGridFunction::from_fn(grid, |r| (-r * r).exp());

        let (tau, theta) = to_selfsim(&p, 0.0, &u).unwrap();
        assert_eq!(tau, 0.0);
        assert_eq!(theta.values(), u.values());
        assert_eq!(theta.grid().radius(), u.grid().radius());

        let (tau, theta) = to_selfsim(&p, 2.5, &u).unwrap();
        assert_relative_eq!(theta.mass(), u.mass(), max_relative = 1e-12);
        let (t, back) = from_selfsim(&p, tau, &theta).unwrap();
        assert_relative_eq!(t, 2.5, max_relative = 1e-12);
        for (a, b) in back.values().iter().zip(u.values()) {
            assert_relative_eq!(a, b, max_relative = 1e-12);
        }
        assert_relative_eq!(
            back.sup(),
            (-(3.0) * tau).exp() * theta.sup(),
            max_relative = 1e-14
        );
    }
}
