//! Admissible interaction kernels `K(x) = k(|x|)`.
//!
//! A kernel is admissible when `k` is non-increasing (KN), `k''` and `k'/r` are
//! monotone near the origin (MN) and `|D^3 K(x)| <~ |x|^{-d-1}` (BD). The tail
//! exponent `gamma` describes `|grad K(x)| = O(|x|^{-gamma})` at infinity and lies
//! in `[d - 1, d]`; kernels with `grad K` in `L^1` are recorded with `gamma = d`.
//!
//! The velocity entering the rescaled equation is the convolution
//! `e^{d tau} grad K(e^tau .) * theta`, see [`RadialVelocity`].

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::sync::Arc;
use core::f64::consts::PI;

use crate::error::{domain, Error, Result};
use crate::grid::RadialGrid;
use crate::params::{ProblemParams, Regime};
use crate::prelude::*;
use crate::quadrature::{self, sphere_area, GaussLegendre};

/// Fraction of `scale` used as the smooth core radius of power-tail kernels.
pub const POWER_TAIL_CORE_FRACTION: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum KernelKind {
    /// `k(r) = S (1 - (r/L)^2)_+^4`.
    SmoothCompact,
    /// `k'(r) = -S r^{-gamma}` beyond `r_c = L / 10`, with a smooth odd core.
    PowerTail,
    /// Fundamental solution of `-Lap`, `k(r) = S / ((d-2) |S^{d-1}| r^{d-2})`, `d >= 3`.
    Newtonian,
    /// `k(r) = S exp(-r^2 / (2 L^2))`.
    Gaussian,
}

impl KernelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            KernelKind::SmoothCompact => "smooth_compact",
            KernelKind::PowerTail => "power_tail",
            KernelKind::Newtonian => "newtonian",
            KernelKind::Gaussian => "gaussian",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "smooth_compact" => KernelKind::SmoothCompact,
            "power_tail" => KernelKind::PowerTail,
            "newtonian" => KernelKind::Newtonian,
            "gaussian" => KernelKind::Gaussian,
            _ => return None,
        })
    }
}

/// Kernel selection as it appears in configuration files.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelSpec {
    pub kind: KernelKind,
    /// Tail exponent; only read for [`KernelKind::PowerTail`].
    pub gamma: f64,
    /// Characteristic length `L`.
    pub scale: f64,
    /// Amplitude `S > 0`.
    pub strength: f64,
}

impl KernelSpec {
    pub fn gaussian(scale: f64, strength: f64) -> Self {
        KernelSpec { kind: KernelKind::Gaussian, gamma: f64::NAN, scale, strength }
    }

    pub fn smooth_compact(scale: f64, strength: f64) -> Self {
        KernelSpec { kind: KernelKind::SmoothCompact, gamma: f64::NAN, scale, strength }
    }

    pub fn power_tail(gamma: f64, scale: f64, strength: f64) -> Self {
        KernelSpec { kind: KernelKind::PowerTail, gamma, scale, strength }
    }

    pub fn newtonian(strength: f64) -> Self {
        KernelSpec { kind: KernelKind::Newtonian, gamma: f64::NAN, scale: 1.0, strength }
    }

    /// Tail exponent in dimension `d`.
    pub fn tail_exponent(&self, d: usize) -> f64 {
        match self.kind {
            KernelKind::SmoothCompact | KernelKind::Gaussian => d as f64,
            KernelKind::Newtonian => d as f64 - 1.0,
            KernelKind::PowerTail => self.gamma,
        }
    }

    /// Whether `grad K` is integrable.
    pub fn gradient_integrable(&self) -> bool {
        matches!(self.kind, KernelKind::SmoothCompact | KernelKind::Gaussian)
    }

    /// Checks the parameters for dimension `d` and returns the evaluable kernel.
    pub fn bind(&self, d: usize) -> Result<Kernel> {
        if !(self.strength > 0.0 && self.strength.is_finite()) {
            return Err(domain(format!("kernel.strength = {} must be positive", self.strength)));
        }
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(domain(format!("kernel.scale = {} must be positive", self.scale)));
        }
        let df = d as f64;
        match self.kind {
            KernelKind::Newtonian if d < 3 => {
                return Err(domain(format!("newtonian kernel requires d >= 3, got d = {d}")));
            }
            KernelKind::PowerTail if !(self.gamma >= df - 1.0 && self.gamma <= df) => {
                return Err(domain(format!(
                    "kernel.gamma = {} must lie in [d - 1, d] = [{}, {}]",
                    self.gamma,
                    df - 1.0,
                    df
                )));
            }
            _ => {}
        }
        Ok(Kernel { spec: *self, d, sphere: sphere_area(d) })
    }

    /// Warnings for parameter combinations outside the hypotheses of the
    /// convergence theory. These do not prevent a run.
    pub fn hypothesis_warnings(&self, params: &ProblemParams) -> Vec<String> {
        let mut out = Vec::new();
        let gamma = self.tail_exponent(params.d);
        if gamma == params.d as f64 - 1.0 && params.regime == Regime::Critical {
            out.push(format!(
                "tail exponent gamma = d - 1 = {gamma} with critical m = 2 - 2/d: convergence to the \
                 Barenblatt profile is only established for m < 2 - 2/d when gamma = d - 1"
            ));
        }
        out
    }
}

/// Radial profile of a kernel with up to three derivatives.
pub trait RadialProfile {
    fn k(&self, r: f64) -> f64;
    fn dk(&self, r: f64) -> f64;
    fn d2k(&self, r: f64) -> f64;
    fn d3k(&self, r: f64) -> f64;
}

/// A [`KernelSpec`] bound to a dimension.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Kernel {
    spec: KernelSpec,
    d: usize,
    sphere: f64,
}

impl Kernel {
    pub fn spec(&self) -> &KernelSpec {
        &self.spec
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn gamma(&self) -> f64 {
        self.spec.tail_exponent(self.d)
    }

    /// Radius of the smooth core of a power-tail kernel.
    pub fn core_radius(&self) -> f64 {
        POWER_TAIL_CORE_FRACTION * self.spec.scale
    }

    /// Radius beyond which `k'` vanishes (or is below `1e-17` of its peak).
    pub fn support(&self) -> Option<f64> {
        match self.spec.kind {
            KernelKind::SmoothCompact => Some(self.spec.scale),
            // r exp(-r^2/2) < 1e-17 for r > 9.
            KernelKind::Gaussian => Some(9.0 * self.spec.scale),
            _ => None,
        }
    }

    /// Signed radial derivative `k'(r)` for `r > 0`.
    pub fn grad_k(&self, r: f64) -> Result<f64> {
        if !(r > 0.0) {
            return Err(domain(format!("kernel derivative needs r > 0, got {r}")));
        }
        Ok(self.dk(r))
    }

    fn power_core(&self) -> (f64, f64, f64) {
        let g = self.spec.gamma;
        (self.core_radius(), 0.5 * (g + 3.0), -0.5 * (g + 1.0))
    }

    /// An antiderivative `Q` of `r k(r)`, continuous on `r > 0`.
    pub fn moment_potential(&self, r: f64) -> f64 {
        let s = self.spec.strength;
        let l = self.spec.scale;
        match self.spec.kind {
            KernelKind::Gaussian => -s * l * l * (-r * r / (2.0 * l * l)).exp(),
            KernelKind::SmoothCompact => {
                let x = r / l;
                if x >= 1.0 {
                    0.0
                } else {
                    -s * l * l / 10.0 * (1.0 - x * x).powi(5)
                }
            }
            KernelKind::Newtonian => {
                let d = self.d as f64;
                let c = s / ((d - 2.0) * self.sphere);
                if self.d == 4 {
                    c * r.ln()
                } else {
                    c * r.powf(4.0 - d) / (4.0 - d)
                }
            }
            KernelKind::PowerTail => {
                let (rc, a, b) = self.power_core();
                if r >= rc {
                    return s * self.power_moment(r);
                }
                let g = self.spec.gamma;
                let core = |x: f64| {
                    // int rho k(rho) over the core in units of rc^2.
                    let kc = self.power_potential(rc);
                    let amp = rc.powf(1.0 - g);
                    kc * x * x / 2.0
                        + amp * (0.5 * a * (x * x / 2.0 - x.powi(4) / 4.0) + 0.25 * b * (x * x / 2.0 - x.powi(6) / 6.0))
                };
                s * (rc * rc * (core(r / rc) - core(1.0)) + self.power_moment(rc))
            }
        }
    }

    /// Antiderivative of `r * power_potential(r)`.
    fn power_moment(&self, r: f64) -> f64 {
        let g = self.spec.gamma;
        if (g - 1.0).abs() < 1e-14 {
            -(r * r * r.ln() / 2.0 - r * r / 4.0)
        } else if (g - 3.0).abs() < 1e-14 {
            r.ln() / 2.0
        } else {
            r.powf(3.0 - g) / ((g - 1.0) * (3.0 - g))
        }
    }

    /// Antiderivative of `r^{-gamma}` that vanishes at infinity when `gamma > 1`.
    fn power_potential(&self, r: f64) -> f64 {
        let g = self.spec.gamma;
        if (g - 1.0).abs() < 1e-14 {
            -r.ln()
        } else {
            r.powf(1.0 - g) / (g - 1.0)
        }
    }
}

impl RadialProfile for Kernel {
    fn k(&self, r: f64) -> f64 {
        let s = self.spec.strength;
        let l = self.spec.scale;
        match self.spec.kind {
            KernelKind::Gaussian => s * (-r * r / (2.0 * l * l)).exp(),
            KernelKind::SmoothCompact => {
                let x = r / l;
                if x >= 1.0 {
                    0.0
                } else {
                    s * (1.0 - x * x).powi(4)
                }
            }
            KernelKind::Newtonian => {
                let d = self.d as f64;
                s / ((d - 2.0) * self.sphere * r.powf(d - 2.0))
            }
            KernelKind::PowerTail => {
                let (rc, a, b) = self.power_core();
                if r >= rc {
                    s * self.power_potential(r)
                } else {
                    let x = r / rc;
                    let tail = self.power_potential(rc);
                    let core = rc.powf(1.0 - self.spec.gamma)
                        * (0.5 * a * (1.0 - x * x) + 0.25 * b * (1.0 - x.powi(4)));
                    s * (tail + core)
                }
            }
        }
    }

    fn dk(&self, r: f64) -> f64 {
        let s = self.spec.strength;
        let l = self.spec.scale;
        match self.spec.kind {
            KernelKind::Gaussian => -s * r / (l * l) * (-r * r / (2.0 * l * l)).exp(),
            KernelKind::SmoothCompact => {
                let x = r / l;
                if x >= 1.0 {
                    0.0
                } else {
                    -8.0 * s * x * (1.0 - x * x).powi(3) / l
                }
            }
            KernelKind::Newtonian => -s / (self.sphere * r.powi(self.d as i32 - 1)),
            KernelKind::PowerTail => {
                let (rc, a, b) = self.power_core();
                if r >= rc {
                    -s * r.powf(-self.spec.gamma)
                } else {
                    let x = r / rc;
                    -s * rc.powf(-self.spec.gamma) * x * (a + b * x * x)
                }
            }
        }
    }

    fn d2k(&self, r: f64) -> f64 {
        let s = self.spec.strength;
        let l = self.spec.scale;
        match self.spec.kind {
            KernelKind::Gaussian => {
                let l2 = l * l;
                s * (r * r / (l2 * l2) - 1.0 / l2) * (-r * r / (2.0 * l2)).exp()
            }
            KernelKind::SmoothCompact => {
                let x = r / l;
                if x >= 1.0 {
                    0.0
                } else {
                    -8.0 * s / (l * l) * (1.0 - x * x).powi(2) * (1.0 - 7.0 * x * x)
                }
            }
            KernelKind::Newtonian => {
                let d = self.d as f64;
                s * (d - 1.0) / (self.sphere * r.powi(self.d as i32))
            }
            KernelKind::PowerTail => {
                let (rc, a, b) = self.power_core();
                let g = self.spec.gamma;
                if r >= rc {
                    s * g * r.powf(-g - 1.0)
                } else {
                    let x = r / rc;
                    -s * rc.powf(-g - 1.0) * (a + 3.0 * b * x * x)
                }
            }
        }
    }

    fn d3k(&self, r: f64) -> f64 {
        let s = self.spec.strength;
        let l = self.spec.scale;
        match self.spec.kind {
            KernelKind::Gaussian => {
                let l2 = l * l;
                s * (3.0 * r / (l2 * l2) - r.powi(3) / (l2 * l2 * l2)) * (-r * r / (2.0 * l2)).exp()
            }
            KernelKind::SmoothCompact => {
                let x = r / l;
                if x >= 1.0 {
                    0.0
                } else {
                    48.0 * s * x * (1.0 - x * x) * (3.0 - 7.0 * x * x) / l.powi(3)
                }
            }
            KernelKind::Newtonian => {
                let d = self.d as f64;
                -s * (d - 1.0) * d / (self.sphere * r.powi(self.d as i32 + 1))
            }
            KernelKind::PowerTail => {
                let (rc, _, b) = self.power_core();
                let g = self.spec.gamma;
                if r >= rc {
                    -s * g * (g + 1.0) * r.powf(-g - 2.0)
                } else {
                    -6.0 * s * b * (r / rc) * rc.powf(-g - 2.0)
                }
            }
        }
    }
}

/// Outcome of one admissibility condition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConditionCheck {
    pub passed: bool,
    /// Size of the worst sampled violation; zero when the condition holds.
    pub max_violation: f64,
}

/// Sampled check of the admissibility conditions (KN), (MN) and (BD).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdmissibilityReport {
    pub kn: ConditionCheck,
    pub mn: ConditionCheck,
    pub bd: ConditionCheck,
    /// Right end of the interval `(0, delta)` on which (MN) was sampled.
    pub delta: f64,
}

impl AdmissibilityReport {
    pub fn admissible(&self) -> bool {
        self.kn.passed && self.mn.passed && self.bd.passed
    }
}

const ADMISSIBILITY_SAMPLES: usize = 4000;

fn log_grid(lo: f64, hi: f64, n: usize) -> impl Iterator<Item = f64> {
    let (a, b) = (lo.ln(), hi.ln());
    (0..n).map(move |i| (a + (b - a) * i as f64 / (n - 1) as f64).exp())
}

/// Largest step against the dominant direction of a sampled sequence.
fn monotonicity_violation(values: &[f64]) -> f64 {
    let (mut up, mut down) = (0.0f64, 0.0f64);
    for w in values.windows(2) {
        let step = w[1] - w[0];
        if step > 0.0 {
            up = up.max(step);
        } else {
            down = down.max(-step);
        }
    }
    up.min(down)
}

/// Samples the admissibility conditions for a profile in dimension `d`.
///
/// `scale` sets the sampled range `[1e-4 scale, 1e4 scale]` and the (MN)
/// interval `(0, scale / 10)`.
pub fn admissibility_report(profile: &impl RadialProfile, d: usize, scale: f64) -> AdmissibilityReport {
    let (lo, hi) = (1e-4 * scale, 1e4 * scale);
    let rs: Vec<f64> = log_grid(lo, hi, ADMISSIBILITY_SAMPLES).collect();

    let ks: Vec<f64> = rs.iter().map(|&r| profile.k(r)).collect();
    let k_scale = ks.iter().fold(0.0f64, |a, b| a.max(b.abs())).max(f64::MIN_POSITIVE);
    let kn_violation = ks
        .windows(2)
        .map(|w| (w[1] - w[0]).max(0.0))
        .fold(0.0, f64::max)
        .max(rs.iter().map(|&r| profile.dk(r).max(0.0)).fold(0.0, f64::max));
    let kn = ConditionCheck { passed: kn_violation <= 1e-12 * k_scale, max_violation: kn_violation };

    let delta = scale / 10.0;
    let near: Vec<f64> = log_grid(delta * 1e-6, delta, ADMISSIBILITY_SAMPLES / 2).collect();
    let second: Vec<f64> = near.iter().map(|&r| profile.d2k(r)).collect();
    let ratio: Vec<f64> = near.iter().map(|&r| profile.dk(r) / r).collect();
    let span = |v: &[f64]| v.iter().fold(0.0f64, |a, b| a.max(b.abs())).max(f64::MIN_POSITIVE);
    let mn_violation = (monotonicity_violation(&second) / span(&second))
        .max(monotonicity_violation(&ratio) / span(&ratio));
    let mn = ConditionCheck { passed: mn_violation <= 1e-9, max_violation: mn_violation };

    // |D^3 K| is bounded by |k'''| + 3 |k''/r - k'/r^2| for radial K.
    let bound: Vec<f64> = rs
        .iter()
        .map(|&r| {
            let d3 = profile.d3k(r).abs() + 3.0 * (profile.d2k(r) / r - profile.dk(r) / (r * r)).abs();
            d3 * r.powi(d as i32 + 1)
        })
        .collect();
    let decade = ADMISSIBILITY_SAMPLES / 8;
    let peak = |s: &[f64]| s.iter().fold(0.0f64, |a, &b| a.max(b));
    let log_growth = |outer: f64, inner: f64| {
        if outer <= 0.0 || !outer.is_finite() {
            if outer.is_finite() { 0.0 } else { f64::INFINITY }
        } else if inner <= 0.0 {
            f64::INFINITY
        } else {
            (outer / inner).ln().max(0.0)
        }
    };
    let n = bound.len();
    let far = log_growth(peak(&bound[n - decade..]), peak(&bound[n - 2 * decade..n - decade]));
    let origin = log_growth(peak(&bound[..decade]), peak(&bound[decade..2 * decade]));
    let bd_violation = far.max(origin);
    let bd = ConditionCheck { passed: bd_violation <= 1e-6, max_violation: bd_violation };

    AdmissibilityReport { kn, mn, bd, delta }
}

/// Norms of the rescaled gradient `lambda^d grad K(lambda .)` split at the unit ball.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RescaledKernelNorms {
    pub lambda: f64,
    pub q: f64,
    /// `|| lambda^d grad K(lambda .) 1_{B_1} ||_1`.
    pub near_l1: f64,
    /// `|| lambda^d grad K(lambda .) 1_{|x| >= 1} ||_q`.
    pub far_lq: f64,
    /// `sup_{|x| >= 1} |lambda^d grad K(lambda x)|`.
    pub far_linf: f64,
    /// `near_l1 / (1 + lambda^{d - gamma})`, or `/ (1 + ln lambda)` when `gamma = d`.
    pub c_near: f64,
    /// `far_lq / lambda^{d - gamma}`.
    pub c_far_q: f64,
    /// `far_linf / (1 + lambda^{d - gamma})`.
    pub c_far_inf: f64,
    /// Summed quadrature error estimate.
    pub residual: f64,
}

/// `int_{|y| <= lambda} |grad K(y)| dy`, integrated piecewise with a log
/// substitution away from the origin.
fn near_field_l1(kernel: &Kernel, lambda: f64) -> Result<quadrature::Estimate> {
    let d = kernel.d as i32;
    let f = |r: f64| kernel.dk(r).abs() * r.powi(d - 1);
    let mut upper = lambda;
    if let Some(s) = kernel.support() {
        upper = upper.min(s);
    }
    // Breakpoints: the power-tail core and one scale length.
    let mut cuts = vec![0.0];
    for c in [kernel.core_radius(), kernel.spec.scale] {
        if c > 0.0 && c < upper && !cuts.contains(&c) {
            cuts.push(c);
        }
    }
    cuts.push(upper);
    let mut total = quadrature::Estimate { value: 0.0, error: 0.0 };
    for w in cuts.windows(2) {
        let (a, b) = (w[0], w[1]);
        let est = if a == 0.0 {
            quadrature::integrate(f, a, b, 1e-14, 1e-11)?
        } else {
            quadrature::integrate(|s| f(s.exp()) * s.exp(), a.ln(), b.ln(), 1e-14, 1e-11)?
        };
        total.value += est.value;
        total.error += est.error;
    }
    total.value *= kernel.sphere;
    total.error *= kernel.sphere;
    Ok(total)
}

/// Near and far norms of the rescaled kernel gradient with empirical constants.
pub fn rescaled_norms(spec: &KernelSpec, d: usize, lambda: f64, q: f64) -> Result<RescaledKernelNorms> {
    let kernel = spec.bind(d)?;
    let df = d as f64;
    if !(lambda >= 1.0) {
        return Err(domain(format!("rescaling factor lambda = {lambda} must be >= 1")));
    }
    if !(q > df / (df - 1.0)) || !q.is_finite() {
        return Err(domain(format!("exponent q = {q} must exceed d/(d-1) = {}", df / (df - 1.0))));
    }
    let near = near_field_l1(&kernel, lambda)?;

    let far_integrand = |r: f64| kernel.dk(r).abs().powf(q) * r.powi(d as i32 - 1);
    let far_int = match kernel.support() {
        Some(s) if s <= lambda => quadrature::Estimate { value: 0.0, error: 0.0 },
        Some(s) => quadrature::integrate(|t| far_integrand(t.exp()) * t.exp(), lambda.ln(), s.ln(), 0.0, 1e-11)?,
        None => quadrature::integrate_to_infinity(far_integrand, lambda, 0.0, 1e-11)?,
    };
    let far_lq = (lambda.powf(q * df - df) * kernel.sphere * far_int.value).powf(1.0 / q);

    let mut sup = kernel.dk(lambda).abs();
    for r in log_grid(lambda, 100.0 * lambda, 400) {
        sup = sup.max(kernel.dk(r).abs());
    }
    let far_linf = lambda.powi(d as i32) * sup;

    let gamma = kernel.gamma();
    let growth = lambda.powf(df - gamma);
    let near_bound = if gamma >= df { 1.0 + lambda.ln() } else { 1.0 + growth };
    Ok(RescaledKernelNorms {
        lambda,
        q,
        near_l1: near.value,
        far_lq,
        far_linf,
        c_near: near.value / near_bound,
        c_far_q: far_lq / growth,
        c_far_inf: far_linf / (1.0 + growth),
        residual: near.error + far_int.error,
    })
}

/// Radial velocity of the Newtonian kernel from the shell theorem:
/// `V(r) = -S m(r) / (|S^{d-1}| r^{d-1})`, where `m(r)` is the mass inside `r`.
///
/// `theta` holds cell averages on `grid`; `targets` are arbitrary radii.
pub fn shell_theorem_velocity(grid: &RadialGrid, theta: &[f64], strength: f64, targets: &[f64], out: &mut [f64]) {
    let d = grid.dim() as i32;
    let sphere = sphere_area(grid.dim());
    let ball = sphere / grid.dim() as f64;
    let faces = grid.faces();
    let mut cumulative = Vec::with_capacity(theta.len() + 1);
    let mut acc = 0.0;
    cumulative.push(0.0);
    for (th, v) in theta.iter().zip(grid.volumes()) {
        acc += th * v;
        cumulative.push(acc);
    }
    for (o, &r) in out.iter_mut().zip(targets) {
        if r <= 0.0 {
            *o = 0.0;
            continue;
        }
        let inside = match grid.cell_of(r) {
            None => acc,
            Some(i) => cumulative[i] + theta[i] * ball * (r.powi(d) - faces[i].powi(d)),
        };
        *o = -strength * inside / (sphere * r.powi(d - 1));
    }
}

/// Angular quadrature controls for [`RadialVelocity`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VelocityQuadrature {
    /// Starting number of Gauss-Legendre nodes in the polar angle.
    pub initial_nodes: usize,
    /// Largest node count tried before giving up.
    pub max_nodes: usize,
    /// Relative change of `V` between successive doublings that ends refinement.
    pub rel_tol: f64,
    /// Gauss-Legendre nodes per radial sub-interval.
    pub radial_nodes: usize,
    /// Width of the rescaled-time bins at which operators are cached; values
    /// in between are linearly interpolated.
    pub tau_bin: f64,
    /// A power-tail core smaller than this fraction of the grid spacing is
    /// treated as a pure power law.
    pub fast_core_fraction: f64,
    /// Use the shell theorem for the Newtonian kernel instead of quadrature.
    pub newtonian_shell: bool,
    /// Do the angular integral in closed form where one is available: every
    /// kernel in `d = 3` and the Gaussian in `d = 2`.
    pub closed_form: bool,
}

impl Default for VelocityQuadrature {
    fn default() -> Self {
        VelocityQuadrature {
            initial_nodes: 64,
            max_nodes: 4096,
            rel_tol: 1e-6,
            radial_nodes: 4,
            tau_bin: 1.0 / 16.0,
            fast_core_fraction: 0.05,
            newtonian_shell: true,
            closed_form: true,
        }
    }
}

/// Cache key of an assembled operator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct OperatorKey {
    d: usize,
    cells: usize,
    radius_bits: u64,
    kind: KernelKind,
    gamma_bits: u64,
    scale_bits: u64,
    strength_bits: u64,
    /// Rescaled-time bin, or `i64::MAX` for the frozen power-law operator.
    bin: i64,
}

/// Dense matrix `G` with `V(r_i) = sum_j G_ij theta_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct VelocityOperator {
    key: OperatorKey,
    cells: usize,
    /// Rescaled time at which the kernel was evaluated.
    tau: f64,
    /// Angular node count at which the doubling converged.
    pub angular_nodes: usize,
    matrix: Vec<f64>,
    /// Per row, the half-open column range holding the nonzero entries.
    bands: Vec<(usize, usize)>,
}

impl VelocityOperator {
    fn from_matrix(key: OperatorKey, cells: usize, tau: f64, angular_nodes: usize, matrix: Vec<f64>) -> Self {
        let bands = matrix
            .chunks_exact(cells.max(1))
            .map(|row| match row.iter().position(|&g| g != 0.0) {
                Some(lo) => (lo, cells - row.iter().rev().position(|&g| g != 0.0).unwrap_or(0)),
                None => (0, 0),
            })
            .collect();
        VelocityOperator { key, cells, tau, angular_nodes, matrix, bands }
    }

    pub fn key(&self) -> &OperatorKey {
        &self.key
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    /// Accumulates `weight * G theta` into `out`.
    pub fn apply(&self, theta: &[f64], weight: f64, out: &mut [f64]) -> Result<()> {
        if theta.len() != self.cells || out.len() != self.cells {
            return Err(Error::InvalidCache(format!(
                "operator built for {} cells applied to {} values",
                self.cells,
                theta.len()
            )));
        }
        for ((row, &(lo, hi)), o) in self.matrix.chunks_exact(self.cells).zip(&self.bands).zip(out.iter_mut()) {
            let v: f64 = row[lo..hi].iter().zip(&theta[lo..hi]).map(|(g, t)| g * t).sum();
            *o += weight * v;
        }
        Ok(())
    }
}

/// Read-mostly cache of assembled velocity operators, shareable across threads.
#[derive(Debug, Default)]
pub struct OperatorCache {
    map: spin::RwLock<BTreeMap<OperatorKey, Arc<VelocityOperator>>>,
    capacity: usize,
}

impl OperatorCache {
    pub fn new(capacity: usize) -> Self {
        OperatorCache { map: spin::RwLock::new(BTreeMap::new()), capacity: capacity.max(2) }
    }

    pub fn get(&self, key: &OperatorKey) -> Option<Arc<VelocityOperator>> {
        self.map.read().get(key).cloned()
    }

    pub fn insert(&self, op: Arc<VelocityOperator>) {
        let mut map = self.map.write();
        let key = op.key;
        map.insert(key, op);
        while map.len() > self.capacity {
            // Drop the entry farthest behind the newest bin.
            let victim = map
                .keys()
                .filter(|k| **k != key)
                .min_by_key(|k| (k.bin - key.bin).abs().wrapping_neg())
                .copied();
            match victim {
                Some(v) => {
                    map.remove(&v);
                }
                None => break,
            }
        }
    }

    pub fn len(&self) -> usize {
        self.map.read().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// `lambda^d k'(lambda rho)` with an optional cut-off radius.
#[derive(Debug, Clone, Copy)]
struct ScaledKernel {
    kernel: Kernel,
    lambda: f64,
    amplitude: f64,
}

impl ScaledKernel {
    fn new(kernel: Kernel, lambda: f64) -> Self {
        ScaledKernel { kernel, lambda, amplitude: lambda.powi(kernel.d as i32) }
    }

    #[inline]
    fn grad(&self, rho: f64) -> f64 {
        self.amplitude * self.kernel.dk(self.lambda * rho)
    }

    fn support(&self) -> f64 {
        self.kernel.support().map(|s| s / self.lambda).unwrap_or(f64::INFINITY)
    }

    /// Length below which `grad K` is smooth (linear near the origin); zero for
    /// the singular Newtonian kernel.
    fn smooth_length(&self) -> f64 {
        let k = &self.kernel;
        match k.spec.kind {
            KernelKind::Newtonian => 0.0,
            KernelKind::PowerTail => k.core_radius() / self.lambda,
            KernelKind::Gaussian | KernelKind::SmoothCompact => 0.25 * k.spec.scale / self.lambda,
        }
    }
}

/// Shell response in `d = 3` with the polar integral done in closed form:
/// `(pi s / r^2) int_{|r-s|}^{r+s} kappa'(rho) (r^2 - s^2 + rho^2) d rho` with
/// `kappa(rho) = lambda^2 k(lambda rho)`, integrated by parts.
fn shell_response_3d(sk: &ScaledKernel, r: f64, s: f64) -> f64 {
    if r <= 0.0 || s <= 0.0 || (r - s).abs() >= sk.support() {
        return 0.0;
    }
    let lam = sk.lambda;
    let k = &sk.kernel;
    // Antiderivative of kappa'(rho) (r^2 - s^2 + rho^2) in rho.
    let prim = |rho: f64| {
        let u = lam * rho;
        lam * lam * (r * r - s * s + rho * rho) * k.k(u) - 2.0 * k.moment_potential(u)
    };
    let near = (r - s).abs();
    let far = r + s;
    PI * s / (r * r) * (prim(far) - prim(near))
}

/// `e^{-x} I_0(x)` and `e^{-x} I_1(x)` for `x >= 0`: power series up to
/// `x = 30`, the asymptotic expansion beyond.
fn scaled_bessel_i01(x: f64) -> (f64, f64) {
    if x <= 30.0 {
        let q = 0.25 * x * x;
        let (mut t0, mut t1) = (1.0, 0.5 * x);
        let (mut i0, mut i1) = (t0, t1);
        let mut k = 1.0;
        while t0 > 1e-17 * i0 {
            t0 *= q / (k * k);
            t1 *= q / (k * (k + 1.0));
            i0 += t0;
            i1 += t1;
            k += 1.0;
        }
        let e = (-x).exp();
        (i0 * e, i1 * e)
    } else {
        // e^{-x} I_n(x) ~ (2 pi x)^{-1/2} sum_k (-1)^k prod_{j<=k} (4n^2 - (2j-1)^2) / (k! (8x)^k)
        let (mut t0, mut t1) = (1.0f64, 1.0f64);
        let (mut i0, mut i1) = (1.0, 1.0);
        for j in 1..40 {
            let odd = (2 * j - 1) as f64;
            let n0 = -(0.0 - odd * odd) / (j as f64 * 8.0 * x);
            let n1 = -(4.0 - odd * odd) / (j as f64 * 8.0 * x);
            if (t0 * n0).abs() >= t0.abs() {
                break;
            }
            t0 *= n0;
            t1 *= n1;
            i0 += t0;
            i1 += t1;
            if t0.abs() < 1e-17 && t1.abs() < 1e-17 {
                break;
            }
        }
        let root = (2.0 * PI * x).sqrt();
        (i0 / root, i1 / root)
    }
}

/// Ring response in `d = 2` for the Gaussian kernel `S exp(-rho^2 / 2L^2)`:
/// with `a = lambda^2 / L^2` the angular integral is
/// `-2 pi S lambda^3 / L^2 s e^{-a (r-s)^2 / 2} (r I0e(a r s) - s I1e(a r s))`.
fn ring_response_gaussian(sk: &ScaledKernel, r: f64, s: f64) -> f64 {
    if r <= 0.0 || s <= 0.0 || (r - s).abs() >= sk.support() {
        return 0.0;
    }
    let spec = &sk.kernel.spec;
    let lam = sk.lambda;
    let a = lam * lam / (spec.scale * spec.scale);
    let (i0, i1) = scaled_bessel_i01(a * r * s);
    -2.0 * PI * spec.strength * lam * a * s * (-0.5 * a * (r - s) * (r - s)).exp() * (r * i0 - s * i1)
}

/// Radial component of the velocity induced at radius `r` by a unit-density
/// spherical shell of radius `s`, per unit shell thickness:
/// `|S^{d-2}| s^{d-1} int_0^pi kappa(rho) (r - s cos psi) / rho sin^{d-2} psi dpsi`.
fn shell_response(sk: &ScaledKernel, r: f64, s: f64, gl: &GaussLegendre, sphere_lower: f64) -> f64 {
    if r <= 0.0 || s <= 0.0 {
        return 0.0;
    }
    let reach = sk.support();
    if (r - s).abs() >= reach {
        return 0.0;
    }
    let psi_max = if r + s <= reach {
        PI
    } else {
        ((r * r + s * s - reach * reach) / (2.0 * r * s)).clamp(-1.0, 1.0).acos()
    };
    let d = sk.kernel.d as i32;
    let integrand = |psi: f64| {
        let (sn, cs) = psi.sin_cos();
        let rho2 = (r - s) * (r - s) + 2.0 * r * s * (1.0 - cs);
        if rho2 <= 0.0 {
            return 0.0;
        }
        let rho = rho2.sqrt();
        sk.grad(rho) * (r - s * cs) / rho * sn.powi(d - 2)
    };
    // Peak of width ~ |r - s| / r near psi = 0 unless the kernel is smooth on
    // that scale: grade the panels geometrically.
    let width = (r - s).abs().max(sk.smooth_length()) / r.max(s);
    let mut total = 0.0;
    if width < 0.25 {
        let mut lo = 0.0;
        let mut hi = (0.5 * width).max(1e-12).min(psi_max);
        loop {
            total += gl.integrate(lo, hi, integrand);
            if hi >= psi_max {
                break;
            }
            lo = hi;
            hi = (2.0 * hi).min(psi_max);
        }
    } else {
        total = gl.integrate(0.0, psi_max, integrand);
    }
    sphere_lower * s.powi(d - 1) * total
}

/// Radial velocity `e^{d tau} grad K(e^tau .) * theta` of a radial density.
///
/// For every kernel except the Newtonian one the convolution is assembled
/// into a banded operator. The angular integral is done in closed form in
/// `d = 3` and for the Gaussian in `d = 2`; otherwise by Gauss-Legendre
/// quadrature, doubling the node count until the velocity changes by less than
/// the tolerance. Operators are
/// cached per rescaled-time bin and interpolated linearly between bins. Pure
/// power tails whose core is far below the grid spacing scale as
/// `e^{(d - gamma) tau}` and reuse one frozen operator. The Newtonian kernel
/// uses the shell theorem.
#[derive(Debug, Clone)]
pub struct RadialVelocity {
    kernel: Kernel,
    grid: RadialGrid,
    quad: VelocityQuadrature,
    cache: Arc<OperatorCache>,
}

impl RadialVelocity {
    pub fn new(spec: &KernelSpec, grid: RadialGrid) -> Result<Self> {
        Self::with_cache(spec, grid, VelocityQuadrature::default(), Arc::new(OperatorCache::new(4)))
    }

    pub fn with_cache(
        spec: &KernelSpec,
        grid: RadialGrid,
        quad: VelocityQuadrature,
        cache: Arc<OperatorCache>,
    ) -> Result<Self> {
        let kernel = spec.bind(grid.dim())?;
        if quad.initial_nodes == 0 || quad.max_nodes < quad.initial_nodes || !(quad.tau_bin > 0.0) {
            return Err(Error::Config(format!("invalid velocity quadrature settings {quad:?}")));
        }
        Ok(RadialVelocity { kernel, grid, quad, cache })
    }

    pub fn kernel(&self) -> &Kernel {
        &self.kernel
    }

    pub fn grid(&self) -> &RadialGrid {
        &self.grid
    }

    pub fn cache(&self) -> &Arc<OperatorCache> {
        &self.cache
    }

    fn key(&self, bin: i64) -> OperatorKey {
        let s = self.kernel.spec;
        OperatorKey {
            d: self.grid.dim(),
            cells: self.grid.len(),
            radius_bits: self.grid.radius().to_bits(),
            kind: s.kind,
            gamma_bits: if s.kind == KernelKind::PowerTail { s.gamma.to_bits() } else { 0 },
            scale_bits: s.scale.to_bits(),
            strength_bits: s.strength.to_bits(),
            bin,
        }
    }

    fn shell_path(&self) -> bool {
        self.kernel.spec.kind == KernelKind::Newtonian && self.quad.newtonian_shell
    }

    /// Rescaled time beyond which a power-tail kernel is treated as a pure power.
    fn frozen_tau(&self) -> Option<f64> {
        (self.kernel.spec.kind == KernelKind::PowerTail).then(|| {
            (self.kernel.core_radius() / (self.quad.fast_core_fraction * self.grid.dr())).ln().max(0.0)
        })
    }

    /// Velocity at the cell centers.
    pub fn centers(&self, tau: f64, theta: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.grid.len()];
        self.centers_into(tau, theta, &mut out)?;
        Ok(out)
    }

    pub fn centers_into(&self, tau: f64, theta: &[f64], out: &mut [f64]) -> Result<()> {
        if theta.len() != self.grid.len() || out.len() != self.grid.len() {
            return Err(Error::InvalidCache(format!(
                "velocity for a {}-cell grid requested with {} values",
                self.grid.len(),
                theta.len()
            )));
        }
        out.iter_mut().for_each(|v| *v = 0.0);
        if self.shell_path() {
            let lambda = tau.exp();
            shell_theorem_velocity(&self.grid, theta, self.kernel.spec.strength * lambda, self.grid.centers(), out);
            return Ok(());
        }
        if let Some(tau_star) = self.frozen_tau() {
            if tau >= tau_star {
                let op = self.operator(i64::MAX, tau_star, theta)?;
                let weight = ((self.grid.dim() as f64 - self.kernel.gamma()) * (tau - tau_star)).exp();
                return op.apply(theta, weight, out);
            }
        }
        let h = self.quad.tau_bin;
        let pos = tau / h;
        let bin = pos.floor() as i64;
        let w = pos - bin as f64;
        let lower = self.operator(bin, bin as f64 * h, theta)?;
        lower.apply(theta, 1.0 - w, out)?;
        if w > 1e-12 {
            let upper = self.operator(bin + 1, (bin + 1) as f64 * h, theta)?;
            upper.apply(theta, w, out)?;
        }
        Ok(())
    }

    /// Velocity at the cell faces. Face 0 sits at the origin where `V = 0`.
    pub fn faces_into(&self, tau: f64, theta: &[f64], centers: &mut [f64], out: &mut [f64]) -> Result<()> {
        let n = self.grid.len();
        if out.len() != n + 1 {
            return Err(Error::InvalidCache(format!("{} face values for {n} cells", out.len())));
        }
        if self.shell_path() {
            let lambda = tau.exp();
            shell_theorem_velocity(&self.grid, theta, self.kernel.spec.strength * lambda, self.grid.faces(), out);
            return Ok(());
        }
        self.centers_into(tau, theta, centers)?;
        out[0] = 0.0;
        for i in 1..n {
            out[i] = 0.5 * (centers[i - 1] + centers[i]);
        }
        out[n] = centers[n - 1];
        Ok(())
    }

    fn operator(&self, bin: i64, tau: f64, probe: &[f64]) -> Result<Arc<VelocityOperator>> {
        let key = self.key(bin);
        if let Some(op) = self.cache.get(&key) {
            return Ok(op);
        }
        let op = Arc::new(self.assemble(key, tau, probe)?);
        self.cache.insert(op.clone());
        Ok(op)
    }

    /// Builds `G` at rescaled time `tau`, doubling the angular rule until the
    /// velocity of `probe` settles.
    fn assemble(&self, key: OperatorKey, tau: f64, probe: &[f64]) -> Result<VelocityOperator> {
        let n = self.grid.len();
        let sk = ScaledKernel::new(self.kernel, tau.exp());
        if self.quad.closed_form {
            let matrix = match (self.grid.dim(), self.kernel.spec.kind) {
                (3, _) => Some(self.fill_matrix(&sk, |r, s| shell_response_3d(&sk, r, s))),
                (2, KernelKind::Gaussian) => Some(self.fill_matrix(&sk, |r, s| ring_response_gaussian(&sk, r, s))),
                _ => None,
            };
            if let Some(matrix) = matrix {
                return Ok(VelocityOperator::from_matrix(key, n, tau, 0, matrix));
            }
        }
        let mut nodes = self.quad.initial_nodes;
        let mut previous = self.build_matrix(&sk, nodes);
        let velocity = |m: &[f64]| -> Vec<f64> {
            m.chunks_exact(n).map(|row| row.iter().zip(probe).map(|(g, t)| g * t).sum()).collect()
        };
        let mut v_prev = velocity(&previous);
        // An all-zero probe cannot drive the refinement; fall back to a unit density.
        let unit;
        let probe_is_zero = probe.iter().all(|&t| t == 0.0);
        let v_of = |m: &[f64], unit_probe: Option<&[f64]>| -> Vec<f64> {
            match unit_probe {
                Some(u) => m.chunks_exact(n).map(|row| row.iter().zip(u).map(|(g, t)| g * t).sum()).collect(),
                None => velocity(m),
            }
        };
        let unit_probe = if probe_is_zero {
            unit = vec![1.0; n];
            v_prev = v_of(&previous, Some(&unit));
            Some(&unit[..])
        } else {
            None
        };
        loop {
            let next_nodes = nodes * 2;
            if next_nodes > self.quad.max_nodes {
                let scale = v_prev.iter().fold(0.0f64, |a, b| a.max(b.abs()));
                return Err(Error::Convergence {
                    method: "angular quadrature",
                    detail: format!("velocity not settled at {nodes} nodes (|V| ~ {scale:e})"),
                });
            }
            let next = self.build_matrix(&sk, next_nodes);
            let v_next = v_of(&next, unit_probe);
            let scale = v_next.iter().fold(0.0f64, |a, b| a.max(b.abs()));
            let change = v_next.iter().zip(&v_prev).fold(0.0f64, |a, (x, y)| a.max((x - y).abs()));
            nodes = next_nodes;
            previous = next;
            v_prev = v_next;
            if change <= self.quad.rel_tol * scale || scale == 0.0 {
                break;
            }
        }
        Ok(VelocityOperator::from_matrix(key, n, tau, nodes, previous))
    }

    fn build_matrix(&self, sk: &ScaledKernel, angular_nodes: usize) -> Vec<f64> {
        let gl = GaussLegendre::new(angular_nodes);
        let sphere_lower = sphere_area(self.grid.dim() - 1);
        self.fill_matrix(sk, |r, s| shell_response(sk, r, s, &gl, sphere_lower))
    }

    /// `G_ij = int_{cell j} response(r_i, s) ds`.
    fn fill_matrix(&self, sk: &ScaledKernel, response: impl Fn(f64, f64) -> f64 + Sync) -> Vec<f64> {
        let n = self.grid.len();
        let radial = GaussLegendre::new(self.quad.radial_nodes);
        let mut matrix = vec![0.0; n * n];
        let fill_row = |i: usize, row: &mut [f64]| {
            let r = self.grid.centers()[i];
            let reach = sk.support();
            let faces = self.grid.faces();
            for (j, g) in row.iter_mut().enumerate() {
                let (a, b) = (faces[j].max(r - reach), faces[j + 1].min(r + reach));
                if a >= b {
                    continue;
                }
                let f = |s: f64| response(r, s);
                *g = if j + 1 >= i && j <= i + 1 {
                    graded_integral(&radial, a, b, r, sk.smooth_length(), f)
                } else {
                    radial.integrate(a, b, f)
                };
            }
        };
        #[cfg(feature = "std")]
        {
            use rayon::prelude::*;
            matrix.par_chunks_mut(n).enumerate().for_each(|(i, row)| fill_row(i, row));
        }
        #[cfg(not(feature = "std"))]
        {
            matrix.chunks_mut(n).enumerate().for_each(|(i, row)| fill_row(i, row));
        }
        matrix
    }
}

/// Integral over `[a, b]` of a function with an integrable singularity at
/// `center`, using sub-intervals refined geometrically toward `center` until
/// they are shorter than `smooth`, the scale below which the integrand is
/// regular. Symmetric refinement on both sides yields the principal value for
/// odd singularities.
fn graded_integral(
    gl: &GaussLegendre,
    a: f64,
    b: f64,
    center: f64,
    smooth: f64,
    mut f: impl FnMut(f64) -> f64,
) -> f64 {
    let mut total = 0.0;
    let mut side = |lo: f64, hi: f64, toward_lo: bool| {
        if hi <= lo {
            return;
        }
        let len = hi - lo;
        let floor = (0.5 * smooth).max(1e-14 * len.max(center.abs()));
        let mut outer = len;
        while outer > floor {
            let inner = 0.5 * outer;
            let (x0, x1) = if toward_lo { (lo + inner, lo + outer) } else { (hi - outer, hi - inner) };
            total += gl.integrate(x0, x1, &mut f);
            outer = inner;
        }
        if smooth > 0.0 {
            let (x0, x1) = if toward_lo { (lo, lo + outer) } else { (hi - outer, hi) };
            total += gl.integrate(x0, x1, &mut f);
        }
    };
    if center <= a {
        side(a, b, true);
    } else if center >= b {
        side(a, b, false);
    } else {
        side(a, center, false);
        side(center, b, true);
    }
    total
}

/// One-shot velocity at the cell centers for a density on `grid`.
pub fn velocity_radial(
    spec: &KernelSpec,
    params: &ProblemParams,
    tau: f64,
    theta: &crate::grid::RadialGridFunction,
) -> Result<Vec<f64>> {
    if theta.grid().dim() != params.d {
        return Err(domain("density grid dimension differs from params.d"));
    }
    let quad = VelocityQuadrature { tau_bin: f64::MAX, ..VelocityQuadrature::default() };
    let velocity = RadialVelocity::with_cache(spec, theta.grid().clone(), quad, Arc::new(OperatorCache::new(2)))?;
    // Evaluate exactly at tau: bin 0 of a single huge bin is assembled at tau = 0,
    // so assemble directly instead.
    if velocity.shell_path() {
        return velocity.centers(tau, theta.values());
    }
    if let Some(tau_star) = velocity.frozen_tau() {
        if tau >= tau_star {
            return velocity.centers(tau, theta.values());
        }
    }
    let op = velocity.assemble(velocity.key(0), tau, theta.values())?;
    let mut out = vec![0.0; theta.values().len()];
    op.apply(theta.values(), 1.0, &mut out)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::RadialGridFunction;
    use approx::assert_relative_eq;

    #[test]
    fn grad_k_examples() {
        let newton = KernelSpec::newtonian(1.0).bind(3).unwrap();
        assert_relative_eq!(newton.grad_k(1.0).unwrap(), -1.0 / (4.0 * PI), max_relative = 1e-14);
        assert_relative_eq!(newton.k(2.0), 1.0 / (8.0 * PI), max_relative = 1e-14);
        let gauss = KernelSpec::gaussian(1.0, 1.0).bind(3).unwrap();
        assert_relative_eq!(gauss.grad_k(1.0).unwrap(), -(-0.5f64).exp(), max_relative = 1e-14);
        let tail = KernelSpec::power_tail(2.5, 1.0, 1.0).bind(3).unwrap();
        assert_relative_eq!(tail.grad_k(10.0).unwrap(), -(10f64.powf(-2.5)), max_relative = 1e-14);
        assert!(tail.grad_k(0.0).is_err());
        assert!(tail.grad_k(-1.0).is_err());
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let specs = [
            KernelSpec::gaussian(0.7, 1.3),
            KernelSpec::smooth_compact(1.5, 2.0),
            KernelSpec::power_tail(2.5, 1.0, 1.0),
            KernelSpec::power_tail(2.0, 2.0, 0.5),
            KernelSpec::newtonian(1.0),
        ];
        for spec in specs {
            let k = spec.bind(3).unwrap();
            for r in [0.01, 0.05, 0.13, 0.4, 1.1, 3.0] {
                let h = 1e-6 * r;
                let fd1 = (k.k(r + h) - k.k(r - h)) / (2.0 * h);
                let fd2 = (k.dk(r + h) - k.dk(r - h)) / (2.0 * h);
                let fd3 = (k.d2k(r + h) - k.d2k(r - h)) / (2.0 * h);
                let tol = |x: f64| 1e-5 * x.abs().max(1e-8);
                assert!((fd1 - k.dk(r)).abs() < tol(fd1), "{spec:?} k' at {r}");
                assert!((fd2 - k.d2k(r)).abs() < tol(fd2), "{spec:?} k'' at {r}");
                assert!((fd3 - k.d3k(r)).abs() < tol(fd3), "{spec:?} k''' at {r}");
            }
        }
    }

    #[test]
    fn power_tail_core_is_c1() {
        let k = KernelSpec::power_tail(2.2, 1.0, 1.0).bind(3).unwrap();
        let rc = k.core_radius();
        let (lo, hi) = (rc * (1.0 - 1e-12), rc * (1.0 + 1e-12));
        assert_relative_eq!(k.dk(lo), k.dk(hi), max_relative = 1e-9);
        assert_relative_eq!(k.d2k(lo), k.d2k(hi), max_relative = 1e-9);
        assert_relative_eq!(k.k(lo), k.k(hi), max_relative = 1e-9);
    }

    #[test]
    fn bind_validates() {
        assert!(KernelSpec::newtonian(1.0).bind(2).is_err());
        assert!(KernelSpec::power_tail(1.5, 1.0, 1.0).bind(3).is_err());
        assert!(KernelSpec::power_tail(3.5, 1.0, 1.0).bind(3).is_err());
        assert!(KernelSpec::gaussian(1.0, 0.0).bind(3).is_err());
        assert!(KernelSpec::power_tail(1.0, 1.0, 1.0).bind(2).is_ok());
    }

    #[test]
    fn newtonian_critical_warning() {
        let critical = ProblemParams::new(3, 4.0 / 3.0, 1.0).unwrap();
        let super_ = ProblemParams::new(3, 1.0, 1.0).unwrap();
        assert_eq!(KernelSpec::newtonian(1.0).hypothesis_warnings(&critical).len(), 1);
        assert!(KernelSpec::newtonian(1.0).hypothesis_warnings(&super_).is_empty());
        assert!(KernelSpec::gaussian(1.0, 1.0).hypothesis_warnings(&critical).is_empty());
    }

    struct Increasing;
    impl RadialProfile for Increasing {
        fn k(&self, r: f64) -> f64 {
            r
        }
        fn dk(&self, _: f64) -> f64 {
            1.0
        }
        fn d2k(&self, _: f64) -> f64 {
            0.0
        }
        fn d3k(&self, _: f64) -> f64 {
            0.0
        }
    }

    #[test]
    fn admissibility_of_builtin_kernels() {
        for (spec, d) in [
            (KernelSpec::gaussian(1.0, 1.0), 2),
            (KernelSpec::gaussian(1.0, 1.0), 3),
            (KernelSpec::newtonian(1.0), 3),
            (KernelSpec::smooth_compact(1.0, 1.0), 3),
            (KernelSpec::power_tail(2.0, 1.0, 1.0), 3),
            (KernelSpec::power_tail(2.5, 1.0, 1.0), 3),
            (KernelSpec::power_tail(3.0, 1.0, 1.0), 3),
            (KernelSpec::power_tail(1.0, 1.0, 1.0), 2),
        ] {
            let k = spec.bind(d).unwrap();
            let report = admissibility_report(&k, d, spec.scale);
            assert!(report.admissible(), "{spec:?} in d = {d}: {report:?}");
        }
        let report = admissibility_report(&Increasing, 3, 1.0);
        assert!(!report.kn.passed);
        assert!(report.kn.max_violation > 0.0);
    }

    #[test]
    fn rescaled_norms_newtonian_linear_growth() {
        let spec = KernelSpec::newtonian(1.0);
        for lambda in [10.0, 100.0, 1000.0] {
            let n = rescaled_norms(&spec, 3, lambda, 2.0).unwrap();
            assert_relative_eq!(n.near_l1 / lambda, 1.0, max_relative = 1e-8);
            // far L^q: (lambda^{qd-d} 4 pi int_lambda^inf (4 pi)^{-q} r^{-2q+2} dr)^{1/q}
            let exact = (lambda.powf(3.0) * 4.0 * PI * (4.0 * PI).powf(-2.0) * lambda.powf(-1.0)).sqrt();
            assert_relative_eq!(n.far_lq, exact, max_relative = 1e-8);
            assert_relative_eq!(n.far_linf, lambda / (4.0 * PI), max_relative = 1e-12);
        }
    }

    #[test]
    fn rescaled_norms_integrable_kernel_bounded() {
        let spec = KernelSpec::smooth_compact(1.0, 1.0);
        let base = rescaled_norms(&spec, 3, 1.0, 2.0).unwrap().near_l1;
        for lambda in [10.0, 100.0, 1000.0] {
            let n = rescaled_norms(&spec, 3, lambda, 2.0).unwrap();
            assert_relative_eq!(n.near_l1, base, max_relative = 1e-9);
            assert_eq!(n.far_lq, 0.0);
        }
        assert!(rescaled_norms(&spec, 3, 0.5, 2.0).is_err());
        assert!(rescaled_norms(&spec, 3, 2.0, 1.4).is_err());
    }

    #[test]
    fn shell_theorem_uniform_ball() {
        let grid = RadialGrid::new(3, 2.0, 200).unwrap();
        let rho = 3.0 / (4.0 * PI);
        let theta: Vec<f64> = grid.centers().iter().map(|&r| if r < 1.0 { rho } else { 0.0 }).collect();
        let targets = [0.5, 1.0, 1.5];
        let mut out = [0.0; 3];
        shell_theorem_velocity(&grid, &theta, 1.0, &targets, &mut out);
        assert_relative_eq!(out[0], -0.5 / (4.0 * PI), max_relative = 1e-12);
        assert_relative_eq!(out[1], -1.0 / (4.0 * PI), max_relative = 1e-12);
        assert_relative_eq!(out[2], -1.0 / (4.0 * PI * 2.25), max_relative = 1e-12);
    }

    #[test]
    fn quadrature_matches_shell_theorem() {
        let grid = RadialGrid::new(3, 2.0, 100).unwrap();
        let rho = 3.0 / (4.0 * PI);
        let theta: Vec<f64> = grid.centers().iter().map(|&r| if r < 1.0 { rho } else { 0.0 }).collect();
        let quad = VelocityQuadrature { newtonian_shell: false, closed_form: false, ..VelocityQuadrature::default() };
        let v = RadialVelocity::with_cache(&KernelSpec::newtonian(1.0), grid.clone(), quad, Arc::new(OperatorCache::new(2)))
            .unwrap();
        let numeric = v.centers(0.0, &theta).unwrap();
        let mut exact = vec![0.0; grid.len()];
        shell_theorem_velocity(&grid, &theta, 1.0, grid.centers(), &mut exact);
        for (i, (a, b)) in numeric.iter().zip(&exact).enumerate() {
            assert!((a - b).abs() <= 1e-3 * b.abs(), "cell {i}: {a} vs {b}");
        }
    }

    #[test]
    fn moment_potential_differentiates_to_r_k() {
        for (spec, d) in [
            (KernelSpec::gaussian(0.8, 1.2), 3),
            (KernelSpec::smooth_compact(1.5, 2.0), 3),
            (KernelSpec::power_tail(2.0, 1.0, 1.0), 3),
            (KernelSpec::power_tail(2.5, 1.0, 1.0), 3),
            (KernelSpec::power_tail(3.0, 1.0, 1.0), 3),
            (KernelSpec::power_tail(1.0, 1.0, 1.0), 2),
            (KernelSpec::newtonian(1.0), 3),
        ] {
            let k = spec.bind(d).unwrap();
            for r in [0.03, 0.0999, 0.1001, 0.5, 1.2] {
                let h = 1e-6 * r;
                let fd = (k.moment_potential(r + h) - k.moment_potential(r - h)) / (2.0 * h);
                assert!((fd - r * k.k(r)).abs() < 1e-6 * (r * k.k(r)).abs().max(1e-9), "{spec:?} at {r}");
            }
        }
    }

    #[test]
    fn closed_form_matches_angular_quadrature() {
        for (spec, d) in [
            (KernelSpec::gaussian(1.0, 1.0), 3),
            (KernelSpec::smooth_compact(1.0, 1.0), 3),
            (KernelSpec::power_tail(2.5, 1.0, 1.0), 3),
            (KernelSpec::gaussian(1.0, 1.0), 2),
            (KernelSpec::gaussian(0.3, 2.0), 2),
        ] {
            let grid = RadialGrid::new(d, 4.0, 60).unwrap();
            let theta: Vec<f64> = grid.centers().iter().map(|&r| (-(r - 1.0) * (r - 1.0)).exp()).collect();
            for tau in [0.0, 0.7] {
                let velocity = |closed| {
                    let quad = VelocityQuadrature { closed_form: closed, tau_bin: 0.7, ..VelocityQuadrature::default() };
                    RadialVelocity::with_cache(&spec, grid.clone(), quad, Arc::new(OperatorCache::new(2)))
                        .unwrap()
                        .centers(tau, &theta)
                        .unwrap()
                };
                let (exact, numeric) = (velocity(true), velocity(false));
                let scale = exact.iter().fold(0.0f64, |a, b| a.max(b.abs()));
                for (a, b) in exact.iter().zip(&numeric) {
                    assert!((a - b).abs() <= 1e-5 * scale, "{spec:?} tau {tau}: {a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn scaled_bessel_matches_integral_form() {
        // I_n(x) = (1/pi) int_0^pi e^{x cos t} cos(n t) dt
        let gl = GaussLegendre::new(256);
        for x in [0.0, 0.3, 1.0, 3.7, 10.0, 29.9, 30.1, 45.0, 400.0] {
            let (i0, i1) = scaled_bessel_i01(x);
            let e0 = gl.integrate(0.0, PI, |t| (x * (t.cos() - 1.0)).exp()) / PI;
            let e1 = gl.integrate(0.0, PI, |t| (x * (t.cos() - 1.0)).exp() * t.cos()) / PI;
            assert_relative_eq!(i0, e0, max_relative = 1e-13);
            assert!((i1 - e1).abs() <= 1e-13 * e1.max(1e-300) || (x == 0.0 && i1 == 0.0), "{x}: {i1} vs {e1}");
        }
    }

    #[test]
    fn closed_form_newtonian_matches_shell_theorem() {
        let grid = RadialGrid::new(3, 2.0, 100).unwrap();
        let theta: Vec<f64> = grid.centers().iter().map(|&r| (-r * r).exp()).collect();
        let quad = VelocityQuadrature { newtonian_shell: false, ..VelocityQuadrature::default() };
        let v = RadialVelocity::with_cache(&KernelSpec::newtonian(1.0), grid.clone(), quad, Arc::new(OperatorCache::new(2)))
            .unwrap()
            .centers(0.0, &theta)
            .unwrap();
        let mut exact = vec![0.0; grid.len()];
        shell_theorem_velocity(&grid, &theta, 1.0, grid.centers(), &mut exact);
        for (a, b) in v.iter().zip(&exact) {
            assert!((a - b).abs() <= 1e-3 * b.abs(), "{a} vs {b}");
        }
    }

    #[test]
    fn velocity_of_zero_is_zero_and_linear() {
        let grid = RadialGrid::new(2, 4.0, 40).unwrap();
        let spec = KernelSpec::gaussian(1.0, 1.0);
        let params = ProblemParams::new(2, 1.0, 1.0).unwrap();
        let zero = RadialGridFunction::zeros(grid.clone());
        let v = velocity_radial(&spec, &params, 0.3, &zero).unwrap();
        assert!(v.iter().all(|&x| x == 0.0));
        let f = RadialGridFunction::from_fn(grid.clone(), |r| (-r * r).exp());
        let mut f2 = f.clone();
        f2.scale(2.0);
        let v1 = velocity_radial(&spec, &params, 0.3, &f).unwrap();
        let v2 = velocity_radial(&spec, &params, 0.3, &f2).unwrap();
        for (a, b) in v1.iter().zip(&v2) {
            assert_relative_eq!(2.0 * a, b, max_relative = 1e-12);
            assert!(*a <= 0.0);
        }
    }
}
