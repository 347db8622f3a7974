//! Reproducible random perturbations of the ground state for the inequality
//! suites. Every density comes from a ChaCha8 stream seeded with a single
//! `u64`, so a suite is bitwise reproducible across platforms.

use alloc::format;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::barenblatt::BarenblattProfile;
use crate::error::{domain, Result};
use crate::grid::{RadialGrid, RadialGridFunction};
use crate::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PerturbationKind {
    /// `theta_M exp(sum_j a_j cos(j pi r / L))`.
    Modulated,
    /// Mass-preserving dilation by a factor in `[0.7, 1.4]`.
    Dilated,
    /// `(1 - w) theta_M + w * bump` with a Gaussian shell bump.
    Mixture,
}

impl PerturbationKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PerturbationKind::Modulated => "modulated",
            PerturbationKind::Dilated => "dilated",
            PerturbationKind::Mixture => "mixture",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Perturbation {
    pub index: usize,
    pub kind: PerturbationKind,
    pub theta: RadialGridFunction,
}

/// Length scale of the ground state: its support radius for `m > 1`, three
/// standard deviations for `m = 1`.
fn profile_length(profile: &BarenblattProfile) -> f64 {
    let r = profile.support_radius();
    if r.is_finite() {
        r
    } else {
        3.0
    }
}

/// `count` nonnegative densities of mass `M` near the ground state, cycling
/// through the perturbation kinds.
pub fn perturbations(profile: &BarenblattProfile, grid: &RadialGrid, seed: u64, count: usize) -> Result<Vec<Perturbation>> {
    let d = grid.dim() as i32;
    let mass = profile.params().mass;
    let len = profile_length(profile);
    if grid.radius() < 1.5 * len {
        return Err(domain(format!(
            "grid radius {} is too small for perturbations of a profile of length {len}",
            grid.radius()
        )));
    }
    let ground = profile.discrete(grid)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    for index in 0..count {
        let (kind, mut theta) = match index % 3 {
            0 => {
                let a: [f64; 3] = core::array::from_fn(|_| rng.random_range(-0.4..0.4));
                let mut f = ground.clone();
                for (v, &r) in f.values_mut().iter_mut().zip(grid.centers()) {
                    let s: f64 = a
                        .iter()
                        .enumerate()
                        .map(|(j, aj)| aj * ((j + 1) as f64 * core::f64::consts::PI * r / len).cos())
                        .sum();
                    *v *= s.exp();
                }
                (PerturbationKind::Modulated, f)
            }
            1 => {
                let lambda: f64 = rng.random_range(0.7..1.4);
                let f = RadialGridFunction::from_fn(grid.clone(), |r| profile.value(r / lambda) / lambda.powi(d));
                (PerturbationKind::Dilated, f)
            }
            _ => {
                let w: f64 = rng.random_range(0.05..0.3);
                let center: f64 = rng.random_range(0.0..1.2 * len);
                let width: f64 = rng.random_range(0.1..0.3) * len;
                let mut bump = RadialGridFunction::from_fn(grid.clone(), |r| {
                    (-(r - center) * (r - center) / (2.0 * width * width)).exp()
                });
                bump.normalize_to(mass)?;
                let mut f = ground.clone();
                for (v, b) in f.values_mut().iter_mut().zip(bump.values()) {
                    *v = (1.0 - w) * *v + w * b;
                }
                (PerturbationKind::Mixture, f)
            }
        };
        theta.normalize_to(mass)?;
        out.push(Perturbation { index, kind, theta });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::ProblemParams;

    #[test]
    fn suite_is_reproducible_and_normalized() {
        let p = ProblemParams::new(3, 4.0 / 3.0, 0.7).unwrap();
        let b = BarenblattProfile::new(&p).unwrap();
        let grid = RadialGrid::new(3, 3.0 * b.support_radius(), 200).unwrap();
        let a = perturbations(&b, &grid, 7, 12).unwrap();
        let again = perturbations(&b, &grid, 7, 12).unwrap();
        let other = perturbations(&b, &grid, 8, 12).unwrap();
        assert_eq!(a, again);
        assert_ne!(a, other);
        for q in &a {
            assert!((q.theta.mass() - 0.7).abs() < 1e-12);
            assert!(q.theta.values().iter().all(|v| *v >= 0.0));
        }
    }

    #[test]
    fn small_grid_rejected() {
        let p = ProblemParams::new(2, 1.0, 1.0).unwrap();
        let b = BarenblattProfile::new(&p).unwrap();
        assert!(perturbations(&b, &RadialGrid::new(2, 2.0, 50).unwrap(), 1, 3).is_err());
    }
}
