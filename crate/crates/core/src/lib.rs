//! Numerical core for aggregation-diffusion equations in self-similar variables.
//!
//! The equation `u_t + div(u grad(K*u)) = Lap(u^m)` is evolved in the rescaled
//! frame `x = e^tau eta`, `u = e^{-d tau} theta`, where solutions that dissipate
//! like the pure diffusion equation converge to the stationary Barenblatt
//! ground state. The crate provides
//!
//! * [`params`]: problem parameters, scaling exponents and frame conversions,
//! * [`kernels`]: admissible interaction kernels and the radial velocity field,
//! * [`barenblatt`]: ground states and the self-similar diffusion solutions,
//! * [`solver`]: the positivity preserving finite volume scheme,
//! * [`entropy`]: entropy, entropy production and functional inequality checks,
//! * [`diagnostics`]: trajectory diagnostics, power-law fits and predicted rates.
//!
//! Without the default `std` feature the crate is `no_std` (it still needs
//! `alloc`). The FFT based Cartesian cross-check solver lives in [`cartesian`]
//! and requires `std`.
#![cfg_attr(not(feature = "std"), no_std)]
// `!(x >= a)` rejects NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

extern crate alloc;

pub mod barenblatt;
#[cfg(feature = "std")]
pub mod cartesian;
pub mod diagnostics;
pub mod entropy;
mod error;
pub mod grid;
pub mod kernels;
pub mod params;
pub mod perturb;
pub mod quadrature;
pub mod solver;

pub use error::{Error, Result};

pub use barenblatt::BarenblattProfile;
pub use diagnostics::{DiagnosticsRow, RateReport};
pub use entropy::EntropyReport;
pub use grid::{RadialGrid, RadialGridFunction};
pub use kernels::{KernelKind, KernelSpec};
pub use params::{ProblemParams, Regime};
pub use solver::{Solver, SolverState, Trajectory};

/// Items used across most modules.
pub(crate) mod prelude {
    pub(crate) use alloc::vec;
    pub(crate) use alloc::vec::Vec;
    // Float methods come from libm when `std` is off.
    #[allow(unused_imports)]
    pub(crate) use num_traits::Float;
}
