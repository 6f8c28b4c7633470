//! Poisson's equation on countable-state Markov chains.
//!
//! The crate solves `(P - I) g = -f_c` on validated finite truncations by
//! three routes (regenerative/taboo, direct constrained, potential series),
//! verifies Lyapunov drift certificates with their implied moment bounds,
//! runs regenerative Monte Carlo with confidence intervals, and ships
//! structural diagnostics (residuals, the additive-constant law, harmonic
//! families that break uniqueness, uniform-integrability limits).
//!
//! Orientation:
//! - [`chain`]: kernels, truncations, stationary distributions, centering.
//! - [`gallery`]: reference chains with closed forms.
//! - [`poisson`]: the exact solvers and cycle moments.
//! - [`lyapunov`]: drift inequalities and certificates.
//! - [`regen`]: regenerative simulation, CLT/LIL experiments.
//! - [`diagnostics`]: residual and structure checks.
//! - [`report`]: CSV serialization of results.

pub mod chain;
pub mod constants;
pub mod diagnostics;
pub mod error;
pub mod gallery;
pub mod lyapunov;
pub mod poisson;
pub mod refine;
pub mod regen;
pub mod report;
pub mod sparse;

pub use error::{Error, Result};
