//! Numerical tolerances and default limits, in one place.
//!
//! Solver contracts elsewhere in the crate refer to these by name; tests pin
//! against the same constants so a tolerance can never drift silently.

/// Row-stochasticity and centering checks: exact f64 arithmetic territory.
pub const ROW_SUM_TOL: f64 = 1e-12;

/// `|pi . f_c|` after centering.
pub const CENTER_TOL: f64 = 1e-12;

/// Sup-norm residual of `(P - I)g + f_c` on the final truncation.
pub const RESIDUAL_TOL: f64 = 1e-10;

/// `||pi P - pi||_1` for a returned stationary distribution.
pub const PI_RESIDUAL_TOL: f64 = 1e-10;

/// Sup-change on the probe set that ends the truncation-refinement loop.
pub const REFINE_PROBE_TOL: f64 = 1e-8;

/// Agreement between independent solution routes (up to the additive
/// constant where applicable).
pub const METHOD_AGREE_TOL: f64 = 1e-9;

/// Potential-series term threshold: `|E_x f_c(X_n)|` must stay below this
/// for [`GSTAR_TERM_RUN`] consecutive steps.
pub const GSTAR_TERM_TOL: f64 = 1e-10;

/// Consecutive small terms required before declaring convergence.
pub const GSTAR_TERM_RUN: usize = 50;

/// Max spread of the partial sums over the trailing term window.
pub const GSTAR_CAUCHY_TOL: f64 = 1e-9;

/// Absolute partial sums beyond this, with a monotone trend over the second
/// half of the horizon, are declared divergent.
pub const GSTAR_DIVERGENCE_BOUND: f64 = 25.0;

/// Default horizon cap for potential-series accumulation.
pub const GSTAR_HORIZON_CAP: usize = 400_000;

/// Default truncation size cap for the refinement loop.
pub const REFINE_SIZE_CAP: usize = 1 << 21;

/// Default per-cycle step cap for the regenerative simulator.
pub const CYCLE_STEP_CAP: u64 = 100_000_000;

/// Two-sided 95% normal quantile used for confidence intervals.
pub const Z_95: f64 = 1.959_963_984_540_054;
