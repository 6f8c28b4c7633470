//! Crate-wide error type.

use thiserror::Error;

/// Errors surfaced by chain construction, solvers, certificates, and the
/// simulation engine.
#[derive(Debug, Error)]
pub enum Error {
    /// The positive-entry graph of a truncation is not strongly connected.
    #[error("truncated chain is not irreducible: {0}")]
    NotIrreducible(String),

    /// A truncation row lost more mass than the configured cap allows.
    #[error("row {state} leaks {leak:.6e}, exceeding the cap {cap:.6e}")]
    LeakTooLarge { state: usize, leak: f64, cap: f64 },

    /// A linear solve failed (zero pivot or non-finite values).
    #[error("singular linear system: {0}")]
    SingularSystem(String),

    /// The truncation-refinement loop hit its size cap before the probe set
    /// stabilized.
    #[error("truncation refinement did not converge: {0}")]
    TruncationNotConverged(String),

    /// An operation requiring aperiodicity was called on a periodic chain.
    #[error("chain is periodic with period {0}")]
    PeriodicChain(usize),

    /// Potential-series accumulation hit the horizon cap with neither a
    /// convergence nor a divergence verdict.
    #[error("horizon cap {0} reached without a convergence or divergence verdict")]
    HorizonExceeded(usize),

    /// A moment condition required by the operation does not hold.
    #[error("moment condition violated: {0}")]
    ConditionViolated(String),

    /// The drift inequality failed outside K.
    #[error("drift inequality violated at {count} state(s); worst at state {worst_state} with margin {worst_margin:.6e}")]
    DriftViolated {
        count: usize,
        worst_state: usize,
        worst_margin: f64,
        /// Violating states, capped for display.
        states: Vec<usize>,
    },

    /// `E_x v(X_1)` failed to be finite at a state of K.
    #[error("Pv is not finite at state {0} in K")]
    UnboundedAtK(usize),

    /// No Lyapunov pair of the requested family exists.
    #[error("no feasible certificate: {0}")]
    Infeasible(String),

    /// Increment law with nonnegative mean: the reflected walk is null
    /// recurrent or transient.
    #[error("increment law has mean {0}; the reflected walk is null recurrent or transient")]
    NullOrTransient(f64),

    /// Tail exponent out of range for the current-age chain.
    #[error("invalid tail: {0}")]
    InvalidTail(String),

    /// Harmonic coefficients must sum to zero.
    #[error("harmonic coefficients must sum to zero, got {0:.3e}")]
    CoefficientSumNonzero(f64),

    /// A simulated regeneration cycle exceeded the step cap.
    #[error("cycle from state {start} exceeded {cap} steps (reached state {state}); possible null recurrence or a bad return state")]
    CycleLengthCap { start: usize, state: usize, cap: u64 },

    /// The stopped-process recursion cannot be made horizon-exact within the
    /// window cap.
    #[error("window too small for horizon-exact computation: {0}")]
    HorizonWindowTooSmall(String),

    /// Malformed argument or configuration.
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

pub type Result<T> = std::result::Result<T, Error>;
