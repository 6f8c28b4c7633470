//! Truncation-refinement loop shared by the exact solvers.
//!
//! Solvers re-solve at window sizes `N, 2N, 4N, ...` until a probe set of
//! values stops moving, the kernel's full (finite) state space is covered, or
//! a size cap is hit. Heavy-tailed quantities that grow without stabilizing
//! are recognized by their accelerating increments and flagged as divergent
//! rather than erroring.

use std::sync::Arc;

use crate::chain::{build_truncation, TransitionKernel, TruncatedChain, TruncationOptions};
use crate::error::{Error, Result};

/// One refinement step: the window size solved and the sup-change of the
/// probe values against the previous window (infinite for the first).
#[derive(Debug, Clone, Copy)]
pub struct TraceEntry {
    pub size: usize,
    pub probe_change: f64,
}

/// A converged refinement.
#[derive(Debug)]
pub struct Refined<T> {
    pub value: T,
    pub probe_values: Vec<f64>,
    pub chain: TruncatedChain,
    pub trace: Vec<TraceEntry>,
}

/// Outcome of a refinement run.
#[derive(Debug)]
pub enum RefineOutcome<T> {
    Converged(Refined<T>),
    /// Probe values grew with accelerating increments: the limiting quantity
    /// is infinite (heavy-tail divergence).
    Diverged { trace: Vec<TraceEntry>, last_values: Vec<f64> },
}

pub struct RefineConfig {
    pub start_size: usize,
    pub size_cap: usize,
    pub probe_tol: f64,
    /// Whether accelerating growth should be reported as divergence.
    pub detect_divergence: bool,
}

/// Runs `solve` over doubling windows. The closure returns the carried value
/// and the probe values used for the convergence test (which must keep a
/// fixed length across windows).
pub fn refine_solve<T>(
    kernel: &Arc<TransitionKernel>,
    options: TruncationOptions,
    config: &RefineConfig,
    mut solve: impl FnMut(&TruncatedChain) -> Result<(T, Vec<f64>)>,
) -> Result<RefineOutcome<T>> {
    if config.start_size < 2 {
        return Err(Error::InvalidInput(format!(
            "refinement start size {} < 2",
            config.start_size
        )));
    }
    let mut size = config.start_size;
    let mut trace: Vec<TraceEntry> = Vec::new();
    let mut prev: Option<(T, Vec<f64>, TruncatedChain)> = None;
    let mut sups: Vec<f64> = Vec::new();

    loop {
        let chain = build_truncation(kernel.clone(), size, options)?;
        let exact = chain.size() < size || chain.max_leak() == 0.0;
        let (value, probes) = solve(&chain)?;
        if let Some((_, ref old, _)) = prev {
            debug_assert_eq!(old.len(), probes.len(), "probe set changed length");
        }

        let change = match &prev {
            None => f64::INFINITY,
            Some((_, old, _)) => old
                .iter()
                .zip(&probes)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max),
        };
        trace.push(TraceEntry { size: chain.size(), probe_change: change });
        sups.push(probes.iter().fold(0.0f64, |m, v| m.max(v.abs())));

        // A window that covers the whole (finite) space, or one that leaked
        // nothing, is exact: no refinement error remains.
        if exact || change <= config.probe_tol {
            return Ok(RefineOutcome::Converged(Refined {
                value,
                probe_values: probes,
                chain,
                trace,
            }));
        }

        if config.detect_divergence && diverging(&sups) {
            return Ok(RefineOutcome::Diverged { trace, last_values: probes });
        }

        prev = Some((value, probes, chain));
        if size >= config.size_cap {
            let summary: Vec<String> = trace
                .iter()
                .map(|t| format!("{}:{:.3e}", t.size, t.probe_change))
                .collect();
            return Err(Error::TruncationNotConverged(format!(
                "size cap {} reached; probe changes [{}]",
                config.size_cap,
                summary.join(", ")
            )));
        }
        size = (size * 2).min(config.size_cap);
    }
}

/// Accelerating-growth test on the probe sup-values: the last three
/// increments are positive and non-shrinking, with substantial total growth.
/// Slowly converging sequences have collapsing increments and fall through to
/// the size cap instead.
fn diverging(sups: &[f64]) -> bool {
    if sups.len() < 4 {
        return false;
    }
    let d: Vec<f64> = sups.windows(2).map(|w| w[1] - w[0]).collect();
    let k = d.len();
    let tail = &d[k - 3..];
    let growing = tail.iter().all(|&x| x > 0.0)
        && tail.windows(2).all(|w| w[1] >= 1.05 * w[0]);
    let total = sups[sups.len() - 1] >= 2.0 * sups[0].max(1e-12) && sups[sups.len() - 1] > 1.0;
    growing && total
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diverging_flags_square_root_growth() {
        // value(W) ~ sqrt(W): doubling multiplies increments by sqrt(2).
        let sups: Vec<f64> = (0..8).map(|k| 2.0f64.powi(k).sqrt() * 10.0).collect();
        assert!(diverging(&sups));
    }

    #[test]
    fn diverging_ignores_saturating_growth() {
        // value(W) = 100 - c / W: increments halve each doubling.
        let sups: Vec<f64> = (0..8).map(|k| 100.0 - 50.0 / 2.0f64.powi(k)).collect();
        assert!(!diverging(&sups));
    }
}
