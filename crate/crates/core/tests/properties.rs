//! Property tests over randomized instances: truncation invariants,
//! the zero-sum harmonic family, centering, and the additive-constant law.

use std::sync::Arc;

use proptest::prelude::*;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use markov_poisson::chain::{
    build_truncation, center, stationary_dist, LeakPolicy, RealFunction, TransitionKernel,
    TruncationOptions,
};
use markov_poisson::diagnostics::{constant_diff_check, harmonic_residual, HarmonicSpec};
use markov_poisson::gallery;
use markov_poisson::poisson::refined_pi_f;

/// A random strongly connected kernel: a ring plus extra edges, rows
/// normalized exactly.
fn random_kernel(seed: u64, n: usize) -> Arc<TransitionKernel> {
    let mut rng = StdRng::seed_from_u64(seed);
    let mut rows: Vec<Vec<(usize, f64)>> = Vec::with_capacity(n);
    for i in 0..n {
        let mut targets = vec![(i + 1) % n];
        for _ in 0..rng.random_range(0..3usize) {
            let t = rng.random_range(0..n);
            if !targets.contains(&t) {
                targets.push(t);
            }
        }
        let weights: Vec<f64> = targets.iter().map(|_| rng.random_range(0.1..1.0)).collect();
        let total: f64 = weights.iter().sum();
        let mut row: Vec<(usize, f64)> = targets
            .iter()
            .zip(&weights)
            .map(|(&t, &w)| (t, w / total))
            .collect();
        // Pin the row sum to exactly 1.
        let head: f64 = row[1..].iter().map(|&(_, p)| p).sum();
        row[0].1 = 1.0 - head;
        rows.push(row);
    }
    Arc::new(TransitionKernel::new(format!("random({seed})"), Some(n), move |x| {
        rows[x].clone()
    }))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    /// Row stochasticity survives truncation under both leak policies.
    #[test]
    fn truncation_rows_stay_stochastic(seed in any::<u64>(), n in 4usize..40) {
        let kernel = random_kernel(seed, n);
        for policy in [LeakPolicy::RedirectSelf, LeakPolicy::Renormalize] {
            let opts = TruncationOptions { policy, leak_cap: 1.0 };
            // Both the exact window and a leaky half window.
            for size in [n, (n / 2).max(2)] {
                let chain = match build_truncation(kernel.clone(), size, opts) {
                    Ok(c) => c,
                    // A half window may disconnect; that is a valid refusal.
                    Err(markov_poisson::Error::NotIrreducible(_)) => continue,
                    Err(e) => return Err(TestCaseError::fail(format!("{e}"))),
                };
                for x in 0..chain.size() {
                    let (_, vals) = chain.matrix().row(x);
                    let sum: f64 = vals.iter().sum();
                    prop_assert!((sum - 1.0).abs() <= 1e-12, "row {x} sums to {sum}");
                    prop_assert!(vals.iter().all(|&v| v >= 0.0));
                }
            }
        }
    }

    /// pi P = pi within tolerance and centering kills the mean, on random
    /// finite chains.
    #[test]
    fn stationary_and_centering_invariants(seed in any::<u64>(), n in 4usize..32) {
        let kernel = random_kernel(seed, n);
        let chain = build_truncation(kernel, n, TruncationOptions::default()).unwrap();
        let pi = stationary_dist(&chain).unwrap();
        prop_assert!(pi.residual() <= 1e-10);
        let total: f64 = pi.probs().iter().sum();
        prop_assert!((total - 1.0).abs() <= 1e-12);

        let mut rng = StdRng::seed_from_u64(seed ^ 0x5eed);
        let f = RealFunction::dense((0..n).map(|_| rng.random_range(-5.0..5.0)).collect());
        let (f_c, _) = center(&f, &pi);
        prop_assert!(pi.expect(&f_c).abs() <= 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    /// Zero-sum coefficient vectors give harmonic functions of equal-weight
    /// rails chains, across p and rail counts, within the window where
    /// (q/p)^i stays f64-representable at the target accuracy.
    #[test]
    fn zero_sum_specs_are_harmonic(
        p in 0.05f64..0.45,
        base in -2.0f64..2.0,
        head in proptest::collection::vec(-1.0f64..1.0, 1..4),
    ) {
        let mut coeffs = head.clone();
        let s: f64 = head.iter().sum();
        coeffs.push(-s);
        let nr = coeffs.len();
        let weights = vec![0.5 / nr as f64; nr];
        let g = gallery::rails(p, &weights).unwrap();

        let ratio = (1.0 - p) / p;
        let imax = ((5.0 / ratio.log10()).floor() as usize).clamp(2, 40);
        let chain = build_truncation(
            g.kernel,
            1 + imax * nr,
            TruncationOptions::default(),
        )
        .unwrap();
        let h = markov_poisson::diagnostics::rails_harmonic(&HarmonicSpec {
            base,
            coeffs,
            p,
        })
        .unwrap();
        let r = harmonic_residual(&chain, &h).unwrap();
        prop_assert!(r <= 1e-10, "residual {r} at p = {p}, {nr} rails");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    /// The additive-constant law across random walk parameters and
    /// reference pairs.
    #[test]
    fn additive_constant_across_parameters(
        p in 0.1f64..0.45,
        z in 0usize..8,
        y in 0usize..8,
    ) {
        prop_assume!(z != y);
        let g = gallery::birth_death(p).unwrap();
        let chain = build_truncation(g.kernel, 64, TruncationOptions::default()).unwrap();
        let f = RealFunction::identity();
        let pi_f = refined_pi_f(&chain, &f).unwrap();
        let f_c = f.shifted(pi_f);
        let r = constant_diff_check(&chain, &f_c, z, y).unwrap();
        prop_assert!(r.is_constant, "deviation {}", r.max_deviation);
        prop_assert!((r.constant - r.gz_at_y).abs() <= 1e-9);
    }
}
