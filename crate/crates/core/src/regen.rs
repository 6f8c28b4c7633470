//! Regenerative Monte Carlo: i.i.d. cycle simulation, ratio estimators with
//! delta-method confidence intervals, and CLT/LIL experiments.
//!
//! Everything draws from deterministic substreams keyed by work-item index,
//! so results are bit-identical for a given master seed no matter how the
//! work is batched. Paths sample the true kernel rows; no truncation is
//! involved.

use std::collections::HashMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::chain::{RealFunction, State, TransitionKernel};
use crate::constants::{CYCLE_STEP_CAP, Z_95};
use crate::error::{Error, Result};
use crate::sparse::Kahan;

/// Deterministic substream factory: identical `(master_seed, stream id)`
/// yields identical draws regardless of scheduling or worker count.
#[derive(Debug, Clone, Copy)]
pub struct RngStreams {
    master_seed: u64,
}

impl RngStreams {
    pub fn new(master_seed: u64) -> Self {
        RngStreams { master_seed }
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    /// An independent stream for work item `id`.
    pub fn stream(&self, id: u64) -> ChaCha12Rng {
        let mut rng = ChaCha12Rng::seed_from_u64(self.master_seed);
        rng.set_stream(id);
        rng
    }
}

/// Where the centering constant for `f_c` came from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Centering {
    /// From an exact truncated solve (or a closed form).
    Exact(f64),
    /// From a pilot simulation of the given number of cycles.
    Pilot { value: f64, cycles: usize },
}

impl Centering {
    pub fn value(&self) -> f64 {
        match *self {
            Centering::Exact(v) => v,
            Centering::Pilot { value, .. } => value,
        }
    }
}

/// Per-cycle accumulators gathered over one regeneration cycle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CycleStats {
    /// Cycle length `tau`.
    pub tau: u64,
    /// `sum f(X_j)`, uncentered.
    pub sum_f: f64,
    /// `sum f_c(X_j)`.
    pub sum_fc: f64,
    /// `sum |f_c(X_j)|`.
    pub sum_abs_fc: f64,
    /// `sum (j+1) |f_c(X_j)|`.
    pub sum_weighted_abs_fc: f64,
    /// `sum (j+1) f_c(X_j)`, signed: the cycle functional whose ratio to
    /// `E tau` recovers `pi g_z`.
    pub sum_weighted_fc: f64,
    /// `(sum f_c)^2`.
    pub sum_fc_sq: f64,
}

/// Inputs shared by every cycle-based estimator.
pub struct CycleSpec<'a> {
    pub kernel: &'a TransitionKernel,
    pub f: &'a RealFunction,
    pub centering: Centering,
    /// Regeneration state.
    pub z: State,
    pub step_cap: u64,
}

impl<'a> CycleSpec<'a> {
    pub fn new(
        kernel: &'a TransitionKernel,
        f: &'a RealFunction,
        centering: Centering,
        z: State,
    ) -> Self {
        CycleSpec { kernel, f, centering, z, step_cap: CYCLE_STEP_CAP }
    }
}

/// Cached cumulative rows for fast repeated sampling.
struct RowSampler<'a> {
    kernel: &'a TransitionKernel,
    rows: HashMap<State, (Vec<State>, Vec<f64>)>,
}

impl<'a> RowSampler<'a> {
    fn new(kernel: &'a TransitionKernel) -> Self {
        RowSampler { kernel, rows: HashMap::new() }
    }

    fn step(&mut self, x: State, u: f64) -> State {
        let kernel = self.kernel;
        let (targets, cum) = self.rows.entry(x).or_insert_with(|| {
            let row = kernel.row(x);
            let mut targets = Vec::with_capacity(row.len());
            let mut cum = Vec::with_capacity(row.len());
            let mut acc = 0.0;
            for (t, p) in row {
                acc += p;
                targets.push(t);
                cum.push(acc);
            }
            (targets, cum)
        });
        for (i, &c) in cum.iter().enumerate() {
            if u < c {
                return targets[i];
            }
        }
        *targets.last().expect("nonempty row")
    }
}

fn walk_cycle(
    sampler: &mut RowSampler<'_>,
    f: &RealFunction,
    pi_f: f64,
    start: State,
    z: State,
    cap: u64,
    rng: &mut ChaCha12Rng,
) -> Result<CycleStats> {
    let mut state = start;
    let mut j: u64 = 0;
    let mut sum_f = Kahan::new();
    let mut sum_fc = Kahan::new();
    let mut sum_abs = Kahan::new();
    let mut sum_wabs = Kahan::new();
    let mut sum_w = Kahan::new();
    loop {
        let fv = f.eval(state);
        let fc = fv - pi_f;
        sum_f.add(fv);
        sum_fc.add(fc);
        sum_abs.add(fc.abs());
        let weight = (j + 1) as f64;
        sum_wabs.add(weight * fc.abs());
        sum_w.add(weight * fc);
        state = sampler.step(state, rng.random::<f64>());
        j += 1;
        if state == z {
            break;
        }
        if j >= cap {
            return Err(Error::CycleLengthCap { start, state, cap });
        }
    }
    let s_fc = sum_fc.value();
    Ok(CycleStats {
        tau: j,
        sum_f: sum_f.value(),
        sum_fc: s_fc,
        sum_abs_fc: sum_abs.value(),
        sum_weighted_abs_fc: sum_wabs.value(),
        sum_weighted_fc: sum_w.value(),
        sum_fc_sq: s_fc * s_fc,
    })
}

/// Simulates one regeneration cycle from `z` back to `z` on the true kernel.
pub fn simulate_cycle(spec: &CycleSpec<'_>, rng: &mut ChaCha12Rng) -> Result<CycleStats> {
    let mut sampler = RowSampler::new(spec.kernel);
    walk_cycle(
        &mut sampler,
        spec.f,
        spec.centering.value(),
        spec.z,
        spec.z,
        spec.step_cap,
        rng,
    )
}

/// Which cycle functional a ratio estimator averages against `E tau`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Numerator {
    /// `pi f`.
    SumF,
    /// `pi |f_c|`.
    SumAbsFc,
    /// The second-order condition functional `E sum (j+1) |f_c| / E tau`.
    SumWeightedAbsFc,
    /// `pi g_z` (signed `(j+1)`-weighted cycle sum over `E tau`).
    SumWeightedFc,
    /// `sigma^2` (squared centered cycle sum over `E tau`).
    SumFcSq,
}

impl Numerator {
    pub fn extract(&self, s: &CycleStats) -> f64 {
        match self {
            Numerator::SumF => s.sum_f,
            Numerator::SumAbsFc => s.sum_abs_fc,
            Numerator::SumWeightedAbsFc => s.sum_weighted_abs_fc,
            Numerator::SumWeightedFc => s.sum_weighted_fc,
            Numerator::SumFcSq => s.sum_fc_sq,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Numerator::SumF => "sum_f",
            Numerator::SumAbsFc => "sum_abs_fc",
            Numerator::SumWeightedAbsFc => "sum_weighted_abs_fc",
            Numerator::SumWeightedFc => "sum_weighted_fc",
            Numerator::SumFcSq => "sum_fc_sq",
        }
    }
}

/// A point estimate with a 95% confidence half-width.
#[derive(Debug, Clone, Copy)]
pub struct RatioEstimate {
    pub point: f64,
    pub ci_half_width: f64,
    pub n_cycles: usize,
    pub centering: Centering,
}

impl RatioEstimate {
    pub fn covers(&self, truth: f64) -> bool {
        (self.point - truth).abs() <= self.ci_half_width
    }
}

/// Regenerative ratio estimator: mean selected cycle functional over mean
/// cycle length, CI by the delta method over i.i.d. cycles. Cycle `i` draws
/// from stream `stream_base + i`.
pub fn estimate_ratio(
    spec: &CycleSpec<'_>,
    numerator: Numerator,
    n_cycles: usize,
    streams: &RngStreams,
    stream_base: u64,
) -> Result<RatioEstimate> {
    if n_cycles < 100 {
        return Err(Error::InvalidInput(format!(
            "need at least 100 cycles, got {n_cycles}"
        )));
    }
    let mut sampler = RowSampler::new(spec.kernel);
    let pi_f = spec.centering.value();
    let mut ys = Vec::with_capacity(n_cycles);
    let mut ts = Vec::with_capacity(n_cycles);
    let mut sum_y = Kahan::new();
    let mut sum_t = Kahan::new();
    for i in 0..n_cycles {
        let mut rng = streams.stream(stream_base + i as u64);
        let stats = walk_cycle(
            &mut sampler,
            spec.f,
            pi_f,
            spec.z,
            spec.z,
            spec.step_cap,
            &mut rng,
        )?;
        let y = numerator.extract(&stats);
        ys.push(y);
        ts.push(stats.tau as f64);
        sum_y.add(y);
        sum_t.add(stats.tau as f64);
    }
    let mean_y = sum_y.value() / n_cycles as f64;
    let mean_t = sum_t.value() / n_cycles as f64;
    let point = mean_y / mean_t;
    let mut var = Kahan::new();
    for (y, t) in ys.iter().zip(&ts) {
        let r = y - point * t;
        var.add(r * r);
    }
    let s2 = var.value() / (n_cycles as f64 - 1.0);
    let ci_half_width = Z_95 * (s2 / n_cycles as f64).sqrt() / mean_t;
    Ok(RatioEstimate { point, ci_half_width, n_cycles, centering: spec.centering })
}

/// Monte Carlo `g_z(x)`: the mean centered cycle sum over paths from `x`
/// stopped at the first visit to `z`.
pub fn estimate_gz(
    spec: &CycleSpec<'_>,
    x: State,
    n_paths: usize,
    streams: &RngStreams,
    stream_base: u64,
) -> Result<RatioEstimate> {
    if n_paths < 100 {
        return Err(Error::InvalidInput(format!("need at least 100 paths, got {n_paths}")));
    }
    let mut sampler = RowSampler::new(spec.kernel);
    let pi_f = spec.centering.value();
    let mut vals = Vec::with_capacity(n_paths);
    let mut sum = Kahan::new();
    for i in 0..n_paths {
        let mut rng = streams.stream(stream_base + i as u64);
        let stats = walk_cycle(
            &mut sampler,
            spec.f,
            pi_f,
            x,
            spec.z,
            spec.step_cap,
            &mut rng,
        )?;
        vals.push(stats.sum_fc);
        sum.add(stats.sum_fc);
    }
    let mean = sum.value() / n_paths as f64;
    let mut var = Kahan::new();
    for v in &vals {
        let d = v - mean;
        var.add(d * d);
    }
    let sd = (var.value() / (n_paths as f64 - 1.0)).sqrt();
    Ok(RatioEstimate {
        point: mean,
        ci_half_width: Z_95 * sd / (n_paths as f64).sqrt(),
        n_cycles: n_paths,
        centering: spec.centering,
    })
}

/// Pilot estimate of `pi f` over regeneration cycles, for when no exact
/// solve is available.
pub fn pilot_pi_f(
    kernel: &TransitionKernel,
    f: &RealFunction,
    z: State,
    cycles: usize,
    streams: &RngStreams,
    stream_base: u64,
) -> Result<Centering> {
    let spec = CycleSpec::new(kernel, f, Centering::Exact(0.0), z);
    let est = estimate_ratio(&spec, Numerator::SumF, cycles, streams, stream_base)?;
    Ok(Centering::Pilot { value: est.point, cycles })
}

/// One-sample Kolmogorov-Smirnov distance to the standard normal.
pub fn ks_distance_std_normal(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    let n = sorted.len() as f64;
    let mut d = 0.0f64;
    for (i, &x) in sorted.iter().enumerate() {
        let phi = normal.cdf(x);
        d = d.max((phi - i as f64 / n).abs());
        d = d.max(((i + 1) as f64 / n - phi).abs());
    }
    d
}

/// Result of a CLT replication experiment.
#[derive(Debug)]
pub struct CltReport {
    /// KS distance of the standardized sums to N(0,1).
    pub ks_distance: f64,
    /// Sample estimate of sigma from the replications.
    pub sigma_hat: f64,
    /// True when `sigma = 0` made standardization impossible.
    pub degenerate: bool,
    /// Standardized values `(S_n - n pi f) / (sigma sqrt n)`, one per
    /// replication.
    pub standardized: Vec<f64>,
}

/// Simulates `reps` paths of length `n` from `start`, standardizes
/// `S_n(f)` by the exact `sigma`, and measures the KS distance to N(0,1).
/// Replication `r` draws from stream `stream_base + r`.
#[allow(clippy::too_many_arguments)]
pub fn clt_experiment(
    kernel: &TransitionKernel,
    f: &RealFunction,
    pi_f: f64,
    sigma: f64,
    start: State,
    n: usize,
    reps: usize,
    streams: &RngStreams,
    stream_base: u64,
) -> CltReport {
    if sigma.abs() < 1e-12 {
        return CltReport {
            ks_distance: f64::NAN,
            sigma_hat: 0.0,
            degenerate: true,
            standardized: Vec::new(),
        };
    }
    let mut sampler = RowSampler::new(kernel);
    let sqrt_n = (n as f64).sqrt();
    let mut scaled: Vec<f64> = Vec::with_capacity(reps);
    for r in 0..reps {
        let mut rng = streams.stream(stream_base + r as u64);
        let mut state = start;
        let mut s = Kahan::new();
        for _ in 0..n {
            s.add(f.eval(state));
            state = sampler.step(state, rng.random::<f64>());
        }
        scaled.push((s.value() - n as f64 * pi_f) / sqrt_n);
    }
    let mean: f64 = scaled.iter().sum::<f64>() / reps as f64;
    let var: f64 =
        scaled.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (reps as f64 - 1.0);
    let sigma_hat = var.sqrt();
    let standardized: Vec<f64> = scaled.iter().map(|v| v / sigma).collect();
    let ks_distance = ks_distance_std_normal(&standardized);
    CltReport { ks_distance, sigma_hat, degenerate: false, standardized }
}

/// Trajectory of the iterated-logarithm statistic along one path.
#[derive(Debug)]
pub struct LilReport {
    /// Log-spaced samples `(n, L_n, running sup of L up to n)`.
    pub points: Vec<(u64, f64, f64)>,
    /// Sup of `L_n` over the final decade `[n_max/10, n_max]`.
    pub final_decade_sup: f64,
    pub degenerate: bool,
}

/// Runs one path of length `n_max` and tracks
/// `L_n = |S_n - n pi f| / (sigma sqrt(n log log n))` from `n = 100`.
#[allow(clippy::too_many_arguments)]
pub fn lil_experiment(
    kernel: &TransitionKernel,
    f: &RealFunction,
    pi_f: f64,
    sigma: f64,
    start: State,
    n_max: u64,
    streams: &RngStreams,
    stream_id: u64,
) -> LilReport {
    if sigma.abs() < 1e-12 || n_max < 100 {
        return LilReport { points: Vec::new(), final_decade_sup: 0.0, degenerate: true };
    }
    let mut sampler = RowSampler::new(kernel);
    let mut rng = streams.stream(stream_id);
    let mut state = start;
    let mut s = Kahan::new();
    let mut running_sup = 0.0f64;
    let mut final_sup = 0.0f64;
    let decade_start = n_max / 10;
    let mut points = Vec::new();
    let mut next_record: u64 = 100;
    for n in 1..=n_max {
        s.add(f.eval(state));
        state = sampler.step(state, rng.random::<f64>());
        if n < 100 {
            continue;
        }
        let nf = n as f64;
        let norm = sigma * (nf * nf.ln().ln()).sqrt();
        let l = (s.value() - nf * pi_f).abs() / norm;
        running_sup = running_sup.max(l);
        if n >= decade_start {
            final_sup = final_sup.max(l);
        }
        if n >= next_record || n == n_max {
            points.push((n, l, running_sup));
            next_record = ((n as f64 * 1.05) as u64).max(n + 1);
        }
    }
    LilReport { points, final_decade_sup: final_sup, degenerate: false }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::{build_truncation, TruncationOptions};
    use crate::gallery;
    use crate::poisson::{self, MomentOrder};

    #[test]
    fn streams_are_deterministic_and_independent() {
        let s = RngStreams::new(42);
        let a: Vec<f64> = {
            let mut r = s.stream(7);
            (0..8).map(|_| r.random::<f64>()).collect()
        };
        let b: Vec<f64> = {
            let mut r = s.stream(7);
            (0..8).map(|_| r.random::<f64>()).collect()
        };
        assert_eq!(a, b);
        let c: Vec<f64> = {
            let mut r = s.stream(8);
            (0..8).map(|_| r.random::<f64>()).collect()
        };
        assert_ne!(a, c);
    }

    #[test]
    fn deterministic_flip_has_constant_cycles() {
        let g = gallery::two_state(1.0, 1.0).unwrap();
        let f = RealFunction::indicator(&[1]);
        let spec = CycleSpec::new(&g.kernel, &f, Centering::Exact(0.5), 0);
        let streams = RngStreams::new(1);
        for i in 0..50 {
            let stats = simulate_cycle(&spec, &mut streams.stream(i)).unwrap();
            assert_eq!(stats.tau, 2);
            assert_eq!(stats.sum_f, 1.0);
            assert!((stats.sum_fc - 0.0).abs() < 1e-15);
        }
    }

    #[test]
    fn cycle_stats_invariants_hold() {
        let g = gallery::birth_death(0.3).unwrap();
        let f = RealFunction::identity();
        let spec = CycleSpec::new(&g.kernel, &f, Centering::Exact(0.75), 0);
        let streams = RngStreams::new(9);
        for i in 0..200 {
            let s = simulate_cycle(&spec, &mut streams.stream(i)).unwrap();
            assert!(s.tau >= 1);
            assert!(s.sum_abs_fc >= s.sum_fc.abs() - 1e-12);
            assert!(s.sum_weighted_abs_fc >= s.sum_abs_fc - 1e-12);
            assert!((s.sum_fc_sq - s.sum_fc * s.sum_fc).abs() < 1e-9);
        }
    }

    #[test]
    fn mean_cycle_length_matches_kac() {
        // E_0 tau = 1 / pi(0) = 2 on the symmetric two-state chain.
        let g = gallery::two_state(0.5, 0.5).unwrap();
        let f = RealFunction::indicator(&[1]);
        let spec = CycleSpec::new(&g.kernel, &f, Centering::Exact(0.5), 0);
        let streams = RngStreams::new(17);
        let n = 100_000usize;
        let mut total = 0u64;
        for i in 0..n {
            total += simulate_cycle(&spec, &mut streams.stream(i as u64)).unwrap().tau;
        }
        let mean = total as f64 / n as f64;
        // sd of the mean is sqrt(2/n) ~ 0.0045; allow five of those.
        assert!((mean - 2.0).abs() < 0.025, "mean tau {mean}");
    }

    #[test]
    fn ratio_estimator_covers_exact_values() {
        let g = gallery::two_state(0.5, 0.5).unwrap();
        let f = RealFunction::indicator(&[1]);
        let spec = CycleSpec::new(&g.kernel, &f, Centering::Exact(0.5), 0);
        let streams = RngStreams::new(3);

        let est = estimate_ratio(&spec, Numerator::SumF, 20_000, &streams, 0).unwrap();
        assert!(est.covers(0.5), "pi f: {} +- {}", est.point, est.ci_half_width);

        let est = estimate_ratio(&spec, Numerator::SumFcSq, 20_000, &streams, 1 << 32).unwrap();
        assert!(est.covers(0.25), "sigma^2: {} +- {}", est.point, est.ci_half_width);

        // pi g_z through the signed weighted field: exact value 1/2.
        let est =
            estimate_ratio(&spec, Numerator::SumWeightedFc, 20_000, &streams, 2 << 32).unwrap();
        assert!(est.covers(0.5), "pi g_z: {} +- {}", est.point, est.ci_half_width);
    }

    #[test]
    fn zero_fc_has_zero_variance() {
        let g = gallery::two_state(0.5, 0.5).unwrap();
        let f = RealFunction::constant(1.0);
        let spec = CycleSpec::new(&g.kernel, &f, Centering::Exact(1.0), 0);
        let streams = RngStreams::new(5);
        let est = estimate_ratio(&spec, Numerator::SumFcSq, 1000, &streams, 0).unwrap();
        assert_eq!(est.point, 0.0);
        assert_eq!(est.ci_half_width, 0.0);
    }

    #[test]
    fn ratio_estimator_rejects_tiny_runs() {
        let g = gallery::two_state(0.5, 0.5).unwrap();
        let f = RealFunction::indicator(&[1]);
        let spec = CycleSpec::new(&g.kernel, &f, Centering::Exact(0.5), 0);
        let streams = RngStreams::new(5);
        assert!(matches!(
            estimate_ratio(&spec, Numerator::SumF, 10, &streams, 0),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn estimate_gz_matches_oracles() {
        let g = gallery::two_state(0.5, 0.5).unwrap();
        let f = RealFunction::indicator(&[1]);
        let spec = CycleSpec::new(&g.kernel, &f, Centering::Exact(0.5), 0);
        let streams = RngStreams::new(11);

        // g_0(1) = 1.
        let est = estimate_gz(&spec, 1, 20_000, &streams, 0).unwrap();
        assert!(est.covers(1.0), "g(1): {} +- {}", est.point, est.ci_half_width);

        // Full cycle from z: E_z sum f_c = 0.
        let est = estimate_gz(&spec, 0, 20_000, &streams, 1 << 32).unwrap();
        assert!(est.covers(0.0), "g(0): {} +- {}", est.point, est.ci_half_width);
    }

    #[test]
    fn estimate_gz_cross_validates_against_exact_solver() {
        let g = gallery::birth_death(0.3).unwrap();
        let chain = build_truncation(g.kernel.clone(), 128, TruncationOptions::default()).unwrap();
        let f = RealFunction::identity();
        let pi_f = poisson::refined_pi_f(&chain, &f).unwrap();
        let f_c = f.shifted(pi_f);
        let exact = poisson::solve_gz(&chain, &f_c, 0).unwrap();

        let spec = CycleSpec::new(&g.kernel, &f, Centering::Exact(pi_f), 0);
        let streams = RngStreams::new(23);
        let est = estimate_gz(&spec, 5, 40_000, &streams, 0).unwrap();
        // 99% interval: scale the 95% half-width by 2.576/1.96.
        let wide = est.ci_half_width * 2.576 / 1.96;
        let truth = exact.values()[5];
        assert!(
            (est.point - truth).abs() <= wide,
            "MC {} +- {wide} vs exact {truth}",
            est.point
        );
    }

    #[test]
    fn mean_sum_f_matches_pi_f_times_e_tau() {
        let g = gallery::birth_death(0.3).unwrap();
        let chain = build_truncation(g.kernel.clone(), 128, TruncationOptions::default()).unwrap();
        let f = RealFunction::identity();
        let pi_f = poisson::refined_pi_f(&chain, &f).unwrap();
        let e_tau = poisson::cycle_moment(
            &chain,
            &poisson::CycleMomentQuery {
                weight: RealFunction::constant(1.0),
                start: 0,
                taboo: 0,
                order: MomentOrder::First,
            },
        )
        .unwrap()
        .value;

        let spec = CycleSpec::new(&g.kernel, &f, Centering::Exact(pi_f), 0);
        let streams = RngStreams::new(29);
        let n = 40_000usize;
        let mut sum = Kahan::new();
        let mut sq = Kahan::new();
        for i in 0..n {
            let s = simulate_cycle(&spec, &mut streams.stream(i as u64)).unwrap();
            sum.add(s.sum_f);
            sq.add(s.sum_f * s.sum_f);
        }
        let mean = sum.value() / n as f64;
        let sd = ((sq.value() / n as f64 - mean * mean) / n as f64).sqrt();
        let truth = pi_f * e_tau;
        assert!(
            (mean - truth).abs() < 3.5 * sd,
            "mean {mean} vs pi_f * E tau = {truth} (sd {sd})"
        );
    }

    #[test]
    fn pilot_centering_is_recorded() {
        let g = gallery::two_state(0.5, 0.5).unwrap();
        let f = RealFunction::indicator(&[1]);
        let streams = RngStreams::new(31);
        let c = pilot_pi_f(&g.kernel, &f, 0, 5000, &streams, 0).unwrap();
        match c {
            Centering::Pilot { value, cycles } => {
                assert_eq!(cycles, 5000);
                assert!((value - 0.5).abs() < 0.05);
            }
            Centering::Exact(_) => panic!("expected pilot centering"),
        }
    }

    #[test]
    fn clt_experiment_is_reproducible_and_reasonable() {
        let g = gallery::two_state(0.5, 0.5).unwrap();
        let f = RealFunction::indicator(&[1]);
        let streams = RngStreams::new(1234);
        let a = clt_experiment(&g.kernel, &f, 0.5, 0.5, 0, 2000, 400, &streams, 0);
        let b = clt_experiment(&g.kernel, &f, 0.5, 0.5, 0, 2000, 400, &streams, 0);
        assert_eq!(a.standardized, b.standardized, "same seed, same bits");
        assert!(a.ks_distance < 1.36 / (400.0f64).sqrt() + 0.02, "ks {}", a.ks_distance);
        assert!((a.sigma_hat - 0.5).abs() < 0.08, "sigma_hat {}", a.sigma_hat);
    }

    #[test]
    fn clt_experiment_degenerate_for_constant_f() {
        let g = gallery::two_state(0.5, 0.5).unwrap();
        let f = RealFunction::constant(2.0);
        let streams = RngStreams::new(1);
        let r = clt_experiment(&g.kernel, &f, 2.0, 0.0, 0, 100, 10, &streams, 0);
        assert!(r.degenerate);
    }

    #[test]
    fn lil_statistic_stays_in_band_on_a_moderate_run() {
        let g = gallery::two_state(0.5, 0.5).unwrap();
        let f = RealFunction::indicator(&[1]);
        let streams = RngStreams::new(7);
        let r = lil_experiment(&g.kernel, &f, 0.5, 0.5, 0, 100_000, &streams, 0);
        assert!(!r.degenerate);
        assert!(
            r.final_decade_sup > 0.2 && r.final_decade_sup < 2.0,
            "final decade sup {}",
            r.final_decade_sup
        );
        // Points are recorded in increasing n with a monotone running sup.
        for w in r.points.windows(2) {
            assert!(w[1].0 > w[0].0);
            assert!(w[1].2 >= w[0].2);
        }
    }

    #[test]
    fn lil_degenerate_for_constant_f() {
        let g = gallery::two_state(0.5, 0.5).unwrap();
        let f = RealFunction::constant(3.0);
        let streams = RngStreams::new(2);
        let r = lil_experiment(&g.kernel, &f, 3.0, 0.0, 0, 10_000, &streams, 0);
        assert!(r.degenerate);
        assert!(r.points.is_empty());
    }

    #[test]
    fn ks_distance_detects_shifted_samples() {
        let streams = RngStreams::new(99);
        let mut rng = streams.stream(0);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let sample: Vec<f64> =
            (0..4000).map(|_| normal.inverse_cdf(rng.random::<f64>())).collect();
        let d = ks_distance_std_normal(&sample);
        assert!(d < 0.03, "true normal sample: {d}");
        let shifted: Vec<f64> = sample.iter().map(|x| x + 0.5).collect();
        assert!(ks_distance_std_normal(&shifted) > 0.15);
    }
}
