//! Residual and structure checks: Poisson/harmonic residuals, the
//! additive-constant law, the uniform-integrability limit that singles out
//! the regenerative solution, and the hub-and-rails harmonic family that
//! breaks naive uniqueness.

use std::collections::HashMap;

use crate::chain::{RealFunction, State, TruncatedChain};
use crate::error::{Error, Result};
use crate::gallery::rails_coords;
use crate::poisson::{
    cycle_moment_signed, refined_pi_f_with, solve_gz, MomentOrder, SolveOptions,
};
use crate::sparse::{two_sum, Kahan};

/// `sup_x |(P g)(x) - g(x) + f_c(x)|` over interior (non-leaky) window
/// states, with compensated row accumulation.
pub fn poisson_residual(chain: &TruncatedChain, g: &RealFunction, f_c: &RealFunction) -> f64 {
    let m = chain.matrix();
    let mut sup = 0.0f64;
    for x in chain.interior_states() {
        let (cols, vals) = m.row(x);
        let mut sum = f_c.eval(x) - g.eval(x);
        let mut comp = 0.0;
        for (&c, &v) in cols.iter().zip(vals) {
            let gval = g.eval(c);
            let p = v * gval;
            let perr = v.mul_add(gval, -p);
            let (s, serr) = two_sum(sum, p);
            sum = s;
            comp += serr + perr;
        }
        sup = sup.max((sum + comp).abs());
    }
    sup
}

/// `sup_x |(P h)(x) - h(x)|` over the window, evaluated against the ORIGINAL
/// kernel rows; boundary rows reach beyond the window, so `h` must be
/// evaluable there (closed form).
pub fn harmonic_residual(chain: &TruncatedChain, h: &RealFunction) -> Result<f64> {
    let kernel = chain.kernel();
    let mut sup = 0.0f64;
    for x in 0..chain.size() {
        let mut sum = -h.eval(x);
        let mut comp = 0.0;
        for (t, p) in kernel.row(x) {
            let hval = h.maybe_eval(t).ok_or_else(|| {
                Error::InvalidInput(format!(
                    "harmonic residual needs h at state {t}, beyond the dense window"
                ))
            })?;
            let prod = p * hval;
            let perr = p.mul_add(hval, -prod);
            let (s, serr) = two_sum(sum, prod);
            sum = s;
            comp += serr + perr;
        }
        sup = sup.max((sum + comp).abs());
    }
    Ok(sup)
}

/// Outcome of the additive-constant check between two reference states.
#[derive(Debug, Clone, Copy)]
pub struct ConstantDiffReport {
    pub is_constant: bool,
    /// Mean of `g_z - g_y` over the common window.
    pub constant: f64,
    /// Sup-deviation of the difference from its mean.
    pub max_deviation: f64,
    /// `g_z(y)`, which the constant must equal.
    pub gz_at_y: f64,
}

/// Solves for both `g_z` and `g_y` and verifies their difference is the
/// constant vector `g_z(y) e`.
pub fn constant_diff_check(
    chain: &TruncatedChain,
    f_c: &RealFunction,
    z: State,
    y: State,
) -> Result<ConstantDiffReport> {
    let gz = solve_gz(chain, f_c, z)?;
    let gy = solve_gz(chain, f_c, y)?;
    let n = gz.values().len().min(gy.values().len());
    let mut mean = Kahan::new();
    for i in 0..n {
        mean.add(gz.values()[i] - gy.values()[i]);
    }
    let constant = mean.value() / n as f64;
    let mut dev = 0.0f64;
    for i in 0..n {
        dev = dev.max((gz.values()[i] - gy.values()[i] - constant).abs());
    }
    Ok(ConstantDiffReport {
        is_constant: dev <= 1e-9,
        constant,
        max_deviation: dev,
        gz_at_y: gz.values()[y],
    })
}

/// Coefficients of a hub-and-rails harmonic function
/// `h(i, j) = h(0) + b_j ((q/p)^i - 1)`.
#[derive(Debug, Clone)]
pub struct HarmonicSpec {
    /// `h(0)`.
    pub base: f64,
    /// One coefficient per rail, summing to zero.
    pub coeffs: Vec<f64>,
    /// Inner up-step probability of the rails, `p` in `(0, 1/2)`.
    pub p: f64,
}

/// Builds the harmonic function of a [`crate::gallery::rails`] chain from
/// its spec. Non-constant members grow like `(q/p)^i` along a rail and fail
/// to be `pi`-integrable.
///
/// The hub balance equation ties the coefficients to the rail weights: the
/// function is harmonic for a chain with weights `r` iff
/// `sum_j r_j b_j = 0`. With equal rail weights that reduces to the
/// zero-sum constraint enforced here, so specs of this shape should be
/// paired with equal-weight rails.
pub fn rails_harmonic(spec: &HarmonicSpec) -> Result<RealFunction> {
    if !(spec.p > 0.0 && spec.p < 0.5) {
        return Err(Error::InvalidInput(format!("p = {} outside (0, 1/2)", spec.p)));
    }
    if spec.coeffs.is_empty() {
        return Err(Error::InvalidInput("no rail coefficients".into()));
    }
    let mut total = Kahan::new();
    for &b in &spec.coeffs {
        total.add(b);
    }
    let total = total.value();
    if total.abs() > 1e-14 {
        return Err(Error::CoefficientSumNonzero(total));
    }
    let ratio = (1.0 - spec.p) / spec.p;
    let base = spec.base;
    let coeffs = spec.coeffs.clone();
    let nr = coeffs.len();
    Ok(RealFunction::from_fn(move |x| match rails_coords(x, nr) {
        None => base,
        Some((i, j)) => base + coeffs[j - 1] * (ratio.powi(i as i32) - 1.0),
    }))
}

/// Sequence and verdict of the uniform-integrability limit check for the
/// stopped process `M_n = g(X_{tau(z) and n}) + sum_{j < tau(z) and n}
/// f_c(X_j)` started at `x`.
#[derive(Debug)]
pub struct UiLimitReport {
    /// `E_x |M_n|` for `n = 0..=n_max`, computed exactly.
    pub expectation_seq: Vec<f64>,
    /// The limit target `E_x |sum_{j < tau(z)} f_c(X_j)|`.
    pub target: f64,
    /// `|E_x |M_{n_max}| - target|`.
    pub gap: f64,
    /// `E_x[M_{n_max}] - g_z(x)`: the additive offset the martingale
    /// identifies (`c` for `g = g_z + c e`).
    pub recovered_offset: f64,
    /// Probability of the cycle still running at `n_max`.
    pub live_mass_at_nmax: f64,
    /// Live mass left when target accumulation stopped (bounds its error).
    pub target_tail_mass: f64,
}

/// Caps for the exact stopped-process recursion.
#[derive(Debug, Clone, Copy)]
pub struct UiLimitOptions {
    /// Largest state index the recursion may visit.
    pub state_cap: usize,
    /// Extra steps past `n_max` to exhaust the target expectation.
    pub extend_cap: usize,
    /// Bucket-count cap (distinct `(state, sum)` pairs).
    pub bucket_cap: usize,
}

impl Default for UiLimitOptions {
    fn default() -> Self {
        UiLimitOptions { state_cap: 1 << 22, extend_cap: 100_000, bucket_cap: 4_000_000 }
    }
}

/// Forward recursion on the exact distribution of `(X_{tau and n}, stopped
/// sum)`. Sums are tracked as integer count vectors over the distinct values
/// `f_c` takes on the visited states, so the expectation sequence is exact;
/// the target is exhausted by running the absorption past `n_max` until the
/// live mass vanishes.
pub fn ui_limit_check(
    chain: &TruncatedChain,
    g: &RealFunction,
    f_c: &RealFunction,
    z: State,
    x: State,
    n_max: usize,
) -> Result<UiLimitReport> {
    ui_limit_check_with(chain, g, f_c, z, x, n_max, &UiLimitOptions::default())
}

pub fn ui_limit_check_with(
    chain: &TruncatedChain,
    g: &RealFunction,
    f_c: &RealFunction,
    z: State,
    x: State,
    n_max: usize,
    options: &UiLimitOptions,
) -> Result<UiLimitReport> {
    let kernel = chain.kernel().clone();
    let gz_report = solve_gz(chain, f_c, z)?;
    if x >= gz_report.values().len() {
        return Err(Error::InvalidInput(format!("start state {x} outside the solve window")));
    }

    // Distinct f_c values, discovered as states are visited. Count vectors
    // are stored with trailing zeros trimmed so keys stay canonical.
    let mut values: Vec<f64> = Vec::new();
    let value_index = |fc: f64, values: &mut Vec<f64>| -> Result<usize> {
        if let Some(i) = values.iter().position(|&v| v == fc) {
            return Ok(i);
        }
        if values.len() >= 12 {
            return Err(Error::InvalidInput(
                "stopped-sum recursion needs f_c with few distinct values on the \
                 visited states (got more than 12)"
                    .into(),
            ));
        }
        values.push(fc);
        Ok(values.len() - 1)
    };
    let dot = |counts: &[u16], values: &[f64]| -> f64 {
        let mut s = 0.0;
        for (c, v) in counts.iter().zip(values) {
            s += *c as f64 * v;
        }
        s
    };

    type Bucket = (State, Box<[u16]>);
    let mut live: HashMap<Bucket, f64> = HashMap::new();
    live.insert((x, Vec::new().into_boxed_slice()), 1.0);

    let mut absorbed_abs_with_g = Kahan::new();
    let mut absorbed_abs_plain = Kahan::new();
    let mut absorbed_signed = Kahan::new();
    let gz_value = g.eval(z);

    let eval_live = |live: &HashMap<Bucket, f64>,
                     values: &[f64],
                     with_g: bool|
     -> Result<(f64, f64)> {
        // (E contribution to |M_n| or |sum|, signed contribution)
        let mut abs_acc = Kahan::new();
        let mut signed_acc = Kahan::new();
        for ((s, counts), p) in live {
            let sum = dot(counts, values);
            let m = if with_g {
                g.maybe_eval(*s).ok_or_else(|| {
                    Error::HorizonWindowTooSmall(format!(
                        "g not evaluable at visited state {s}"
                    ))
                })? + sum
            } else {
                sum
            };
            abs_acc.add(p * m.abs());
            signed_acc.add(p * m);
        }
        Ok((abs_acc.value(), signed_acc.value()))
    };

    let mut expectation_seq = Vec::with_capacity(n_max + 1);
    let (live_abs, live_signed) = eval_live(&live, &values, true)?;
    expectation_seq.push(live_abs);
    let mut signed_at_nmax = live_signed;
    let mut live_mass_at_nmax = 1.0;

    let total_steps = n_max + options.extend_cap;
    let mut step = 0usize;
    while step < total_steps {
        step += 1;
        let mut next: HashMap<Bucket, f64> = HashMap::with_capacity(live.len() * 2);
        for ((s, counts), p) in live.drain() {
            let fc = f_c.maybe_eval(s).ok_or_else(|| {
                Error::HorizonWindowTooSmall(format!("f_c not evaluable at state {s}"))
            })?;
            let vi = value_index(fc, &mut values)?;
            let mut counts_vec: Vec<u16> = counts.into_vec();
            if counts_vec.len() <= vi {
                counts_vec.resize(vi + 1, 0);
            }
            counts_vec[vi] = counts_vec[vi]
                .checked_add(1)
                .ok_or_else(|| Error::InvalidInput("count overflow in sum bucket".into()))?;
            while counts_vec.last() == Some(&0) {
                counts_vec.pop();
            }
            let new_counts: Box<[u16]> = counts_vec.into_boxed_slice();
            for (t, q) in kernel.row(s) {
                if t > options.state_cap {
                    return Err(Error::HorizonWindowTooSmall(format!(
                        "recursion reached state {t} beyond the cap {}",
                        options.state_cap
                    )));
                }
                let mass = p * q;
                if t == z {
                    let sum = dot(&new_counts, &values);
                    absorbed_abs_with_g.add(mass * (gz_value + sum).abs());
                    absorbed_abs_plain.add(mass * sum.abs());
                    absorbed_signed.add(mass * (gz_value + sum));
                } else {
                    *next.entry((t, new_counts.clone())).or_insert(0.0) += mass;
                }
            }
        }
        live = next;
        if live.len() > options.bucket_cap {
            return Err(Error::InvalidInput(format!(
                "stopped-sum recursion exceeded {} buckets",
                options.bucket_cap
            )));
        }

        if step <= n_max {
            let (live_abs, live_signed) = eval_live(&live, &values, true)?;
            expectation_seq.push(absorbed_abs_with_g.value() + live_abs);
            if step == n_max {
                signed_at_nmax = absorbed_signed.value() + live_signed;
                live_mass_at_nmax = live.values().sum();
            }
        } else if live.is_empty() || live.values().sum::<f64>() < 1e-16 {
            break;
        }
    }

    let target_tail_mass: f64 = live.values().sum();
    let target = absorbed_abs_plain.value();

    let gap = (expectation_seq[n_max] - target).abs();
    let recovered_offset = signed_at_nmax - gz_report.values()[x];
    Ok(UiLimitReport {
        expectation_seq,
        target,
        gap,
        recovered_offset,
        live_mass_at_nmax,
        target_tail_mass,
    })
}

/// Joint finiteness report for the second-order cycle moment of `|f_c|`
/// across reference states.
#[derive(Debug)]
pub struct SolidarityReport {
    /// `(z, moment value, diverged)` per reference state.
    pub per_state: Vec<(State, f64, bool)>,
    /// All finite or all divergent.
    pub consistent: bool,
}

/// Computes the `(j+1)`-weighted cycle moment of `|f_c|` at each reference
/// state and reports whether finiteness is shared. Centering uses the given
/// window's stationary law; the finite/divergent verdict is insensitive to
/// the centering constant.
pub fn solidarity_check(
    chain: &TruncatedChain,
    f: &RealFunction,
    z_list: &[State],
) -> Result<SolidarityReport> {
    if z_list.len() < 2 {
        return Err(Error::InvalidInput("need at least two reference states".into()));
    }
    let pi_f = match refined_pi_f_with(chain, f, 1e-10) {
        Ok(v) => v,
        // Heavy tails can leave pi f unresolvable at that precision; the
        // finite/divergent verdict below does not depend on it.
        Err(_) => crate::chain::stationary_dist(chain)?.expect(f),
    };
    let f_c_abs = f.shifted(pi_f).abs();
    let opts = SolveOptions::default();
    let mut per_state = Vec::with_capacity(z_list.len());
    for &z in z_list {
        let m = cycle_moment_signed(chain, &f_c_abs, z, z, MomentOrder::Second, true, &opts);
        match m {
            Ok(m) => per_state.push((z, m.value, m.diverged)),
            Err(Error::TruncationNotConverged(_)) => {
                per_state.push((z, f64::NAN, false));
            }
            Err(e) => return Err(e),
        }
    }
    let any_diverged = per_state.iter().any(|&(_, _, d)| d);
    let all_diverged = per_state.iter().all(|&(_, _, d)| d);
    Ok(SolidarityReport { consistent: !any_diverged || all_diverged, per_state })
}
