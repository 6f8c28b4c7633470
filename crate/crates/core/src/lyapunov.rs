//! Drift (Foster-Lyapunov) inequality checking and certificates.
//!
//! The basic check verifies `E_x v(X_1) <= v(x) - w(x)` at every window
//! state outside a finite set `K`, evaluating the ORIGINAL kernel row at
//! leak-modified boundary states so a certificate never endorses an artifact
//! of leak redirection (this requires closed-form `v`, `w` whenever a row
//! leaves the window). The implied bound `E_x sum_{j<tau(z)} w(X_j) <=
//! v(x) + c` carries the constant `c = d * max_{y,z in K} E_y gamma(z)`,
//! computed exactly on the chain of successive K-visits.
//!
//! On top of that sit the drift ladder (return-time, |f|, and second-order
//! conditions with their conclusions), the two-condition CLT certificate,
//! and a synthesizer for the reflected-walk family with `v_1 = a x^2`,
//! `v_2 = a' x^4`.

use crate::chain::{RealFunction, State, TransitionKernel, TruncatedChain};
use crate::error::{Error, Result};
use crate::sparse::{CsrMatrix, Kahan, SparseLu};

/// How the exception set `K` is chosen.
#[derive(Debug, Clone)]
pub enum KSpec {
    Fixed(Vec<State>),
    /// Start from `initial` and absorb violating states, as long as they
    /// form a finite prefix and the set stays within `max_size`.
    AutoGrow { initial: Vec<State>, max_size: usize },
}

impl KSpec {
    pub fn fixed(states: &[State]) -> Self {
        KSpec::Fixed(states.to_vec())
    }
}

/// A verified drift inequality with its implied cycle-sum bound.
#[derive(Debug, Clone)]
pub struct DriftCertificate {
    pub v: RealFunction,
    pub w: RealFunction,
    pub k_set: Vec<State>,
    /// `max_{x in K} [E_x v(X_1) - v(x) + w(x)]`.
    pub d: f64,
    /// `min_{x in K^c} [v(x) - w(x) - E_x v(X_1)]` over the checked window.
    pub margin: f64,
    pub worst_state: Option<State>,
    pub verified: bool,
    /// `c` in the bound `E_x sum_{j<tau(z)} w(X_j) <= v(x) + c`, `z in K`.
    pub bound_constant: f64,
    /// Whether `K` was enlarged beyond the caller's initial set.
    pub grown: bool,
    /// Window size the check ran on.
    pub window: usize,
}

impl DriftCertificate {
    /// The implied bound `v(x) + c` on `E_x sum_{j<tau(z)} w(X_j)`.
    pub fn bound_at(&self, x: State) -> f64 {
        self.v.eval(x) + self.bound_constant
    }

    /// Human-readable certificate summary.
    pub fn render(&self, name: &str) -> String {
        format!(
            "{name}: {} | K = {:?} | margin = {:.6e}{} | d = {:.6e} | c = {:.6e} | window = {}",
            if self.verified { "VERIFIED" } else { "violated" },
            self.k_set,
            self.margin,
            self.worst_state
                .map(|s| format!(" (worst at {s})"))
                .unwrap_or_default(),
            self.d,
            self.bound_constant,
            self.window,
        )
    }
}

/// `E_x v(X_1)` against the original kernel row; targets beyond the window
/// need a closed-form `v`.
fn expect_after_step(kernel: &TransitionKernel, v: &RealFunction, x: State) -> Result<f64> {
    let mut acc = Kahan::new();
    for (t, p) in kernel.row(x) {
        match v.maybe_eval(t) {
            Some(val) => acc.add(p * val),
            None => {
                return Err(Error::InvalidInput(format!(
                    "drift check needs a closed-form function: row {x} reaches state {t} \
                     outside the dense window"
                )))
            }
        }
    }
    Ok(acc.value())
}

fn nonnegative_on_window(f: &RealFunction, n: usize, what: &str) -> Result<()> {
    for x in 0..n {
        let v = f.eval(x);
        if v.is_nan() || v < 0.0 {
            return Err(Error::InvalidInput(format!("{what} is negative at state {x}: {v}")));
        }
    }
    Ok(())
}

/// Allowed numerical slack in a margin that is exactly zero in real
/// arithmetic.
fn margin_slack(scale: f64) -> f64 {
    1e-12 * (1.0 + scale.abs())
}

/// Verifies `E_x v(X_1) <= v(x) - w(x)` for `x` outside `K` over the whole
/// window, and computes the implied bound constant.
pub fn check_drift(
    chain: &TruncatedChain,
    v: &RealFunction,
    w: &RealFunction,
    k: &KSpec,
) -> Result<DriftCertificate> {
    let n = chain.size();
    let kernel = chain.kernel().clone();
    nonnegative_on_window(v, n, "v")?;
    nonnegative_on_window(w, n, "w")?;

    let (mut k_set, grow_cap) = match k {
        KSpec::Fixed(s) => (s.clone(), None),
        KSpec::AutoGrow { initial, max_size } => (initial.clone(), Some(*max_size)),
    };
    k_set.sort_unstable();
    k_set.dedup();
    if k_set.is_empty() || k_set.iter().any(|&s| s >= n) {
        return Err(Error::InvalidInput("K must be a nonempty subset of the window".into()));
    }

    let mut grown = false;
    let (margin, worst) = loop {
        let mut in_k = vec![false; n];
        for &s in &k_set {
            in_k[s] = true;
        }
        let mut min_margin = f64::INFINITY;
        let mut worst = None;
        let mut violators: Vec<State> = Vec::new();
        for (x, &in_k_x) in in_k.iter().enumerate() {
            if in_k_x {
                continue;
            }
            let pv = expect_after_step(&kernel, v, x)?;
            let vx = v.eval(x);
            if !pv.is_finite() {
                violators.push(x);
                min_margin = f64::NEG_INFINITY;
                worst = Some(x);
                continue;
            }
            let m = vx - w.eval(x) - pv;
            if m < min_margin {
                min_margin = m;
                worst = Some(x);
            }
            if m < -margin_slack(vx.max(pv.abs())) {
                violators.push(x);
            }
        }
        if violators.is_empty() {
            break (min_margin, worst);
        }
        let finite_prefix = violators.iter().all(|&x| (x as f64) < 0.9 * n as f64);
        let can_grow = match grow_cap {
            Some(cap) => finite_prefix && k_set.len() + violators.len() <= cap,
            None => false,
        };
        if !can_grow {
            let worst_state = *violators
                .iter()
                .min_by(|&&a, &&b| {
                    let ma = drift_margin(&kernel, v, w, a).unwrap_or(f64::NEG_INFINITY);
                    let mb = drift_margin(&kernel, v, w, b).unwrap_or(f64::NEG_INFINITY);
                    ma.partial_cmp(&mb).unwrap_or(std::cmp::Ordering::Equal)
                })
                .unwrap();
            let worst_margin = drift_margin(&kernel, v, w, worst_state)?;
            let mut listed = violators.clone();
            listed.truncate(32);
            return Err(Error::DriftViolated {
                count: violators.len(),
                worst_state,
                worst_margin,
                states: listed,
            });
        }
        k_set.extend(violators);
        k_set.sort_unstable();
        k_set.dedup();
        grown = true;
    };

    // d over K, with the finiteness check this is the home of.
    let mut d = f64::NEG_INFINITY;
    for &x in &k_set {
        let pv = expect_after_step(&kernel, v, x)?;
        if !pv.is_finite() {
            return Err(Error::UnboundedAtK(x));
        }
        d = d.max(pv - v.eval(x) + w.eval(x));
    }

    let c = if d <= 0.0 { 0.0 } else { d * max_skeleton_passage(chain, &k_set)? };

    Ok(DriftCertificate {
        v: v.clone(),
        w: w.clone(),
        k_set,
        d,
        margin,
        worst_state: worst,
        verified: true,
        bound_constant: c,
        grown,
        window: n,
    })
}

fn drift_margin(
    kernel: &TransitionKernel,
    v: &RealFunction,
    w: &RealFunction,
    x: State,
) -> Result<f64> {
    Ok(v.eval(x) - w.eval(x) - expect_after_step(kernel, v, x)?)
}

/// `max_{y,z in K} E_y gamma(z)` where `gamma` counts steps of the
/// K-skeleton chain (the chain of successive K-visits) until it reaches `z`.
fn max_skeleton_passage(chain: &TruncatedChain, k_set: &[State]) -> Result<f64> {
    let n = chain.size();
    let m = chain.matrix();
    let kn = k_set.len();
    let mut k_pos = vec![usize::MAX; n];
    for (i, &s) in k_set.iter().enumerate() {
        k_pos[s] = i;
    }

    // Hitting distribution H(w, z') = P_w(first K state hit is z') for w
    // outside K: one factorization of I - P restricted to the complement,
    // one solve per target.
    let comp: Vec<State> = (0..n).filter(|&x| k_pos[x] == usize::MAX).collect();
    let mut comp_pos = vec![usize::MAX; n];
    for (i, &s) in comp.iter().enumerate() {
        comp_pos[s] = i;
    }
    let cn = comp.len();
    let mut hit = vec![vec![0.0f64; kn]; cn];
    if cn > 0 {
        let mut rows: Vec<Vec<(usize, f64)>> = Vec::with_capacity(cn);
        for (ci, &x) in comp.iter().enumerate() {
            let (cols, vals) = m.row(x);
            let mut row: Vec<(usize, f64)> = Vec::with_capacity(cols.len() + 1);
            let mut diag = 1.0;
            for (&c, &v) in cols.iter().zip(vals) {
                if comp_pos[c] == usize::MAX {
                    continue;
                }
                if comp_pos[c] == ci {
                    diag -= v;
                } else {
                    row.push((comp_pos[c], -v));
                }
            }
            row.push((ci, diag));
            rows.push(row);
        }
        let a = CsrMatrix::from_rows(cn, &rows);
        let lu = SparseLu::factor(&a)?;
        for (zi, &z) in k_set.iter().enumerate() {
            let mut rhs = vec![0.0f64; cn];
            for (ci, &x) in comp.iter().enumerate() {
                let (cols, vals) = m.row(x);
                for (&c, &v) in cols.iter().zip(vals) {
                    if c == z {
                        rhs[ci] += v;
                    }
                }
            }
            let h = lu.solve(&rhs);
            for (ci, hv) in h.iter().enumerate() {
                hit[ci][zi] = *hv;
            }
        }
    }

    // Skeleton transition matrix T on K.
    let mut t = vec![vec![0.0f64; kn]; kn];
    for (yi, &y) in k_set.iter().enumerate() {
        let (cols, vals) = m.row(y);
        for (&c, &v) in cols.iter().zip(vals) {
            if k_pos[c] != usize::MAX {
                t[yi][k_pos[c]] += v;
            } else {
                let ci = comp_pos[c];
                for zi in 0..kn {
                    t[yi][zi] += v * hit[ci][zi];
                }
            }
        }
    }

    // E_y gamma(z): mu = 1 + (T with column z zeroed) mu.
    let mut worst = 0.0f64;
    for zi in 0..kn {
        let mut rows: Vec<Vec<(usize, f64)>> = Vec::with_capacity(kn);
        for (yi, trow) in t.iter().enumerate() {
            let mut row: Vec<(usize, f64)> = Vec::with_capacity(kn);
            let mut diag = 1.0;
            for (ci, &tv) in trow.iter().enumerate() {
                if ci == zi || tv == 0.0 {
                    continue;
                }
                if ci == yi {
                    diag -= tv;
                } else {
                    row.push((ci, -tv));
                }
            }
            row.push((yi, diag));
            rows.push(row);
        }
        let a = CsrMatrix::from_rows(kn, &rows);
        let lu = SparseLu::factor(&a)?;
        let mu = lu.solve(&vec![1.0f64; kn]);
        for &e in &mu {
            worst = worst.max(e);
        }
    }
    Ok(worst)
}

/// Per-condition outcome inside multi-condition certificates.
#[derive(Debug)]
pub enum CondOutcome {
    Certified(DriftCertificate),
    Failed(String),
}

impl CondOutcome {
    pub fn is_certified(&self) -> bool {
        matches!(self, CondOutcome::Certified(_))
    }

    pub fn certificate(&self) -> Option<&DriftCertificate> {
        match self {
            CondOutcome::Certified(c) => Some(c),
            CondOutcome::Failed(_) => None,
        }
    }
}

/// What a drift ladder establishes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Conclusion {
    /// The chain is positive recurrent with a unique stationary law.
    PositiveRecurrent,
    /// The regenerative solution exists, `f` is `pi`-integrable, and the
    /// associated martingale is integrable.
    RegenerativeSolutionValid,
    /// First-moment asymptotics and the summable potential series hold.
    PotentialSeriesValid,
}

/// The three-condition drift ladder and its conclusions.
#[derive(Debug)]
pub struct LadderCertificate {
    /// `(P v1)(x) <= v1(x) - 1` off K.
    pub return_time: CondOutcome,
    /// `(P v2)(x) <= v2(x) - |f(x)|` off K.
    pub f_integrable: CondOutcome,
    /// `(P v3)(x) <= v3(x) - v1(x)` off K.
    pub second_order_time: CondOutcome,
    /// `(P v4)(x) <= v4(x) - v2(x)` off K.
    pub second_order_f: CondOutcome,
    pub conclusions: Vec<Conclusion>,
}

impl LadderCertificate {
    pub fn render(&self) -> String {
        let line = |name: &str, c: &CondOutcome| match c {
            CondOutcome::Certified(cert) => cert.render(name),
            CondOutcome::Failed(msg) => format!("{name}: FAILED ({msg})"),
        };
        format!(
            "{}\n{}\n{}\n{}\nconclusions: {:?}",
            line("return-time drift (v1, 1)", &self.return_time),
            line("|f| drift (v2, |f|)", &self.f_integrable),
            line("second-order time drift (v3, v1)", &self.second_order_time),
            line("second-order |f| drift (v4, v2)", &self.second_order_f),
            self.conclusions
        )
    }
}

/// Checks the drift ladder for `f` (supplied uncentered; the conditions use
/// `|f|`) and derives the conclusion set: positive recurrence from the
/// return-time condition, validity of the regenerative solution when the
/// `|f|` condition joins it, and the potential-series conclusions when both
/// second-order conditions hold as well.
pub fn certify_ladder(
    chain: &TruncatedChain,
    f: &RealFunction,
    v1: &RealFunction,
    v2: &RealFunction,
    v3: &RealFunction,
    v4: &RealFunction,
    k: &KSpec,
) -> LadderCertificate {
    let run = |v: &RealFunction, w: RealFunction| -> CondOutcome {
        match check_drift(chain, v, &w, k) {
            Ok(c) => CondOutcome::Certified(c),
            Err(e) => CondOutcome::Failed(e.to_string()),
        }
    };
    let return_time = run(v1, RealFunction::constant(1.0));
    let f_integrable = run(v2, f.abs());
    let second_order_time = run(v3, v1.clone());
    let second_order_f = run(v4, v2.clone());

    let mut conclusions = Vec::new();
    if return_time.is_certified() {
        conclusions.push(Conclusion::PositiveRecurrent);
        if f_integrable.is_certified() {
            conclusions.push(Conclusion::RegenerativeSolutionValid);
            if second_order_time.is_certified() && second_order_f.is_certified() {
                conclusions.push(Conclusion::PotentialSeriesValid);
            }
        }
    }
    LadderCertificate {
        return_time,
        f_integrable,
        second_order_time,
        second_order_f,
        conclusions,
    }
}

/// The two-condition certificate that guarantees the CLT and LIL for
/// `S_n(f)`: `(P v1)(x) <= v1(x) - (|f(x)| + 1)` and
/// `(P v2)(x) <= v2(x) - (|f(x)| + 1) v1(x)` off `K`.
#[derive(Debug)]
pub struct CltCertificate {
    pub first: DriftCertificate,
    pub second: DriftCertificate,
    /// Bound constants from the two drift inequalities.
    pub c1: f64,
    pub c2: f64,
}

impl CltCertificate {
    /// Proof-chain bound on `E_x (sum_{j<tau(z)} (|f(X_j)| + 1))^2`.
    pub fn second_moment_bound(&self, x: State) -> f64 {
        2.0 * (self.second.v.eval(x) + self.c2) + self.c1 * (self.first.v.eval(x) + self.c1)
    }

    /// Bound on `E_x (tau(z) + sum_{j<tau(z)} |f(X_j)|)`.
    pub fn first_moment_bound(&self, x: State) -> f64 {
        self.first.v.eval(x) + self.c1
    }

    pub fn render(&self) -> String {
        let z = self.first.k_set[0];
        format!(
            "{}\n{}\ncertifies: positive recurrence, pi-integrable f, square-integrable \
             cycle sums, CLT and LIL for S_n(f)\nfirst-moment bound at {z}: {:.6e}\n\
             second-moment bound at {z}: {:.6e}",
            self.first.render("drift (v1, |f|+1)"),
            self.second.render("drift (v2, (|f|+1) v1)"),
            self.first_moment_bound(z),
            self.second_moment_bound(z),
        )
    }
}

/// Verifies both CLT drift inequalities; a failure reports which inequality
/// broke while the error carries the violating states.
pub fn certify_clt(
    chain: &TruncatedChain,
    f: &RealFunction,
    v1: &RealFunction,
    v2: &RealFunction,
    k: &KSpec,
) -> Result<CltCertificate> {
    let fa = f.abs();
    let w1 = {
        let fa = fa.clone();
        RealFunction::from_fn(move |x| fa.eval(x) + 1.0)
    };
    let w2 = {
        let fa = fa.clone();
        let v1 = v1.clone();
        RealFunction::from_fn(move |x| (fa.eval(x) + 1.0) * v1.eval(x))
    };
    let first = check_drift(chain, v1, &w1, k)?;
    let second = check_drift(chain, v2, &w2, k)?;
    let c1 = first.bound_constant;
    let c2 = second.bound_constant;
    Ok(CltCertificate { first, second, c1, c2 })
}

/// A synthesized Lyapunov pair for the reflected walk with `f(x) = x`.
#[derive(Debug, Clone)]
pub struct QueueCertificate {
    /// `v1(x) = a x^2`.
    pub a: f64,
    /// `v2(x) = a' x^4`.
    pub a_prime: f64,
    /// `K = {0, ..., k_max}`.
    pub k_max: State,
}

impl QueueCertificate {
    pub fn v1(&self) -> RealFunction {
        let a = self.a;
        RealFunction::from_fn(move |x| a * (x as f64) * (x as f64))
    }

    pub fn v2(&self) -> RealFunction {
        let ap = self.a_prime;
        RealFunction::from_fn(move |x| {
            let xf = x as f64;
            ap * xf * xf * xf * xf
        })
    }

    pub fn k_set(&self) -> Vec<State> {
        (0..=self.k_max).collect()
    }
}

fn reflected_moment(increments: &[(i64, f64)], x: i64, pow: u32) -> f64 {
    let mut acc = Kahan::new();
    for &(z, p) in increments {
        let t = (x + z).max(0) as f64;
        acc.add(p * t.powi(pow as i32));
    }
    acc.value()
}

/// Synthesizes `(a, a', K)` so that `v1 = a x^2`, `v2 = a' x^4` satisfy the
/// CLT drift pair for the reflected walk with `f(x) = x`.
///
/// Scaling: `a = 1 / |EZ|` puts slope exactly one on the linear margin of
/// the first inequality, and `a' = a / (2 |EZ|)` keeps the cubic margin's
/// leading coefficient at `a`; these are the smallest round scalings that
/// leave a strictly negative asymptotic drift. `K` covers every violating
/// state, the scan bounded by a Cauchy root bound beyond which no violation
/// can exist.
pub fn queue_certificate(increments: &[(i64, f64)]) -> Result<QueueCertificate> {
    if increments.is_empty() {
        return Err(Error::InvalidInput("empty increment law".into()));
    }
    let mut total = 0.0;
    let mut m = [0.0f64; 5];
    for &(z, p) in increments {
        if !(p > 0.0 && p <= 1.0) {
            return Err(Error::InvalidInput(format!("increment probability {p}")));
        }
        total += p;
        let zf = z as f64;
        for (k, mk) in m.iter_mut().enumerate() {
            *mk += p * zf.powi(k as i32);
        }
    }
    if (total - 1.0).abs() > 1e-12 {
        return Err(Error::InvalidInput(format!("increment law sums to {total}")));
    }
    let m1 = m[1];
    if m1 >= 0.0 {
        return Err(Error::Infeasible(format!(
            "EZ = {m1} >= 0: no quadratic-quartic pair exists"
        )));
    }
    let a = 1.0 / (-m1);
    let a_prime = a / (2.0 * (-m1));

    // Past the reflection region both margins are polynomials; all real
    // roots lie below the Cauchy bound 1 + max |coeff| / |leading|.
    let reflect = increments.iter().map(|&(z, _)| (-z).max(0)).max().unwrap();
    // margin1 = x - (1 + a m2);
    // margin2 = a x^3 - (6 a' m2 + a) x^2 - 4 a' m3 x - a' m4.
    let cubic = [
        a,
        -(6.0 * a_prime * m[2] + a),
        -4.0 * a_prime * m[3],
        -a_prime * m[4],
    ];
    let cauchy = 1.0
        + cubic[1..]
            .iter()
            .map(|c| (c / cubic[0]).abs())
            .fold(0.0, f64::max);
    let x_bound = (reflect as f64).max(1.0 + a * m[2]).max(cauchy).ceil() as i64 + 2;

    let mut k_max: i64 = 0;
    for x in 0..=x_bound {
        let xf = x as f64;
        let v1x = a * xf * xf;
        let v2x = a_prime * xf.powi(4);
        let w1 = xf + 1.0;
        let w2 = (xf + 1.0) * v1x;
        let margin1 = v1x - w1 - a * reflected_moment(increments, x, 2);
        let margin2 = v2x - w2 - a_prime * reflected_moment(increments, x, 4);
        if margin1 < 1e-9 || margin2 < 1e-9 {
            k_max = x;
        }
    }
    if k_max >= x_bound {
        return Err(Error::Infeasible(
            "violations persist to the asymptotic root bound".into(),
        ));
    }
    Ok(QueueCertificate { a, a_prime, k_max: k_max as usize })
}
