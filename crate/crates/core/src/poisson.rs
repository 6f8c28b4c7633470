//! Exact solvers for Poisson's equation `(P - I) g = -f_c` on truncations,
//! plus cycle moments and the transient-mean asymptote.
//!
//! Three routes to a solution:
//! - `solve_gz`: the regenerative representation, a taboo linear system with
//!   transitions into the reference state `z` deleted; `g(z) = 0` by
//!   construction.
//! - `solve_direct`: the constrained solve of `(P - I) g = -f_c` with the
//!   row of `z` replaced by `g(z) = 0`.
//! - `solve_gstar`: the potential series `sum_n E_x f_c(X_n)`, accumulated by
//!   iterated matrix-vector products with convergence and divergence
//!   detection at a probe set.
//!
//! All solvers re-solve over doubling windows until the probe values settle.
//! Within each window the right-hand side is re-centered against that
//! window's own stationary distribution, so refinement is not polluted by the
//! centering constant of the starting window; residuals are always reported
//! against the caller's `f_c`.

use crate::chain::{
    detect_period, stationary_dist, RealFunction, State, TruncatedChain,
};
use crate::constants::{
    GSTAR_CAUCHY_TOL, GSTAR_DIVERGENCE_BOUND, GSTAR_TERM_RUN, GSTAR_TERM_TOL, REFINE_PROBE_TOL,
    REFINE_SIZE_CAP,
};
use crate::error::{Error, Result};
use crate::refine::{refine_solve, RefineConfig, RefineOutcome, TraceEntry};
use crate::sparse::{two_sum, Kahan, SparseLu};

/// Which route produced a [`SolveReport`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveMethod {
    /// Regenerative (taboo) solve `g_z`.
    Regenerative,
    /// Constrained direct solve.
    Direct,
    /// Potential-series accumulation `g*`.
    PotentialSeries,
}

impl SolveMethod {
    pub fn name(&self) -> &'static str {
        match self {
            SolveMethod::Regenerative => "gz",
            SolveMethod::Direct => "direct",
            SolveMethod::PotentialSeries => "gstar",
        }
    }
}

/// A solution of Poisson's equation on the final truncation.
#[derive(Debug)]
pub struct SolveReport {
    /// Solution values, dense over the final window.
    pub g: RealFunction,
    /// Reference state for the regenerative and direct methods.
    pub z: Option<State>,
    pub method: SolveMethod,
    /// Sup-norm of `(P g)(x) - g(x) + f_c(x)` over the certified states
    /// (the whole window for `gz`/`direct`, the probe set for `gstar`).
    pub residual: f64,
    /// Per-state residual rows on the final window.
    pub per_state_residual: Vec<f64>,
    pub refinement_trace: Vec<TraceEntry>,
    /// The final truncation the solution lives on.
    pub chain: TruncatedChain,
    /// States whose potential series met the stopping rule (`gstar` only).
    pub certified: Option<Vec<State>>,
}

impl SolveReport {
    /// Solution values as a slice.
    pub fn values(&self) -> &[f64] {
        match &self.g {
            RealFunction::Dense(v) => v,
            RealFunction::Closed(_) => unreachable!("solver output is dense"),
        }
    }
}

/// Knobs for the refinement loop.
#[derive(Debug, Clone)]
pub struct SolveOptions {
    /// Probe states watched for convergence; defaults to the first few
    /// states plus the operation's distinguished states.
    pub probes: Vec<State>,
    pub size_cap: usize,
    pub probe_tol: f64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions { probes: Vec::new(), size_cap: REFINE_SIZE_CAP, probe_tol: REFINE_PROBE_TOL }
    }
}

fn resolve_probes(user: &[State], window: usize, extra: &[State]) -> Vec<State> {
    let mut probes: Vec<State> = if user.is_empty() {
        (0..window.min(6)).collect()
    } else {
        user.to_vec()
    };
    probes.extend_from_slice(extra);
    probes.sort_unstable();
    probes.dedup();
    probes.retain(|&p| p < window);
    probes
}

/// Residual rows `(P g)(x) - g(x) + f_c(x)` with compensated accumulation;
/// returns the rows and their sup-norm.
fn residual_rows(
    chain: &TruncatedChain,
    g: &[f64],
    fc: &RealFunction,
) -> (Vec<f64>, f64) {
    let m = chain.matrix();
    let n = m.n();
    let mut rows = vec![0.0f64; n];
    let mut sup = 0.0f64;
    for x in 0..n {
        let (cols, vals) = m.row(x);
        let mut sum = fc.eval(x) - g[x];
        let mut comp = 0.0;
        for (&c, &v) in cols.iter().zip(vals) {
            let p = v * g[c];
            let perr = v.mul_add(g[c], -p);
            let (s, serr) = two_sum(sum, p);
            sum = s;
            comp += serr + perr;
        }
        let r = sum + comp;
        rows[x] = r;
        sup = sup.max(r.abs());
    }
    (rows, sup)
}

/// `f_c` materialized on the window and re-centered against the window's own
/// stationary distribution.
fn window_rhs(chain: &TruncatedChain, f_c: &RealFunction) -> Result<Vec<f64>> {
    let n = chain.size();
    if !f_c.is_closed() {
        if let RealFunction::Dense(v) = f_c {
            if v.len() < n {
                return Err(Error::InvalidInput(format!(
                    "dense f_c covers {} states but the window needs {n}",
                    v.len()
                )));
            }
        }
    }
    let pi = stationary_dist(chain)?;
    let mut vals = f_c.materialize(n);
    let mut cw = Kahan::new();
    for (x, &v) in vals.iter().enumerate() {
        cw.add(pi.prob(x) * v);
    }
    let cw = cw.value();
    for v in vals.iter_mut() {
        *v -= cw;
    }
    Ok(vals)
}

fn gz_on_window(chain: &TruncatedChain, f_c: &RealFunction, z: State) -> Result<Vec<f64>> {
    let rhs = window_rhs(chain, f_c)?;
    let a = chain.taboo_matrix(z);
    let lu = SparseLu::factor(&a)?;
    let (mut g, _) = lu.solve_refined(&a, &rhs, 0.0);
    // The taboo identity makes g(z) the full-cycle centered sum, which is
    // zero in exact arithmetic; pin it and shift so it holds exactly.
    // Constant shifts leave the Poisson residual unchanged on stochastic
    // rows.
    let shift = g[z];
    for v in g.iter_mut() {
        *v -= shift;
    }
    g[z] = 0.0;
    Ok(g)
}

fn direct_on_window(chain: &TruncatedChain, f_c: &RealFunction, z: State) -> Result<Vec<f64>> {
    let n = chain.size();
    let mut rhs = window_rhs(chain, f_c)?;
    for v in rhs.iter_mut() {
        *v = -*v;
    }
    rhs[z] = 0.0;

    let m = chain.matrix();
    let mut rows: Vec<Vec<(usize, f64)>> = Vec::with_capacity(n);
    for x in 0..n {
        if x == z {
            rows.push(vec![(z, 1.0)]);
            continue;
        }
        let (cols, vals) = m.row(x);
        let mut row: Vec<(usize, f64)> = Vec::with_capacity(cols.len() + 1);
        let mut diag = -1.0;
        for (&c, &v) in cols.iter().zip(vals) {
            if c == x {
                diag += v;
            } else {
                row.push((c, v));
            }
        }
        row.push((x, diag));
        rows.push(row);
    }
    let a = crate::sparse::CsrMatrix::from_rows(n, &rows);
    let lu = SparseLu::factor(&a)?;
    let (mut g, _) = lu.solve_refined(&a, &rhs, 0.0);
    debug_assert!(g[z].abs() == 0.0 || g[z].abs() < 1e-300 || g[z] == 0.0);
    g[z] = 0.0;
    Ok(g)
}

// Screens out forgotten centering (|pi f_c| of order sup|f|). Heavy-tailed
// chains cannot be centered much better than their window's stationary
// accuracy, so this is deliberately a coarse relative gate; each solve
// re-centers against its own window before factoring, and residuals are
// reported against the caller's f_c.
fn check_centering(chain: &TruncatedChain, f_c: &RealFunction) -> Result<()> {
    let pi = stationary_dist(chain)?;
    let n = chain.size();
    let mut acc = Kahan::new();
    let mut scale = 0.0f64;
    for x in 0..n {
        let v = f_c.eval(x);
        acc.add(pi.prob(x) * v);
        scale = scale.max(v.abs());
    }
    let c = acc.value().abs();
    if c > 0.05 * (1.0 + scale) {
        return Err(Error::InvalidInput(format!(
            "f_c does not look centered: pi.f_c = {c:.3e} on the given window"
        )));
    }
    Ok(())
}

fn solve_linear_method(
    chain: &TruncatedChain,
    f_c: &RealFunction,
    z: State,
    options: &SolveOptions,
    method: SolveMethod,
) -> Result<SolveReport> {
    if z >= chain.size() {
        return Err(Error::InvalidInput(format!(
            "reference state {z} outside the window of size {}",
            chain.size()
        )));
    }
    check_centering(chain, f_c)?;
    let on_window = |w: &TruncatedChain| -> Result<Vec<f64>> {
        match method {
            SolveMethod::Regenerative => gz_on_window(w, f_c, z),
            SolveMethod::Direct => direct_on_window(w, f_c, z),
            SolveMethod::PotentialSeries => unreachable!(),
        }
    };

    let probes = resolve_probes(&options.probes, chain.size(), &[z]);

    if !f_c.is_closed() {
        // A dense right-hand side cannot extend past its window: solve there.
        let g = on_window(chain)?;
        let (rows, sup) = residual_rows(chain, &g, f_c);
        return Ok(SolveReport {
            g: RealFunction::dense(g),
            z: Some(z),
            method,
            residual: sup,
            per_state_residual: rows,
            refinement_trace: vec![TraceEntry { size: chain.size(), probe_change: f64::INFINITY }],
            chain: chain.clone(),
            certified: None,
        });
    }

    let config = RefineConfig {
        start_size: chain.size(),
        size_cap: options.size_cap,
        probe_tol: options.probe_tol,
        detect_divergence: false,
    };
    let outcome = refine_solve(chain.kernel(), chain.options(), &config, |w| {
        let g = on_window(w)?;
        let pv = probes.iter().map(|&p| g[p]).collect();
        Ok((g, pv))
    })?;
    match outcome {
        RefineOutcome::Converged(r) => {
            let (rows, sup) = residual_rows(&r.chain, &r.value, f_c);
            Ok(SolveReport {
                g: RealFunction::dense(r.value),
                z: Some(z),
                method,
                residual: sup,
                per_state_residual: rows,
                refinement_trace: r.trace,
                chain: r.chain,
                certified: None,
            })
        }
        RefineOutcome::Diverged { trace, .. } => Err(Error::TruncationNotConverged(format!(
            "{} solve grew without stabilizing over {} windows",
            method.name(),
            trace.len()
        ))),
    }
}

/// Regenerative solution of Poisson's equation for `f_c` with reference
/// state `z`: solves the taboo system `g(x) = f_c(x) + sum_{y != z} P(x,y) g(y)`
/// and pins `g(z) = 0`.
pub fn solve_gz(chain: &TruncatedChain, f_c: &RealFunction, z: State) -> Result<SolveReport> {
    solve_gz_with(chain, f_c, z, &SolveOptions::default())
}

pub fn solve_gz_with(
    chain: &TruncatedChain,
    f_c: &RealFunction,
    z: State,
    options: &SolveOptions,
) -> Result<SolveReport> {
    solve_linear_method(chain, f_c, z, options, SolveMethod::Regenerative)
}

/// Direct constrained solve of `(P - I) g = -f_c` subject to `g(z) = 0`.
pub fn solve_direct(chain: &TruncatedChain, f_c: &RealFunction, z: State) -> Result<SolveReport> {
    solve_direct_with(chain, f_c, z, &SolveOptions::default())
}

pub fn solve_direct_with(
    chain: &TruncatedChain,
    f_c: &RealFunction,
    z: State,
    options: &SolveOptions,
) -> Result<SolveReport> {
    solve_linear_method(chain, f_c, z, options, SolveMethod::Direct)
}

/// Outcome of the potential-series accumulation.
#[derive(Debug)]
pub enum GstarOutcome {
    Converged(Box<SolveReport>),
    Diverged(DivergenceReport),
}

/// Evidence for a divergence verdict: the absolute partial sum at some probe
/// exceeded the bound while trending monotonically upward over the second
/// half of the horizon.
#[derive(Debug, Clone)]
pub struct DivergenceReport {
    pub probe: State,
    pub detected_at: usize,
    pub partial_sum: f64,
    /// Sampled `(n, partial sum at the probe)` trajectory.
    pub trajectory: Vec<(usize, f64)>,
    pub window: usize,
}

enum WindowVerdict {
    Converged {
        partial_sums: Vec<f64>,
        next_term: Vec<f64>,
        probes_exact: bool,
    },
    Diverged(DivergenceReport),
    Exceeded,
}

/// Steps until leak-modified rows can influence a state's iterate: the
/// graph distance to the nearest modified row. `y_n(x)` computed on the
/// window equals the true-kernel value whenever `n <= d(x)`.
fn contamination_distance(chain: &TruncatedChain) -> Vec<usize> {
    let n = chain.size();
    let mut dist = vec![usize::MAX; n];
    let mut queue = std::collections::VecDeque::new();
    for (x, &l) in chain.leak().iter().enumerate() {
        if l > 0.0 {
            dist[x] = 0;
            queue.push_back(x);
        }
    }
    let rt = chain.matrix().transpose();
    while let Some(x) = queue.pop_front() {
        let (preds, _) = rt.row(x);
        for &p in preds {
            if dist[p] == usize::MAX {
                dist[p] = dist[x] + 1;
                queue.push_back(p);
            }
        }
    }
    dist
}

fn gstar_window(
    chain: &TruncatedChain,
    f_c: &RealFunction,
    probes: &[State],
    horizon_cap: usize,
) -> Result<WindowVerdict> {
    let n = chain.size();
    let period = detect_period(chain, 0);
    if period != 1 {
        return Err(Error::PeriodicChain(period));
    }
    let y0 = window_rhs(chain, f_c)?;
    let dist = contamination_distance(chain);
    let mut min_probe_dist = usize::MAX;
    for &p in probes {
        min_probe_dist = min_probe_dist.min(dist[p]);
    }

    let mut y = y0.clone();
    let mut buf = vec![0.0f64; n];
    let mut ps: Vec<f64> = y0;
    let mut probe_ps: Vec<Kahan> = probes
        .iter()
        .map(|&p| {
            let mut k = Kahan::new();
            k.add(ps[p]);
            k
        })
        .collect();
    let mut consec = vec![0usize; probes.len()];
    let mut rings: Vec<Vec<f64>> = probes
        .iter()
        .enumerate()
        .map(|(i, _)| vec![probe_ps[i].value()])
        .collect();
    let sample_every = (horizon_cap / 2048).max(1);
    let mut samples: Vec<Vec<(usize, f64)>> = probes.iter().map(|_| Vec::new()).collect();

    let m = chain.matrix();
    for step in 1..=horizon_cap {
        m.matvec(&y, &mut buf);
        std::mem::swap(&mut y, &mut buf);
        for (v, t) in ps.iter_mut().zip(&y) {
            *v += t;
        }
        let mut all_converged = true;
        for (i, &p) in probes.iter().enumerate() {
            let term = y[p];
            probe_ps[i].add(term);
            let psv = probe_ps[i].value();
            if term.abs() < GSTAR_TERM_TOL {
                consec[i] += 1;
            } else {
                consec[i] = 0;
            }
            let ring = &mut rings[i];
            ring.push(psv);
            if ring.len() > GSTAR_TERM_RUN {
                ring.remove(0);
            }
            let spread = ring.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
                - ring.iter().cloned().fold(f64::INFINITY, f64::min);
            if consec[i] < GSTAR_TERM_RUN || spread > GSTAR_CAUCHY_TOL {
                all_converged = false;
            }
            if step % sample_every == 0 {
                samples[i].push((step, psv));
            }
            // Divergence: over the bound and monotonically growing in
            // absolute value over the second half of the horizon so far.
            if psv.abs() > GSTAR_DIVERGENCE_BOUND && samples[i].len() >= 8 {
                let half: Vec<f64> = samples[i]
                    .iter()
                    .filter(|&&(s, _)| s >= step / 2)
                    .map(|&(_, v)| v.abs())
                    .collect();
                if half.len() >= 4 && half.windows(2).all(|w| w[1] >= w[0]) {
                    return Ok(WindowVerdict::Diverged(DivergenceReport {
                        probe: p,
                        detected_at: step,
                        partial_sum: psv,
                        trajectory: samples[i].clone(),
                        window: n,
                    }));
                }
            }
        }
        if all_converged {
            m.matvec(&y, &mut buf);
            // Exact at the probes if even the residual term is untouched by
            // leak handling.
            let probes_exact = min_probe_dist == usize::MAX || step < min_probe_dist;
            return Ok(WindowVerdict::Converged {
                partial_sums: ps,
                next_term: buf,
                probes_exact,
            });
        }
    }
    Ok(WindowVerdict::Exceeded)
}

/// Potential-series solution `g*(x) = sum_n E_x f_c(X_n)`, accumulated by
/// iterated sparse matrix-vector products.
///
/// Convergence is declared when every probe's term has stayed below
/// [`GSTAR_TERM_TOL`] for [`GSTAR_TERM_RUN`] consecutive steps and its
/// partial sums are Cauchy within [`GSTAR_CAUCHY_TOL`] over that window;
/// divergence when an absolute partial sum exceeds
/// [`GSTAR_DIVERGENCE_BOUND`] with a monotone trend over the second half of
/// the horizon. Anything else at the horizon cap is [`Error::HorizonExceeded`].
pub fn solve_gstar(
    chain: &TruncatedChain,
    f_c: &RealFunction,
    probes: &[State],
    horizon_cap: usize,
) -> Result<GstarOutcome> {
    solve_gstar_with(chain, f_c, probes, horizon_cap, &SolveOptions::default())
}

pub fn solve_gstar_with(
    chain: &TruncatedChain,
    f_c: &RealFunction,
    probes: &[State],
    horizon_cap: usize,
    options: &SolveOptions,
) -> Result<GstarOutcome> {
    check_centering(chain, f_c)?;
    let probes = resolve_probes(probes, chain.size(), &[]);
    if probes.is_empty() {
        return Err(Error::InvalidInput("empty probe set".into()));
    }

    let mut trace: Vec<TraceEntry> = Vec::new();
    let mut prev_probe_values: Option<Vec<f64>> = None;
    let mut current = chain.clone();
    loop {
        let verdict = gstar_window(&current, f_c, &probes, horizon_cap)?;
        match verdict {
            WindowVerdict::Diverged(report) => return Ok(GstarOutcome::Diverged(report)),
            WindowVerdict::Exceeded => return Err(Error::HorizonExceeded(horizon_cap)),
            WindowVerdict::Converged { partial_sums, next_term, probes_exact } => {
                let pv: Vec<f64> = probes.iter().map(|&p| partial_sums[p]).collect();
                let change = match &prev_probe_values {
                    None => f64::INFINITY,
                    Some(old) => old
                        .iter()
                        .zip(&pv)
                        .map(|(a, b)| (a - b).abs())
                        .fold(0.0, f64::max),
                };
                trace.push(TraceEntry { size: current.size(), probe_change: change });
                let settled = probes_exact
                    || change <= options.probe_tol
                    || current.size() >= current.kernel().finite_size().unwrap_or(usize::MAX);
                if settled {
                    let (rows, _) = residual_rows(&current, &partial_sums, f_c);
                    let residual = probes
                        .iter()
                        .map(|&p| next_term[p].abs().max(rows[p].abs()))
                        .fold(0.0, f64::max);
                    let report = SolveReport {
                        g: RealFunction::dense(partial_sums),
                        z: None,
                        method: SolveMethod::PotentialSeries,
                        residual,
                        per_state_residual: rows,
                        refinement_trace: trace,
                        chain: current,
                        certified: Some(probes.clone()),
                    };
                    return Ok(GstarOutcome::Converged(Box::new(report)));
                }
                prev_probe_values = Some(pv);
                let next_size = (current.size() * 2).min(options.size_cap);
                if next_size <= current.size() {
                    return Err(Error::TruncationNotConverged(format!(
                        "potential series at size cap {}",
                        options.size_cap
                    )));
                }
                current = crate::chain::build_truncation(
                    chain.kernel().clone(),
                    next_size,
                    chain.options(),
                )?;
            }
        }
    }
}

/// First- or second-order cycle moment query.
#[derive(Debug, Clone)]
pub struct CycleMomentQuery {
    /// Nonnegative weight.
    pub weight: RealFunction,
    /// Expectation start state.
    pub start: State,
    /// Cycle reference (taboo) state.
    pub taboo: State,
    pub order: MomentOrder,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MomentOrder {
    /// `E_x sum_{j < tau(z)} w(X_j)`.
    First,
    /// `E_x sum_{j < tau(z)} (j + 1) w(X_j)`, by two-stage composition.
    Second,
}

/// A cycle moment with its refinement trace; `value` is `+inf` when the
/// refinement diverged (heavy-tail overflow).
#[derive(Debug)]
pub struct CycleMoment {
    pub value: f64,
    pub diverged: bool,
    pub trace: Vec<TraceEntry>,
}

fn moment_on_window(
    chain: &TruncatedChain,
    w: &RealFunction,
    start: State,
    taboo: State,
    order: MomentOrder,
) -> Result<f64> {
    let n = chain.size();
    let wv = w.materialize(n);
    let a = chain.taboo_matrix(taboo);
    let lu = SparseLu::factor(&a)?;
    let (m1, _) = lu.solve_refined(&a, &wv, 0.0);
    match order {
        MomentOrder::First => Ok(m1[start]),
        MomentOrder::Second => {
            let (m2, _) = lu.solve_refined(&a, &m1, 0.0);
            Ok(m2[start])
        }
    }
}

pub(crate) fn cycle_moment_signed(
    chain: &TruncatedChain,
    w: &RealFunction,
    start: State,
    taboo: State,
    order: MomentOrder,
    detect_divergence: bool,
    options: &SolveOptions,
) -> Result<CycleMoment> {
    if start >= chain.size() || taboo >= chain.size() {
        return Err(Error::InvalidInput("start or taboo state outside the window".into()));
    }
    if !w.is_closed() {
        let value = moment_on_window(chain, w, start, taboo, order)?;
        return Ok(CycleMoment {
            value,
            diverged: false,
            trace: vec![TraceEntry { size: chain.size(), probe_change: f64::INFINITY }],
        });
    }
    let config = RefineConfig {
        start_size: chain.size(),
        size_cap: options.size_cap,
        probe_tol: options.probe_tol,
        detect_divergence,
    };
    let outcome = refine_solve(chain.kernel(), chain.options(), &config, |win| {
        let v = moment_on_window(win, w, start, taboo, order)?;
        Ok((v, vec![v]))
    })?;
    match outcome {
        RefineOutcome::Converged(r) => Ok(CycleMoment {
            value: r.value,
            diverged: false,
            trace: r.trace,
        }),
        RefineOutcome::Diverged { trace, .. } => Ok(CycleMoment {
            value: f64::INFINITY,
            diverged: true,
            trace,
        }),
    }
}

/// Expected cycle sums `E_x sum_{j < tau(z)} w(X_j)` (order 1) or their
/// `(j+1)`-weighted second-order counterpart, via taboo solves with window
/// refinement. Divergent refinements (accelerating growth) yield `+inf`.
pub fn cycle_moment(chain: &TruncatedChain, query: &CycleMomentQuery) -> Result<CycleMoment> {
    let check_n = chain.size().min(4096);
    for x in 0..check_n {
        if query.weight.eval(x) < 0.0 {
            return Err(Error::InvalidInput(format!(
                "cycle moment weight is negative at state {x}"
            )));
        }
    }
    cycle_moment_signed(
        chain,
        &query.weight,
        query.start,
        query.taboo,
        query.order,
        true,
        &SolveOptions::default(),
    )
}

/// `E_z (sum_{j < tau(z)} w(X_j))^2` by the two-stage identity
/// `E (sum w)^2 = E sum_j (2 w k_w - w^2)(X_j)` with `k_w(x) = E_x sum w`:
/// two taboo solves per window, refined. Signed weights are allowed.
pub fn cycle_square_moment(
    chain: &TruncatedChain,
    w: &RealFunction,
    z: State,
    detect_divergence: bool,
    options: &SolveOptions,
) -> Result<CycleMoment> {
    let on_window = |win: &TruncatedChain| -> Result<f64> {
        let n = win.size();
        let wv = w.materialize(n);
        let a = win.taboo_matrix(z);
        let lu = SparseLu::factor(&a)?;
        let (k, _) = lu.solve_refined(&a, &wv, 0.0);
        let phi: Vec<f64> = (0..n).map(|x| wv[x] * (2.0 * k[x] - wv[x])).collect();
        let (m, _) = lu.solve_refined(&a, &phi, 0.0);
        Ok(m[z])
    };
    if !w.is_closed() {
        let value = on_window(chain)?;
        return Ok(CycleMoment {
            value,
            diverged: false,
            trace: vec![TraceEntry { size: chain.size(), probe_change: f64::INFINITY }],
        });
    }
    let config = RefineConfig {
        start_size: chain.size(),
        size_cap: options.size_cap,
        probe_tol: options.probe_tol,
        detect_divergence,
    };
    match refine_solve(chain.kernel(), chain.options(), &config, |win| {
        let v = on_window(win)?;
        Ok((v, vec![v]))
    })? {
        RefineOutcome::Converged(r) => {
            Ok(CycleMoment { value: r.value, diverged: false, trace: r.trace })
        }
        RefineOutcome::Diverged { trace, .. } => {
            Ok(CycleMoment { value: f64::INFINITY, diverged: true, trace })
        }
    }
}

/// The time-average variance constant computed along two exact routes.
#[derive(Debug, Clone, Copy)]
pub struct Sigma2 {
    /// Cycle route: `E_z (sum_{j<tau} f_c)^2 / E_z tau`.
    pub cycle: f64,
    /// Stationary route: `2 E_pi[f_c g_z] - E_pi[f_c^2]`.
    pub inner: f64,
    pub pi_f: f64,
}

/// Computes `sigma^2` for `f` both by the regenerative cycle formula and by
/// the stationary inner product with `g_z`. The two must agree; callers can
/// assert the gap.
pub fn sigma2_exact(chain: &TruncatedChain, f: &RealFunction) -> Result<Sigma2> {
    sigma2_exact_with(chain, f, &SolveOptions::default())
}

/// [`sigma2_exact`] with refinement knobs: on polynomially-tailed chains the
/// two routes approach each other at the probe tolerance, so agreement past
/// it needs a tighter setting.
pub fn sigma2_exact_with(
    chain: &TruncatedChain,
    f: &RealFunction,
    opts: &SolveOptions,
) -> Result<Sigma2> {
    let z: State = 0;
    let pi_f = refined_pi_f(chain, f)?;
    let f_c = f.shifted(pi_f);

    let sq = cycle_square_moment(chain, &f_c, z, true, opts)?;
    if sq.diverged {
        return Err(Error::ConditionViolated(
            "second moment of the cycle sum diverges; sigma^2 is infinite".into(),
        ));
    }
    let e_tau = cycle_moment_signed(
        chain,
        &RealFunction::constant(1.0),
        z,
        z,
        MomentOrder::First,
        false,
        opts,
    )?;
    let cycle = sq.value / e_tau.value;

    let gz = solve_gz_with(chain, &f_c, z, opts)?;
    let pi_final = stationary_dist(&gz.chain)?;
    let mut acc = Kahan::new();
    for (x, &gv) in gz.values().iter().enumerate() {
        let fcx = f_c.eval(x);
        acc.add(pi_final.prob(x) * fcx * (2.0 * gv - fcx));
    }
    Ok(Sigma2 { cycle, inner: acc.value(), pi_f })
}

/// `pi f` refined over doubling windows until stable to `1e-12`.
pub fn refined_pi_f(chain: &TruncatedChain, f: &RealFunction) -> Result<f64> {
    refined_pi_f_with(chain, f, 1e-12)
}

/// `pi f` refined until the value moves by at most `tol` under window
/// doubling.
pub fn refined_pi_f_with(chain: &TruncatedChain, f: &RealFunction, tol: f64) -> Result<f64> {
    let given = |c: &TruncatedChain| -> Result<f64> {
        let pi = stationary_dist(c)?;
        Ok(pi.expect(f))
    };
    if !f.is_closed() {
        return given(chain);
    }
    let config = RefineConfig {
        start_size: chain.size(),
        size_cap: REFINE_SIZE_CAP,
        probe_tol: tol,
        detect_divergence: false,
    };
    let outcome = refine_solve(chain.kernel(), chain.options(), &config, |w| {
        let v = given(w)?;
        Ok((v, vec![v]))
    })?;
    match outcome {
        RefineOutcome::Converged(r) => Ok(r.value),
        RefineOutcome::Diverged { .. } => Err(Error::ConditionViolated(
            "pi f grew without stabilizing; f is not pi-integrable".into(),
        )),
    }
}

/// The two-way computation of `pi g_z`.
#[derive(Debug)]
pub struct PiGzReport {
    /// Cycle-formula value: `E_z sum (j+1) f_c(X_j) / E_z tau(z)`.
    pub value: f64,
    /// Inner product `sum_x pi(x) g_z(x)` on the refined window.
    pub cross_check: f64,
    pub e_tau: f64,
    /// The verified moment condition: second-order cycle moment of `|f_c|`.
    pub condition_moment: f64,
}

/// Computes `pi g_z` by the signed second-order cycle formula and
/// cross-checks it against the direct inner product with the stationary
/// distribution. Requires aperiodicity and finiteness of the second-order
/// moment of `|f_c|` (checked, else [`Error::ConditionViolated`]).
pub fn pi_gz(chain: &TruncatedChain, f: &RealFunction, z: State) -> Result<PiGzReport> {
    let period = detect_period(chain, z);
    if period != 1 {
        return Err(Error::PeriodicChain(period));
    }
    let pi_f = refined_pi_f(chain, f)?;
    let f_c = f.shifted(pi_f);
    let opts = SolveOptions::default();

    let condition = cycle_moment_signed(chain, &f_c.abs(), z, z, MomentOrder::Second, true, &opts)?;
    if condition.diverged {
        return Err(Error::ConditionViolated(format!(
            "second-order cycle moment of |f_c| diverges at z = {z}"
        )));
    }
    let numerator = cycle_moment_signed(chain, &f_c, z, z, MomentOrder::Second, false, &opts)?;
    let e_tau =
        cycle_moment_signed(chain, &RealFunction::constant(1.0), z, z, MomentOrder::First, false, &opts)?;
    let value = numerator.value / e_tau.value;

    let gz = solve_gz(chain, &f_c, z)?;
    let pi_final = stationary_dist(&gz.chain)?;
    let mut cross = Kahan::new();
    for (x, &gv) in gz.values().iter().enumerate() {
        cross.add(pi_final.prob(x) * gv);
    }
    Ok(PiGzReport {
        value,
        cross_check: cross.value(),
        e_tau: e_tau.value,
        condition_moment: condition.value,
    })
}

/// Exact transient mean `E_x sum_{j<n} f(X_j)` next to its asymptote
/// `n pi f + g_z(x) - pi g_z`.
#[derive(Debug)]
pub struct TransientMean {
    pub exact: f64,
    pub asymptote: f64,
    pub pi_f: f64,
    pub gz_at_x: f64,
    pub pi_gz: f64,
}

/// The exact part iterates the state distribution with compensated
/// accumulation of `sum_j E_x f(X_j)`; the asymptote drops the vanishing
/// `E_x g_z(X_n) - pi g_z` term.
pub fn transient_mean(
    chain: &TruncatedChain,
    f: &RealFunction,
    z: State,
    x: State,
    n: usize,
) -> Result<TransientMean> {
    let period = detect_period(chain, z);
    if period != 1 {
        return Err(Error::PeriodicChain(period));
    }
    let pi_f = refined_pi_f(chain, f)?;
    let f_c = f.shifted(pi_f);
    let gz = solve_gz(chain, &f_c, z)?;
    let final_chain = &gz.chain;
    let w = final_chain.size();
    if x >= w {
        return Err(Error::InvalidInput(format!("start state {x} outside window {w}")));
    }
    let pi_final = stationary_dist(final_chain)?;
    let mut pi_gz_acc = Kahan::new();
    for (s, &gv) in gz.values().iter().enumerate() {
        pi_gz_acc.add(pi_final.prob(s) * gv);
    }
    let pi_gz_val = pi_gz_acc.value();

    let fv = f.materialize(w);
    let mut mu = vec![0.0f64; w];
    mu[x] = 1.0;
    let mut buf = vec![0.0f64; w];
    let mut acc = Kahan::new();
    for _ in 0..n {
        let mut step = Kahan::new();
        for (m, fvx) in mu.iter().zip(&fv) {
            if *m != 0.0 {
                step.add(m * fvx);
            }
        }
        acc.add(step.value());
        final_chain.matrix().matvec_transpose(&mu, &mut buf);
        std::mem::swap(&mut mu, &mut buf);
    }
    let asymptote = (n as f64) * pi_f + gz.values()[x] - pi_gz_val;
    Ok(TransientMean {
        exact: acc.value(),
        asymptote,
        pi_f,
        gz_at_x: gz.values()[x],
        pi_gz: pi_gz_val,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::{build_truncation, center, TruncationOptions};
    use crate::constants::RESIDUAL_TOL;
    use crate::gallery;

    fn two_state_chain() -> TruncatedChain {
        build_truncation(
            gallery::two_state(0.5, 0.5).unwrap().kernel,
            2,
            TruncationOptions::default(),
        )
        .unwrap()
    }

    fn bd_chain(size: usize) -> TruncatedChain {
        build_truncation(
            gallery::birth_death(0.3).unwrap().kernel,
            size,
            TruncationOptions::default(),
        )
        .unwrap()
    }

    /// f = 1{x=1} centered on the two-state chain.
    fn two_state_fc() -> RealFunction {
        RealFunction::from_fn(|x| if x == 1 { 0.5 } else { -0.5 })
    }

    #[test]
    fn gz_two_state_oracle() {
        // Geometric-sum oracle: starting at 1, the number of visits to 1
        // before absorption at 0 is Geometric(1/2) with mean 2, each visit
        // contributing f_c = 1/2, and the final step contributes nothing, so
        // g(1) = 2 * 1/2 = 1 and g(0) = -1/2 + (1/2) g(1) + ... = 0.
        let chain = two_state_chain();
        let report = solve_gz(&chain, &two_state_fc(), 0).unwrap();
        assert_eq!(report.values()[0], 0.0);
        assert!((report.values()[1] - 1.0).abs() < 1e-12);
        assert!(report.residual <= RESIDUAL_TOL);
    }

    #[test]
    fn gz_of_zero_function_is_zero() {
        let chain = two_state_chain();
        let report = solve_gz(&chain, &RealFunction::constant(0.0), 0).unwrap();
        assert!(report.values().iter().all(|&v| v == 0.0));
        let report = solve_direct(&chain, &RealFunction::constant(0.0), 0).unwrap();
        assert!(report.values().iter().all(|&v| v.abs() < 1e-15));
    }

    #[test]
    fn gz_and_direct_agree_on_birth_death() {
        let chain = bd_chain(64);
        let pi_f = refined_pi_f(&chain, &RealFunction::identity()).unwrap();
        let f_c = RealFunction::identity().shifted(pi_f);
        let a = solve_gz(&chain, &f_c, 0).unwrap();
        let b = solve_direct(&chain, &f_c, 0).unwrap();
        let n = a.values().len().min(b.values().len());
        let mut sup = 0.0f64;
        for i in 0..n {
            sup = sup.max((a.values()[i] - b.values()[i]).abs());
        }
        assert!(sup <= 1e-9, "methods disagree by {sup}");
        assert!(a.residual <= RESIDUAL_TOL, "gz residual {}", a.residual);
        assert!(b.residual <= RESIDUAL_TOL, "direct residual {}", b.residual);
    }

    #[test]
    fn gz_and_direct_agree_on_rails() {
        let g = gallery::rails(0.3, &[0.25, 0.125, 0.125]).unwrap();
        let chain = build_truncation(g.kernel, 256, TruncationOptions::default()).unwrap();
        let pi_f = refined_pi_f(&chain, &RealFunction::indicator(&[0])).unwrap();
        let f_c = RealFunction::indicator(&[0]).shifted(pi_f);
        let a = solve_gz(&chain, &f_c, 0).unwrap();
        let b = solve_direct(&chain, &f_c, 0).unwrap();
        let n = a.values().len().min(b.values().len());
        for i in 0..n {
            assert!((a.values()[i] - b.values()[i]).abs() <= 1e-9, "state {i}");
        }
    }

    #[test]
    fn additive_constant_property() {
        // g_z - g_y is the constant vector g_z(y) e.
        let chain = bd_chain(64);
        let pi_f = refined_pi_f(&chain, &RealFunction::identity()).unwrap();
        let f_c = RealFunction::identity().shifted(pi_f);
        for (z, y) in [(0usize, 3usize), (2, 7), (1, 4)] {
            let gz = solve_gz(&chain, &f_c, z).unwrap();
            let gy = solve_gz(&chain, &f_c, y).unwrap();
            let n = gz.values().len().min(gy.values().len());
            let c = gz.values()[y];
            for i in 0..n {
                let diff = gz.values()[i] - gy.values()[i];
                assert!((diff - c).abs() < 1e-9, "(z={z},y={y}) state {i}: {diff} vs {c}");
            }
        }
    }

    #[test]
    fn gstar_two_state_equals_fc_and_offsets_gz() {
        // Rows are identical after one step, so E_x f_c(X_n) = 0 for n >= 1
        // and g* = f_c.
        let chain = two_state_chain();
        let out = solve_gstar(&chain, &two_state_fc(), &[0, 1], 10_000).unwrap();
        let report = match out {
            GstarOutcome::Converged(r) => r,
            GstarOutcome::Diverged(d) => panic!("unexpected divergence {d:?}"),
        };
        assert!((report.values()[0] + 0.5).abs() < 1e-12);
        assert!((report.values()[1] - 0.5).abs() < 1e-12);
        assert!(report.residual <= RESIDUAL_TOL);

        // g* - g_z is a constant vector.
        let gz = solve_gz(&chain, &two_state_fc(), 0).unwrap();
        let d0 = report.values()[0] - gz.values()[0];
        let d1 = report.values()[1] - gz.values()[1];
        assert!((d0 - d1).abs() < 1e-12);
    }

    #[test]
    fn gstar_zero_function_converges_immediately() {
        let chain = two_state_chain();
        let out = solve_gstar(&chain, &RealFunction::constant(0.0), &[0, 1], 10_000).unwrap();
        match out {
            GstarOutcome::Converged(r) => {
                assert!(r.values().iter().all(|&v| v == 0.0));
            }
            GstarOutcome::Diverged(d) => panic!("unexpected divergence {d:?}"),
        }
    }

    #[test]
    fn gstar_rejects_periodic_chains() {
        let chain = build_truncation(
            gallery::two_state(1.0, 1.0).unwrap().kernel,
            2,
            TruncationOptions::default(),
        )
        .unwrap();
        let fc = RealFunction::from_fn(|x| if x == 1 { 0.5 } else { -0.5 });
        assert!(matches!(
            solve_gstar(&chain, &fc, &[0], 1000),
            Err(Error::PeriodicChain(2))
        ));
    }

    #[test]
    fn kac_formula_via_cycle_moment() {
        let chain = two_state_chain();
        let q = CycleMomentQuery {
            weight: RealFunction::constant(1.0),
            start: 0,
            taboo: 0,
            order: MomentOrder::First,
        };
        let m = cycle_moment(&chain, &q).unwrap();
        assert!((m.value - 2.0).abs() < 1e-12, "E_0 tau = {}", m.value);

        let chain = bd_chain(128);
        let m = cycle_moment(
            &chain,
            &CycleMomentQuery {
                weight: RealFunction::constant(1.0),
                start: 0,
                taboo: 0,
                order: MomentOrder::First,
            },
        )
        .unwrap();
        assert!((m.value - 7.0 / 4.0).abs() < 1e-9, "E_0 tau = {}", m.value);
    }

    #[test]
    fn pi_f_equals_cycle_ratio() {
        // pi f = E_z sum f / E_z tau across the regenerative cycle.
        let chain = bd_chain(64);
        let f = RealFunction::identity();
        let num = cycle_moment(
            &chain,
            &CycleMomentQuery {
                weight: f.clone(),
                start: 0,
                taboo: 0,
                order: MomentOrder::First,
            },
        )
        .unwrap();
        let den = cycle_moment(
            &chain,
            &CycleMomentQuery {
                weight: RealFunction::constant(1.0),
                start: 0,
                taboo: 0,
                order: MomentOrder::First,
            },
        )
        .unwrap();
        let pi_f = refined_pi_f(&chain, &f).unwrap();
        assert!(
            (num.value / den.value - pi_f).abs() < 1e-8,
            "cycle ratio {} vs pi f {pi_f}",
            num.value / den.value
        );
    }

    #[test]
    fn zero_weight_moment_is_zero() {
        let chain = two_state_chain();
        let q = CycleMomentQuery {
            weight: RealFunction::constant(0.0),
            start: 0,
            taboo: 0,
            order: MomentOrder::Second,
        };
        assert_eq!(cycle_moment(&chain, &q).unwrap().value, 0.0);
    }

    #[test]
    fn second_order_moment_matches_enumeration_oracle() {
        // Two-state chain from 0: P(tau = k) = 2^{-k}. The oracle value of
        // E_0 sum_{j<tau} (j+1) = E[tau (tau+1) / 2] = (E tau^2 + E tau)/2
        // with E tau = 2, E tau^2 = 6, i.e. 4; the series
        // sum_k 2^{-k} k(k+1)/2 agrees.
        let mut oracle = 0.0;
        for k in 1..200u32 {
            let kf = k as f64;
            oracle += 0.5f64.powi(k as i32) * kf * (kf + 1.0) / 2.0;
        }
        assert!((oracle - 4.0).abs() < 1e-12);

        let chain = two_state_chain();
        let q = CycleMomentQuery {
            weight: RealFunction::constant(1.0),
            start: 0,
            taboo: 0,
            order: MomentOrder::Second,
        };
        let m = cycle_moment(&chain, &q).unwrap();
        assert!((m.value - 4.0).abs() < 1e-12, "two-stage value {}", m.value);
    }

    #[test]
    fn negative_weight_rejected() {
        let chain = two_state_chain();
        let q = CycleMomentQuery {
            weight: RealFunction::from_fn(|x| if x == 0 { -1.0 } else { 1.0 }),
            start: 0,
            taboo: 0,
            order: MomentOrder::First,
        };
        assert!(matches!(cycle_moment(&chain, &q), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn pi_gz_two_state() {
        let chain = two_state_chain();
        let f = RealFunction::indicator(&[1]);
        let r = pi_gz(&chain, &f, 0).unwrap();
        assert!((r.value - 0.5).abs() < 1e-10, "cycle value {}", r.value);
        assert!((r.cross_check - 0.5).abs() < 1e-10);
        assert!((r.value - r.cross_check).abs() < 1e-8);
    }

    #[test]
    fn pi_gz_constant_f_vanishes() {
        let chain = two_state_chain();
        let r = pi_gz(&chain, &RealFunction::constant(3.0), 0).unwrap();
        assert!(r.value.abs() < 1e-12);
        assert!(r.cross_check.abs() < 1e-12);
    }

    #[test]
    fn pi_gz_two_routes_agree_on_birth_death() {
        let chain = bd_chain(64);
        let r = pi_gz(&chain, &RealFunction::identity(), 0).unwrap();
        assert!(
            (r.value - r.cross_check).abs() < 1e-8,
            "cycle {} vs inner product {}",
            r.value,
            r.cross_check
        );
    }

    #[test]
    fn transient_mean_two_state_oracle() {
        // E_0 f(X_j) = 1/2 for j >= 1 and f(X_0) = 0: exact = 9.5 at n = 20,
        // and the asymptote matches because mixing is exact after one step.
        let chain = two_state_chain();
        let f = RealFunction::indicator(&[1]);
        let t = transient_mean(&chain, &f, 0, 0, 20).unwrap();
        assert!((t.exact - 9.5).abs() < 1e-12, "exact {}", t.exact);
        assert!((t.asymptote - 9.5).abs() < 1e-12, "asymptote {}", t.asymptote);
    }

    #[test]
    fn transient_mean_constant_f() {
        let chain = two_state_chain();
        let t = transient_mean(&chain, &RealFunction::constant(2.0), 0, 1, 50).unwrap();
        assert!((t.exact - 100.0).abs() < 1e-10);
        assert!((t.asymptote - 100.0).abs() < 1e-10);
    }

    #[test]
    fn transient_mean_gap_shrinks_on_birth_death() {
        let chain = bd_chain(64);
        let f = RealFunction::identity();
        let t200 = transient_mean(&chain, &f, 0, 0, 200).unwrap();
        let t1000 = transient_mean(&chain, &f, 0, 0, 1000).unwrap();
        let gap200 = (t200.exact - t200.asymptote).abs();
        let gap1000 = (t1000.exact - t1000.asymptote).abs();
        assert!(gap1000 < 1e-6, "gap at n=1000: {gap1000}");
        assert!(gap1000 <= gap200 + 1e-12);
    }

    #[test]
    fn sigma2_two_state_quarter() {
        // By hand: cycle sums from 0 give (tau/2 - 1)^2 with
        // P(tau = k) = 2^{-k}, so E = 0.5 and sigma^2 = 0.5 / 2 = 0.25.
        let chain = two_state_chain();
        let s = sigma2_exact(&chain, &RealFunction::indicator(&[1])).unwrap();
        assert!((s.cycle - 0.25).abs() < 1e-12, "cycle route {}", s.cycle);
        assert!((s.inner - 0.25).abs() < 1e-12, "inner route {}", s.inner);
    }

    #[test]
    fn sigma2_routes_agree_on_birth_death() {
        let chain = bd_chain(64);
        let s = sigma2_exact(&chain, &RealFunction::identity()).unwrap();
        assert!(
            (s.cycle - s.inner).abs() < 1e-9,
            "cycle {} vs inner {}",
            s.cycle,
            s.inner
        );
        assert!(s.cycle > 0.0);
    }

    #[test]
    fn dense_fc_solves_on_the_given_window() {
        let chain = bd_chain(128);
        let pi = stationary_dist(&chain).unwrap();
        let (f_c, _) = center(&RealFunction::identity(), &pi);
        let report = solve_gz(&chain, &f_c, 0).unwrap();
        assert_eq!(report.chain.size(), 128);
        assert!(report.residual <= RESIDUAL_TOL);
    }
}
