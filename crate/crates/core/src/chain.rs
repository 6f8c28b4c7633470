//! Countable-state chains, finite truncations, stationary distributions.
//!
//! States are opaque: a chain is defined through its enumeration, and the
//! index of a state in that enumeration is the only ordering contract. A
//! [`TransitionKernel`] produces rows lazily over the enumeration; a
//! [`TruncatedChain`] is the finite window `[0, size)` with leaked mass
//! accounted for and the leak policy applied. All exact solvers operate on
//! truncations.

use std::fmt;
use std::sync::Arc;

use crate::constants::{CENTER_TOL, PI_RESIDUAL_TOL, ROW_SUM_TOL};
use crate::error::{Error, Result};
use crate::sparse::{CsrMatrix, Kahan, SparseLu};

/// Global enumeration index of a state.
pub type State = usize;

type RowFn = dyn Fn(State) -> Vec<(State, f64)> + Send + Sync;
type LabelFn = dyn Fn(State) -> String + Send + Sync;

/// A countable-state transition kernel, evaluated row by row over the
/// enumeration.
#[derive(Clone)]
pub struct TransitionKernel {
    label: String,
    /// `Some(n)` when the state space is exactly `n` states.
    finite_size: Option<usize>,
    row_fn: Arc<RowFn>,
    state_label: Option<Arc<LabelFn>>,
}

impl fmt::Debug for TransitionKernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TransitionKernel")
            .field("label", &self.label)
            .field("finite_size", &self.finite_size)
            .finish()
    }
}

impl TransitionKernel {
    /// Wraps a row closure. Rows must contain probabilities in `(0, 1]` with
    /// distinct targets and sum to 1 within `1e-12`.
    pub fn new(
        label: impl Into<String>,
        finite_size: Option<usize>,
        row_fn: impl Fn(State) -> Vec<(State, f64)> + Send + Sync + 'static,
    ) -> Self {
        TransitionKernel {
            label: label.into(),
            finite_size,
            row_fn: Arc::new(row_fn),
            state_label: None,
        }
    }

    /// Attaches a human-readable state description.
    pub fn with_state_labels(
        mut self,
        f: impl Fn(State) -> String + Send + Sync + 'static,
    ) -> Self {
        self.state_label = Some(Arc::new(f));
        self
    }

    /// Builds a finite kernel from explicit `(row, col, prob)` triplets,
    /// validating every row eagerly.
    pub fn from_triplets(
        label: impl Into<String>,
        n: usize,
        triplets: &[(usize, usize, f64)],
    ) -> Result<Self> {
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        for &(r, c, p) in triplets {
            if r >= n || c >= n {
                return Err(Error::InvalidInput(format!(
                    "triplet ({r}, {c}, {p}) outside the {n}-state space"
                )));
            }
            if !(p > 0.0 && p <= 1.0) {
                return Err(Error::InvalidInput(format!(
                    "probability {p} at ({r}, {c}) is outside (0, 1]"
                )));
            }
            if rows[r].iter().any(|&(cc, _)| cc == c) {
                return Err(Error::InvalidInput(format!(
                    "duplicate entry at ({r}, {c})"
                )));
            }
            rows[r].push((c, p));
        }
        for (r, row) in rows.iter().enumerate() {
            let sum: f64 = row.iter().map(|&(_, p)| p).sum();
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::InvalidInput(format!(
                    "row {r} sums to {sum}, not 1"
                )));
            }
        }
        let rows = Arc::new(rows);
        Ok(TransitionKernel::new(label, Some(n), move |x| {
            rows[x].clone()
        }))
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn finite_size(&self) -> Option<usize> {
        self.finite_size
    }

    /// Human-readable name of a state (its index by default).
    pub fn state_label(&self, x: State) -> String {
        match &self.state_label {
            Some(f) => f(x),
            None => x.to_string(),
        }
    }

    /// The transition row of `x`.
    pub fn row(&self, x: State) -> Vec<(State, f64)> {
        let row = (self.row_fn)(x);
        debug_assert!(
            row.iter().all(|&(_, p)| p > 0.0 && p <= 1.0 + 1e-15),
            "kernel {}: probability outside (0,1] in row {x}",
            self.label
        );
        debug_assert!(
            {
                let mut cols: Vec<usize> = row.iter().map(|&(c, _)| c).collect();
                cols.sort_unstable();
                cols.windows(2).all(|w| w[0] != w[1])
            },
            "kernel {}: duplicate targets in row {x}",
            self.label
        );
        row
    }
}

/// A real-valued function of the state: dense over a truncation window, or a
/// closed form callable anywhere on the enumeration.
#[derive(Clone)]
pub enum RealFunction {
    Dense(Arc<Vec<f64>>),
    Closed(Arc<dyn Fn(State) -> f64 + Send + Sync>),
}

impl fmt::Debug for RealFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RealFunction::Dense(v) => write!(f, "RealFunction::Dense(len={})", v.len()),
            RealFunction::Closed(_) => write!(f, "RealFunction::Closed"),
        }
    }
}

impl RealFunction {
    pub fn dense(values: Vec<f64>) -> Self {
        RealFunction::Dense(Arc::new(values))
    }

    pub fn from_fn(f: impl Fn(State) -> f64 + Send + Sync + 'static) -> Self {
        RealFunction::Closed(Arc::new(f))
    }

    pub fn constant(c: f64) -> Self {
        RealFunction::from_fn(move |_| c)
    }

    /// Indicator of a finite set of states.
    pub fn indicator(states: &[State]) -> Self {
        let set: Vec<State> = states.to_vec();
        RealFunction::from_fn(move |x| if set.contains(&x) { 1.0 } else { 0.0 })
    }

    /// `f(x) = x` on the enumeration index.
    pub fn identity() -> Self {
        RealFunction::from_fn(|x| x as f64)
    }

    /// Polynomial in the enumeration index, `coeffs[k]` multiplying `x^k`.
    pub fn poly(coeffs: &[f64]) -> Self {
        let c = coeffs.to_vec();
        RealFunction::from_fn(move |x| {
            let xf = x as f64;
            c.iter().rev().fold(0.0, |acc, &ck| acc * xf + ck)
        })
    }

    pub fn is_closed(&self) -> bool {
        matches!(self, RealFunction::Closed(_))
    }

    /// Evaluates at `x`. Panics if a dense function is read outside its
    /// window; use [`RealFunction::maybe_eval`] when that is expected.
    pub fn eval(&self, x: State) -> f64 {
        match self {
            RealFunction::Dense(v) => v[x],
            RealFunction::Closed(f) => f(x),
        }
    }

    pub fn maybe_eval(&self, x: State) -> Option<f64> {
        match self {
            RealFunction::Dense(v) => v.get(x).copied(),
            RealFunction::Closed(f) => Some(f(x)),
        }
    }

    /// Values on `[0, n)` as a vector.
    pub fn materialize(&self, n: usize) -> Vec<f64> {
        match self {
            RealFunction::Dense(v) => {
                assert!(v.len() >= n, "dense function covers {} < {n} states", v.len());
                v[..n].to_vec()
            }
            RealFunction::Closed(f) => (0..n).map(|x| f(x)).collect(),
        }
    }

    /// `self - c`, preserving closedness.
    pub fn shifted(&self, c: f64) -> RealFunction {
        match self {
            RealFunction::Dense(v) => {
                RealFunction::dense(v.iter().map(|&a| a - c).collect())
            }
            RealFunction::Closed(f) => {
                let f = f.clone();
                RealFunction::from_fn(move |x| f(x) - c)
            }
        }
    }

    /// Pointwise sum.
    pub fn add(&self, other: &RealFunction) -> RealFunction {
        match (self, other) {
            (RealFunction::Dense(a), RealFunction::Dense(b)) => {
                let n = a.len().min(b.len());
                RealFunction::dense((0..n).map(|i| a[i] + b[i]).collect())
            }
            _ => {
                let a = self.clone();
                let b = other.clone();
                RealFunction::from_fn(move |x| a.eval(x) + b.eval(x))
            }
        }
    }

    /// Pointwise absolute value.
    pub fn abs(&self) -> RealFunction {
        match self {
            RealFunction::Dense(v) => RealFunction::dense(v.iter().map(|a| a.abs()).collect()),
            RealFunction::Closed(f) => {
                let f = f.clone();
                RealFunction::from_fn(move |x| f(x).abs())
            }
        }
    }
}

/// What to do with row mass that falls outside the truncation window.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LeakPolicy {
    /// Add the leaked mass to the diagonal. Preserves within-window
    /// transition ratios.
    RedirectSelf,
    /// Rescale the surviving row to sum to 1.
    Renormalize,
}

/// Truncation parameters.
#[derive(Debug, Clone, Copy)]
pub struct TruncationOptions {
    pub policy: LeakPolicy,
    /// Per-row leak above this cap aborts construction.
    pub leak_cap: f64,
}

impl Default for TruncationOptions {
    fn default() -> Self {
        TruncationOptions { policy: LeakPolicy::RedirectSelf, leak_cap: 1.0 }
    }
}

/// A finite window onto a countable chain: row-stochastic matrix over the
/// first `size` enumerated states, with per-row leak recorded before
/// redistribution.
#[derive(Debug, Clone)]
pub struct TruncatedChain {
    kernel: Arc<TransitionKernel>,
    size: usize,
    matrix: CsrMatrix,
    leak: Vec<f64>,
    options: TruncationOptions,
}

impl TruncatedChain {
    pub fn kernel(&self) -> &Arc<TransitionKernel> {
        &self.kernel
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn matrix(&self) -> &CsrMatrix {
        &self.matrix
    }

    /// Probability mass of row `x` that fell outside the window, recorded
    /// before redistribution.
    pub fn leak(&self) -> &[f64] {
        &self.leak
    }

    pub fn max_leak(&self) -> f64 {
        self.leak.iter().copied().fold(0.0, f64::max)
    }

    pub fn options(&self) -> TruncationOptions {
        self.options
    }

    /// States whose rows were untouched by leak handling.
    pub fn interior_states(&self) -> impl Iterator<Item = State> + '_ {
        (0..self.size).filter(|&x| self.leak[x] == 0.0)
    }

    /// `I - Q` where `Q` is the window matrix with column `z` deleted: the
    /// linear system behind expectations over paths killed at `z`.
    pub fn taboo_matrix(&self, z: State) -> CsrMatrix {
        assert!(z < self.size, "taboo state outside the window");
        let n = self.size;
        let mut rows: Vec<Vec<(usize, f64)>> = Vec::with_capacity(n);
        for x in 0..n {
            let (cols, vals) = self.matrix.row(x);
            let mut row: Vec<(usize, f64)> = Vec::with_capacity(cols.len() + 1);
            let mut diag = 1.0;
            for (&c, &v) in cols.iter().zip(vals) {
                if c == z {
                    continue;
                }
                if c == x {
                    diag -= v;
                } else {
                    row.push((c, -v));
                }
            }
            row.push((x, diag));
            rows.push(row);
        }
        CsrMatrix::from_rows(n, &rows)
    }

    /// Bypasses construction checks; for validation reporting and tests.
    pub fn from_matrix_unchecked(kernel: Arc<TransitionKernel>, matrix: CsrMatrix) -> Self {
        let size = matrix.n();
        TruncatedChain {
            kernel,
            size,
            matrix,
            leak: vec![0.0; size],
            options: TruncationOptions::default(),
        }
    }
}

/// Builds the truncation of `kernel` onto its first `size` enumerated states.
///
/// The requested size must be at least 2; for intrinsically finite kernels it
/// is clamped to the true state count. Rows are leak-handled per the policy
/// and the positive-entry graph must be strongly connected.
pub fn build_truncation(
    kernel: Arc<TransitionKernel>,
    size: usize,
    options: TruncationOptions,
) -> Result<TruncatedChain> {
    if size < 2 {
        return Err(Error::InvalidInput(format!("truncation size {size} < 2")));
    }
    let n = match kernel.finite_size() {
        Some(f) => size.min(f),
        None => size,
    };

    let mut rows: Vec<Vec<(usize, f64)>> = Vec::with_capacity(n);
    let mut leak = vec![0.0f64; n];
    for (x, leak_x) in leak.iter_mut().enumerate() {
        let full = kernel.row(x);
        let mut inside: Vec<(usize, f64)> = Vec::with_capacity(full.len());
        let mut lost = Kahan::new();
        for (c, p) in full {
            if c < n {
                inside.push((c, p));
            } else {
                lost.add(p);
            }
        }
        let lost = lost.value();
        *leak_x = lost;
        if lost > options.leak_cap {
            return Err(Error::LeakTooLarge { state: x, leak: lost, cap: options.leak_cap });
        }
        if lost > 0.0 {
            let kept: f64 = inside.iter().map(|&(_, p)| p).sum();
            if kept <= 0.0 {
                // Nothing survives in-window; park the row on itself and let
                // the connectivity check reject the window if it matters.
                inside = vec![(x, 1.0)];
            } else {
                match options.policy {
                    LeakPolicy::RedirectSelf => {
                        if let Some(e) = inside.iter_mut().find(|e| e.0 == x) {
                            e.1 += lost;
                        } else {
                            inside.push((x, lost));
                        }
                    }
                    LeakPolicy::Renormalize => {
                        let scale = 1.0 / kept;
                        for e in inside.iter_mut() {
                            e.1 *= scale;
                        }
                    }
                }
            }
        }
        rows.push(inside);
    }

    let matrix = CsrMatrix::from_rows(n, &rows);
    let chain = TruncatedChain { kernel, size: n, matrix, leak, options };

    if let Some(x) = find_disconnection(&chain.matrix) {
        return Err(Error::NotIrreducible(format!(
            "state {x} and state 0 do not communicate in the {n}-state window"
        )));
    }
    for x in 0..n {
        let (_, vals) = chain.matrix.row(x);
        let sum: f64 = vals.iter().sum();
        if (sum - 1.0).abs() > ROW_SUM_TOL {
            return Err(Error::InvalidInput(format!(
                "row {x} sums to {sum} after leak handling"
            )));
        }
    }
    Ok(chain)
}

/// Returns a witness state that does not communicate with state 0, if any.
fn find_disconnection(m: &CsrMatrix) -> Option<State> {
    let n = m.n();
    let forward = bfs_reach(m, 0, false);
    if let Some(x) = (0..n).find(|&x| !forward[x]) {
        return Some(x);
    }
    let backward = bfs_reach(m, 0, true);
    (0..n).find(|&x| !backward[x])
}

fn bfs_reach(m: &CsrMatrix, start: State, reversed: bool) -> Vec<bool> {
    let n = m.n();
    let g = if reversed { Some(m.transpose()) } else { None };
    let g = g.as_ref().unwrap_or(m);
    let mut seen = vec![false; n];
    let mut queue = std::collections::VecDeque::new();
    seen[start] = true;
    queue.push_back(start);
    while let Some(x) = queue.pop_front() {
        let (cols, _) = g.row(x);
        for &c in cols {
            if !seen[c] {
                seen[c] = true;
                queue.push_back(c);
            }
        }
    }
    seen
}

/// Structural report produced by [`validate_kernel`].
#[derive(Debug, Clone)]
pub struct ValidationReport {
    /// Largest `|row sum - 1|` and the row attaining it.
    pub max_row_sum_dev: f64,
    pub worst_row: State,
    /// `(row, col)` positions holding negative entries (capped at 16).
    pub negative_entries: Vec<(State, State)>,
    pub strongly_connected: bool,
    pub pass: bool,
}

/// Re-checks the window invariants and reports rather than erroring.
pub fn validate_kernel(chain: &TruncatedChain) -> ValidationReport {
    let m = chain.matrix();
    let mut max_dev = 0.0;
    let mut worst = 0;
    let mut negative = Vec::new();
    for x in 0..m.n() {
        let (cols, vals) = m.row(x);
        let mut sum = Kahan::new();
        for (&c, &v) in cols.iter().zip(vals) {
            sum.add(v);
            if v < 0.0 && negative.len() < 16 {
                negative.push((x, c));
            }
        }
        let dev = (sum.value() - 1.0).abs();
        if dev > max_dev {
            max_dev = dev;
            worst = x;
        }
    }
    let connected = find_disconnection(m).is_none();
    let pass = max_dev <= ROW_SUM_TOL && negative.is_empty() && connected;
    ValidationReport {
        max_row_sum_dev: max_dev,
        worst_row: worst,
        negative_entries: negative,
        strongly_connected: connected,
        pass,
    }
}

/// Period of the chain: gcd of cycle lengths through `z` in the
/// positive-entry graph. The chain must be irreducible.
pub fn detect_period(chain: &TruncatedChain, z: State) -> usize {
    let m = chain.matrix();
    let n = m.n();
    assert!(z < n);
    // BFS levels from z; every edge (u, v) closes a cycle of length
    // dist(u) + 1 - dist(v) through z in gcd terms.
    let mut dist = vec![i64::MIN; n];
    let mut queue = std::collections::VecDeque::new();
    dist[z] = 0;
    queue.push_back(z);
    while let Some(x) = queue.pop_front() {
        let (cols, _) = m.row(x);
        for &c in cols {
            if dist[c] == i64::MIN {
                dist[c] = dist[x] + 1;
                queue.push_back(c);
            }
        }
    }
    let mut g: i64 = 0;
    for u in 0..n {
        if dist[u] == i64::MIN {
            continue;
        }
        let (cols, _) = m.row(u);
        for &v in cols {
            if dist[v] != i64::MIN {
                g = gcd(g, (dist[u] + 1 - dist[v]).abs());
            }
        }
    }
    g.max(1) as usize
}

fn gcd(a: i64, b: i64) -> i64 {
    if b == 0 { a } else { gcd(b, a % b) }
}

/// Stationary distribution of a truncation, with its invariance residual.
#[derive(Debug, Clone)]
pub struct StationaryDist {
    probs: Vec<f64>,
    residual: f64,
}

impl StationaryDist {
    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn prob(&self, x: State) -> f64 {
        self.probs[x]
    }

    /// `||pi P - pi||_1` on the window.
    pub fn residual(&self) -> f64 {
        self.residual
    }

    /// `sum_x pi(x) f(x)` with compensated accumulation.
    pub fn expect(&self, f: &RealFunction) -> f64 {
        let mut acc = Kahan::new();
        for (x, &p) in self.probs.iter().enumerate() {
            acc.add(p * f.eval(x));
        }
        acc.value()
    }
}

/// Solves `pi P = pi`, `sum pi = 1` on the window.
///
/// The occupation-measure route is used: with `Q` the window matrix minus its
/// column 0, the expected visit counts `nu` over a cycle from state 0 solve
/// `(I - Q)^T nu = e_0`, and `pi = nu / sum(nu)`.
pub fn stationary_dist(chain: &TruncatedChain) -> Result<StationaryDist> {
    let n = chain.size();
    if n == 1 {
        return Ok(StationaryDist { probs: vec![1.0], residual: 0.0 });
    }
    let a = chain.taboo_matrix(0).transpose();
    let lu = SparseLu::factor(&a)?;
    let mut b = vec![0.0f64; n];
    b[0] = 1.0;
    let (mut nu, _) = lu.solve_refined(&a, &b, 1e-14);

    let floor = -1e-9 * nu.iter().copied().fold(0.0, f64::max);
    for v in nu.iter_mut() {
        if *v < 0.0 {
            if *v < floor {
                return Err(Error::SingularSystem(format!(
                    "negative occupation mass {v} in the stationary solve"
                )));
            }
            *v = 0.0;
        }
    }
    let mut total = Kahan::new();
    for &v in &nu {
        total.add(v);
    }
    let total = total.value();
    if !(total.is_finite() && total > 0.0) {
        return Err(Error::SingularSystem("occupation mass not normalizable".into()));
    }
    let probs: Vec<f64> = nu.iter().map(|&v| v / total).collect();

    // Invariance residual in l1.
    let mut pi_p = vec![0.0f64; n];
    chain.matrix().matvec_transpose(&probs, &mut pi_p);
    let mut res = Kahan::new();
    for (a, b) in pi_p.iter().zip(&probs) {
        res.add((a - b).abs());
    }
    let residual = res.value();
    if residual > PI_RESIDUAL_TOL {
        return Err(Error::SingularSystem(format!(
            "stationary residual {residual:.3e} exceeds {PI_RESIDUAL_TOL:.1e}"
        )));
    }
    Ok(StationaryDist { probs, residual })
}

/// Centers `f` against `pi`: returns `(f_c, pi f)` with `f_c = f - (pi f) e`.
/// The centered function is dense over the window; `pi . f_c` is verified to
/// vanish within [`CENTER_TOL`].
pub fn center(f: &RealFunction, pi: &StationaryDist) -> (RealFunction, f64) {
    let pi_f = pi.expect(f);
    let values: Vec<f64> = (0..pi.probs().len()).map(|x| f.eval(x) - pi_f).collect();
    let f_c = RealFunction::dense(values);
    let check = pi.expect(&f_c).abs();
    debug_assert!(check <= CENTER_TOL, "centering residual {check}");
    let _ = check;
    (f_c, pi_f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gallery;

    fn opts() -> TruncationOptions {
        TruncationOptions::default()
    }

    #[test]
    fn two_state_truncation_is_exact() {
        let k = gallery::two_state(0.5, 0.5).unwrap().kernel;
        let chain = build_truncation(k, 2, opts()).unwrap();
        assert_eq!(chain.size(), 2);
        assert_eq!(chain.max_leak(), 0.0);
        let (cols, vals) = chain.matrix().row(0);
        assert_eq!(cols, &[0, 1]);
        assert!((vals[0] - 0.5).abs() < 1e-15 && (vals[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn birth_death_boundary_row_redirects_leak() {
        let k = gallery::birth_death(0.3).unwrap().kernel;
        let chain = build_truncation(k, 50, opts()).unwrap();
        assert!((chain.leak()[49] - 0.3).abs() < 1e-15);
        let (cols, vals) = chain.matrix().row(49);
        // Row 49: down 0.7, self-loop picks up the leaked 0.3.
        let mut got = std::collections::HashMap::new();
        for (&c, &v) in cols.iter().zip(vals) {
            got.insert(c, v);
        }
        assert!((got[&48] - 0.7).abs() < 1e-15);
        assert!((got[&49] - 0.3).abs() < 1e-15);
        let sum: f64 = vals.iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rails_truncation_leaks_only_at_rail_tips() {
        let g = gallery::rails(0.3, &[0.25, 0.125, 0.125]).unwrap();
        // Window covering i <= 20 on 3 rails: 1 + 20 * 3 states.
        let chain = build_truncation(g.kernel, 61, opts()).unwrap();
        for x in 0..chain.size() {
            let l = chain.leak()[x];
            if x >= chain.size() - 3 {
                assert!((l - 0.3).abs() < 1e-15, "tip {x} leak {l}");
            } else {
                assert_eq!(l, 0.0, "interior {x} leaks {l}");
            }
        }
    }

    #[test]
    fn leak_cap_triggers() {
        let k = gallery::birth_death(0.3).unwrap().kernel;
        let r = build_truncation(
            k,
            50,
            TruncationOptions { leak_cap: 0.1, ..TruncationOptions::default() },
        );
        assert!(matches!(r, Err(Error::LeakTooLarge { state: 49, .. })));
    }

    #[test]
    fn disconnected_window_is_rejected() {
        // Two 2-cycles with no path between them.
        let k = TransitionKernel::from_triplets(
            "blocks",
            4,
            &[(0, 1, 1.0), (1, 0, 1.0), (2, 3, 1.0), (3, 2, 1.0)],
        )
        .unwrap();
        let r = build_truncation(Arc::new(k), 4, opts());
        assert!(matches!(r, Err(Error::NotIrreducible(_))));
    }

    #[test]
    fn validation_report_flags_bad_rows() {
        let k = Arc::new(
            TransitionKernel::from_triplets("ok", 2, &[(0, 1, 1.0), (1, 0, 1.0)]).unwrap(),
        );
        let good = build_truncation(k.clone(), 2, opts()).unwrap();
        assert!(validate_kernel(&good).pass);

        let bad = TruncatedChain::from_matrix_unchecked(
            k.clone(),
            CsrMatrix::from_rows(2, &[vec![(0, 0.4), (1, 0.5)], vec![(0, 1.0)]]),
        );
        let report = validate_kernel(&bad);
        assert!(!report.pass);
        assert_eq!(report.worst_row, 0);
        assert!((report.max_row_sum_dev - 0.1).abs() < 1e-12);

        let blocks = TruncatedChain::from_matrix_unchecked(
            k,
            CsrMatrix::from_rows(4, &[
                vec![(1, 1.0)],
                vec![(0, 1.0)],
                vec![(3, 1.0)],
                vec![(2, 1.0)],
            ]),
        );
        let report = validate_kernel(&blocks);
        assert!(!report.pass);
        assert!(!report.strongly_connected);
    }

    #[test]
    fn periods() {
        let lazy = gallery::two_state(0.5, 0.5).unwrap().kernel;
        let chain = build_truncation(lazy, 2, opts()).unwrap();
        assert_eq!(detect_period(&chain, 0), 1);

        let flip = gallery::two_state(1.0, 1.0).unwrap().kernel;
        let chain = build_truncation(flip, 2, opts()).unwrap();
        assert_eq!(detect_period(&chain, 0), 2);

        let bd = gallery::birth_death(0.3).unwrap().kernel;
        let chain = build_truncation(bd, 40, opts()).unwrap();
        assert_eq!(detect_period(&chain, 0), 1);
    }

    #[test]
    fn stationary_matches_balance_oracles() {
        let chain =
            build_truncation(gallery::two_state(0.5, 0.5).unwrap().kernel, 2, opts()).unwrap();
        let pi = stationary_dist(&chain).unwrap();
        assert!((pi.prob(0) - 0.5).abs() < 1e-12);
        assert!((pi.prob(1) - 0.5).abs() < 1e-12);

        let chain =
            build_truncation(gallery::two_state(0.2, 0.8).unwrap().kernel, 2, opts()).unwrap();
        let pi = stationary_dist(&chain).unwrap();
        assert!((pi.prob(0) - 0.8).abs() < 1e-12);
        assert!((pi.prob(1) - 0.2).abs() < 1e-12);

        // Geometric detailed-balance solution, rho = 3/7.
        let chain =
            build_truncation(gallery::birth_death(0.3).unwrap().kernel, 200, opts()).unwrap();
        let pi = stationary_dist(&chain).unwrap();
        let rho: f64 = 3.0 / 7.0;
        for k in 0..20 {
            let exact = (4.0 / 7.0) * rho.powi(k as i32);
            assert!((pi.prob(k) - exact).abs() < 1e-10, "pi({k})");
        }
        assert!(pi.residual() <= PI_RESIDUAL_TOL);
    }

    #[test]
    fn rails_stationary_matches_closed_form() {
        let g = gallery::rails(0.3, &[0.25, 0.125, 0.125]).unwrap();
        let chain = build_truncation(g.kernel.clone(), 400, opts()).unwrap();
        let pi = stationary_dist(&chain).unwrap();
        assert!((pi.prob(0) - 4.0 / 9.0).abs() < 1e-10);
        let closed = g.pi_closed.expect("closed form");
        for x in 0..40 {
            assert!((pi.prob(x) - closed.eval(x)).abs() < 1e-10, "state {x}");
        }
    }

    #[test]
    fn centering_properties() {
        let chain =
            build_truncation(gallery::two_state(0.5, 0.5).unwrap().kernel, 2, opts()).unwrap();
        let pi = stationary_dist(&chain).unwrap();

        let (fc, pif) = center(&RealFunction::constant(1.0), &pi);
        assert_eq!(pif, 1.0);
        assert!(fc.eval(0).abs() < 1e-15 && fc.eval(1).abs() < 1e-15);

        let (fc, pif) = center(&RealFunction::indicator(&[1]), &pi);
        assert!((pif - 0.5).abs() < 1e-14);
        assert!((fc.eval(0) + 0.5).abs() < 1e-14);
        assert!((fc.eval(1) - 0.5).abs() < 1e-14);
        assert!(pi.expect(&fc).abs() <= CENTER_TOL);

        let (fc, pif) = center(&RealFunction::constant(0.0), &pi);
        assert_eq!(pif, 0.0);
        assert_eq!(fc.eval(0), 0.0);
    }

    #[test]
    fn truncation_stability_under_doubling() {
        for (label, kernel) in [
            ("birth_death", gallery::birth_death(0.3).unwrap().kernel),
            ("rails", gallery::rails(0.3, &[0.25, 0.125, 0.125]).unwrap().kernel),
        ] {
            let small = build_truncation(kernel.clone(), 256, opts()).unwrap();
            let large = build_truncation(kernel, 512, opts()).unwrap();
            let pi_s = stationary_dist(&small).unwrap();
            let pi_l = stationary_dist(&large).unwrap();
            for x in 0..16 {
                assert!(
                    (pi_s.prob(x) - pi_l.prob(x)).abs() < 1e-8,
                    "{label}: pi({x}) moved"
                );
            }
        }
    }

    #[test]
    fn degenerate_single_state_kernel_clamps() {
        let g = gallery::current_age(3.0, 0.0).unwrap();
        let chain = build_truncation(g.kernel, 16, opts()).unwrap();
        assert_eq!(chain.size(), 1);
        let pi = stationary_dist(&chain).unwrap();
        assert_eq!(pi.prob(0), 1.0);
    }
}
