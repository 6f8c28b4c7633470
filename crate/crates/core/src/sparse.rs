//! Sparse matrices and a direct sparse LU solver.
//!
//! Everything downstream (stationary distributions, taboo systems, drift
//! bound constants) reduces to solving `A x = b` with `A = I - Q` for a
//! substochastic `Q`. Truncations of the gallery chains are banded or nearly
//! so; a left-looking LU with partial pivoting keeps fill proportional to the
//! band while still handling arbitrary patterns from user-supplied kernels.
//!
//! Residuals are evaluated with compensated (error-free transformation)
//! accumulation so that a reported residual reflects the solution rather than
//! f64 evaluation noise; `solve_refined` performs iterative refinement against
//! that compensated residual.

use crate::error::{Error, Result};

/// Square sparse matrix in compressed sparse row form.
#[derive(Debug, Clone)]
pub struct CsrMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds from per-row entry lists. Entries within a row must have
    /// distinct column indices; rows need not be sorted.
    pub fn from_rows(n: usize, rows: &[Vec<(usize, f64)>]) -> Self {
        assert_eq!(rows.len(), n, "row count must equal n");
        let nnz: usize = rows.iter().map(Vec::len).sum();
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col_idx = Vec::with_capacity(nnz);
        let mut values = Vec::with_capacity(nnz);
        row_ptr.push(0);
        for row in rows {
            let mut entries: Vec<(usize, f64)> = row.clone();
            entries.sort_unstable_by_key(|&(c, _)| c);
            for (c, v) in entries {
                debug_assert!(c < n, "column index out of range");
                col_idx.push(c);
                values.push(v);
            }
            row_ptr.push(col_idx.len());
        }
        CsrMatrix { n, row_ptr, col_idx, values }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.col_idx.len()
    }

    /// Column indices and values of row `i`.
    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let lo = self.row_ptr[i];
        let hi = self.row_ptr[i + 1];
        (&self.col_idx[lo..hi], &self.values[lo..hi])
    }

    /// `out = A x`.
    pub fn matvec(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n);
        debug_assert_eq!(out.len(), self.n);
        for (i, o) in out.iter_mut().enumerate() {
            let (cols, vals) = self.row(i);
            let mut acc = 0.0;
            for (&c, &v) in cols.iter().zip(vals) {
                acc += v * x[c];
            }
            *o = acc;
        }
    }

    /// `out = A^T x` (scatter form).
    pub fn matvec_transpose(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n);
        out.fill(0.0);
        for (i, &xi) in x.iter().enumerate() {
            let (cols, vals) = self.row(i);
            if xi == 0.0 {
                continue;
            }
            for (&c, &v) in cols.iter().zip(vals) {
                out[c] += v * xi;
            }
        }
    }

    /// Sparse transpose.
    pub fn transpose(&self) -> CsrMatrix {
        let n = self.n;
        let mut counts = vec![0usize; n + 1];
        for &c in &self.col_idx {
            counts[c + 1] += 1;
        }
        for i in 0..n {
            counts[i + 1] += counts[i];
        }
        let row_ptr = counts.clone();
        let mut col_idx = vec![0usize; self.nnz()];
        let mut values = vec![0.0f64; self.nnz()];
        let mut next = counts;
        for i in 0..n {
            let (cols, vals) = self.row(i);
            for (&c, &v) in cols.iter().zip(vals) {
                let p = next[c];
                col_idx[p] = i;
                values[p] = v;
                next[c] += 1;
            }
        }
        CsrMatrix { n, row_ptr, col_idx, values }
    }

    /// Row `i` of `b - A x`, accumulated with error-free transformations.
    pub fn residual_row(&self, i: usize, x: &[f64], b: f64) -> f64 {
        let (cols, vals) = self.row(i);
        let mut sum = b;
        let mut comp = 0.0;
        for (&c, &v) in cols.iter().zip(vals) {
            let p = v * x[c];
            let perr = v.mul_add(x[c], -p);
            let (s, serr) = two_sum(sum, -p);
            sum = s;
            comp += serr - perr;
        }
        sum + comp
    }
}

/// Error-free sum: returns `(fl(a+b), err)` with `a + b = fl(a+b) + err`.
#[inline]
pub(crate) fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    let err = (a - (s - bb)) + (b - bb);
    (s, err)
}

/// Compensated (Neumaier) running sum.
#[derive(Debug, Clone, Copy, Default)]
pub struct Kahan {
    sum: f64,
    comp: f64,
}

impl Kahan {
    pub fn new() -> Self {
        Kahan::default()
    }

    #[inline]
    pub fn add(&mut self, v: f64) {
        let (s, e) = two_sum(self.sum, v);
        self.sum = s;
        self.comp += e;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Sparse LU factorization `P A = L U` with partial pivoting
/// (left-looking, Gilbert–Peierls).
pub struct SparseLu {
    n: usize,
    // L is unit lower triangular, CSC, diagonal implicit; row indices are in
    // pivot order after factorization completes.
    lp: Vec<usize>,
    li: Vec<usize>,
    lx: Vec<f64>,
    // U is upper triangular, CSC; the diagonal entry of each column is last.
    up: Vec<usize>,
    ui: Vec<usize>,
    ux: Vec<f64>,
    /// pinv[original row] = pivot position.
    pinv: Vec<usize>,
}

const UNPIVOTED: usize = usize::MAX;

impl SparseLu {
    /// Factors `a`. Fails with [`Error::SingularSystem`] on a zero or
    /// non-finite pivot.
    pub fn factor(a: &CsrMatrix) -> Result<SparseLu> {
        let n = a.n();
        // Column access: CSC of A = CSR of A^T.
        let at = a.transpose();

        let mut lp = vec![0usize; n + 1];
        let mut li: Vec<usize> = Vec::new();
        let mut lx: Vec<f64> = Vec::new();
        let mut up = vec![0usize; n + 1];
        let mut ui: Vec<usize> = Vec::new();
        let mut ux: Vec<f64> = Vec::new();
        let mut pinv = vec![UNPIVOTED; n];

        let mut x = vec![0.0f64; n];
        let mut flag = vec![usize::MAX; n];
        let mut reach: Vec<usize> = Vec::with_capacity(n);
        let mut stack: Vec<usize> = Vec::with_capacity(64);
        let mut pstack: Vec<usize> = Vec::with_capacity(64);

        for k in 0..n {
            let (acols, avals) = at.row(k); // pattern and values of A(:, k)

            // Symbolic: depth-first search through the columns of L reaches
            // every row the forward solve can touch, recorded in topological
            // order.
            reach.clear();
            for &i0 in acols {
                if flag[i0] == k {
                    continue;
                }
                stack.clear();
                pstack.clear();
                stack.push(i0);
                pstack.push(0);
                flag[i0] = k;
                while let Some(&i) = stack.last() {
                    let jcol = pinv[i];
                    let mut descended = false;
                    if jcol != UNPIVOTED {
                        let lo = lp[jcol];
                        let hi = lp[jcol + 1];
                        let off = pstack.last_mut().unwrap();
                        while lo + *off < hi {
                            let r = li[lo + *off];
                            *off += 1;
                            if flag[r] != k {
                                flag[r] = k;
                                stack.push(r);
                                pstack.push(0);
                                descended = true;
                                break;
                            }
                        }
                    }
                    if !descended {
                        reach.push(i);
                        stack.pop();
                        pstack.pop();
                    }
                }
            }
            // Postorder pushes dependencies last; reverse for the solve.
            reach.reverse();

            // Numeric forward solve x = L \ A(:, k).
            for &i in &reach {
                x[i] = 0.0;
            }
            for (&i, &v) in acols.iter().zip(avals) {
                x[i] = v;
            }
            for &i in &reach {
                let jcol = pinv[i];
                if jcol == UNPIVOTED {
                    continue;
                }
                let xj = x[i];
                if xj == 0.0 {
                    continue;
                }
                for p in lp[jcol]..lp[jcol + 1] {
                    x[li[p]] -= lx[p] * xj;
                }
            }

            // Partial pivot over not-yet-pivotal rows.
            let mut ipiv = UNPIVOTED;
            let mut pmax = 0.0f64;
            for &i in &reach {
                if pinv[i] == UNPIVOTED {
                    let a = x[i].abs();
                    if a > pmax {
                        pmax = a;
                        ipiv = i;
                    }
                }
            }
            if ipiv == UNPIVOTED || pmax == 0.0 || !pmax.is_finite() {
                return Err(Error::SingularSystem(format!(
                    "no usable pivot in column {k} of a {n}x{n} system"
                )));
            }
            let pivot = x[ipiv];

            // U(:, k): pivotal rows, then the diagonal last.
            for &i in &reach {
                let pi = pinv[i];
                if pi != UNPIVOTED {
                    ui.push(pi);
                    ux.push(x[i]);
                }
            }
            ui.push(k);
            ux.push(pivot);
            up[k + 1] = ui.len();

            // L(:, k): remaining rows, scaled; row indices fixed to pivot
            // order after the loop.
            pinv[ipiv] = k;
            for &i in &reach {
                if pinv[i] == UNPIVOTED {
                    li.push(i);
                    lx.push(x[i] / pivot);
                }
            }
            lp[k + 1] = li.len();
        }

        for r in li.iter_mut() {
            *r = pinv[*r];
        }

        Ok(SparseLu { n, lp, li, lx, up, ui, ux, pinv })
    }

    /// Solves `A x = b` using the stored factors.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        assert_eq!(b.len(), self.n);
        let mut y = vec![0.0f64; self.n];
        for (i, &bi) in b.iter().enumerate() {
            y[self.pinv[i]] = bi;
        }
        // L y' = P b
        for k in 0..self.n {
            let yk = y[k];
            if yk == 0.0 {
                continue;
            }
            for p in self.lp[k]..self.lp[k + 1] {
                y[self.li[p]] -= self.lx[p] * yk;
            }
        }
        // U x = y'
        for k in (0..self.n).rev() {
            let lo = self.up[k];
            let hi = self.up[k + 1];
            let diag = self.ux[hi - 1];
            let xk = y[k] / diag;
            y[k] = xk;
            if xk != 0.0 {
                for p in lo..hi - 1 {
                    y[self.ui[p]] -= self.ux[p] * xk;
                }
            }
        }
        y
    }

    /// Solves with iterative refinement against the compensated residual.
    /// Stops once the sup-norm residual is at most `target`, or after three
    /// corrections.
    pub fn solve_refined(&self, a: &CsrMatrix, b: &[f64], target: f64) -> (Vec<f64>, f64) {
        let mut x = self.solve(b);
        let mut res = residual_sup(a, &x, b);
        for _ in 0..3 {
            if res <= target || !res.is_finite() {
                break;
            }
            let r: Vec<f64> = (0..a.n()).map(|i| a.residual_row(i, &x, b[i])).collect();
            let dx = self.solve(&r);
            for (xi, di) in x.iter_mut().zip(&dx) {
                *xi += di;
            }
            let new_res = residual_sup(a, &x, b);
            if new_res >= res {
                break;
            }
            res = new_res;
        }
        (x, res)
    }
}

/// Sup-norm of `b - A x` with compensated row accumulation.
pub fn residual_sup(a: &CsrMatrix, x: &[f64], b: &[f64]) -> f64 {
    (0..a.n())
        .map(|i| a.residual_row(i, x, b[i]).abs())
        .fold(0.0, f64::max)
}
