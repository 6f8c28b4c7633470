//! The chain gallery: kernel constructors with closed-form reference
//! quantities.
//!
//! Four families: a two-state oracle chain, reflected random walks (the
//! `+-1` case is the birth-death queue), a hub feeding parallel birth-death
//! rails (which carries a non-constant harmonic family), and the current-age
//! renewal chain with a power-law survival tail.

use std::sync::Arc;

use crate::chain::{RealFunction, State, TransitionKernel};
use crate::error::{Error, Result};
use crate::sparse::Kahan;

/// A gallery kernel together with whatever closed forms the family admits.
#[derive(Debug, Clone)]
pub struct GalleryChain {
    pub kernel: Arc<TransitionKernel>,
    /// Exact stationary mass by enumeration index, when known in closed form.
    pub pi_closed: Option<RealFunction>,
    /// Where the family comes from.
    pub provenance: String,
}

/// Two-state chain with flip probabilities `a` (out of 0) and `b` (out of 1).
/// Closed form: `pi = (b, a) / (a + b)`.
pub fn two_state(a: f64, b: f64) -> Result<GalleryChain> {
    if !(a > 0.0 && a <= 1.0 && b > 0.0 && b <= 1.0) {
        return Err(Error::InvalidInput(format!(
            "two_state needs a, b in (0, 1], got a={a}, b={b}"
        )));
    }
    let kernel = TransitionKernel::new("two_state", Some(2), move |x| {
        let mut row = Vec::with_capacity(2);
        if x == 0 {
            if 1.0 - a > 0.0 {
                row.push((0, 1.0 - a));
            }
            row.push((1, a));
        } else {
            row.push((0, b));
            if 1.0 - b > 0.0 {
                row.push((1, 1.0 - b));
            }
        }
        row
    });
    let total = a + b;
    let pi = RealFunction::from_fn(move |x| if x == 0 { b / total } else { a / total });
    Ok(GalleryChain {
        kernel: Arc::new(kernel),
        pi_closed: Some(pi),
        provenance: "two-state oracle chain".into(),
    })
}

/// Reflected random walk `X_{n+1} = max(X_n + Z, 0)` for a finite-support
/// integer increment law with negative mean.
pub fn reflected_walk(increments: &[(i64, f64)]) -> Result<GalleryChain> {
    if increments.is_empty() {
        return Err(Error::InvalidInput("empty increment law".into()));
    }
    let mut seen = std::collections::BTreeSet::new();
    let mut total = 0.0;
    let mut mean = 0.0;
    for &(z, p) in increments {
        if !(p > 0.0 && p <= 1.0) {
            return Err(Error::InvalidInput(format!(
                "increment probability {p} outside (0, 1]"
            )));
        }
        if !seen.insert(z) {
            return Err(Error::InvalidInput(format!("duplicate increment {z}")));
        }
        total += p;
        mean += z as f64 * p;
    }
    if (total - 1.0).abs() > 1e-12 {
        return Err(Error::InvalidInput(format!(
            "increment probabilities sum to {total}"
        )));
    }
    if mean >= 0.0 {
        return Err(Error::NullOrTransient(mean));
    }
    let max_up = increments.iter().map(|&(z, _)| z).max().unwrap();
    // With no upward moves the recurrent class collapses to the origin.
    let finite = if max_up <= 0 { Some(1) } else { None };
    let law: Vec<(i64, f64)> = increments.to_vec();
    let kernel = TransitionKernel::new("reflected_walk", finite, move |x| {
        let mut row: std::collections::BTreeMap<usize, f64> = std::collections::BTreeMap::new();
        for &(z, p) in &law {
            let target = (x as i64 + z).max(0) as usize;
            *row.entry(target).or_insert(0.0) += p;
        }
        row.into_iter().collect()
    });
    let pi_closed = if finite == Some(1) {
        Some(RealFunction::from_fn(|x| if x == 0 { 1.0 } else { 0.0 }))
    } else {
        None
    };
    Ok(GalleryChain {
        kernel: Arc::new(kernel),
        pi_closed,
        provenance: format!("reflected walk, EZ = {mean}"),
    })
}

/// The `Z = +-1` reflected walk: up with probability `p`, down with `1 - p`.
/// Detailed balance gives `pi(k) = (1 - rho) rho^k` with `rho = p / (1 - p)`.
pub fn birth_death(p: f64) -> Result<GalleryChain> {
    if !(p > 0.0 && p < 0.5) {
        return Err(Error::InvalidInput(format!(
            "birth_death needs p in (0, 1/2), got {p}"
        )));
    }
    let mut g = reflected_walk(&[(1, p), (-1, 1.0 - p)])?;
    let rho = p / (1.0 - p);
    g.pi_closed = Some(RealFunction::from_fn(move |x| {
        (1.0 - rho) * rho.powi(x as i32)
    }));
    g.provenance = format!("birth-death walk, p = {p}");
    Ok(g)
}

/// Enumeration index of rail state `(i, j)`, `i >= 1`, `1 <= j <= n_rails`.
pub fn rails_index(i: usize, j: usize, n_rails: usize) -> State {
    debug_assert!(i >= 1 && j >= 1 && j <= n_rails);
    1 + (i - 1) * n_rails + (j - 1)
}

/// Inverse of [`rails_index`]; `None` for the hub state 0.
pub fn rails_coords(x: State, n_rails: usize) -> Option<(usize, usize)> {
    if x == 0 {
        None
    } else {
        Some(((x - 1) / n_rails + 1, (x - 1) % n_rails + 1))
    }
}

/// Hub-and-rails chain: a hub state 0 feeds `J` parallel birth-death rails,
/// rail `j` entered with probability `r[j]`, inner steps up `p` / down `q`.
///
/// Closed forms: `pi(0) = (1 + sum(r) / (q - p))^-1` and
/// `pi(i, j) = (r_j / p)(p / q)^i pi(0)`. Rows are enumerated layer by layer
/// so a size-`1 + k J` window covers the rectangle `i <= k` across all rails.
pub fn rails(p: f64, r: &[f64]) -> Result<GalleryChain> {
    if !(p > 0.0 && p < 0.5) {
        return Err(Error::InvalidInput(format!(
            "rails needs p in (0, 1/2), got {p}"
        )));
    }
    if r.is_empty() || r.iter().any(|&rj| rj <= 0.0) {
        return Err(Error::InvalidInput("rail weights must be positive".into()));
    }
    let total: f64 = r.iter().sum();
    if total >= 1.0 {
        return Err(Error::InvalidInput(format!(
            "rail weights sum to {total}, need < 1"
        )));
    }
    let q = 1.0 - p;
    let nr = r.len();
    let weights = r.to_vec();
    let kernel = TransitionKernel::new("rails", None, move |x| {
        match rails_coords(x, nr) {
            None => {
                let mut row = Vec::with_capacity(nr + 1);
                row.push((0usize, 1.0 - total));
                for (jm1, &rj) in weights.iter().enumerate() {
                    row.push((rails_index(1, jm1 + 1, nr), rj));
                }
                row
            }
            Some((i, j)) => {
                let down = if i == 1 { 0 } else { rails_index(i - 1, j, nr) };
                vec![(rails_index(i + 1, j, nr), p), (down, q)]
            }
        }
    })
    .with_state_labels(move |x| match rails_coords(x, nr) {
        None => "0".into(),
        Some((i, j)) => format!("({i},{j})"),
    });

    let pi0 = 1.0 / (1.0 + total / (q - p));
    let rv = r.to_vec();
    let pi = RealFunction::from_fn(move |x| match rails_coords(x, nr) {
        None => pi0,
        Some((i, j)) => rv[j - 1] / p * (p / q).powi(i as i32) * pi0,
    });
    Ok(GalleryChain {
        kernel: Arc::new(kernel),
        pi_closed: Some(pi),
        provenance: format!("hub with {nr} birth-death rails, p = {p}"),
    })
}

/// Survival function of the current-age increment law:
/// `S(0) = 1`, `S(n) = c' (n + 1)^-alpha` for `n >= 1`.
fn age_survival(alpha: f64, cprime: f64, n: usize) -> f64 {
    if n == 0 {
        1.0
    } else {
        cprime * ((n + 1) as f64).powf(-alpha)
    }
}

/// Current-age renewal chain: the age climbs by one until a renewal resets
/// it to zero. The increment law has survival `P(beta > n) = c'(n+1)^-alpha`
/// exactly for `n >= 1`, so the tail constant is analytically known.
/// `c' = 0` degenerates to `beta = 1`, a single-state chain.
///
/// Closed form: `pi(x) = lambda P(beta > x)` with `lambda = 1 / E beta`.
pub fn current_age(alpha: f64, cprime: f64) -> Result<GalleryChain> {
    if alpha <= 1.0 {
        return Err(Error::InvalidTail(format!(
            "alpha = {alpha}, need alpha > 1 for a finite mean"
        )));
    }
    if cprime < 0.0 || cprime * 0.5f64.powf(alpha) >= 1.0 {
        return Err(Error::InvalidTail(format!(
            "c' = {cprime} leaves no mass at beta = 1"
        )));
    }
    let finite = if cprime == 0.0 { Some(1) } else { None };
    let kernel = TransitionKernel::new("current_age", finite, move |x| {
        let climb = age_survival(alpha, cprime, x + 1) / age_survival(alpha, cprime, x);
        if climb > 0.0 {
            vec![(x + 1, climb), (0, 1.0 - climb)]
        } else {
            vec![(0, 1.0)]
        }
    });
    let lambda = current_age_lambda(alpha, cprime)?;
    let pi = RealFunction::from_fn(move |x| lambda * age_survival(alpha, cprime, x));
    Ok(GalleryChain {
        kernel: Arc::new(kernel),
        pi_closed: Some(pi),
        provenance: format!("current-age chain, tail exponent {alpha}"),
    })
}

/// `lambda = 1 / E beta` for the current-age increment law.
pub fn current_age_lambda(alpha: f64, cprime: f64) -> Result<f64> {
    if alpha <= 1.0 {
        return Err(Error::InvalidTail(format!("alpha = {alpha}")));
    }
    // E beta = sum_{n >= 0} S(n) = 1 + c'(zeta(alpha) - 1).
    Ok(1.0 / (1.0 + cprime * (zeta(alpha) - 1.0)))
}

/// Riemann zeta by direct summation plus a midpoint-rule tail.
fn zeta(alpha: f64) -> f64 {
    let n = 1_000_000usize;
    let mut acc = Kahan::new();
    for k in (1..=n).rev() {
        acc.add((k as f64).powf(-alpha));
    }
    let m = n as f64 + 0.5;
    let tail = m.powf(1.0 - alpha) / (alpha - 1.0) + alpha * m.powf(-alpha - 1.0) / 24.0;
    acc.value() + tail
}

/// Renewal sequence `u_n = P(renewal at n)` for the current-age increment
/// law, by the exact recursion `u_n = sum_{j <= n} p_j u_{n-j}`, `u_0 = 1`.
pub fn renewal_sequence(alpha: f64, cprime: f64, n_max: usize) -> Result<Vec<f64>> {
    if alpha <= 1.0 {
        return Err(Error::InvalidTail(format!("alpha = {alpha}")));
    }
    let s: Vec<f64> = (0..=n_max + 1)
        .map(|n| age_survival(alpha, cprime, n))
        .collect();
    // p_j = S(j-1) - S(j).
    let p: Vec<f64> = (1..=n_max).map(|j| s[j - 1] - s[j]).collect();
    let mut u = vec![0.0f64; n_max + 1];
    u[0] = 1.0;
    for n in 1..=n_max {
        let mut acc = Kahan::new();
        for j in 1..=n {
            let pj = p[j - 1];
            if pj != 0.0 {
                acc.add(pj * u[n - j]);
            }
        }
        u[n] = acc.value();
    }
    Ok(u)
}

/// Least-squares slope of `log |y|` against `log x`.
pub fn loglog_slope(points: &[(f64, f64)]) -> f64 {
    let pts: Vec<(f64, f64)> = points
        .iter()
        .filter(|&&(x, y)| x > 0.0 && y.abs() > 0.0)
        .map(|&(x, y)| (x.ln(), y.abs().ln()))
        .collect();
    let n = pts.len() as f64;
    let sx: f64 = pts.iter().map(|p| p.0).sum();
    let sy: f64 = pts.iter().map(|p| p.1).sum();
    let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
    (n * sxy - sx * sy) / (n * sxx - sx * sx)
}
