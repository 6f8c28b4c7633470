//! CSV serialization of solver and estimator outputs.
//!
//! Every table carries a header row; floats are written with 17 significant
//! digits so a round trip through text is lossless and runs with the same
//! seed produce byte-identical bodies.

use std::io::{self, Write};

use crate::poisson::SolveReport;
use crate::regen::{Centering, LilReport, RatioEstimate};

/// A float with 17 significant digits; round-trips exactly.
pub fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        return "nan".to_string();
    }
    format!("{v:.16e}")
}

impl SolveReport {
    /// `state,g,residual` rows over the final window.
    pub fn write_csv(&self, w: &mut impl Write) -> io::Result<()> {
        writeln!(w, "state,g,residual")?;
        for (x, (g, r)) in self
            .values()
            .iter()
            .zip(&self.per_state_residual)
            .enumerate()
        {
            writeln!(w, "{x},{},{}", fmt_f64(*g), fmt_f64(*r))?;
        }
        Ok(())
    }

    /// One-line summary: method, reference state, residual, window sizes.
    pub fn summary_line(&self) -> String {
        let sizes: Vec<String> =
            self.refinement_trace.iter().map(|t| t.size.to_string()).collect();
        format!(
            "method={} z={} residual={} windows={}",
            self.method.name(),
            self.z.map(|z| z.to_string()).unwrap_or_else(|| "-".into()),
            fmt_f64(self.residual),
            sizes.join("/"),
        )
    }
}

/// `quantity,point,ci_half_width,n_cycles,seed,centering` rows.
pub fn write_estimates_csv(
    w: &mut impl Write,
    seed: u64,
    rows: &[(&str, RatioEstimate)],
) -> io::Result<()> {
    writeln!(w, "quantity,point,ci_half_width,n_cycles,seed,centering")?;
    for (name, est) in rows {
        let centering = match est.centering {
            Centering::Exact(v) => format!("exact:{}", fmt_f64(v)),
            Centering::Pilot { value, cycles } => {
                format!("pilot({cycles}):{}", fmt_f64(value))
            }
        };
        writeln!(
            w,
            "{name},{},{},{},{seed},{centering}",
            fmt_f64(est.point),
            fmt_f64(est.ci_half_width),
            est.n_cycles,
        )?;
    }
    Ok(())
}

/// `rep,standardized` rows of a CLT experiment.
pub fn write_clt_csv(w: &mut impl Write, standardized: &[f64]) -> io::Result<()> {
    writeln!(w, "rep,standardized")?;
    for (i, v) in standardized.iter().enumerate() {
        writeln!(w, "{i},{}", fmt_f64(*v))?;
    }
    Ok(())
}

/// `n,lil_statistic,running_sup` trajectory rows.
pub fn write_lil_csv(w: &mut impl Write, report: &LilReport) -> io::Result<()> {
    writeln!(w, "n,lil_statistic,running_sup")?;
    for &(n, l, sup) in &report.points {
        writeln!(w, "{n},{},{}", fmt_f64(l), fmt_f64(sup))?;
    }
    Ok(())
}

/// Generic check table: `check,quantity,value,threshold,pass`.
pub struct CheckRow {
    pub check: String,
    pub quantity: String,
    pub value: f64,
    pub threshold: f64,
    pub pass: bool,
}

pub fn write_checks_csv(w: &mut impl Write, rows: &[CheckRow]) -> io::Result<()> {
    writeln!(w, "check,quantity,value,threshold,pass")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{}",
            r.check,
            r.quantity,
            fmt_f64(r.value),
            fmt_f64(r.threshold),
            r.pass
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::{build_truncation, RealFunction, TruncationOptions};
    use crate::gallery;
    use crate::poisson::solve_gz;

    #[test]
    fn float_formatting_round_trips() {
        for v in [0.5, 1.0 / 3.0, 2.612375348685488e-11, -1.75e300, 0.0] {
            let s = fmt_f64(v);
            let back: f64 = s.parse().unwrap();
            assert_eq!(back, v, "{s}");
        }
    }

    #[test]
    fn solve_report_csv_has_header_and_rows() {
        let chain = build_truncation(
            gallery::two_state(0.5, 0.5).unwrap().kernel,
            2,
            TruncationOptions::default(),
        )
        .unwrap();
        let fc = RealFunction::from_fn(|x| if x == 1 { 0.5 } else { -0.5 });
        let report = solve_gz(&chain, &fc, 0).unwrap();
        let mut buf = Vec::new();
        report.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("state,g,residual"));
        assert_eq!(lines.count(), 2);
        assert!(report.summary_line().contains("method=gz"));
    }
}
