use ndarray::Array2;
use serde::Serialize;

use super::{Tape, Tensor};
use crate::error::Result;

/// Magnitude below which gradient entries are compared absolutely.
const RELATIVE_FLOOR: f64 = 1e-6;

/// Outcome of comparing reverse-mode gradients with central differences.
#[derive(Debug, Clone, Serialize)]
pub struct GradcheckReport {
    pub max_relative_error: f64,
    /// `(parameter index, row, col)` of the worst coordinate.
    pub worst: Option<(usize, usize, usize)>,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
    pub coordinates: usize,
    pub step: f64,
    pub tolerance: f64,
    pub passed: bool,
}

/// Checks `f`'s gradient with respect to every entry of `params`.
///
/// `f` is re-run on a fresh tape for each perturbation and must be
/// deterministic. The error of one coordinate is
/// `|analytic - numeric| / max(|analytic|, |numeric|, 1e-6)`.
pub fn gradcheck<F>(f: F, params: &[Array2<f64>], step: f64, tolerance: f64) -> Result<GradcheckReport>
where
    F: Fn(&Tape, &[Tensor]) -> Result<Tensor>,
{
    let eval = |values: &[Array2<f64>]| -> Result<f64> {
        let tape = Tape::new();
        let leaves: Vec<Tensor> = values.iter().map(|v| tape.leaf(v.clone())).collect();
        let out = f(&tape, &leaves)?;
        Ok(tape.scalar(out))
    };

    let tape = Tape::new();
    let leaves: Vec<Tensor> = params.iter().map(|v| tape.leaf(v.clone())).collect();
    let out = f(&tape, &leaves)?;
    let grads = tape.backward(out)?;
    let analytic: Vec<Array2<f64>> = leaves.iter().map(|&l| grads.wrt(l).clone()).collect();
    drop(grads);

    let mut report = GradcheckReport {
        max_relative_error: 0.0,
        worst: None,
        worst_analytic: 0.0,
        worst_numeric: 0.0,
        coordinates: 0,
        step,
        tolerance,
        passed: true,
    };
    let mut work: Vec<Array2<f64>> = params.to_vec();
    for p in 0..params.len() {
        let (rows, cols) = params[p].dim();
        for r in 0..rows {
            for c in 0..cols {
                let original = params[p][[r, c]];
                work[p][[r, c]] = original + step;
                let plus = eval(&work)?;
                work[p][[r, c]] = original - step;
                let minus = eval(&work)?;
                work[p][[r, c]] = original;

                let numeric = (plus - minus) / (2.0 * step);
                let a = analytic[p][[r, c]];
                let denom = a.abs().max(numeric.abs()).max(RELATIVE_FLOOR);
                let err = (a - numeric).abs() / denom;
                report.coordinates += 1;
                if err > report.max_relative_error || report.worst.is_none() {
                    report.max_relative_error = err;
                    report.worst = Some((p, r, c));
                    report.worst_analytic = a;
                    report.worst_numeric = numeric;
                }
            }
        }
    }
    report.passed = report.max_relative_error < tolerance;
    Ok(report)
}
