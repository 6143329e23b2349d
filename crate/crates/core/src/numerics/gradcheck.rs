//! Central-difference verification of analytic gradients (64-bit only).

use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// One probed parameter entry.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientReport {
    /// `tensor[index]`, e.g. `layers.0.attn.wq[17]`.
    pub parameter: String,
    pub analytic: f64,
    pub numeric: f64,
    pub relative_error: f64,
    pub passed: bool,
}

/// `|a − n| / max(1e−12, |a| + |n|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-12)
}

/// Which entries of each tensor to probe.
#[derive(Clone, Copy, Debug)]
pub enum Entries {
    All,
    /// At most this many evenly spaced entries per tensor (always including
    /// the first and the last).
    Spread(usize),
}

impl Entries {
    fn indices(self, len: usize) -> Vec<usize> {
        match self {
            Entries::Spread(k) if k < len => {
                if k <= 1 {
                    return vec![0];
                }
                let mut idx: Vec<usize> =
                    (0..k).map(|i| i * (len - 1) / (k - 1)).collect();
                idx.dedup();
                idx
            }
            _ => (0..len).collect(),
        }
    }
}

/// Compares `analytic[t]` against `(f(θ+ε) − f(θ−ε)) / 2ε` entrywise.
///
/// `params` is perturbed in place and restored bitwise before returning.
/// Reports come back sorted by relative error, largest first.
pub fn grad_check<F>(
    names: &[String],
    params: &mut [Matrix<f64>],
    analytic: &[Matrix<f64>],
    eps: f64,
    tol: f64,
    entries: Entries,
    mut f: F,
) -> Result<Vec<GradientReport>>
where
    F: FnMut(&[Matrix<f64>]) -> Result<f64>,
{
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(Error::invalid(format!("grad_check: step {eps} outside [1e-7, 1e-3]")));
    }
    if names.len() != params.len() || analytic.len() != params.len() {
        return Err(Error::shape("grad_check: names, parameters and gradients differ in count"));
    }
    let mut reports = Vec::new();
    for t in 0..params.len() {
        analytic[t].expect_shape(params[t].shape(), &names[t])?;
        for i in entries.indices(params[t].len()) {
            let original = params[t].data()[i];
            params[t].data_mut()[i] = original + eps;
            let plus = f(params);
            params[t].data_mut()[i] = original - eps;
            let minus = f(params);
            params[t].data_mut()[i] = original;
            let (plus, minus) = (plus?, minus?);
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::NonFinite(format!(
                    "grad_check: objective not finite when probing {}[{i}]",
                    names[t]
                )));
            }
            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic[t].data()[i];
            let rel = relative_error(a, numeric);
            reports.push(GradientReport {
                parameter: format!("{}[{i}]", names[t]),
                analytic: a,
                numeric,
                relative_error: rel,
                passed: rel <= tol,
            });
        }
    }
    reports.sort_by(|a, b| b.relative_error.total_cmp(&a.relative_error));
    Ok(reports)
}
