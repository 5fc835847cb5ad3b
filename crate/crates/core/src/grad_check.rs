//! Central finite-difference checking of analytic gradients.

use crate::error::{Error, Result};
use crate::nn::ModelParams;

/// Relative error between an analytic and a numerical derivative:
/// `|a − n| / max(1e-8, |a| + |n|)`.
pub fn relative_error(analytic: f64, numerical: f64) -> f64 {
    (analytic - numerical).abs() / (analytic.abs() + numerical.abs()).max(1e-8)
}

/// Check an analytic gradient of `f` at `at` against central differences.
///
/// Returns the max relative error over every coordinate. `f` must be a
/// deterministic function of its argument (no dropout).
pub fn grad_check_flat<F>(mut f: F, analytic: &[f64], at: &[f64], fd_epsilon: f64) -> Result<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    if analytic.len() != at.len() {
        return Err(Error::Dim(format!(
            "gradient has {} coordinates, point has {}",
            analytic.len(),
            at.len()
        )));
    }
    let mut point = at.to_vec();
    let mut max_err: f64 = 0.0;
    for i in 0..point.len() {
        let orig = point[i];
        point[i] = orig + fd_epsilon;
        let plus = f(&point);
        point[i] = orig - fd_epsilon;
        let minus = f(&point);
        point[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::Validity(format!(
                "objective non-finite while perturbing coordinate {i}"
            )));
        }
        let numerical = (plus - minus) / (2.0 * fd_epsilon);
        max_err = max_err.max(relative_error(analytic[i], numerical));
    }
    Ok(max_err)
}

/// [`grad_check_flat`] over all encoder and classifier parameters.
///
/// `objective` is evaluated at perturbed copies of `params`; `analytic` is
/// the flattened gradient in [`ModelParams::flatten`] order.
pub fn grad_check_params<F>(
    objective: F,
    params: &ModelParams,
    analytic: &[f64],
    fd_epsilon: f64,
) -> Result<f64>
where
    F: FnMut(&ModelParams) -> f64,
{
    let at = params.flatten();
    let mut scratch = params.clone();
    let mut objective = objective;
    grad_check_flat(
        |flat| {
            scratch
                .unflatten(flat)
                .expect("flat vector length fixed by caller");
            objective(&scratch)
        },
        analytic,
        &at,
        fd_epsilon,
    )
}
