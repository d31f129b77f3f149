//! Central finite-difference oracle for analytic gradients.

use crate::error::{Error, Result};

use super::{Real, Tensor};

/// `(f(x + h·e_i) − f(x − h·e_i)) / 2h` for every coordinate `i`.
pub fn central_differences<F>(point: &[Real], step: Real, mut f: F) -> Vec<Real>
where
    F: FnMut(&[Real]) -> Real,
{
    let mut x = point.to_vec();
    (0..point.len())
        .map(|i| {
            x[i] = point[i] + step;
            let plus = f(&x);
            x[i] = point[i] - step;
            let minus = f(&x);
            x[i] = point[i];
            (plus - minus) / (2.0 * step)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// Max relative error over all elements of all parameters.
    pub max_relative_error: Real,
    /// Max relative error for each parameter, in input order.
    pub per_parameter: Vec<Real>,
    /// `(parameter index, element index)` of the worst element.
    pub worst: (usize, usize),
}

/// Compare `analytic[p]` against central differences of `loss` taken over
/// each element of `params[p]`.
///
/// The relative error of one element is
/// `|a − n| / max(|a|, |n|, 1e-8)`.
pub fn finite_diff_check<F>(
    params: &[Tensor],
    analytic: &[Vec<Real>],
    step: Real,
    mut loss: F,
) -> Result<GradCheckReport>
where
    F: FnMut(&[Tensor]) -> Result<Real>,
{
    if step.is_nan() || step <= 0.0 {
        return Err(Error::domain("finite_diff_check", format!("step must be positive, got {step}")));
    }
    if params.len() != analytic.len() {
        return Err(Error::dim("finite_diff_check", &[params.len()], &[analytic.len()]));
    }
    let mut work = params.to_vec();
    let mut eval = |work: &[Tensor]| -> Result<Real> {
        let v = loss(work)?;
        if !v.is_finite() {
            return Err(Error::Numeric(format!("loss evaluated to {v}")));
        }
        Ok(v)
    };
    eval(&work)?;

    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        per_parameter: vec![0.0; params.len()],
        worst: (0, 0),
    };
    for p in 0..params.len() {
        if analytic[p].len() != params[p].len() {
            return Err(Error::dim("finite_diff_check", params[p].shape(), &[analytic[p].len()]));
        }
        for (i, &a) in analytic[p].iter().enumerate() {
            let orig = params[p].data()[i];
            work[p].data_mut()[i] = orig + step;
            let plus = eval(&work)?;
            work[p].data_mut()[i] = orig - step;
            let minus = eval(&work)?;
            work[p].data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * step);
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            if rel > report.per_parameter[p] {
                report.per_parameter[p] = rel;
            }
            if rel > report.max_relative_error {
                report.max_relative_error = rel;
                report.worst = (p, i);
            }
        }
    }
    Ok(report)
}
