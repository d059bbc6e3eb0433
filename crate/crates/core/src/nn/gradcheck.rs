//! Central finite-difference checks for analytic gradients.

use crate::error::{Error, Result};

/// Denominator floor in [`relative_error`]: below it the comparison is
/// effectively absolute.
pub const RELATIVE_FLOOR: f64 = 1e-4;

/// `|a - b| / max(|a|, |b|, RELATIVE_FLOOR)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(RELATIVE_FLOOR)
}

/// `(f(p + h e_i) - f(p - h e_i)) / 2h`.
pub fn central_difference<F>(mut f: F, params: &[f64], coord: usize, h: f64) -> Result<f64>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if coord >= params.len() {
        return Err(Error::Shape(format!("coordinate {coord} out of {}", params.len())));
    }
    let mut p = params.to_vec();
    p[coord] = params[coord] + h;
    let plus = f(&p)?;
    p[coord] = params[coord] - h;
    let minus = f(&p)?;
    Ok((plus - minus) / (2.0 * h))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    pub worst_coord: usize,
}

/// Compares `analytic[i]` with a central difference of `f` for every `i` in
/// `coords`.
pub fn check_gradient<F>(mut f: F, params: &[f64], analytic: &[f64], coords: &[usize], h: f64) -> Result<GradCheckReport>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if analytic.len() != params.len() {
        return Err(Error::Shape("analytic gradient length differs from parameters".into()));
    }
    let mut report = GradCheckReport { checked: 0, max_rel_error: 0.0, worst_coord: 0 };
    for &i in coords {
        let numeric = central_difference(&mut f, params, i, h)?;
        let err = relative_error(analytic[i], numeric);
        if err > report.max_rel_error || report.checked == 0 {
            report.max_rel_error = err.max(report.max_rel_error);
            report.worst_coord = i;
        }
        report.checked += 1;
    }
    Ok(report)
}
