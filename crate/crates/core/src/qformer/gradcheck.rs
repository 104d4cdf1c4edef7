//! Central-difference gradient verification.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GradCheckError {
    #[error("step size must be positive and finite (got {0})")]
    BadEpsilon(f64),
    #[error("{params} parameters but {grads} gradient entries")]
    LengthMismatch { params: usize, grads: usize },
    #[error("coordinate {0} out of range")]
    BadCoordinate(usize),
    #[error("loss is not finite at coordinate {0}")]
    NonFiniteLoss(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_coord: Option<usize>,
    pub checked: usize,
}

/// Relative error uses `max(|g|, 1e-8)` as denominator, `g` the analytic
/// value.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(1e-8)
}

/// Compares `analytic` to central differences of `loss_fn` at `coords`.
pub fn grad_check<F>(
    params: &[f64],
    analytic: &[f64],
    loss_fn: F,
    eps: f64,
    coords: &[usize],
) -> Result<GradCheckReport, GradCheckError>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(GradCheckError::BadEpsilon(eps));
    }
    if params.len() != analytic.len() {
        return Err(GradCheckError::LengthMismatch {
            params: params.len(),
            grads: analytic.len(),
        });
    }
    if let Some(&c) = coords.iter().find(|&&c| c >= params.len()) {
        return Err(GradCheckError::BadCoordinate(c));
    }
    let errors: Result<Vec<(usize, f64)>, GradCheckError> = coords
        .par_iter()
        .map(|&i| {
            let mut p = params.to_vec();
            p[i] = params[i] + eps;
            let up = loss_fn(&p);
            p[i] = params[i] - eps;
            let down = loss_fn(&p);
            if !(up.is_finite() && down.is_finite()) {
                return Err(GradCheckError::NonFiniteLoss(i));
            }
            Ok((i, relative_error(analytic[i], (up - down) / (2.0 * eps))))
        })
        .collect();
    let worst = errors?
        .into_iter()
        .fold(None, |best: Option<(usize, f64)>, (i, e)| match best {
            Some((_, b)) if b >= e => best,
            _ => Some((i, e)),
        });
    Ok(GradCheckReport {
        max_rel_error: worst.map_or(0.0, |w| w.1),
        worst_coord: worst.map(|w| w.0),
        checked: coords.len(),
    })
}
