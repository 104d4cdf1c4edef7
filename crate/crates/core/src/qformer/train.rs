//! Stage-1 toy trainer: full-batch gradient descent on connector weights
//! while the decoder stays frozen.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::connector::{Connector, ConnectorError, LossParts};
use super::scene::Scene;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training needs at least one scene")]
    NoScenes,
    #[error("learning rate must be finite and ≥ 0 (got {0})")]
    BadLearningRate(f64),
    #[error("loss diverged at epoch {epoch}: lm={lm} ho={ho}")]
    Diverged { epoch: usize, lm: f64, ho: f64 },
    #[error(transparent)]
    Connector(#[from] ConnectorError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean losses over scenes, measured before each update.
    pub epochs: Vec<LossParts>,
}

impl TrainReport {
    pub fn totals(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.total).collect()
    }
}

fn mean_loss_and_grad(
    conn: &Connector,
    scenes: &[Scene],
    lambda_1: f64,
) -> Result<(LossParts, Vec<f64>), ConnectorError> {
    let n = scenes.len() as f64;
    let zero = || (LossParts::default(), vec![0.0; conn.params.len()]);
    let (mut parts, mut grad) = scenes
        .par_iter()
        .map(|s| conn.loss_and_grad(&conn.params, s, lambda_1))
        .try_fold(zero, |(acc, mut g), r| {
            let (p, gs) = r?;
            g.iter_mut().zip(&gs).for_each(|(a, b)| *a += b);
            Ok::<_, ConnectorError>((
                LossParts {
                    lm: acc.lm + p.lm,
                    ho: acc.ho + p.ho,
                    total: acc.total + p.total,
                },
                g,
            ))
        })
        .try_reduce(zero, |(a, mut ga), (b, gb)| {
            ga.iter_mut().zip(&gb).for_each(|(x, y)| *x += y);
            Ok((
                LossParts {
                    lm: a.lm + b.lm,
                    ho: a.ho + b.ho,
                    total: a.total + b.total,
                },
                ga,
            ))
        })?;
    parts.lm /= n;
    parts.ho /= n;
    parts.total /= n;
    grad.iter_mut().for_each(|g| *g /= n);
    Ok((parts, grad))
}

/// Runs `epochs` gradient steps and returns the loss recorded at each.
/// The step size decays linearly from `lr` towards zero, which damps the
/// oscillation that the piecewise-linear box loss causes at a fixed step.
pub fn train_toy(
    conn: &mut Connector,
    scenes: &[Scene],
    epochs: usize,
    lr: f64,
    lambda_1: f64,
) -> Result<TrainReport, TrainError> {
    if scenes.is_empty() {
        return Err(TrainError::NoScenes);
    }
    if !(lr >= 0.0 && lr.is_finite()) {
        return Err(TrainError::BadLearningRate(lr));
    }
    let mut history = Vec::with_capacity(epochs);
    for epoch in 0..epochs {
        let (parts, grad) = mean_loss_and_grad(conn, scenes, lambda_1)?;
        if !parts.total.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(TrainError::Diverged {
                epoch,
                lm: parts.lm,
                ho: parts.ho,
            });
        }
        history.push(parts);
        let step = lr * (1.0 - epoch as f64 / epochs as f64);
        for (p, g) in conn.params.iter_mut().zip(&grad) {
            *p -= step * g;
        }
    }
    Ok(TrainReport { epochs: history })
}
