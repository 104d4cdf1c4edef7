//! Stage-1 objectives: caption cross-entropy, hand-object box loss and
//! their weighted sum.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::giou::giou_with_grad;
use crate::types::BBox;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LossError {
    #[error("{logits} logit rows for {targets} targets")]
    LengthMismatch { logits: usize, targets: usize },
    #[error("target id {id} outside vocabulary of {vocab}")]
    OutOfVocab { id: u32, vocab: usize },
    #[error("empty target sequence")]
    EmptyTarget,
    #[error("lambda_1 must be ≥ 0 (got {0})")]
    NegativeLambda(f64),
    #[error("assignment is not an injective map into {0} predictions")]
    InvalidAssignment(usize),
}

/// A predicted box with its objectness score in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxPrediction {
    pub bbox: BBox,
    pub score: f64,
}

/// Gradient of the box loss for one prediction: `(cx, cy, w, h)` then score.
pub type BoxGrad = [f64; 5];

/// Matched pairs contribute `(1 − GIoU) + ‖b − b̂‖₁`; every unmatched
/// prediction contributes `−ln(1 − score)` (cross-entropy against "no
/// object").
pub fn loss_ho(pred: &[BoxPrediction], gt: &[BBox], sigma: &[usize]) -> Result<f64, LossError> {
    Ok(loss_ho_with_grad(pred, gt, sigma)?.0)
}

pub(crate) fn loss_ho_with_grad(
    pred: &[BoxPrediction],
    gt: &[BBox],
    sigma: &[usize],
) -> Result<(f64, Vec<BoxGrad>), LossError> {
    let mut matched = vec![false; pred.len()];
    if sigma.len() != gt.len() {
        return Err(LossError::InvalidAssignment(pred.len()));
    }
    for &j in sigma {
        if j >= pred.len() || std::mem::replace(&mut matched[j], true) {
            return Err(LossError::InvalidAssignment(pred.len()));
        }
    }

    let mut total = 0.0;
    let mut grads = vec![[0.0; 5]; pred.len()];
    for (target, &j) in gt.iter().zip(sigma) {
        let p = &pred[j].bbox;
        let (g, dg) = giou_with_grad(target, p);
        total += 1.0 - g + target.l1(p);
        let (pa, ta) = (p.as_array(), target.as_array());
        for k in 0..4 {
            let sign = if pa[k] > ta[k] {
                1.0
            } else if pa[k] < ta[k] {
                -1.0
            } else {
                0.0
            };
            grads[j][k] = -dg[k] + sign;
        }
    }
    for (j, p) in pred.iter().enumerate() {
        if !matched[j] {
            total -= (1.0 - p.score).ln();
            grads[j][4] = 1.0 / (1.0 - p.score);
        }
    }
    Ok((total, grads))
}

fn log_softmax_row(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    logits.iter().map(|l| l - lse).collect()
}

/// Mean negative log-likelihood of the targets.
pub fn loss_lm(logits: &[Vec<f64>], targets: &[u32]) -> Result<f64, LossError> {
    Ok(loss_lm_with_grad(logits, targets)?.0)
}

pub(crate) fn loss_lm_with_grad(
    logits: &[Vec<f64>],
    targets: &[u32],
) -> Result<(f64, Vec<Vec<f64>>), LossError> {
    if targets.is_empty() {
        return Err(LossError::EmptyTarget);
    }
    if logits.len() != targets.len() {
        return Err(LossError::LengthMismatch {
            logits: logits.len(),
            targets: targets.len(),
        });
    }
    let n = targets.len() as f64;
    let mut total = 0.0;
    let mut grads = Vec::with_capacity(logits.len());
    for (row, &t) in logits.iter().zip(targets) {
        if t as usize >= row.len() {
            return Err(LossError::OutOfVocab { id: t, vocab: row.len() });
        }
        let logp = log_softmax_row(row);
        total -= logp[t as usize];
        let mut g: Vec<f64> = logp.iter().map(|lp| lp.exp() / n).collect();
        g[t as usize] -= 1.0 / n;
        grads.push(g);
    }
    Ok((total / n, grads))
}

/// `lm + λ₁ · ho`.
pub fn loss_total(lm: f64, ho: f64, lambda_1: f64) -> Result<f64, LossError> {
    if !(lambda_1 >= 0.0) {
        return Err(LossError::NegativeLambda(lambda_1));
    }
    Ok(lm + lambda_1 * ho)
}
