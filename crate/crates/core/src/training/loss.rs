use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Mse,
    CrossEntropy,
}

/// What one supervised position is compared against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum LossTarget {
    Real(Vec<f64>),
    Class(usize),
}

/// Number of terms a target contributes to the batch mean: one per output
/// coordinate for squared error, one per position for cross-entropy.
pub(crate) fn target_weight(kind: LossKind, target: &LossTarget) -> usize {
    match (kind, target) {
        (LossKind::Mse, LossTarget::Real(y)) => y.len(),
        _ => 1,
    }
}

/// Unnormalized loss of one position and its gradient with respect to the
/// prediction.
pub(crate) fn position_loss(kind: LossKind, pred: &[f64], target: &LossTarget) -> Result<(f64, Vec<f64>)> {
    match (kind, target) {
        (LossKind::Mse, LossTarget::Real(y)) => {
            if y.len() != pred.len() {
                return shape_err(format!("prediction has {} entries, target {}", pred.len(), y.len()));
            }
            let mut loss = 0.0;
            let grad = pred
                .iter()
                .zip(y)
                .map(|(p, t)| {
                    loss += (p - t) * (p - t);
                    2.0 * (p - t)
                })
                .collect();
            Ok((loss, grad))
        }
        (LossKind::CrossEntropy, LossTarget::Class(c)) => {
            if *c >= pred.len() {
                return shape_err(format!("class {c} out of range for {} logits", pred.len()));
            }
            let max = pred.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = pred.iter().map(|v| (v - max).exp()).sum();
            let lse = max + sum.ln();
            let grad = pred
                .iter()
                .enumerate()
                .map(|(i, v)| (v - lse).exp() - if i == *c { 1.0 } else { 0.0 })
                .collect();
            Ok((lse - pred[*c], grad))
        }
        (kind, _) => Err(Error::InvalidArgument(format!("target type does not match {kind:?} loss"))),
    }
}

/// Batch loss: mean squared error over every predicted coordinate, or mean
/// cross-entropy of log-softmax logits over positions.
pub fn loss_value(kind: LossKind, predictions: &[Vec<f64>], targets: &[LossTarget]) -> Result<f64> {
    if predictions.len() != targets.len() {
        return shape_err(format!("{} predictions for {} targets", predictions.len(), targets.len()));
    }
    let mut total = 0.0;
    let mut count = 0;
    for (p, t) in predictions.iter().zip(targets) {
        total += position_loss(kind, p, t)?.0;
        count += target_weight(kind, t);
    }
    Ok(if count == 0 { 0.0 } else { total / count as f64 })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mse_of_exact_prediction_is_zero() {
        let p = vec![vec![0.3, -1.0]];
        assert_eq!(loss_value(LossKind::Mse, &p, &[LossTarget::Real(p[0].clone())]).unwrap(), 0.0);
    }

    #[test]
    fn cross_entropy_of_flat_logits() {
        let l = loss_value(LossKind::CrossEntropy, &[vec![0.0, 0.0]], &[LossTarget::Class(0)]).unwrap();
        assert!((l - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn batch_mse_by_hand() {
        let p = vec![vec![1.0], vec![2.0], vec![4.0]];
        let t: Vec<LossTarget> = [0.0, 2.0, 1.0].iter().map(|v| LossTarget::Real(vec![*v])).collect();
        // (1 + 0 + 9) / 3
        assert!((loss_value(LossKind::Mse, &p, &t).unwrap() - 10.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn cross_entropy_gradient_sums_to_zero() {
        let (_, g) = position_loss(LossKind::CrossEntropy, &[0.5, -1.0, 2.0], &LossTarget::Class(1)).unwrap();
        assert!(g.iter().sum::<f64>().abs() < 1e-15);
        assert!(g[1] < 0.0);
    }

    #[test]
    fn mismatched_kinds_are_rejected() {
        assert!(loss_value(LossKind::Mse, &[vec![0.0]], &[LossTarget::Class(0)]).is_err());
        assert!(loss_value(LossKind::Mse, &[vec![0.0]], &[]).is_err());
    }
}
