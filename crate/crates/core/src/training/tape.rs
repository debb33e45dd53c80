use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::loss::{position_loss, target_weight, LossKind, LossTarget};
use crate::error::{shape_err, Error, Result};
use crate::numerics::{Matrix, SequenceTensor};

/// One training sequence: raw input columns and the supervised positions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub input: SequenceTensor,
    pub targets: Vec<(usize, LossTarget)>,
}

/// Gradient buffers, one per named parameter group, in the order the model
/// lists its groups.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientTape {
    pub groups: Vec<(String, Vec<f64>)>,
}

impl GradientTape {
    pub fn zeros_like<M: Trainable + ?Sized>(model: &M) -> Self {
        Self { groups: model.param_groups().into_iter().map(|(n, p)| (n, vec![0.0; p.len()])).collect() }
    }

    pub fn get(&self, name: &str) -> Option<&[f64]> {
        self.groups.iter().find(|(n, _)| n == name).map(|(_, g)| g.as_slice())
    }

    pub fn zero(&mut self) {
        self.groups.iter_mut().for_each(|(_, g)| g.iter_mut().for_each(|v| *v = 0.0));
    }

    pub fn len(&self) -> usize {
        self.groups.iter().map(|(_, g)| g.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn add_assign(&mut self, other: &GradientTape) {
        for ((_, a), (_, b)) in self.groups.iter_mut().zip(&other.groups) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.groups.iter_mut().for_each(|(_, g)| g.iter_mut().for_each(|v| *v *= s));
    }

    /// Errors name the first group holding a non-finite entry.
    pub fn check_finite(&self) -> Result<()> {
        match self.groups.iter().find(|(_, g)| g.iter().any(|v| !v.is_finite())) {
            Some((name, _)) => Err(Error::NonFiniteGradient(name.clone())),
            None => Ok(()),
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.groups.iter().flat_map(|(_, g)| g.iter().copied()).collect()
    }
}

/// Models the training loop can differentiate.
pub trait Trainable: Sync {
    /// Named parameter groups in a fixed order.
    fn param_groups(&self) -> Vec<(String, &[f64])>;

    fn param_groups_mut(&mut self) -> Vec<(String, &mut [f64])>;

    /// Prediction at every position (decode logits if the model has a
    /// head), one column per position.
    fn outputs(&self, input: &SequenceTensor) -> Result<Matrix>;

    /// Runs the forward pass, calls `output_grad` with the outputs, and
    /// accumulates into `tape` the gradient of the scalar whose gradient
    /// with respect to the outputs it returns.
    fn backprop(
        &self,
        input: &SequenceTensor,
        output_grad: &mut dyn FnMut(&Matrix) -> Result<Matrix>,
        tape: &mut GradientTape,
    ) -> Result<()>;

    /// Which side of every ReLU hinge (and clip boundary) each
    /// pre-activation sits on.
    fn activation_pattern(&self, input: &SequenceTensor) -> Result<Vec<bool>>;

    fn n_params(&self) -> usize {
        self.param_groups().iter().map(|(_, p)| p.len()).sum()
    }

    fn flat_params(&self) -> Vec<f64> {
        self.param_groups().into_iter().flat_map(|(_, p)| p.iter().copied()).collect()
    }

    /// Overwrites parameter number `i` of the flattened view.
    fn set_flat_param(&mut self, mut i: usize, value: f64) {
        for (_, p) in self.param_groups_mut() {
            if i < p.len() {
                p[i] = value;
                return;
            }
            i -= p.len();
        }
        panic!("parameter index out of range");
    }
}

fn total_weight(batch: &[Example], kind: LossKind) -> usize {
    batch.iter().flat_map(|e| &e.targets).map(|(_, t)| target_weight(kind, t)).sum()
}

fn example_loss_grad<M: Trainable + ?Sized>(
    model: &M,
    ex: &Example,
    kind: LossKind,
    norm: f64,
    tape: &mut GradientTape,
) -> Result<f64> {
    let mut loss = 0.0;
    let mut seed = |out: &Matrix| -> Result<Matrix> {
        let mut g = Matrix::zeros(out.rows(), out.cols());
        for (t, target) in &ex.targets {
            if *t >= out.cols() {
                return shape_err(format!("target position {t} beyond sequence length {}", out.cols()));
            }
            let (l, d) = position_loss(kind, &out.column(*t), target)?;
            loss += l / norm;
            for (i, v) in d.into_iter().enumerate() {
                g[(i, *t)] += v / norm;
            }
        }
        Ok(g)
    };
    model.backprop(&ex.input, &mut seed, tape)?;
    Ok(loss)
}

/// Batch loss and its exact gradient. Examples are differentiated in
/// parallel and their tapes summed in batch order.
pub fn backward<M: Trainable + ?Sized>(model: &M, batch: &[Example], kind: LossKind) -> Result<(f64, GradientTape)> {
    let norm = total_weight(batch, kind).max(1) as f64;
    let parts: Vec<Result<(f64, GradientTape)>> = batch
        .par_iter()
        .map(|ex| {
            let mut tape = GradientTape::zeros_like(model);
            let l = example_loss_grad(model, ex, kind, norm, &mut tape)?;
            Ok((l, tape))
        })
        .collect();
    let mut tape = GradientTape::zeros_like(model);
    let mut loss = 0.0;
    for part in parts {
        let (l, t) = part?;
        loss += l;
        tape.add_assign(&t);
    }
    tape.check_finite()?;
    Ok((loss, tape))
}

/// Batch loss without gradients.
pub fn batch_loss<M: Trainable + ?Sized>(model: &M, batch: &[Example], kind: LossKind) -> Result<f64> {
    let norm = total_weight(batch, kind).max(1) as f64;
    let parts: Vec<Result<f64>> = batch
        .par_iter()
        .map(|ex| {
            let out = model.outputs(&ex.input)?;
            let mut l = 0.0;
            for (t, target) in &ex.targets {
                if *t >= out.cols() {
                    return shape_err(format!("target position {t} beyond sequence length {}", out.cols()));
                }
                l += position_loss(kind, &out.column(*t), target)?.0;
            }
            Ok(l / norm)
        })
        .collect();
    parts.into_iter().sum()
}
