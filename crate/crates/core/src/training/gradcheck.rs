use serde::{Deserialize, Serialize};

use super::loss::LossKind;
use super::tape::{backward, batch_loss, Example, Trainable};
use crate::error::Result;
use crate::numerics::RngStream;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Coordinates compared.
    pub checked: usize,
    /// Sampled coordinates skipped because a ReLU or clip hinge lies within
    /// the difference step.
    pub excluded: usize,
    pub worst_param: Option<String>,
}

/// Central differences on `n_coords` random coordinates (all of them if the
/// model has fewer) against the tape. The relative error uses the
/// denominator `max(|analytic|, |numeric|, 1e−8)`. A coordinate is
/// excluded when nudging it by ±h changes which side of a hinge any
/// pre-activation is on.
pub fn grad_check<M: Trainable + Clone>(
    model: &M,
    batch: &[Example],
    loss: LossKind,
    h: f64,
    n_coords: usize,
    rng: &mut RngStream,
) -> Result<GradCheckReport> {
    let (_, tape) = backward(model, batch, loss)?;
    let analytic = tape.flatten();
    let names: Vec<(String, usize)> = model.param_groups().into_iter().map(|(n, p)| (n, p.len())).collect();
    let params = model.flat_params();
    let n = params.len();
    let coords = if n_coords >= n { (0..n).collect() } else { rng.sample_distinct(n, n_coords) };
    let pattern = |m: &M| -> Result<Vec<bool>> {
        let mut out = Vec::new();
        for ex in batch {
            out.extend(m.activation_pattern(&ex.input)?);
        }
        Ok(out)
    };
    let base = pattern(model)?;
    let mut report = GradCheckReport { max_rel_error: 0.0, checked: 0, excluded: 0, worst_param: None };
    let mut probe = model.clone();
    for i in coords {
        probe.set_flat_param(i, params[i] + h);
        let up_pattern = pattern(&probe)?;
        let up = batch_loss(&probe, batch, loss)?;
        probe.set_flat_param(i, params[i] - h);
        let down_pattern = pattern(&probe)?;
        let down = batch_loss(&probe, batch, loss)?;
        probe.set_flat_param(i, params[i]);
        if up_pattern != base || down_pattern != base {
            report.excluded += 1;
            continue;
        }
        let numeric = (up - down) / (2.0 * h);
        let a = analytic[i];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
        report.checked += 1;
        if rel > report.max_rel_error {
            report.max_rel_error = rel;
            report.worst_param = Some(group_of(&names, i));
        }
    }
    Ok(report)
}

fn group_of(names: &[(String, usize)], mut i: usize) -> String {
    for (n, len) in names {
        if i < *len {
            return format!("{n}[{i}]");
        }
        i -= len;
    }
    "?".into()
}
