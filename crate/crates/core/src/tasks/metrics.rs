use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::generators::TaskSample;
use crate::error::{Error, Result};
use crate::numerics::RngStream;

/// Monte-Carlo estimate of a failure probability with a 95% Wilson
/// interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrEstimate {
    pub errors: usize,
    pub trials: usize,
    pub estimate: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Wilson score interval for `k` successes out of `n` at normal quantile `z`.
pub fn wilson_interval(k: usize, n: usize, z: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let n_f = n as f64;
    let p = k as f64 / n_f;
    let z2 = z * z;
    let denom = 1.0 + z2 / n_f;
    let centre = (p + z2 / (2.0 * n_f)) / denom;
    let half = z * (p * (1.0 - p) / n_f + z2 / (4.0 * n_f * n_f)).sqrt() / denom;
    ((centre - half).max(0.0), (centre + half).min(1.0))
}

/// Fraction of samples whose prediction differs from the target sequence.
/// Trial `i` draws its sample from `rng.child(i)`, so the estimate does not
/// depend on how trials are scheduled.
pub fn eval_err_v<G, P>(n_trials: usize, rng: &RngStream, generate: G, predict: P) -> Result<ErrEstimate>
where
    G: Fn(&mut RngStream) -> Result<TaskSample> + Sync,
    P: Fn(&TaskSample) -> Vec<usize> + Sync,
{
    if n_trials == 0 {
        return Err(Error::InvalidArgument("need at least one trial".into()));
    }
    let outcomes: Result<Vec<bool>> = (0..n_trials)
        .into_par_iter()
        .map(|i| {
            let mut r = rng.child(i as u64);
            let s = generate(&mut r)?;
            Ok(predict(&s) != s.target_ids())
        })
        .collect();
    let errors = outcomes?.into_iter().filter(|&e| e).count();
    let (lower, upper) = wilson_interval(errors, n_trials, 1.96);
    Ok(ErrEstimate { errors, trials: n_trials, estimate: errors as f64 / n_trials as f64, lower, upper })
}
