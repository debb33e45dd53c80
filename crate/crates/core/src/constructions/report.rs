use serde::{Deserialize, Serialize};
use serde_json::Value;

/// One certification outcome. `measured` is compared against `bound`; for
/// checks of the form "at least", use [`CertificationReport::at_least`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificationReport {
    pub construct: String,
    pub params: Value,
    pub bound: f64,
    pub measured: f64,
    pub pass: bool,
    pub n_trials: usize,
    pub seed: u64,
}

impl CertificationReport {
    /// Passes when `measured ≤ bound`.
    pub fn at_most(construct: impl Into<String>, params: Value, bound: f64, measured: f64, n_trials: usize, seed: u64) -> Self {
        let pass = measured <= bound && measured.is_finite();
        Self { construct: construct.into(), params, bound, measured, pass, n_trials, seed }
    }

    /// Passes when `measured ≥ bound`.
    pub fn at_least(construct: impl Into<String>, params: Value, bound: f64, measured: f64, n_trials: usize, seed: u64) -> Self {
        let pass = measured >= bound && measured.is_finite();
        Self { construct: construct.into(), params, bound, measured, pass, n_trials, seed }
    }

    /// Boolean check reported as 1 (holds) against a bound of 1.
    pub fn holds(construct: impl Into<String>, params: Value, ok: bool, n_trials: usize, seed: u64) -> Self {
        Self::at_least(construct, params, 1.0, if ok { 1.0 } else { 0.0 }, n_trials, seed)
    }
}
