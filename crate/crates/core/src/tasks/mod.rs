//! Synthetic sequence tasks, the sequence-error metric, the trigonometric
//! basis and importance sorting used by the piecewise regression targets.

mod generators;
mod io;
mod metrics;
mod regression;
mod vocab;

pub use generators::{
    default_nonlinearity, gen_assoc_recall, gen_copy, gen_induction_head, gen_max_regression, gen_selective_copy,
    validate_grammar, Target, TaskKind, TaskSample,
};
pub use io::{read_jsonl, samples_to_jsonl, write_jsonl};
pub use metrics::{eval_err_v, wilson_interval, ErrEstimate};
pub use regression::{
    gen_piecewise_regression, importance_sort, psi_basis_eval, Importance, PiecewiseTarget, RegressionSample,
    SmoothTerm,
};
pub use vocab::{Specials, Vocab};
