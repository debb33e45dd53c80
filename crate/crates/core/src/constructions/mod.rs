//! Constructive machinery for dynamic token selection: surrogate scores and
//! certified kernel selection, low-rank positional filters, random
//! projections, assembled task solvers and the exclusion selector.

mod exclusion;
mod jl;
mod lowrank;
mod readout;
mod report;
mod selection;
mod solvers;

pub use exclusion::{exclusion_select, exclusion_temperature, ExclusionResult, ExclusionSelector};
pub use jl::{jl_build, jl_distortion, JlProjection};
pub use lowrank::{
    gaussian_lowrank_build, positional_delta_filter, realize_as_conv_channels, taylor_table, term_count_for, DeltaChannels,
    FrequencyTerm, GaussianLowRank, PositionalDelta, TaylorTerm,
};
pub use readout::{LagBank, SelectionReadout};
pub use report::CertificationReport;
pub use selection::{
    dynamic_token_select, kernel_select, softmax_hardmax_gap, surrogate_scores, weighted_softmax_gap,
    GapReport, KernelSelector,
};
pub use solvers::{
    build_selective_copy_solver, build_task_solver, collision_bound, copy_ngram_length, pad_run_length,
    poisson_tail, selective_copy_plan, solver_jl_dim, vocab_threshold, SelectiveCopyPlan, SolverKind,
    TaskSolver, NETWORK_CHANNEL_CAP, SELECTIVE_COPY_C1,
};
