//! State space models built from long causal convolutions, together with
//! the constructive machinery that lets them select tokens dynamically:
//! certified kernel selection, low-rank positional filters, random
//! projections, task solvers and a small training harness.

pub mod certify;
pub mod constructions;
pub mod error;
pub mod model;
pub mod numerics;
pub mod ssm;
pub mod tasks;
pub mod training;

pub use error::{Error, Result};
pub use model::{
    ClassBudget, ConvLayer, EmbeddingLayer, FnnStack, SsmNetwork, TokenMap,
};
pub use numerics::{FilterBank, Matrix, RngStream, SequenceTensor};
