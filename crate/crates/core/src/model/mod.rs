//! Layer classes and their composition into the network class: embedding,
//! trigonometric convolution filters, token-wise ReLU networks, clipping and
//! decoding, plus class-budget validation and JSON serialization.

mod budget;
mod layers;
mod network;
mod serial;

pub use budget::{validate_class_membership, ClassBudget, ConstraintCheck, MembershipReport};
pub use layers::{
    build_clip_fnn, conv_layer_apply, embed_sequence, fnn_apply, materialize_filter, Affine,
    ConvLayer, EmbeddingLayer, FnnStack,
};
pub use network::{decode_next_token, generate_autoregressive, Block, SsmNetwork, TokenMap};
pub use serial::NETWORK_FORMAT_VERSION;
