use serde::{Deserialize, Serialize};

use super::layers::{conv_layer_apply, embed_sequence, fnn_apply, ConvLayer, EmbeddingLayer, FnnStack};
use crate::constructions::SelectionReadout;
use crate::error::{shape_err, Error, Result};
use crate::numerics::{Matrix, SequenceTensor};

/// The token-wise map following a convolution. `Readout` evaluates the
/// selection step (surrogate scores and kernel averaging) with exact scalar
/// arithmetic instead of a ReLU realization, and is reported separately by
/// the class-membership check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TokenMap {
    Fnn(FnnStack),
    Readout(Box<SelectionReadout>),
}

impl TokenMap {
    pub fn d_in(&self) -> usize {
        match self {
            TokenMap::Fnn(f) => f.d_in(),
            TokenMap::Readout(r) => r.d_in(),
        }
    }

    pub fn d_out(&self) -> usize {
        match self {
            TokenMap::Fnn(f) => f.d_out(),
            TokenMap::Readout(r) => r.d_out(),
        }
    }

    pub fn apply_column(&self, x: &[f64]) -> Vec<f64> {
        match self {
            TokenMap::Fnn(f) => f.apply_token(x),
            TokenMap::Readout(r) => r.apply_token(x),
        }
    }

    pub fn apply(&self, x: &SequenceTensor) -> Result<SequenceTensor> {
        match self {
            TokenMap::Fnn(f) => fnn_apply(f, x),
            TokenMap::Readout(r) => r.apply(x),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub conv: ConvLayer,
    pub map: TokenMap,
}

/// `f_M ∘ g_M ∘ ⋯ ∘ f_1 ∘ g_1 ∘ emb`, optionally followed by a clamp to
/// `[-R, R]` and a linear decode head.
#[derive(Debug, Clone, PartialEq)]
pub struct SsmNetwork {
    pub emb: EmbeddingLayer,
    pub blocks: Vec<Block>,
    pub clip_bound: Option<f64>,
    /// `W_dec`, D×|W|; logits are `W_decᵀ y` at the last position.
    pub decode: Option<Matrix>,
}

impl SsmNetwork {
    pub fn new(
        emb: EmbeddingLayer,
        blocks: Vec<Block>,
        clip_bound: Option<f64>,
        decode: Option<Matrix>,
    ) -> Result<Self> {
        if blocks.is_empty() {
            return Err(Error::InvalidArgument("network needs at least one block".into()));
        }
        let mut d = emb.d_out();
        for (i, b) in blocks.iter().enumerate() {
            if b.conv.d() != d {
                return shape_err(format!("block {} convolution expects {} channels, receives {d}", i + 1, b.conv.d()));
            }
            if b.map.d_in() != d {
                return shape_err(format!("block {} token map expects {} channels, receives {d}", i + 1, b.map.d_in()));
            }
            d = b.map.d_out();
        }
        if let Some(w) = &decode {
            if w.rows() != d {
                return shape_err(format!("decode head expects {} channels, network outputs {d}", w.rows()));
            }
        }
        if let Some(r) = clip_bound {
            if !(r > 0.0) {
                return Err(Error::InvalidArgument(format!("clip bound must be positive, got {r}")));
            }
        }
        Ok(Self { emb, blocks, clip_bound, decode })
    }

    pub fn m(&self) -> usize {
        self.blocks.len()
    }

    pub fn d_out(&self) -> usize {
        self.blocks.last().map_or(self.emb.d_out(), |b| b.map.d_out())
    }

    pub fn vocab_size(&self) -> Option<usize> {
        self.decode.as_ref().map(Matrix::cols)
    }

    /// Full composition over every position. Errors name the block (1-based;
    /// 0 is the embedding) where a non-finite value first appears.
    pub fn forward(&self, x_raw: &SequenceTensor) -> Result<SequenceTensor> {
        self.forward_impl(x_raw, false)
    }

    /// Output column at the last position only. The final token map is
    /// applied to that single column, which is all decoding needs.
    pub fn forward_last(&self, x_raw: &SequenceTensor) -> Result<Vec<f64>> {
        let y = self.forward_impl(x_raw, true)?;
        Ok(y.last_column())
    }

    fn forward_impl(&self, x_raw: &SequenceTensor, last_only: bool) -> Result<SequenceTensor> {
        let mut h = embed_sequence(&self.emb, x_raw)?;
        check_finite(&h, 0)?;
        let n = self.blocks.len();
        for (i, block) in self.blocks.iter().enumerate() {
            let g = conv_layer_apply(&block.conv, &h)?;
            h = if last_only && i + 1 == n {
                let col = block.map.apply_column(&g.last_column());
                SequenceTensor::from_matrix_unchecked(Matrix::from_vec(col.len(), 1, col)?)
            } else {
                block.map.apply(&g)?
            };
            check_finite(&h, i + 1)?;
        }
        if let Some(r) = self.clip_bound {
            h.matrix_mut().as_mut_slice().iter_mut().for_each(|v| *v = v.clamp(-r, r));
        }
        Ok(h)
    }

    /// Raw decode logits `W_decᵀ y_0` at the last position.
    pub fn logits(&self, x_raw: &SequenceTensor) -> Result<Vec<f64>> {
        let w = self
            .decode
            .as_ref()
            .ok_or_else(|| Error::Config("network has no decode head".into()))?;
        w.matvec_t(&self.forward_last(x_raw)?)
    }

    pub fn logits_for_ids(&self, ids: &[usize]) -> Result<Vec<f64>> {
        let n = self.emb.d_in();
        self.logits(&SequenceTensor::one_hot(ids, n)?)
    }
}

fn check_finite(h: &SequenceTensor, block: usize) -> Result<()> {
    if h.matrix().all_finite() {
        Ok(())
    } else {
        Err(Error::NumericOverflow { block })
    }
}

/// Index of the largest logit, lowest index on ties.
pub fn decode_next_token(logits: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in logits.iter().enumerate() {
        if *v > logits[best] {
            best = i;
        }
    }
    best
}

/// Appends `steps` greedily decoded tokens to `prompt`; returns only the
/// generated ones.
pub fn generate_autoregressive(net: &SsmNetwork, prompt: &[usize], steps: usize) -> Result<Vec<usize>> {
    if net.decode.is_none() {
        return Err(Error::Config("generation requires a decode head".into()));
    }
    let mut seq = prompt.to_vec();
    let mut out = Vec::with_capacity(steps);
    for _ in 0..steps {
        let next = decode_next_token(&net.logits_for_ids(&seq)?);
        seq.push(next);
        out.push(next);
    }
    Ok(out)
}
