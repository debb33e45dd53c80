//! Reverse mode through [`SsmNetwork`]: embedding, trigonometric filter
//! parameters, channel mixing, token-wise ReLU maps, clip and decode head.
//! The convolution adjoint is always the direct sum over taps.

use serde::{Deserialize, Serialize};

use super::dense::{add_mm_nt, add_row_sums, affine, mm_tn, relu, relu_mask};
use super::tape::{GradientTape, Trainable};
use crate::error::{shape_err, Error, Result};
use crate::model::{embed_sequence, materialize_filter, Affine, Block, ConvLayer, EmbeddingLayer, FnnStack, SsmNetwork, TokenMap};
use crate::numerics::{conv_causal, Matrix, RngStream, SequenceTensor};

struct BlockCache {
    h_in: Matrix,
    z: Matrix,
    taps: Matrix,
    /// Inputs to each affine map: the convolution output, then the ReLU
    /// outputs.
    inputs: Vec<Matrix>,
    /// Pre-activations of every affine map but the last.
    pre: Vec<Matrix>,
}

struct Cache {
    blocks: Vec<BlockCache>,
    /// Network output before the clip.
    y: Matrix,
}

fn fnn_of(block: &Block) -> Result<&FnnStack> {
    match &block.map {
        TokenMap::Fnn(f) => Ok(f),
        TokenMap::Readout(_) => Err(Error::InvalidArgument("selection readout blocks are not trainable".into())),
    }
}

fn forward_cached(net: &SsmNetwork, x: &SequenceTensor) -> Result<Cache> {
    let mut h = embed_sequence(&net.emb, x)?.into_matrix();
    let mut blocks = Vec::with_capacity(net.blocks.len());
    for block in &net.blocks {
        let f = fnn_of(block)?;
        let h_in = h;
        let z = block.conv.w_mix.matmul(&h_in)?;
        let bank = materialize_filter(&block.conv);
        let g = conv_causal(&bank, &SequenceTensor::from_matrix_unchecked(z.clone()))?.into_matrix();
        let mut inputs = vec![g];
        let mut pre = Vec::new();
        let n = f.layers.len();
        let mut out = None;
        for (l, layer) in f.layers.iter().enumerate() {
            let a = affine(&layer.a, &layer.b, inputs.last().expect("nonempty"));
            if l + 1 < n {
                inputs.push(relu(&a));
                pre.push(a);
            } else {
                out = Some(a);
            }
        }
        h = out.expect("at least one affine map");
        blocks.push(BlockCache { h_in, z, taps: bank.coefficients().clone(), inputs, pre });
    }
    Ok(Cache { blocks, y: h })
}

fn clip(net: &SsmNetwork, y: &Matrix) -> Matrix {
    let mut y = y.clone();
    if let Some(r) = net.clip_bound {
        y.as_mut_slice().iter_mut().for_each(|v| *v = v.clamp(-r, r));
    }
    y
}

fn decode_head(net: &SsmNetwork, clipped: Matrix) -> Matrix {
    match &net.decode {
        Some(w) => mm_tn(w, &clipped),
        None => clipped,
    }
}

/// `dz` and `dH` of `g[k,t] = Σ_j H[k,j] z[k,t−j]`.
fn conv_adjoint(taps: &Matrix, z: &Matrix, dg: &Matrix) -> (Matrix, Matrix) {
    let (d, t_len) = z.shape();
    let u = taps.cols() - 1;
    let mut dz = Matrix::zeros(d, t_len);
    let mut dh = Matrix::zeros(d, u + 1);
    for k in 0..d {
        let h = taps.row(k);
        let zr = z.row(k);
        let gr = dg.row(k);
        let mut dzr = vec![0.0; t_len];
        let dhr = dh.row_mut(k);
        for t in 0..t_len {
            let gt = gr[t];
            if gt == 0.0 {
                continue;
            }
            for j in 0..=u.min(t) {
                dzr[t - j] += h[j] * gt;
                dhr[j] += gt * zr[t - j];
            }
        }
        dz.row_mut(k).copy_from_slice(&dzr);
    }
    (dz, dh)
}

/// Offsets of every group in [`SsmNetwork`]'s parameter listing.
struct Layout {
    emb: usize,
    blocks: Vec<(usize, usize)>, // (conv group index, first fnn group index)
    decode: Option<usize>,
}

fn layout(net: &SsmNetwork) -> Layout {
    let mut i = 2;
    let mut blocks = Vec::new();
    for b in &net.blocks {
        let fnn_layers = match &b.map {
            TokenMap::Fnn(f) => f.layers.len(),
            TokenMap::Readout(_) => 0,
        };
        blocks.push((i, i + 5));
        i += 5 + 2 * fnn_layers;
    }
    Layout { emb: 0, blocks, decode: net.decode.as_ref().map(|_| i) }
}

impl Trainable for SsmNetwork {
    fn param_groups(&self) -> Vec<(String, &[f64])> {
        let mut out: Vec<(String, &[f64])> =
            vec![("emb.e1".into(), self.emb.e1.as_slice()), ("emb.e2".into(), &self.emb.e2)];
        for (i, b) in self.blocks.iter().enumerate() {
            let p = format!("block{}", i + 1);
            let c = &b.conv;
            out.push((format!("{p}.w_mix"), c.w_mix.as_slice()));
            out.push((format!("{p}.c1"), &c.c1));
            out.push((format!("{p}.c2"), &c.c2));
            out.push((format!("{p}.a1"), &c.a1));
            out.push((format!("{p}.a2"), &c.a2));
            if let TokenMap::Fnn(f) = &b.map {
                for (l, layer) in f.layers.iter().enumerate() {
                    out.push((format!("{p}.fnn{}.a", l + 1), layer.a.as_slice()));
                    out.push((format!("{p}.fnn{}.b", l + 1), &layer.b));
                }
            }
        }
        if let Some(w) = &self.decode {
            out.push(("decode".into(), w.as_slice()));
        }
        out
    }

    fn param_groups_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut out: Vec<(String, &mut [f64])> =
            vec![("emb.e1".into(), self.emb.e1.as_mut_slice()), ("emb.e2".into(), &mut self.emb.e2)];
        for (i, b) in self.blocks.iter_mut().enumerate() {
            let p = format!("block{}", i + 1);
            let c = &mut b.conv;
            out.push((format!("{p}.w_mix"), c.w_mix.as_mut_slice()));
            out.push((format!("{p}.c1"), &mut c.c1));
            out.push((format!("{p}.c2"), &mut c.c2));
            out.push((format!("{p}.a1"), &mut c.a1));
            out.push((format!("{p}.a2"), &mut c.a2));
            if let TokenMap::Fnn(f) = &mut b.map {
                for (l, layer) in f.layers.iter_mut().enumerate() {
                    out.push((format!("{p}.fnn{}.a", l + 1), layer.a.as_mut_slice()));
                    out.push((format!("{p}.fnn{}.b", l + 1), &mut layer.b));
                }
            }
        }
        if let Some(w) = &mut self.decode {
            out.push(("decode".into(), w.as_mut_slice()));
        }
        out
    }

    fn outputs(&self, input: &SequenceTensor) -> Result<Matrix> {
        Ok(decode_head(self, self.forward(input)?.into_matrix()))
    }

    fn backprop(
        &self,
        input: &SequenceTensor,
        output_grad: &mut dyn FnMut(&Matrix) -> Result<Matrix>,
        tape: &mut GradientTape,
    ) -> Result<()> {
        let cache = forward_cached(self, input)?;
        let clipped = clip(self, &cache.y);
        let out = decode_head(self, clipped.clone());
        let d_out = output_grad(&out)?;
        if d_out.shape() != out.shape() {
            return shape_err("output gradient shape differs from outputs");
        }
        let lay = layout(self);
        let mut dy = match &self.decode {
            Some(w) => {
                add_mm_nt(&mut tape.groups[lay.decode.expect("decode group")].1, &clipped, &d_out);
                w.matmul(&d_out)?
            }
            None => d_out,
        };
        if let Some(r) = self.clip_bound {
            // Unit slope on the closed interval, zero outside.
            dy.as_mut_slice().iter_mut().zip(cache.y.as_slice()).for_each(|(g, v)| {
                if v.abs() > r {
                    *g = 0.0;
                }
            });
        }
        for (bi, (block, bc)) in self.blocks.iter().zip(&cache.blocks).enumerate().rev() {
            let f = fnn_of(block)?;
            let (conv_g, fnn_g) = lay.blocks[bi];
            let mut delta = dy;
            for l in (0..f.layers.len()).rev() {
                let layer = &f.layers[l];
                add_mm_nt(&mut tape.groups[fnn_g + 2 * l].1, &delta, &bc.inputs[l]);
                add_row_sums(&mut tape.groups[fnn_g + 2 * l + 1].1, &delta);
                let mut back = mm_tn(&layer.a, &delta);
                if l > 0 {
                    relu_mask(&mut back, &bc.pre[l - 1]);
                }
                delta = back;
            }
            let (dz, dh) = conv_adjoint(&bc.taps, &bc.z, &delta);
            filter_param_grads(&block.conv, &dh, tape, conv_g);
            add_mm_nt(&mut tape.groups[conv_g].1, &dz, &bc.h_in);
            dy = mm_tn(&block.conv.w_mix, &dz);
        }
        add_mm_nt(&mut tape.groups[lay.emb].1, &dy, input.matrix());
        add_row_sums(&mut tape.groups[lay.emb + 1].1, &dy);
        Ok(())
    }

    fn activation_pattern(&self, input: &SequenceTensor) -> Result<Vec<bool>> {
        let cache = forward_cached(self, input)?;
        let mut out = Vec::new();
        for bc in &cache.blocks {
            for p in &bc.pre {
                out.extend(p.as_slice().iter().map(|v| *v > 0.0));
            }
        }
        if let Some(r) = self.clip_bound {
            out.extend(cache.y.as_slice().iter().map(|v| v.abs() <= r));
        }
        Ok(out)
    }
}

/// Chain rule through `H[k,j] = c1 cos(θ j a1) + c2 sin(θ j a2)`.
fn filter_param_grads(conv: &ConvLayer, dh: &Matrix, tape: &mut GradientTape, g0: usize) {
    let theta = conv.theta();
    for k in 0..conv.d() {
        let (mut dc1, mut dc2, mut da1, mut da2) = (0.0, 0.0, 0.0, 0.0);
        for (j, &gj) in dh.row(k).iter().enumerate() {
            if gj == 0.0 {
                continue;
            }
            let w = theta * j as f64;
            let (s1, c1) = (w * conv.a1[k]).sin_cos();
            let (s2, c2) = (w * conv.a2[k]).sin_cos();
            dc1 += gj * c1;
            dc2 += gj * s2;
            da1 -= gj * conv.c1[k] * s1 * w;
            da2 += gj * conv.c2[k] * c2 * w;
        }
        tape.groups[g0 + 1].1[k] += dc1;
        tape.groups[g0 + 2].1[k] += dc2;
        tape.groups[g0 + 3].1[k] += da1;
        tape.groups[g0 + 4].1[k] += da2;
    }
}

/// Shape of a freshly initialized trainable network.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SsmInit {
    /// Input channels (vocabulary size for one-hot tokens).
    pub n_in: usize,
    /// Channels carried between blocks.
    pub hidden: usize,
    pub blocks: usize,
    /// Width of the hidden layer of each token-wise map.
    pub fnn_width: usize,
    pub window: usize,
    /// Decode head width; `None` leaves the hidden channels as outputs.
    pub n_out: Option<usize>,
}

/// Random network: Gaussian embedding and decode, near-identity mixing, low
/// filter frequencies and He-initialized two-layer token maps.
pub fn init_ssm(cfg: &SsmInit, rng: &mut RngStream) -> Result<SsmNetwork> {
    if cfg.hidden == 0 || cfg.blocks == 0 || cfg.n_in == 0 || cfg.fnn_width == 0 {
        return Err(Error::InvalidArgument("network sizes must be positive".into()));
    }
    let d = cfg.hidden;
    let emb = EmbeddingLayer::new(Matrix::from_fn(d, cfg.n_in, |_, _| rng.normal()), vec![0.0; d])?;
    let scale = 1.0 / ((cfg.window + 1) as f64).sqrt();
    let mut blocks = Vec::with_capacity(cfg.blocks);
    for _ in 0..cfg.blocks {
        let w_mix = Matrix::from_fn(d, d, |i, j| if i == j { 1.0 } else { 0.0 } + rng.normal() * 0.3 / (d as f64).sqrt());
        let c1 = (0..d).map(|_| rng.normal() * scale).collect();
        let c2 = (0..d).map(|_| rng.normal() * scale).collect();
        let a1 = (0..d).map(|_| rng.uniform(0.0, (cfg.window + 1) as f64 / 2.0)).collect();
        let a2 = (0..d).map(|_| rng.uniform(0.0, (cfg.window + 1) as f64 / 2.0)).collect();
        let conv = ConvLayer::new(w_mix, c1, c2, a1, a2, cfg.window)?;
        let w = cfg.fnn_width;
        let s1 = (2.0 / d as f64).sqrt();
        let s2 = (2.0 / w as f64).sqrt();
        let fnn = FnnStack::new(vec![
            Affine::new(Matrix::from_fn(w, d, |_, _| rng.normal() * s1), vec![0.0; w])?,
            Affine::new(Matrix::from_fn(d, w, |_, _| rng.normal() * s2), vec![0.0; d])?,
        ])?;
        blocks.push(Block { conv, map: TokenMap::Fnn(fnn) });
    }
    let decode = cfg.n_out.map(|n| Matrix::from_fn(d, n, |_, _| rng.normal() / (d as f64).sqrt()));
    SsmNetwork::new(emb, blocks, None, decode)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::training::{backward, grad_check, Example, LossKind, LossTarget};

    fn real_batch(d_in: usize, t: usize, n: usize, d_out: usize, rng: &mut RngStream) -> Vec<Example> {
        (0..n)
            .map(|_| Example {
                input: SequenceTensor::from_fn(d_in, t, |_, _| rng.uniform(-1.0, 1.0)),
                targets: (0..t).map(|p| (p, LossTarget::Real((0..d_out).map(|_| rng.normal()).collect()))).collect(),
            })
            .collect()
    }

    #[test]
    fn zero_network_has_zero_gradient_against_zero_targets() {
        let mut rng = RngStream::new(1, 0);
        let cfg = SsmInit { n_in: 3, hidden: 4, blocks: 2, fnn_width: 5, window: 3, n_out: None };
        let mut net = init_ssm(&cfg, &mut rng).unwrap();
        for (_, p) in net.param_groups_mut() {
            p.iter_mut().for_each(|v| *v = 0.0);
        }
        let batch: Vec<Example> = (0..3)
            .map(|_| Example {
                input: SequenceTensor::from_fn(3, 5, |_, _| rng.normal()),
                targets: vec![(4, LossTarget::Real(vec![0.0; 4]))],
            })
            .collect();
        let (loss, tape) = backward(&net, &batch, LossKind::Mse).unwrap();
        assert_eq!(loss, 0.0);
        assert!(tape.flatten().iter().all(|g| *g == 0.0));
    }

    #[test]
    fn single_linear_layer_matches_closed_form() {
        // One block: identity embedding, delta filter, single affine map
        // w·x: the gradient is 2 Xᵀ(Xw − y)/n.
        let d = 3;
        let mut conv = ConvLayer::zeros(d, 0);
        conv.c1 = vec![1.0; d];
        let w = vec![0.5, -1.0, 2.0];
        let fnn = FnnStack::new(vec![Affine::new(Matrix::from_vec(1, d, w.clone()).unwrap(), vec![0.0]).unwrap()]).unwrap();
        let net = SsmNetwork::new(EmbeddingLayer::identity(d), vec![Block { conv, map: TokenMap::Fnn(fnn) }], None, None).unwrap();
        let mut rng = RngStream::new(2, 0);
        let xs: Vec<Vec<f64>> = (0..4).map(|_| (0..d).map(|_| rng.normal()).collect()).collect();
        let ys: Vec<f64> = (0..4).map(|_| rng.normal()).collect();
        let batch: Vec<Example> = xs
            .iter()
            .zip(&ys)
            .map(|(x, y)| Example {
                input: SequenceTensor::from_fn(d, 1, |i, _| x[i]),
                targets: vec![(0, LossTarget::Real(vec![*y]))],
            })
            .collect();
        let (_, tape) = backward(&net, &batch, LossKind::Mse).unwrap();
        let got = tape.get("block1.fnn1.a").unwrap();
        for k in 0..d {
            let want: f64 = xs
                .iter()
                .zip(&ys)
                .map(|(x, y)| 2.0 * x[k] * (x.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() - y))
                .sum::<f64>()
                / 4.0;
            assert!((got[k] - want).abs() < 1e-12, "{k}: {} vs {want}", got[k]);
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = RngStream::new(3, 0);
        let cfg = SsmInit { n_in: 5, hidden: 4, blocks: 2, fnn_width: 6, window: 6, n_out: Some(3) };
        let mut net = init_ssm(&cfg, &mut rng).unwrap();
        net.clip_bound = Some(50.0);
        let batch = real_batch(5, 8, 3, 3, &mut rng);
        let rep = grad_check(&net, &batch, LossKind::Mse, 1e-5, 300, &mut rng).unwrap();
        assert!(rep.max_rel_error <= 1e-4, "{rep:?}");
        assert!(rep.checked > 200);
    }

    #[test]
    fn naive_adjoint_matches_fft_forward() {
        // Long enough for the forward pass to take the FFT path.
        let mut rng = RngStream::new(4, 0);
        let cfg = SsmInit { n_in: 2, hidden: 2, blocks: 1, fnn_width: 3, window: 199, n_out: None };
        let net = init_ssm(&cfg, &mut rng).unwrap();
        assert!(crate::numerics::use_fft_path(200, 199));
        let batch = real_batch(2, 200, 1, 2, &mut rng);
        let rep = grad_check(&net, &batch, LossKind::Mse, 1e-5, 60, &mut rng).unwrap();
        assert!(rep.max_rel_error <= 1e-4, "{rep:?}");
    }
}
