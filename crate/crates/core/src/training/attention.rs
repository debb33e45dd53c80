//! Causal softmax attention baseline with residual connections and a
//! token-wise ReLU map after each attention layer.

use serde::{Deserialize, Serialize};

use super::dense::{add_mm_nt, add_row_sums, affine, mm_tn, relu, relu_mask};
use super::tape::{GradientTape, Trainable};
use crate::error::{shape_err, Error, Result};
use crate::numerics::{Matrix, RngStream, SequenceTensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionLayer {
    pub wq: Matrix,
    pub wk: Matrix,
    pub wv: Matrix,
    pub wo: Matrix,
    pub a1: Matrix,
    pub b1: Vec<f64>,
    pub a2: Matrix,
    pub b2: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionBaseline {
    /// d×n_in token embedding.
    pub embed: Matrix,
    /// d×t_max learned positional embedding.
    pub positions: Matrix,
    pub layers: Vec<AttentionLayer>,
    /// d×n_out decode head; logits are `decodeᵀ h`.
    pub decode: Matrix,
    pub causal: bool,
}

struct LayerCache {
    h: Matrix,
    q: Matrix,
    k: Matrix,
    v: Matrix,
    /// Attention weights, row t over source positions.
    att: Matrix,
    o: Matrix,
    u: Matrix,
    pre: Matrix,
    act: Matrix,
}

impl AttentionBaseline {
    pub fn init(n_in: usize, d: usize, n_layers: usize, fnn_width: usize, t_max: usize, n_out: usize, rng: &mut RngStream) -> Result<Self> {
        if d == 0 || n_layers == 0 || n_in == 0 || n_out == 0 || fnn_width == 0 {
            return Err(Error::InvalidArgument("attention sizes must be positive".into()));
        }
        let s = 1.0 / (d as f64).sqrt();
        let mut gauss = |r: usize, c: usize, scale: f64| Matrix::from_fn(r, c, |_, _| rng.normal() * scale);
        let embed = gauss(d, n_in, 1.0);
        let positions = gauss(d, t_max, 0.3);
        let mut layers = Vec::with_capacity(n_layers);
        for _ in 0..n_layers {
            layers.push(AttentionLayer {
                wq: gauss(d, d, s),
                wk: gauss(d, d, s),
                wv: gauss(d, d, s),
                wo: gauss(d, d, s),
                a1: gauss(fnn_width, d, (2.0 / d as f64).sqrt()),
                b1: vec![0.0; fnn_width],
                a2: gauss(d, fnn_width, (1.0 / fnn_width as f64).sqrt()),
                b2: vec![0.0; d],
            });
        }
        let decode = gauss(d, n_out, s);
        Ok(Self { embed, positions, layers, decode, causal: true })
    }

    pub fn d(&self) -> usize {
        self.embed.rows()
    }

    fn embed_input(&self, x: &SequenceTensor) -> Result<Matrix> {
        if x.d() != self.embed.cols() {
            return shape_err(format!("attention expects {} input channels, got {}", self.embed.cols(), x.d()));
        }
        if x.t() > self.positions.cols() {
            return shape_err(format!("sequence length {} exceeds {} positions", x.t(), self.positions.cols()));
        }
        let mut h = self.embed.matmul(x.matrix())?;
        for i in 0..h.rows() {
            let p = self.positions.row(i);
            h.row_mut(i).iter_mut().zip(p).for_each(|(v, q)| *v += q);
        }
        Ok(h)
    }

    fn forward_cached(&self, x: &SequenceTensor) -> Result<(Vec<LayerCache>, Matrix)> {
        let mut h = self.embed_input(x)?;
        let d = self.d() as f64;
        let t_len = x.t();
        let mut caches = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let q = layer.wq.matmul(&h)?;
            let k = layer.wk.matmul(&h)?;
            let v = layer.wv.matmul(&h)?;
            let scores = mm_tn(&q, &k); // t × s
            let mut att = Matrix::zeros(t_len, t_len);
            for t in 0..t_len {
                let end = if self.causal { t + 1 } else { t_len };
                let row = &scores.row(t)[..end];
                let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max) / d.sqrt();
                let mut z = 0.0;
                for (s, sc) in row.iter().enumerate() {
                    let e = (sc / d.sqrt() - max).exp();
                    att[(t, s)] = e;
                    z += e;
                }
                att.row_mut(t)[..end].iter_mut().for_each(|w| *w /= z);
            }
            let o = v.matmul(&att.transpose())?;
            let mut u = layer.wo.matmul(&o)?;
            u.as_mut_slice().iter_mut().zip(h.as_slice()).for_each(|(a, b)| *a += b);
            let pre = affine(&layer.a1, &layer.b1, &u);
            let act = relu(&pre);
            let f = affine(&layer.a2, &layer.b2, &act);
            let mut next = u.clone();
            next.as_mut_slice().iter_mut().zip(f.as_slice()).for_each(|(a, b)| *a += b);
            caches.push(LayerCache { h, q, k, v, att, o, u, pre, act });
            h = next;
        }
        Ok((caches, h))
    }

    /// Final hidden states, one column per position.
    pub fn forward(&self, x: &SequenceTensor) -> Result<SequenceTensor> {
        Ok(SequenceTensor::from_matrix_unchecked(self.forward_cached(x)?.1))
    }
}

impl Trainable for AttentionBaseline {
    fn param_groups(&self) -> Vec<(String, &[f64])> {
        let mut out: Vec<(String, &[f64])> =
            vec![("embed".into(), self.embed.as_slice()), ("positions".into(), self.positions.as_slice())];
        for (i, l) in self.layers.iter().enumerate() {
            let p = format!("layer{}", i + 1);
            out.push((format!("{p}.wq"), l.wq.as_slice()));
            out.push((format!("{p}.wk"), l.wk.as_slice()));
            out.push((format!("{p}.wv"), l.wv.as_slice()));
            out.push((format!("{p}.wo"), l.wo.as_slice()));
            out.push((format!("{p}.a1"), l.a1.as_slice()));
            out.push((format!("{p}.b1"), &l.b1));
            out.push((format!("{p}.a2"), l.a2.as_slice()));
            out.push((format!("{p}.b2"), &l.b2));
        }
        out.push(("decode".into(), self.decode.as_slice()));
        out
    }

    fn param_groups_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut out: Vec<(String, &mut [f64])> =
            vec![("embed".into(), self.embed.as_mut_slice()), ("positions".into(), self.positions.as_mut_slice())];
        for (i, l) in self.layers.iter_mut().enumerate() {
            let p = format!("layer{}", i + 1);
            out.push((format!("{p}.wq"), l.wq.as_mut_slice()));
            out.push((format!("{p}.wk"), l.wk.as_mut_slice()));
            out.push((format!("{p}.wv"), l.wv.as_mut_slice()));
            out.push((format!("{p}.wo"), l.wo.as_mut_slice()));
            out.push((format!("{p}.a1"), l.a1.as_mut_slice()));
            out.push((format!("{p}.b1"), &mut l.b1));
            out.push((format!("{p}.a2"), l.a2.as_mut_slice()));
            out.push((format!("{p}.b2"), &mut l.b2));
        }
        out.push(("decode".into(), self.decode.as_mut_slice()));
        out
    }

    fn outputs(&self, input: &SequenceTensor) -> Result<Matrix> {
        Ok(mm_tn(&self.decode, &self.forward_cached(input)?.1))
    }

    fn backprop(
        &self,
        input: &SequenceTensor,
        output_grad: &mut dyn FnMut(&Matrix) -> Result<Matrix>,
        tape: &mut GradientTape,
    ) -> Result<()> {
        let (caches, h_last) = self.forward_cached(input)?;
        let out = mm_tn(&self.decode, &h_last);
        let d_out = output_grad(&out)?;
        if d_out.shape() != out.shape() {
            return shape_err("output gradient shape differs from outputs");
        }
        let n_groups = tape.groups.len();
        add_mm_nt(&mut tape.groups[n_groups - 1].1, &h_last, &d_out);
        let mut dh = self.decode.matmul(&d_out)?;
        let inv_sqrt_d = 1.0 / (self.d() as f64).sqrt();
        let t_len = input.t();
        for (li, (layer, c)) in self.layers.iter().zip(&caches).enumerate().rev() {
            let g = 2 + 8 * li;
            // h' = u + A2 relu(A1 u + b1) + b2
            add_mm_nt(&mut tape.groups[g + 6].1, &dh, &c.act);
            add_row_sums(&mut tape.groups[g + 7].1, &dh);
            let mut dpre = mm_tn(&layer.a2, &dh);
            relu_mask(&mut dpre, &c.pre);
            add_mm_nt(&mut tape.groups[g + 4].1, &dpre, &c.u);
            add_row_sums(&mut tape.groups[g + 5].1, &dpre);
            let mut du = mm_tn(&layer.a1, &dpre);
            du.as_mut_slice().iter_mut().zip(dh.as_slice()).for_each(|(a, b)| *a += b);
            // u = h + Wo o
            add_mm_nt(&mut tape.groups[g + 3].1, &du, &c.o);
            let d_o = mm_tn(&layer.wo, &du);
            // o_t = Σ_s att[t,s] v_s
            let dv = d_o.matmul(&c.att)?;
            let datt = mm_tn(&d_o, &c.v); // t × s
            let mut dscore = Matrix::zeros(t_len, t_len);
            for t in 0..t_len {
                let a = c.att.row(t);
                let da = datt.row(t);
                let dot: f64 = a.iter().zip(da).map(|(x, y)| x * y).sum();
                for s in 0..t_len {
                    dscore[(t, s)] = a[s] * (da[s] - dot) * inv_sqrt_d;
                }
            }
            let dq = c.k.matmul(&dscore.transpose())?;
            let dk = c.q.matmul(&dscore)?;
            add_mm_nt(&mut tape.groups[g].1, &dq, &c.h);
            add_mm_nt(&mut tape.groups[g + 1].1, &dk, &c.h);
            add_mm_nt(&mut tape.groups[g + 2].1, &dv, &c.h);
            let mut next = du;
            for (w, dx) in [(&layer.wq, &dq), (&layer.wk, &dk), (&layer.wv, &dv)] {
                let back = mm_tn(w, dx);
                next.as_mut_slice().iter_mut().zip(back.as_slice()).for_each(|(a, b)| *a += b);
            }
            dh = next;
        }
        add_mm_nt(&mut tape.groups[0].1, &dh, input.matrix());
        let dp = &mut tape.groups[1].1;
        let t_max = self.positions.cols();
        for i in 0..dh.rows() {
            for (t, v) in dh.row(i).iter().enumerate() {
                dp[i * t_max + t] += v;
            }
        }
        Ok(())
    }

    fn activation_pattern(&self, input: &SequenceTensor) -> Result<Vec<bool>> {
        let (caches, _) = self.forward_cached(input)?;
        Ok(caches.iter().flat_map(|c| c.pre.as_slice().iter().map(|v| *v > 0.0).collect::<Vec<_>>()).collect())
    }
}


#[cfg(test)]
mod grad_tests {
    use super::*;
    use crate::training::{grad_check, Example, LossKind, LossTarget};

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = RngStream::new(7, 0);
        let net = AttentionBaseline::init(5, 4, 2, 6, 8, 5, &mut rng).unwrap();
        let batch: Vec<Example> = (0..3)
            .map(|_| {
                let ids: Vec<usize> = (0..8).map(|_| rng.below(5)).collect();
                Example {
                    input: SequenceTensor::one_hot(&ids, 5).unwrap(),
                    targets: (3..8).map(|t| (t, LossTarget::Class(rng.below(5)))).collect(),
                }
            })
            .collect();
        let rep = grad_check(&net, &batch, LossKind::CrossEntropy, 1e-5, 300, &mut rng).unwrap();
        assert!(rep.max_rel_error <= 1e-4, "{rep:?}");
    }
}
