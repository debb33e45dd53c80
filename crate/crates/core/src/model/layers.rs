use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::numerics::{conv_causal, FilterBank, Matrix, SequenceTensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingLayer {
    pub e1: Matrix,
    pub e2: Vec<f64>,
}

impl EmbeddingLayer {
    pub fn new(e1: Matrix, e2: Vec<f64>) -> Result<Self> {
        if e1.rows() != e2.len() {
            return shape_err(format!("E1 has {} rows but E2 has length {}", e1.rows(), e2.len()));
        }
        Ok(Self { e1, e2 })
    }

    pub fn identity(d: usize) -> Self {
        Self { e1: Matrix::identity(d), e2: vec![0.0; d] }
    }

    pub fn d_in(&self) -> usize {
        self.e1.cols()
    }

    pub fn d_out(&self) -> usize {
        self.e1.rows()
    }
}

/// `E1·x_t + E2` for every column.
pub fn embed_sequence(emb: &EmbeddingLayer, x: &SequenceTensor) -> Result<SequenceTensor> {
    if x.d() != emb.d_in() {
        return shape_err(format!("embedding expects {} input channels, got {}", emb.d_in(), x.d()));
    }
    let mut out = emb.e1.matmul(x.matrix())?;
    for i in 0..out.rows() {
        let b = emb.e2[i];
        out.row_mut(i).iter_mut().for_each(|v| *v += b);
    }
    Ok(SequenceTensor::from_matrix_unchecked(out))
}

/// Channel mixing followed by a causal filter whose taps are
/// `c1 cos(2πj a1/(U+1)) + c2 sin(2πj a2/(U+1))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvLayer {
    pub w_mix: Matrix,
    pub c1: Vec<f64>,
    pub c2: Vec<f64>,
    pub a1: Vec<f64>,
    pub a2: Vec<f64>,
    pub window: usize,
}

impl ConvLayer {
    pub fn new(
        w_mix: Matrix,
        c1: Vec<f64>,
        c2: Vec<f64>,
        a1: Vec<f64>,
        a2: Vec<f64>,
        window: usize,
    ) -> Result<Self> {
        let d = w_mix.rows();
        if w_mix.cols() != d {
            return shape_err("W_mix must be square");
        }
        if [&c1, &c2, &a1, &a2].iter().any(|v| v.len() != d) {
            return shape_err(format!("filter parameter vectors must have length {d}"));
        }
        Ok(Self { w_mix, c1, c2, a1, a2, window })
    }

    /// Identity mixing and zero filter parameters.
    pub fn zeros(d: usize, window: usize) -> Self {
        Self {
            w_mix: Matrix::identity(d),
            c1: vec![0.0; d],
            c2: vec![0.0; d],
            a1: vec![0.0; d],
            a2: vec![0.0; d],
            window,
        }
    }

    pub fn d(&self) -> usize {
        self.w_mix.rows()
    }

    /// Angular step 2π/(U+1) shared by every channel.
    pub fn theta(&self) -> f64 {
        2.0 * PI / (self.window as f64 + 1.0)
    }

    /// Largest absolute value among the filter and mixing parameters.
    pub fn max_param(&self) -> f64 {
        [&self.c1, &self.c2, &self.a1, &self.a2]
            .iter()
            .flat_map(|v| v.iter())
            .fold(self.w_mix.max_abs(), |m, v| m.max(v.abs()))
    }
}

pub fn materialize_filter(layer: &ConvLayer) -> FilterBank {
    let theta = layer.theta();
    let taps = Matrix::from_fn(layer.d(), layer.window + 1, |k, j| {
        let j = j as f64;
        layer.c1[k] * (theta * j * layer.a1[k]).cos() + layer.c2[k] * (theta * j * layer.a2[k]).sin()
    });
    FilterBank::new(taps).expect("finite parameters give finite taps")
}

/// `H * (W_mix X)`, using the FFT path past the crossover.
pub fn conv_layer_apply(layer: &ConvLayer, x: &SequenceTensor) -> Result<SequenceTensor> {
    if x.d() != layer.d() {
        return shape_err(format!("conv layer has {} channels, input has {}", layer.d(), x.d()));
    }
    let z = SequenceTensor::from_matrix_unchecked(layer.w_mix.matmul(x.matrix())?);
    conv_causal(&materialize_filter(layer), &z)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Affine {
    #[serde(rename = "A")]
    pub a: Matrix,
    pub b: Vec<f64>,
}

impl Affine {
    pub fn new(a: Matrix, b: Vec<f64>) -> Result<Self> {
        if a.rows() != b.len() {
            return shape_err(format!("A has {} rows but b has length {}", a.rows(), b.len()));
        }
        Ok(Self { a, b })
    }

    pub fn d_in(&self) -> usize {
        self.a.cols()
    }

    pub fn d_out(&self) -> usize {
        self.a.rows()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = self.a.matvec(x).expect("dimension chain checked");
        y.iter_mut().zip(&self.b).for_each(|(v, b)| *v += b);
        y
    }
}

/// Token-wise ReLU network `A_L η(·) + b_L ∘ ⋯ ∘ A_1 x + b_1`. The first
/// affine map consumes the raw input; η precedes every later map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FnnStack {
    pub layers: Vec<Affine>,
}

impl FnnStack {
    pub fn new(layers: Vec<Affine>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidArgument("FNN needs at least one affine map".into()));
        }
        for w in layers.windows(2) {
            if w[0].d_out() != w[1].d_in() {
                return shape_err(format!(
                    "FNN layer output {} does not feed next input {}",
                    w[0].d_out(),
                    w[1].d_in()
                ));
            }
        }
        Ok(Self { layers })
    }

    pub fn identity(d: usize) -> Self {
        Self { layers: vec![Affine { a: Matrix::identity(d), b: vec![0.0; d] }] }
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn width(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.d_out().max(l.d_in()))
            .max()
            .unwrap_or(0)
    }

    pub fn sparsity(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.a.count_nonzero() + l.b.iter().filter(|v| **v != 0.0).count())
            .sum()
    }

    pub fn max_param(&self) -> f64 {
        self.layers
            .iter()
            .map(|l| l.b.iter().fold(l.a.max_abs(), |m, v| m.max(v.abs())))
            .fold(0.0, f64::max)
    }

    pub fn d_in(&self) -> usize {
        self.layers[0].d_in()
    }

    pub fn d_out(&self) -> usize {
        self.layers.last().map_or(0, Affine::d_out)
    }

    pub fn apply_token(&self, x: &[f64]) -> Vec<f64> {
        let mut h = self.layers[0].apply(x);
        for layer in &self.layers[1..] {
            h.iter_mut().for_each(|v| *v = v.max(0.0));
            h = layer.apply(&h);
        }
        h
    }
}

pub fn fnn_apply(f: &FnnStack, x: &SequenceTensor) -> Result<SequenceTensor> {
    if x.d() != f.d_in() {
        return shape_err(format!("FNN expects {} input channels, got {}", f.d_in(), x.d()));
    }
    let mut out = Matrix::zeros(f.d_out(), x.t());
    for t in 0..x.t() {
        out.set_column(t, &f.apply_token(&x.column(t)));
    }
    Ok(SequenceTensor::from_matrix_unchecked(out))
}

/// Exact `clip_R` as `ReLU(x+R) − ReLU(x−R) − R`, coordinate-wise on `d`
/// channels.
pub fn build_clip_fnn(r: f64, d: usize) -> Result<FnnStack> {
    if !(r > 0.0 && r.is_finite()) {
        return Err(Error::InvalidArgument(format!("clip bound must be positive, got {r}")));
    }
    let mut a1 = Matrix::zeros(2 * d, d);
    let mut b1 = vec![0.0; 2 * d];
    let mut a2 = Matrix::zeros(d, 2 * d);
    for i in 0..d {
        a1[(2 * i, i)] = 1.0;
        a1[(2 * i + 1, i)] = 1.0;
        b1[2 * i] = r;
        b1[2 * i + 1] = -r;
        a2[(i, 2 * i)] = 1.0;
        a2[(i, 2 * i + 1)] = -1.0;
    }
    FnnStack::new(vec![Affine::new(a1, b1)?, Affine::new(a2, vec![-r; d])?])
}
