//! Small dense kernels shared by the backward passes. Matrices are row-major;
//! sequences are stored as channels × positions.

use crate::numerics::Matrix;

/// `A X + b 1ᵀ`.
pub(crate) fn affine(a: &Matrix, b: &[f64], x: &Matrix) -> Matrix {
    let mut y = a.matmul(x).expect("affine shapes");
    for (i, bi) in b.iter().enumerate() {
        y.row_mut(i).iter_mut().for_each(|v| *v += bi);
    }
    y
}

/// `Aᵀ Y`.
pub(crate) fn mm_tn(a: &Matrix, y: &Matrix) -> Matrix {
    let (r, c) = a.shape();
    let t = y.cols();
    let mut out = Matrix::zeros(c, t);
    for i in 0..r {
        let yr = y.row(i);
        for (k, &aik) in a.row(i).iter().enumerate() {
            if aik == 0.0 {
                continue;
            }
            out.row_mut(k).iter_mut().zip(yr).for_each(|(o, v)| *o += aik * v);
        }
    }
    out
}

/// `grad += Y Xᵀ`, with `grad` the row-major buffer of an rows(Y)×rows(X)
/// matrix.
pub(crate) fn add_mm_nt(grad: &mut [f64], y: &Matrix, x: &Matrix) {
    let n = x.rows();
    for i in 0..y.rows() {
        let yr = y.row(i);
        for k in 0..n {
            let s: f64 = yr.iter().zip(x.row(k)).map(|(a, b)| a * b).sum();
            grad[i * n + k] += s;
        }
    }
}

/// `grad += Y 1`.
pub(crate) fn add_row_sums(grad: &mut [f64], y: &Matrix) {
    for (i, g) in grad.iter_mut().enumerate() {
        *g += y.row(i).iter().sum::<f64>();
    }
}

pub(crate) fn relu(x: &Matrix) -> Matrix {
    let mut y = x.clone();
    y.as_mut_slice().iter_mut().for_each(|v| *v = v.max(0.0));
    y
}

/// Zeroes `g` wherever the pre-activation is not positive.
pub(crate) fn relu_mask(g: &mut Matrix, pre: &Matrix) {
    g.as_mut_slice().iter_mut().zip(pre.as_slice()).for_each(|(v, p)| {
        if *p <= 0.0 {
            *v = 0.0;
        }
    });
}
