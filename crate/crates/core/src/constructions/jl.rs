//! Random ±1/√k projections certified to preserve inner products.
//!
//! Each attempt draws a Rademacher matrix and then runs a greedy sign-flip
//! repair that lowers the largest inner-product distortion while keeping
//! every entry at ±1/√k. The certificate is the exhaustive pair check, so
//! the repair only changes how quickly a certified draw is found. When `k`
//! is a power of two no smaller than the dimension, every second attempt
//! instead draws signed Hadamard columns.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Matrix, RngStream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JlProjection {
    /// k×d projection matrix.
    pub r: Matrix,
    pub m: usize,
    pub k: usize,
    pub attempts_used: usize,
    /// Certified `max_{a,b} |⟨Ra,Rb⟩ − ⟨a,b⟩|` over the stored points.
    pub distortion: f64,
}

impl JlProjection {
    /// Required bound `1/(8m²)`.
    pub fn bound(&self) -> f64 {
        1.0 / (8.0 * (self.m * self.m) as f64)
    }

    pub fn project(&self, x: &[f64]) -> Vec<f64> {
        self.r.matvec(x).expect("point dimension")
    }

    /// Column `i` of R, the code of the i-th basis vector.
    pub fn code(&self, i: usize) -> Vec<f64> {
        self.r.column(i)
    }

    /// Re-checks the stored certificate against `points`.
    pub fn recheck(&self, points: &[Vec<f64>]) -> f64 {
        jl_distortion(&self.r, points)
    }
}

/// `max_{a ≤ b} |⟨Ra,Rb⟩ − ⟨a,b⟩|`. Negated points give the same
/// magnitudes, so they need no separate pass.
pub fn jl_distortion(r: &Matrix, points: &[Vec<f64>]) -> f64 {
    let ys: Vec<Vec<f64>> = points.iter().map(|p| r.matvec(p).expect("point dimension")).collect();
    let mut worst = 0.0f64;
    for a in 0..points.len() {
        for b in a..points.len() {
            let got: f64 = ys[a].iter().zip(&ys[b]).map(|(x, y)| x * y).sum();
            let want: f64 = points[a].iter().zip(&points[b]).map(|(x, y)| x * y).sum();
            worst = worst.max((got - want).abs());
        }
    }
    worst
}

struct Repair {
    k: usize,
    n: usize,
    signs: Matrix,        // k×d, entries ±1
    y: Matrix,            // k×n, projected points
    dev: Matrix,          // n×n, ⟨Ra,Rb⟩ − ⟨a,b⟩
    support: Vec<Vec<(usize, f64)>>, // per coordinate: (point, value)
    scale: f64,
    tau: f64,
}

impl Repair {
    fn new(signs: Matrix, points: &[Vec<f64>], tau: f64) -> Self {
        let (k, d) = signs.shape();
        let n = points.len();
        let scale = 1.0 / (k as f64).sqrt();
        let mut support = vec![Vec::new(); d];
        for (p, x) in points.iter().enumerate() {
            for (c, v) in x.iter().enumerate() {
                if *v != 0.0 {
                    support[c].push((p, *v));
                }
            }
        }
        let mut y = Matrix::zeros(k, n);
        for r in 0..k {
            for (c, sup) in support.iter().enumerate() {
                let s = signs[(r, c)] * scale;
                for (p, v) in sup {
                    y[(r, *p)] += s * v;
                }
            }
        }
        let mut dev = Matrix::zeros(n, n);
        for a in 0..n {
            for b in a..n {
                let mut g = 0.0;
                for r in 0..k {
                    g += y[(r, a)] * y[(r, b)];
                }
                let t: f64 = points[a].iter().zip(&points[b]).map(|(x, z)| x * z).sum();
                dev[(a, b)] = g - t;
                dev[(b, a)] = g - t;
            }
        }
        Self { k, n, signs, y, dev, support, scale, tau }
    }

    fn penalty(&self, v: f64) -> f64 {
        let e = v.abs() - self.tau;
        if e > 0.0 {
            e * e
        } else {
            0.0
        }
    }

    fn worst(&self) -> (usize, usize, f64) {
        let mut best = (0, 0, 0.0);
        for a in 0..self.n {
            for b in a..self.n {
                let v = self.dev[(a, b)].abs();
                if v > best.2 {
                    best = (a, b, v);
                }
            }
        }
        best
    }

    fn flip_delta(&self, r: usize, c: usize, apply: bool, dev: &mut Option<&mut Matrix>) -> f64 {
        let sup = &self.support[c];
        let s = self.signs[(r, c)] * self.scale;
        let mut shift = vec![0.0; self.n];
        let mut in_sup = vec![false; self.n];
        for (p, v) in sup {
            shift[*p] = -2.0 * s * v;
            in_sup[*p] = true;
        }
        let mut total = 0.0;
        for (a, _) in sup {
            let a = *a;
            let ya = self.y[(r, a)];
            for b in 0..self.n {
                if in_sup[b] && b < a {
                    continue;
                }
                let yb = self.y[(r, b)];
                let change = (ya + shift[a]) * (yb + shift[b]) - ya * yb;
                let old = self.dev[(a, b)];
                total += self.penalty(old + change) - self.penalty(old);
                if apply {
                    if let Some(m) = dev.as_deref_mut() {
                        m[(a, b)] = old + change;
                        m[(b, a)] = old + change;
                    }
                }
            }
        }
        total
    }

    fn apply_flip(&mut self, r: usize, c: usize) {
        let mut dev = self.dev.clone();
        self.flip_delta(r, c, true, &mut Some(&mut dev));
        self.dev = dev;
        let s = self.signs[(r, c)] * self.scale;
        for (p, v) in &self.support[c] {
            self.y[(r, *p)] -= 2.0 * s * v;
        }
        self.signs[(r, c)] = -self.signs[(r, c)];
    }

    /// Greedy descent on the over-threshold penalty, driven by the worst pair.
    fn run(&mut self, bound: f64, max_steps: usize, rng: &mut RngStream) -> bool {
        for _ in 0..max_steps {
            let (a, b, worst) = self.worst();
            if worst <= bound {
                return true;
            }
            let mut cols: Vec<usize> = (0..self.support.len())
                .filter(|c| self.support[*c].iter().any(|(p, _)| *p == a || *p == b))
                .collect();
            if cols.len() > 64 {
                rng.shuffle(&mut cols);
                cols.truncate(64);
            }
            let mut best: Option<(usize, usize, f64)> = None;
            for &c in &cols {
                for r in 0..self.k {
                    let d = self.flip_delta(r, c, false, &mut None);
                    if d < best.map_or(-1e-15, |x| x.2) {
                        best = Some((r, c, d));
                    }
                }
            }
            match best {
                Some((r, c, _)) => self.apply_flip(r, c),
                None => return false,
            }
        }
        self.worst().2 <= bound
    }
}

/// `d` random columns of the Sylvester Hadamard matrix of order `k`, with
/// random row and column signs, scaled by `1/√k`. The columns are exactly
/// orthonormal, which the Rademacher draw cannot reach when the bound is
/// below the `2/k` granularity of its inner products.
fn hadamard_proposal(k: usize, d: usize, rng: &mut RngStream) -> Matrix {
    let cols = rng.sample_distinct(k, d);
    let row_sign: Vec<f64> = (0..k).map(|_| rng.sign()).collect();
    let col_sign: Vec<f64> = (0..d).map(|_| rng.sign()).collect();
    let s = 1.0 / (k as f64).sqrt();
    Matrix::from_fn(k, d, |i, j| {
        let h = if (i & cols[j]).count_ones() % 2 == 0 { 1.0 } else { -1.0 };
        h * row_sign[i] * col_sign[j] * s
    })
}

/// Draws ±1/√k matrices until one preserves all pairwise inner products of
/// `points` within `1/(8m²)`. Points must have Euclidean norm at most one.
pub fn jl_build(points: &[Vec<f64>], m: usize, k: usize, rng: &mut RngStream, max_attempts: usize) -> Result<JlProjection> {
    if points.is_empty() {
        return Err(Error::InvalidArgument("no points to embed".into()));
    }
    if k == 0 || m == 0 {
        return Err(Error::InvalidArgument("k and m must be positive".into()));
    }
    let d = points[0].len();
    if points.iter().any(|p| p.len() != d) {
        return Err(Error::Shape("points have differing dimensions".into()));
    }
    if points.iter().any(|p| p.iter().map(|v| v * v).sum::<f64>() > 1.0 + 1e-12) {
        return Err(Error::InvalidArgument("points must lie in the unit ball".into()));
    }
    let bound = 1.0 / (8.0 * (m * m) as f64);
    let hadamard_ok = k.is_power_of_two() && d <= k;
    let mut best = f64::INFINITY;
    for attempt in 1..=max_attempts {
        if hadamard_ok && attempt % 2 == 0 {
            let r = hadamard_proposal(k, d, rng);
            let distortion = jl_distortion(&r, points);
            if distortion <= bound {
                return Ok(JlProjection { r, m, k, attempts_used: attempt, distortion });
            }
            best = best.min(distortion);
            continue;
        }
        let signs = Matrix::from_fn(k, d, |_, _| rng.sign());
        let mut repair = Repair::new(signs, points, 0.8 * bound);
        let steps = 20 * points.len() * points.len() + 200;
        repair.run(bound, steps, rng);
        let scale = repair.scale;
        let mut r = repair.signs;
        r.scale(scale);
        let distortion = jl_distortion(&r, points);
        if distortion <= bound {
            return Ok(JlProjection { r, m, k, attempts_used: attempt, distortion });
        }
        best = best.min(distortion);
    }
    Err(Error::CertificationFailed { attempts: max_attempts, best, required: bound })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_hot(n: usize, d: usize) -> Vec<Vec<f64>> {
        (0..n)
            .map(|i| {
                let mut v = vec![0.0; d];
                v[i] = 1.0;
                v
            })
            .collect()
    }

    #[test]
    fn single_point_has_unit_norm_image() {
        let mut rng = RngStream::new(1, 0);
        let jl = jl_build(&one_hot(1, 5), 1, 3, &mut rng, 1).unwrap();
        let y = jl.project(&one_hot(1, 5)[0]);
        let norm: f64 = y.iter().map(|v| v * v).sum();
        assert!((norm - 1.0).abs() < 1e-15);
    }

    #[test]
    fn entries_are_signed_inverse_root_k() {
        let mut rng = RngStream::new(2, 0);
        let jl = jl_build(&one_hot(4, 8), 1, 64, &mut rng, 64).unwrap();
        let s = 1.0 / 8.0;
        assert!(jl.r.as_slice().iter().all(|v| (v.abs() - s).abs() < 1e-15));
        assert!(jl.attempts_used <= 64);
        assert!(jl.recheck(&one_hot(4, 8)) <= 0.125);
    }

    #[test]
    fn exact_orthogonality_when_required() {
        // m = 4 needs distortion <= 1/128 while k = 32 inner products move in
        // steps of 1/16, so only orthogonal codes certify.
        let mut rng = RngStream::new(4, 0);
        let pts = one_hot(18, 18);
        let jl = jl_build(&pts, 4, 32, &mut rng, 64).unwrap();
        assert!(jl.distortion < 1e-12);
        let s = 1.0 / 32f64.sqrt();
        assert!(jl.r.as_slice().iter().all(|v| (v.abs() - s).abs() < 1e-15));
    }

    #[test]
    fn certifies_thirty_two_one_hot_points() {
        let mut rng = RngStream::new(3, 0);
        let pts = one_hot(32, 32);
        let jl = jl_build(&pts, 1, 256, &mut rng, 64).unwrap();
        assert!(jl.distortion <= 0.125);
        assert_eq!(jl.recheck(&pts), jl.distortion);
    }

    #[test]
    fn dense_points_certify() {
        let mut rng = RngStream::new(5, 0);
        let pts: Vec<Vec<f64>> = (0..10)
            .map(|_| {
                let v: Vec<f64> = (0..12).map(|_| rng.normal()).collect();
                let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                v.iter().map(|x| x / n).collect()
            })
            .collect();
        let jl = jl_build(&pts, 1, 128, &mut rng, 16).unwrap();
        assert!(jl.recheck(&pts) <= 0.125 + 1e-12);
    }

    #[test]
    fn impossible_target_reports_best_distortion() {
        let mut rng = RngStream::new(6, 0);
        // Eight orthonormal points cannot fit in one dimension.
        match jl_build(&one_hot(8, 8), 1, 1, &mut rng, 3) {
            Err(Error::CertificationFailed { attempts, best, .. }) => {
                assert_eq!(attempts, 3);
                assert!(best > 0.125);
            }
            other => panic!("expected certification failure, got {other:?}"),
        }
    }
}
