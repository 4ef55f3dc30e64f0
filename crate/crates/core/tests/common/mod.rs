#![allow(dead_code)]

use fpareto::{DenseMatrix, FactorPair};
use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    fpareto::seeded_rng(seed)
}

pub fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DenseMatrix {
    DenseMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

pub fn gaussian_vec(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

pub fn pair(n: usize, m: usize, k: usize, rng: &mut ChaCha8Rng) -> FactorPair {
    FactorPair::new(gaussian(n, k, rng), gaussian(m, k, rng)).unwrap()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn to_na(x: &DenseMatrix) -> DMatrix<f64> {
    DMatrix::from_fn(x.rows(), x.cols(), |i, j| x.get(i, j))
}

/// Singular values from nalgebra, sorted descending.
pub fn singular_values(x: &DenseMatrix) -> Vec<f64> {
    let mut s: Vec<f64> = to_na(x).singular_values().iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

pub fn nuclear(x: &DenseMatrix) -> f64 {
    singular_values(x).iter().sum()
}

pub fn frob_diff(a: &DenseMatrix, b: &DenseMatrix) -> f64 {
    a.sub(b).unwrap().frobenius_norm()
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

/// Root of a decreasing function on `[lo, hi]` by plain bisection.
pub fn bisect(mut lo: f64, mut hi: f64, f: impl Fn(f64) -> f64) -> f64 {
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// `n×k` matrix with orthonormal columns.
pub fn orthonormal(n: usize, k: usize, rng: &mut ChaCha8Rng) -> DenseMatrix {
    let q = to_na(&gaussian(n, k, rng)).qr().q();
    DenseMatrix::from_fn(n, k, |i, j| q[(i, j)])
}

/// `ωŨŨᵀ + (I − ŨŨᵀ)` formed densely.
pub fn weight_dense(u: &DenseMatrix, omega: f64) -> DenseMatrix {
    let n = u.rows();
    let p = u.matmul_transpose(u).unwrap();
    DenseMatrix::from_fn(n, n, |i, j| {
        let id = if i == j { 1.0 } else { 0.0 };
        id + (omega - 1.0) * p.get(i, j)
    })
}
