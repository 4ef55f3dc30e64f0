//! Matrix-like operators seen only through products, and their largest
//! singular value.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{norm2, DenseMatrix};

/// Seed of the start vector used by [`sigma_max`].
pub const POWER_SEED: u64 = 0x5eed_0f_5a;
/// Default relative tolerance of [`sigma_max`].
pub const POWER_TOLERANCE: f64 = 1e-8;
/// Default step cap of [`sigma_max`].
pub const POWER_MAX_ITERS: usize = 5_000;

/// An `nrows × ncols` operator with products `y = Mx` and `x = Mᵀy`.
pub trait LinOp {
    fn nrows(&self) -> usize;
    fn ncols(&self) -> usize;
    fn apply(&self, x: &[f64], y: &mut [f64]);
    fn apply_t(&self, y: &[f64], x: &mut [f64]);
}

impl LinOp for DenseMatrix {
    fn nrows(&self) -> usize {
        self.rows()
    }

    fn ncols(&self) -> usize {
        self.cols()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        y.copy_from_slice(&self.mul_vec(x));
    }

    fn apply_t(&self, y: &[f64], x: &mut [f64]) {
        x.copy_from_slice(&self.tr_mul_vec(y));
    }
}

/// Coordinate-list matrix; repeated cells add up.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    rows: usize,
    cols: usize,
    entries: Vec<(usize, usize, f64)>,
}

impl SparseMatrix {
    pub fn new(rows: usize, cols: usize, entries: Vec<(usize, usize, f64)>) -> Result<Self> {
        if let Some(&(i, j, _)) = entries.iter().find(|&&(i, j, _)| i >= rows || j >= cols) {
            return Err(Error::DimensionMismatch {
                context: "sparse entry",
                expected: (rows, cols),
                got: (i, j),
            });
        }
        Ok(Self { rows, cols, entries })
    }

    pub fn entries(&self) -> &[(usize, usize, f64)] {
        &self.entries
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let mut d = DenseMatrix::zeros(self.rows, self.cols);
        for &(i, j, v) in &self.entries {
            d.set(i, j, d.get(i, j) + v);
        }
        d
    }
}

impl LinOp for SparseMatrix {
    fn nrows(&self) -> usize {
        self.rows
    }

    fn ncols(&self) -> usize {
        self.cols
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        y.fill(0.0);
        for &(i, j, v) in &self.entries {
            y[i] += v * x[j];
        }
    }

    fn apply_t(&self, y: &[f64], x: &mut [f64]) {
        x.fill(0.0);
        for &(i, j, v) in &self.entries {
            x[j] += v * y[i];
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SigmaMax {
    pub value: f64,
    pub converged: bool,
    pub iterations: usize,
}

/// Largest singular value of an operator seen through products only.
///
/// Golub–Kahan–Lanczos bidiagonalization with full reorthogonalization,
/// stopped once the singular-vector residual `‖Mᵀu − σv‖` drops below
/// `tol·σ`. At most `max_iters` steps, and never more than `min(rows, cols)`,
/// at which point the estimate is exact. A cap hit earlier returns the
/// current estimate, a lower bound, with `converged = false`.
pub fn sigma_max(op: &dyn LinOp, tol: f64, max_iters: usize) -> SigmaMax {
    let mut v = power_start(op.ncols());
    sigma_max_from(op, &mut v, tol, max_iters)
}

/// Deterministic unit start vector of length `n`.
pub fn power_start(n: usize) -> Vec<f64> {
    let mut rng = crate::seeded_rng(POWER_SEED);
    let mut v: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    let nv = norm2(&v);
    if nv > 0.0 {
        v.iter_mut().for_each(|x| *x /= nv);
    }
    v
}

/// [`sigma_max`] started from the unit vector `v`, which is left holding the
/// latest right singular vector estimate for the next call.
pub fn sigma_max_from(op: &dyn LinOp, v: &mut [f64], tol: f64, max_iters: usize) -> SigmaMax {
    let (nr, nc) = (op.nrows(), op.ncols());
    let zero = |iterations| SigmaMax {
        value: 0.0,
        converged: true,
        iterations,
    };
    if nr == 0 || nc == 0 || max_iters == 0 {
        return zero(0);
    }
    if norm2(v) == 0.0 {
        v.copy_from_slice(&power_start(nc));
    }
    let steps = max_iters.min(nr).min(nc);
    let mut vs: Vec<Vec<f64>> = Vec::with_capacity(steps + 1);
    let mut us: Vec<Vec<f64>> = Vec::with_capacity(steps);
    let (mut alpha, mut beta) = (Vec::with_capacity(steps), Vec::with_capacity(steps));
    let mut v0 = v.to_vec();
    normalize(&mut v0);
    vs.push(v0);
    let mut best: (f64, bool) = (0.0, false);
    for j in 0..steps {
        let mut u = vec![0.0; nr];
        op.apply(&vs[j], &mut u);
        if let Some(prev) = us.last() {
            let b = beta[j - 1];
            u.iter_mut().zip(prev).for_each(|(x, p): (&mut f64, &f64)| *x -= b * p);
        }
        orthogonalize(&mut u, &us);
        let a = norm2(&u);
        let exhausted = a <= f64::EPSILON * best.0.max(1e-300);
        if !exhausted {
            u.iter_mut().for_each(|x| *x /= a);
        }
        alpha.push(if exhausted { 0.0 } else { a });
        us.push(u);
        let mut w = vec![0.0; nc];
        op.apply_t(&us[j], &mut w);
        let a_j = alpha[j];
        w.iter_mut().zip(&vs[j]).for_each(|(x, p)| *x -= a_j * p);
        orthogonalize(&mut w, &vs);
        let b = norm2(&w);
        beta.push(b);
        let last = j + 1 == steps || exhausted;
        if j < 32 || j % 4 == 3 || last {
            let (sigma, right, resid) = ritz(&alpha, &beta);
            let converged = last || b <= f64::EPSILON * sigma || resid <= tol * sigma;
            best = (sigma, converged);
            if converged || last {
                if sigma == 0.0 {
                    return zero(j + 1);
                }
                v.fill(0.0);
                for (c, vi) in right.iter().zip(&vs) {
                    v.iter_mut().zip(vi).for_each(|(x, y)| *x += c * y);
                }
                normalize(v);
                return SigmaMax {
                    value: sigma,
                    converged,
                    iterations: j + 1,
                };
            }
        }
        if b > 0.0 {
            w.iter_mut().for_each(|x| *x /= b);
        }
        vs.push(w);
    }
    unreachable!("the last step always returns")
}

/// Largest singular triple of the upper bidiagonal matrix with diagonal
/// `alpha` and superdiagonal `beta[..j-1]`; returns the value, its right
/// vector and the residual `β_j·|p_j|`.
fn ritz(alpha: &[f64], beta: &[f64]) -> (f64, Vec<f64>, f64) {
    let j = alpha.len();
    let b = DenseMatrix::from_fn(j, j, |r, c| {
        if r == c {
            alpha[r]
        } else if c == r + 1 {
            beta[r]
        } else {
            0.0
        }
    });
    let svd = b.svd();
    let top = (0..svd.sigma.len())
        .max_by(|&x, &y| svd.sigma[x].total_cmp(&svd.sigma[y]))
        .unwrap_or(0);
    let right: Vec<f64> = (0..j).map(|r| svd.v.get(r, top)).collect();
    let resid = beta[j - 1] * svd.u.get(j - 1, top).abs();
    (svd.sigma[top], right, resid)
}

/// Two passes of Gram–Schmidt against an orthonormal set.
fn orthogonalize(x: &mut [f64], basis: &[Vec<f64>]) {
    for _ in 0..2 {
        for q in basis {
            let c: f64 = x.iter().zip(q).map(|(a, b)| a * b).sum();
            x.iter_mut().zip(q).for_each(|(a, b)| *a -= c * b);
        }
    }
}

fn normalize(x: &mut [f64]) {
    let n = norm2(x);
    if n > 0.0 {
        x.iter_mut().for_each(|v| *v /= n);
    }
}

/// `steps` power iterations on `MᵀM` from the unit vector `v` (updated in
/// place). The returned value is a lower bound on the largest singular value.
pub fn power_steps(op: &dyn LinOp, v: &mut [f64], steps: usize) -> f64 {
    let (nr, nc) = (op.nrows(), op.ncols());
    if nr == 0 || nc == 0 {
        return 0.0;
    }
    let mut w = vec![0.0; nr];
    let mut u = vec![0.0; nc];
    let mut value = 0.0;
    for _ in 0..steps {
        op.apply(v, &mut w);
        value = norm2(&w);
        op.apply_t(&w, &mut u);
        let nu = norm2(&u);
        if nu == 0.0 {
            break;
        }
        v.iter_mut().zip(&u).for_each(|(x, y)| *x = y / nu);
    }
    value
}
