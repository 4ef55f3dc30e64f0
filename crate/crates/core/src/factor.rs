//! The low-rank decision variable `X = L·Rᵀ` and global solver knobs.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;

/// A factorization `X = L·Rᵀ` with `L` n×k and `R` m×k.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorPair {
    l: DenseMatrix,
    r: DenseMatrix,
}

impl FactorPair {
    pub fn new(l: DenseMatrix, r: DenseMatrix) -> Result<Self> {
        if l.cols() != r.cols() {
            return Err(Error::InvalidFactor(format!(
                "L has {} columns but R has {}",
                l.cols(),
                r.cols()
            )));
        }
        if l.cols() == 0 {
            return Err(Error::InvalidFactor("factor rank must be at least 1".into()));
        }
        Ok(Self { l, r })
    }

    pub fn zeros(n: usize, m: usize, k: usize) -> Self {
        Self {
            l: DenseMatrix::zeros(n, k),
            r: DenseMatrix::zeros(m, k),
        }
    }

    /// I.i.d. standard Gaussian factors.
    pub fn gaussian<G: Rng + ?Sized>(n: usize, m: usize, k: usize, rng: &mut G) -> Self {
        let l = DenseMatrix::from_fn(n, k, |_, _| rng.sample(StandardNormal));
        let r = DenseMatrix::from_fn(m, k, |_, _| rng.sample(StandardNormal));
        Self { l, r }
    }

    /// Gaussian factors rescaled so that their surrogate equals `surrogate`.
    pub fn gaussian_with_surrogate<G: Rng + ?Sized>(
        n: usize,
        m: usize,
        k: usize,
        surrogate: f64,
        rng: &mut G,
    ) -> Self {
        let fp = Self::gaussian(n, m, k, rng);
        let g = fp.frobenius_surrogate();
        if g == 0.0 {
            return fp;
        }
        fp.scale((surrogate / g).sqrt())
    }

    #[inline]
    pub fn l(&self) -> &DenseMatrix {
        &self.l
    }

    #[inline]
    pub fn r(&self) -> &DenseMatrix {
        &self.r
    }

    pub fn into_parts(self) -> (DenseMatrix, DenseMatrix) {
        (self.l, self.r)
    }

    #[inline]
    pub fn rank(&self) -> usize {
        self.l.cols()
    }

    /// Shape `(n, m)` of the induced matrix.
    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.l.rows(), self.r.rows())
    }

    /// `L·Rᵀ`.
    pub fn form_product(&self) -> DenseMatrix {
        self.l
            .matmul_transpose(&self.r)
            .expect("factor columns agree by construction")
    }

    /// ½(‖L‖²_F + ‖R‖²_F), an upper bound on ‖L·Rᵀ‖_*.
    pub fn frobenius_surrogate(&self) -> f64 {
        0.5 * (self.l.frobenius_sq() + self.r.frobenius_sq())
    }

    /// Multiplies both factors by `c`; the product scales by `c²`.
    pub fn scale(&self, c: f64) -> Self {
        Self {
            l: self.l.scale(c),
            r: self.r.scale(c),
        }
    }

    /// Stacked coordinates `[vec(L); vec(R)]`, each row-major.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut z = Vec::with_capacity(self.l.as_slice().len() + self.r.as_slice().len());
        z.extend_from_slice(self.l.as_slice());
        z.extend_from_slice(self.r.as_slice());
        z
    }

    pub fn from_flat(n: usize, m: usize, k: usize, z: &[f64]) -> Self {
        assert_eq!(z.len(), (n + m) * k, "flat factor length");
        Self {
            l: DenseMatrix::from_vec_unchecked(n, k, z[..n * k].to_vec()),
            r: DenseMatrix::from_vec_unchecked(m, k, z[n * k..].to_vec()),
        }
    }

    /// Appends columns `l_new`, `r_new`: `[L l][R r]ᵀ = L·Rᵀ + l·rᵀ`.
    pub fn append_columns(&self, l_new: &DenseMatrix, r_new: &DenseMatrix) -> Result<Self> {
        if l_new.cols() != r_new.cols() {
            return Err(Error::InvalidFactor("appended columns disagree".into()));
        }
        Self::new(self.l.hstack(l_new)?, self.r.hstack(r_new)?)
    }
}

/// Free function form of [`FactorPair::form_product`].
pub fn form_product(fp: &FactorPair) -> DenseMatrix {
    fp.form_product()
}

/// Free function form of [`FactorPair::frobenius_surrogate`].
pub fn frobenius_surrogate(fp: &FactorPair) -> f64 {
    fp.frobenius_surrogate()
}

/// Geometric schedule of inner optimality tolerances, one per outer step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToleranceSchedule {
    pub initial: f64,
    pub decay: f64,
    pub floor: f64,
}

impl ToleranceSchedule {
    pub fn at(&self, step: usize) -> f64 {
        let exp = i32::try_from(step).unwrap_or(i32::MAX);
        (self.initial * self.decay.powi(exp)).max(self.floor)
    }
}

impl Default for ToleranceSchedule {
    fn default() -> Self {
        Self {
            initial: 1e-1,
            decay: 0.3,
            floor: 1e-6,
        }
    }
}

/// When and by how much to add factor columns during a Pareto run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RankGrowth {
    Off,
    /// Add `delta` columns once Newton progress stalls below `threshold`
    /// (fraction of the remaining misfit gap) on two consecutive updates.
    Increment { delta: usize, threshold: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub factor_rank: usize,
    pub max_outer_newton_steps: usize,
    /// Iteration cap for a single subproblem.
    pub max_inner_spg_iterations: usize,
    /// Optional cap on inner iterations summed over a whole Pareto run.
    pub inner_budget: Option<usize>,
    pub inner_tolerance: ToleranceSchedule,
    /// Relative window on `|ρ(r) − η| / η` that counts as hitting the target.
    pub root_tolerance: f64,
    pub line_search_memory: usize,
    pub seed: u64,
    pub rank_growth: RankGrowth,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            factor_rank: 10,
            max_outer_newton_steps: 30,
            max_inner_spg_iterations: 20_000,
            inner_budget: None,
            inner_tolerance: ToleranceSchedule::default(),
            root_tolerance: 5e-3,
            line_search_memory: 10,
            seed: 0,
            rank_growth: RankGrowth::Off,
        }
    }
}

impl SolverConfig {
    pub fn with_rank(mut self, k: usize) -> Self {
        self.factor_rank = k;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.to_string()));
        if self.factor_rank == 0 {
            return bad("factor rank must be at least 1");
        }
        if self.line_search_memory == 0 {
            return bad("line search memory must be at least 1");
        }
        let t = &self.inner_tolerance;
        if !(t.initial > 0.0 && t.floor > 0.0 && t.decay > 0.0 && t.decay <= 1.0) {
            return bad("inner tolerances must be positive with decay in (0, 1]");
        }
        if !(self.root_tolerance > 0.0) {
            return bad("root tolerance must be positive");
        }
        if let RankGrowth::Increment { delta, threshold } = self.rank_growth {
            if delta == 0 || !(threshold > 0.0) {
                return bad("rank growth needs delta >= 1 and a positive threshold");
            }
        }
        Ok(())
    }
}
