//! Subspace weights `Q = ωŨŨᵀ + (I − ŨŨᵀ)`, `W = ωṼṼᵀ + (I − ṼṼᵀ)`, the
//! weighted BPDN solve and frequency continuation over a stack of slices.

use serde::{Deserialize, Serialize};

use crate::data::db_serde;
use crate::error::{Error, Result};
use crate::factor::{FactorPair, SolverConfig};
use crate::linop::{sigma_max, LinOp, SigmaMax, POWER_MAX_ITERS, POWER_TOLERANCE};
use crate::matrix::{dot, DenseMatrix};
use crate::obs::Observations;
use crate::pareto::{solve_bpdn_run, solve_weighted_run, BpdnRun, ParetoStatus, ParetoTrace};
use crate::penalty::Penalty;
use crate::subsolve::Problem;

/// Largest allowed entry of `|ŨᵀŨ − I|`.
pub const ORTHONORMAL_TOLERANCE: f64 = 1e-10;
/// Default subspace weight.
pub const DEFAULT_OMEGA: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubspaceWeights {
    u: DenseMatrix,
    v: DenseMatrix,
    omega: f64,
}

impl SubspaceWeights {
    pub fn new(u: DenseMatrix, v: DenseMatrix, omega: f64) -> Result<Self> {
        if !(omega > 0.0 && omega <= 1.0) {
            return Err(Error::InvalidConfig(format!("omega must lie in (0, 1], got {omega}")));
        }
        for basis in [&u, &v] {
            let dev = orthonormality_deviation(basis);
            if dev > ORTHONORMAL_TOLERANCE {
                return Err(Error::NotOrthonormal { deviation: dev });
            }
        }
        Ok(Self { u, v, omega })
    }

    /// Weights built on the leading `k_keep` singular subspaces of `L·Rᵀ`.
    pub fn from_factor_subspaces(fp: &FactorPair, k_keep: usize, omega: f64) -> Result<Self> {
        let s = extract_subspaces(fp, k_keep)?;
        Self::new(s.u, s.v, omega)
    }

    pub fn u(&self) -> &DenseMatrix {
        &self.u
    }

    pub fn v(&self) -> &DenseMatrix {
        &self.v
    }

    pub fn omega(&self) -> f64 {
        self.omega
    }

    pub fn with_omega(&self, omega: f64) -> Result<Self> {
        Self::new(self.u.clone(), self.v.clone(), omega)
    }
}

/// `max |BᵀB − I|` entrywise.
pub fn orthonormality_deviation(b: &DenseMatrix) -> f64 {
    let g = b.transpose_matmul(b).expect("same rows");
    let mut dev: f64 = 0.0;
    for i in 0..g.rows() {
        for j in 0..g.cols() {
            let target = if i == j { 1.0 } else { 0.0 };
            dev = dev.max((g.get(i, j) - target).abs());
        }
    }
    dev
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    /// `Q·M` with `Ũ`.
    Row,
    /// `M·W` with `Ṽ`.
    Col,
}

/// `QM`, `Q⁻¹M`, `MW` or `MW⁻¹` by thin products, e.g. `QM = M + (ω−1)Ũ(ŨᵀM)`.
pub fn apply_weight(w: &SubspaceWeights, side: Side, inverse: bool, m: &DenseMatrix) -> Result<DenseMatrix> {
    let c = if inverse { 1.0 / w.omega - 1.0 } else { w.omega - 1.0 };
    match side {
        Side::Row => {
            check_rows(w.u.rows(), m.rows())?;
            let proj = w.u.matmul(&w.u.transpose_matmul(m)?)?;
            m.add(&proj.scale(c))
        }
        Side::Col => {
            check_rows(w.v.rows(), m.cols())?;
            let proj = m.matmul(&w.v)?.matmul_transpose(&w.v)?;
            m.add(&proj.scale(c))
        }
    }
}

fn check_rows(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch {
            context: "subspace weight",
            expected: (expected, 1),
            got: (got, 1),
        });
    }
    Ok(())
}

/// `x ↦ x + c·B(Bᵀx)` on a vector.
fn weight_vec(b: &DenseMatrix, c: f64, x: &mut [f64]) {
    if c == 0.0 {
        return;
    }
    let coeffs = b.tr_mul_vec(x);
    let along = b.mul_vec(&coeffs);
    for (xi, a) in x.iter_mut().zip(along) {
        *xi += c * a;
    }
}

/// `Q⁻¹·G·W⁻¹` applied through products with `G`.
pub(crate) struct WeightedDual<'a> {
    g: &'a dyn LinOp,
    w: &'a SubspaceWeights,
    c: f64,
}

impl LinOp for WeightedDual<'_> {
    fn nrows(&self) -> usize {
        self.g.nrows()
    }

    fn ncols(&self) -> usize {
        self.g.ncols()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let mut xw = x.to_vec();
        weight_vec(&self.w.v, self.c, &mut xw);
        self.g.apply(&xw, y);
        weight_vec(&self.w.u, self.c, y);
    }

    fn apply_t(&self, y: &[f64], x: &mut [f64]) {
        let mut yw = y.to_vec();
        weight_vec(&self.w.u, self.c, &mut yw);
        self.g.apply_t(&yw, x);
        weight_vec(&self.w.v, self.c, x);
    }
}

impl<'a> WeightedDual<'a> {
    pub(crate) fn new(g: &'a dyn LinOp, w: &'a SubspaceWeights) -> Result<Self> {
        check_rows(w.u.rows(), g.nrows())?;
        check_rows(w.v.rows(), g.ncols())?;
        Ok(Self {
            g,
            w,
            c: 1.0 / w.omega - 1.0,
        })
    }
}

/// `σ_max(Q⁻¹GW⁻¹)`, the dual of the weighted nuclear norm at `G`.
pub fn weighted_gradient_norm(g: &dyn LinOp, w: &SubspaceWeights) -> Result<SigmaMax> {
    Ok(sigma_max(&WeightedDual::new(g, w)?, POWER_TOLERANCE, POWER_MAX_ITERS))
}

/// Leading singular subspaces of `L·Rᵀ` computed without forming it.
#[derive(Debug, Clone, PartialEq)]
pub struct SubspaceBasis {
    pub u: DenseMatrix,
    pub v: DenseMatrix,
    pub sigma: Vec<f64>,
    /// Fewer than the requested vectors were available.
    pub truncated: bool,
}

/// Top `k_keep` singular vector pairs of `L·Rᵀ` from `L = Q_L R_L`,
/// `R = Q_R R_R` and an SVD of the small `R_L R_Rᵀ`.
pub fn extract_subspaces(fp: &FactorPair, k_keep: usize) -> Result<SubspaceBasis> {
    if k_keep == 0 || k_keep > fp.rank() {
        return Err(Error::InvalidConfig(format!(
            "k_keep must be in 1..={}, got {k_keep}",
            fp.rank()
        )));
    }
    let ql = fp.l().to_nalgebra().qr();
    let qr = fp.r().to_nalgebra().qr();
    let (q_l, r_l) = (DenseMatrix::from_nalgebra(&ql.q()), DenseMatrix::from_nalgebra(&ql.r()));
    let (q_r, r_r) = (DenseMatrix::from_nalgebra(&qr.q()), DenseMatrix::from_nalgebra(&qr.r()));
    let core = r_l.matmul_transpose(&r_r)?;
    let svd = core.svd();
    let top = svd.sigma.first().copied().unwrap_or(0.0);
    let numerical = svd.sigma.iter().filter(|&&s| top > 0.0 && s > 1e-10 * top).count();
    if numerical == 0 {
        return Err(Error::InvalidFactor("factor product is zero".into()));
    }
    let keep = k_keep.min(numerical);
    Ok(SubspaceBasis {
        u: q_l.matmul(&svd.u.leading_columns(keep))?,
        v: q_r.matmul(&svd.v.leading_columns(keep))?,
        sigma: svd.sigma[..keep].to_vec(),
        truncated: keep < k_keep,
    })
}

/// BPDN with the weighted surrogate ball and the weighted dual norm for `v′`.
/// With `ω = 1` this is exactly [`crate::pareto::solve_bpdn`].
pub fn solve_weighted_bpdn(
    eta: f64,
    weights: &SubspaceWeights,
    problem: &Problem,
    config: &SolverConfig,
) -> Result<(FactorPair, ParetoTrace)> {
    let run = solve_weighted_bpdn_run(eta, weights, problem, config)?;
    Ok((run.fp, run.trace))
}

pub fn solve_weighted_bpdn_run(
    eta: f64,
    weights: &SubspaceWeights,
    problem: &Problem,
    config: &SolverConfig,
) -> Result<BpdnRun> {
    let (n, m) = problem.shape();
    if weights.u.rows() != n || weights.v.rows() != m {
        return Err(Error::DimensionMismatch {
            context: "weights vs problem",
            expected: (n, m),
            got: (weights.u.rows(), weights.v.rows()),
        });
    }
    if weights.omega == 1.0 {
        return solve_bpdn_run(eta, problem, config);
    }
    solve_weighted_run(eta, weights, problem, config)
}

/// One slice of a stack: a tag (e.g. frequency), data and optional truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Slice {
    pub label: f64,
    pub obs: Observations,
    pub truth: Option<DenseMatrix>,
}

/// Slices sharing one shape, ordered by strictly increasing label.
#[derive(Debug, Clone, PartialEq)]
pub struct SliceStack {
    slices: Vec<Slice>,
}

impl SliceStack {
    pub fn new(slices: Vec<Slice>) -> Result<Self> {
        if let Some(first) = slices.first() {
            let shape = first.obs.shape();
            for w in slices.windows(2) {
                if !(w[1].label > w[0].label) {
                    return Err(Error::InvalidConfig("slice labels must increase strictly".into()));
                }
            }
            for s in &slices {
                if s.obs.shape() != shape || s.truth.as_ref().is_some_and(|t| t.shape() != shape) {
                    return Err(Error::DimensionMismatch {
                        context: "slice shape",
                        expected: shape,
                        got: s.obs.shape(),
                    });
                }
            }
        }
        Ok(Self { slices })
    }

    pub fn slices(&self) -> &[Slice] {
        &self.slices
    }

    pub fn len(&self) -> usize {
        self.slices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slices.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContinuationOptions {
    pub omega: f64,
    pub penalty: Penalty,
    /// Subspace size passed on; defaults to the previous slice's factor rank.
    pub k_keep: Option<usize>,
    /// Also solve every slice unweighted and report the SNR difference.
    pub compare_unweighted: bool,
}

impl Default for ContinuationOptions {
    fn default() -> Self {
        Self {
            omega: DEFAULT_OMEGA,
            penalty: Penalty::TwoNorm,
            k_keep: None,
            compare_unweighted: true,
        }
    }
}

/// Per-slice line of a continuation report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinuationEntry {
    pub label: f64,
    #[serde(with = "db_serde::option")]
    pub snr_db: Option<f64>,
    pub eta: f64,
    pub tau_final: f64,
    pub rank: usize,
    pub weighted: bool,
    pub status: Option<ParetoStatus>,
    pub inner_iterations: usize,
    #[serde(with = "db_serde::option")]
    pub unweighted_snr_db: Option<f64>,
    pub unweighted_inner_iterations: Option<usize>,
    #[serde(with = "db_serde::option")]
    pub delta_db: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct ContinuationResult {
    pub solutions: Vec<Option<FactorPair>>,
    pub report: Vec<ContinuationEntry>,
}

impl ContinuationResult {
    /// Mean SNR of the continuation solves over slices with truth.
    pub fn mean_snr(&self) -> Option<f64> {
        mean(self.report.iter().filter_map(|e| e.snr_db))
    }

    pub fn mean_unweighted_snr(&self) -> Option<f64> {
        mean(self.report.iter().filter_map(|e| e.unweighted_snr_db))
    }
}

fn mean(it: impl Iterator<Item = f64>) -> Option<f64> {
    let v: Vec<f64> = it.collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Solves slice 1 unweighted, then each later slice weighted with the
/// subspaces of the previous solution. A failed slice is recorded and the
/// next one falls back to an unweighted solve.
pub fn frequency_continuation(
    stack: &SliceStack,
    etas: &[f64],
    opts: &ContinuationOptions,
    config: &SolverConfig,
) -> Result<ContinuationResult> {
    if stack.is_empty() {
        return Err(Error::InvalidConfig("slice stack is empty".into()));
    }
    if etas.len() != stack.len() {
        return Err(Error::InvalidConfig(format!(
            "{} targets for {} slices",
            etas.len(),
            stack.len()
        )));
    }
    let mut solutions = Vec::with_capacity(stack.len());
    let mut report = Vec::with_capacity(stack.len());
    let mut previous: Option<FactorPair> = None;
    for (slice, &eta) in stack.slices().iter().zip(etas) {
        let problem = Problem::from_observations(&slice.obs, opts.penalty);
        let weights = previous
            .as_ref()
            .map(|fp| {
                let k = opts.k_keep.unwrap_or(fp.rank()).min(fp.rank());
                SubspaceWeights::from_factor_subspaces(fp, k, opts.omega)
            })
            .transpose();
        let (weights, mut error) = match weights {
            Ok(w) => (w, None),
            Err(e) => (None, Some(e.to_string())),
        };
        let result = match &weights {
            Some(w) => solve_weighted_bpdn_run(eta, w, &problem, config),
            None => solve_bpdn_run(eta, &problem, config),
        };
        let snr = |run: &BpdnRun| {
            slice
                .truth
                .as_ref()
                .and_then(|t| crate::data::snr_db(t, &run.fp.form_product()).ok())
        };
        let mut entry = ContinuationEntry {
            label: slice.label,
            snr_db: None,
            eta,
            tau_final: f64::NAN,
            rank: config.factor_rank,
            weighted: weights.is_some(),
            status: None,
            inner_iterations: 0,
            unweighted_snr_db: None,
            unweighted_inner_iterations: None,
            delta_db: None,
            error: None,
        };
        match result {
            Ok(run) => {
                entry.snr_db = snr(&run);
                entry.tau_final = run.trace.tau_final();
                entry.rank = run.fp.rank();
                entry.status = Some(run.trace.status);
                entry.inner_iterations = run.trace.inner_iterations_total();
                previous = Some(run.fp.clone());
                solutions.push(Some(run.fp));
            }
            Err(e) => {
                error.get_or_insert(e.to_string());
                previous = None;
                solutions.push(None);
            }
        }
        if opts.compare_unweighted {
            if entry.weighted {
                if let Ok(base) = solve_bpdn_run(eta, &problem, config) {
                    entry.unweighted_snr_db = snr(&base);
                    entry.unweighted_inner_iterations = Some(base.trace.inner_iterations_total());
                }
            } else {
                entry.unweighted_snr_db = entry.snr_db;
                entry.unweighted_inner_iterations = Some(entry.inner_iterations);
            }
            entry.delta_db = match (entry.snr_db, entry.unweighted_snr_db) {
                (Some(a), Some(b)) if a.is_finite() && b.is_finite() => Some(a - b),
                _ => None,
            };
        }
        entry.error = error;
        report.push(entry);
    }
    Ok(ContinuationResult { solutions, report })
}

/// Cosines of the principal angles between the column spans of two
/// orthonormal bases, largest first.
pub fn principal_cosines(a: &DenseMatrix, b: &DenseMatrix) -> Result<Vec<f64>> {
    Ok(a.transpose_matmul(b)?.singular_values())
}

/// `‖Qx‖` for a vector, used by property checks.
pub fn weighted_norm(w: &SubspaceWeights, x: &[f64]) -> f64 {
    let mut y = x.to_vec();
    weight_vec(&w.u, w.omega - 1.0, &mut y);
    dot(&y, &y).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeded_rng;

    fn e1(n: usize) -> DenseMatrix {
        DenseMatrix::from_fn(n, 1, |i, _| if i == 0 { 1.0 } else { 0.0 })
    }

    #[test]
    fn direct_formula_example() {
        let w = SubspaceWeights::new(e1(2), e1(1), 0.5).unwrap();
        let m = DenseMatrix::from_rows(&[[2.0], [2.0]]).unwrap();
        let qm = apply_weight(&w, Side::Row, false, &m).unwrap();
        assert_eq!(qm, DenseMatrix::from_rows(&[[1.0], [2.0]]).unwrap());
    }

    #[test]
    fn unit_omega_is_identity() {
        let mut rng = seeded_rng(1);
        let fp = FactorPair::gaussian(5, 4, 2, &mut rng);
        let w = SubspaceWeights::from_factor_subspaces(&fp, 2, 1.0).unwrap();
        let m = FactorPair::gaussian(5, 4, 3, &mut rng);
        for inv in [false, true] {
            assert_eq!(apply_weight(&w, Side::Row, inv, m.l()).unwrap(), *m.l());
            let mt = m.r().transpose();
            assert_eq!(apply_weight(&w, Side::Col, inv, &mt).unwrap(), mt);
        }
    }

    #[test]
    fn rejects_bad_weights() {
        let u = DenseMatrix::from_rows(&[[1.0], [1.0]]).unwrap();
        assert!(matches!(
            SubspaceWeights::new(u, e1(2), 0.5),
            Err(Error::NotOrthonormal { .. })
        ));
        assert!(SubspaceWeights::new(e1(2), e1(2), 0.0).is_err());
        assert!(SubspaceWeights::new(e1(2), e1(2), 1.5).is_err());
    }

    #[test]
    fn extract_from_diagonal() {
        let l = DenseMatrix::from_rows(&[[3f64.sqrt(), 0.0], [0.0, 1.0]]).unwrap();
        let fp = FactorPair::new(l.clone(), l).unwrap();
        let s = extract_subspaces(&fp, 1).unwrap();
        assert!((s.u.get(0, 0).abs() - 1.0).abs() < 1e-12);
        assert!(s.u.get(1, 0).abs() < 1e-12);
        assert!((s.sigma[0] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn extract_flags_truncation() {
        let mut rng = seeded_rng(2);
        let fp = FactorPair::gaussian(6, 5, 1, &mut rng);
        let fp = fp.append_columns(&DenseMatrix::zeros(6, 1), &DenseMatrix::zeros(5, 1)).unwrap();
        let s = extract_subspaces(&fp, 2).unwrap();
        assert!(s.truncated);
        assert_eq!(s.u.cols(), 1);
    }

    #[test]
    fn slice_stack_validation() {
        let obs = Observations::new((2, 2), vec![], vec![]).unwrap();
        let s = |label| Slice {
            label,
            obs: obs.clone(),
            truth: None,
        };
        assert!(SliceStack::new(vec![s(1.0), s(2.0)]).is_ok());
        assert!(SliceStack::new(vec![s(2.0), s(2.0)]).is_err());
    }
}
