//! Spectral projected gradient (SPG) for the factored LASSO subproblem
//!
//! `min ρ(A(L·Rᵀ) − b)  s.t.  (L, R) in a surrogate ball`
//!
//! and, on the matrix itself with the nuclear-norm ball, for the convex
//! reference problem.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::factor::FactorPair;
use crate::linop::{power_start, power_steps, sigma_max_from, LinOp, SparseMatrix, POWER_MAX_ITERS, POWER_TOLERANCE};
use crate::matrix::{dot, norm2, DenseMatrix};
use crate::obs::Observations;
use crate::ops::{apply_adjoint, apply_forward, Operator};
use crate::penalty::Penalty;
use crate::project::{
    lagrange_function, project_frobenius_flat, project_nuclear_ball,
    project_weighted_frobenius_ball, WeightedBallSpec,
};
use crate::weight::WeightedDual;

/// Power steps per iteration for the cheap lower estimate of the gap.
const QUICK_POWER_STEPS: usize = 2;

pub const STEP_MIN: f64 = 1e-10;
pub const STEP_MAX: f64 = 1e10;
pub const ARMIJO_CONSTANT: f64 = 1e-4;
pub const BACKTRACK_FACTOR: f64 = 0.5;
/// Relative objective change over `memory` iterations treated as a stall.
pub const STAGNATION_TOLERANCE: f64 = 1e-9;
const MAX_BACKTRACKS: usize = 60;

/// Measurement operator, data and penalty of one completion problem.
#[derive(Debug, Clone)]
pub struct Problem {
    op: Operator,
    b: Vec<f64>,
    penalty: Penalty,
    gather: Option<Vec<usize>>,
}

impl Problem {
    pub fn new(op: Operator, b: Vec<f64>, penalty: Penalty) -> Result<Self> {
        if b.len() != op.output_len() {
            return Err(Error::DimensionMismatch {
                context: "data vector",
                expected: (op.output_len(), 1),
                got: (b.len(), 1),
            });
        }
        if b.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("data vector"));
        }
        let gather = op.gather_indices();
        Ok(Self { op, b, penalty, gather })
    }

    pub fn from_observations(obs: &Observations, penalty: Penalty) -> Self {
        Self::new(obs.operator(), obs.values().to_vec(), penalty).expect("observations are consistent")
    }

    pub fn op(&self) -> &Operator {
        &self.op
    }

    pub fn b(&self) -> &[f64] {
        &self.b
    }

    pub fn penalty(&self) -> Penalty {
        self.penalty
    }

    pub fn with_penalty(&self, penalty: Penalty) -> Self {
        Self { penalty, ..self.clone() }
    }

    /// Shape of the unknown matrix.
    pub fn shape(&self) -> (usize, usize) {
        self.op.input_shape()
    }

    /// `A(L·Rᵀ) − b`.
    pub fn residual(&self, fp: &FactorPair) -> Result<Vec<f64>> {
        if fp.shape() != self.shape() {
            return Err(Error::DimensionMismatch {
                context: "factor shape",
                expected: self.shape(),
                got: fp.shape(),
            });
        }
        let k = fp.rank();
        let mut r = vec![0.0; self.b.len()];
        self.factored_residual(fp.l().as_slice(), fp.r().as_slice(), k, &mut r);
        Ok(r)
    }

    /// `A(X) − b`.
    pub fn residual_dense(&self, x: &DenseMatrix) -> Result<Vec<f64>> {
        let mut pred = apply_forward(&self.op, x)?;
        pred.iter_mut().zip(&self.b).for_each(|(p, b)| *p -= b);
        Ok(pred)
    }

    pub fn misfit(&self, r: &[f64]) -> f64 {
        self.penalty.misfit_unchecked(r)
    }

    /// `ρ(−b)`, the misfit of the zero matrix.
    pub fn zero_misfit(&self) -> f64 {
        let neg: Vec<f64> = self.b.iter().map(|v| -v).collect();
        self.penalty.misfit_unchecked(&neg)
    }

    /// `A*(∇ρ(r))` as an operator, sparse whenever `A` is a coordinate gather.
    pub fn gradient_matrix(&self, r: &[f64]) -> Result<GradientMatrix> {
        let g = self.penalty.rho_gradient(r)?;
        Ok(self.adjoint_matrix(&g))
    }

    pub(crate) fn adjoint_matrix(&self, y: &[f64]) -> GradientMatrix {
        let (n, m) = self.shape();
        match &self.gather {
            Some(idx) => {
                let entries = idx.iter().zip(y).map(|(&f, &v)| (f / m, f % m, v)).collect();
                GradientMatrix::Sparse(SparseMatrix::new(n, m, entries).expect("gather cells in range"))
            }
            None => GradientMatrix::Dense(apply_adjoint(&self.op, y).expect("length checked")),
        }
    }

    fn factored_residual(&self, l: &[f64], r: &[f64], k: usize, out: &mut [f64]) {
        let m = self.shape().1;
        match &self.gather {
            Some(idx) => {
                for ((o, &f), &b) in out.iter_mut().zip(idx).zip(&self.b) {
                    let (i, j) = (f / m, f % m);
                    *o = dot(&l[i * k..(i + 1) * k], &r[j * k..(j + 1) * k]) - b;
                }
            }
            None => {
                let n = self.shape().0;
                let fp = FactorPair::from_flat(n, m, k, &[l, r].concat());
                let x = fp.form_product();
                let pred = apply_forward(&self.op, &x).expect("shape checked");
                for ((o, p), b) in out.iter_mut().zip(pred).zip(&self.b) {
                    *o = p - b;
                }
            }
        }
    }

    /// Writes `(A*(g)·R, A*(g)ᵀ·L)` into `gl`, `gr`.
    fn factored_gradient(&self, l: &[f64], r: &[f64], k: usize, g: &[f64], gl: &mut [f64], gr: &mut [f64]) {
        gl.fill(0.0);
        gr.fill(0.0);
        let m = self.shape().1;
        match &self.gather {
            Some(idx) => {
                for (&f, &gv) in idx.iter().zip(g) {
                    if gv == 0.0 {
                        continue;
                    }
                    let (i, j) = (f / m, f % m);
                    let (li, rj) = (&l[i * k..(i + 1) * k], &r[j * k..(j + 1) * k]);
                    for c in 0..k {
                        gl[i * k + c] += gv * rj[c];
                        gr[j * k + c] += gv * li[c];
                    }
                }
            }
            None => {
                let n = self.shape().0;
                let gm = apply_adjoint(&self.op, g).expect("length checked");
                let lm = DenseMatrix::from_vec_unchecked(n, k, l.to_vec());
                let rm = DenseMatrix::from_vec_unchecked(m, k, r.to_vec());
                gl.copy_from_slice(gm.matmul(&rm).expect("shapes").as_slice());
                gr.copy_from_slice(gm.transpose_matmul(&lm).expect("shapes").as_slice());
            }
        }
    }

    fn forward_flat(&self, x: &[f64], out: &mut [f64]) {
        match &self.gather {
            Some(idx) => {
                for ((o, &f), &b) in out.iter_mut().zip(idx).zip(&self.b) {
                    *o = x[f] - b;
                }
            }
            None => {
                let (n, m) = self.shape();
                let xm = DenseMatrix::from_vec_unchecked(n, m, x.to_vec());
                let pred = apply_forward(&self.op, &xm).expect("shape checked");
                for ((o, p), b) in out.iter_mut().zip(pred).zip(&self.b) {
                    *o = p - b;
                }
            }
        }
    }

    fn adjoint_flat(&self, y: &[f64], out: &mut [f64]) {
        match &self.gather {
            Some(idx) => {
                out.fill(0.0);
                for (&f, &v) in idx.iter().zip(y) {
                    out[f] += v;
                }
            }
            None => out.copy_from_slice(apply_adjoint(&self.op, y).expect("length checked").as_slice()),
        }
    }
}

/// `A*(y)` in sparse or dense form.
#[derive(Debug, Clone)]
pub enum GradientMatrix {
    Sparse(SparseMatrix),
    Dense(DenseMatrix),
}

impl GradientMatrix {
    pub fn to_dense(&self) -> DenseMatrix {
        match self {
            GradientMatrix::Sparse(s) => s.to_dense(),
            GradientMatrix::Dense(d) => d.clone(),
        }
    }
}

impl LinOp for GradientMatrix {
    fn nrows(&self) -> usize {
        match self {
            GradientMatrix::Sparse(s) => s.nrows(),
            GradientMatrix::Dense(d) => d.nrows(),
        }
    }

    fn ncols(&self) -> usize {
        match self {
            GradientMatrix::Sparse(s) => s.ncols(),
            GradientMatrix::Dense(d) => d.ncols(),
        }
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        match self {
            GradientMatrix::Sparse(s) => s.apply(x, y),
            GradientMatrix::Dense(d) => d.apply(x, y),
        }
    }

    fn apply_t(&self, y: &[f64], x: &mut [f64]) {
        match self {
            GradientMatrix::Sparse(s) => s.apply_t(y, x),
            GradientMatrix::Dense(d) => d.apply_t(y, x),
        }
    }
}

/// The feasible set of the factored subproblem.
#[derive(Debug, Clone)]
pub enum Projector {
    Frobenius { tau: f64 },
    Weighted(WeightedBallSpec),
    /// No constraint: plain factored least squares.
    Unconstrained,
}

impl Projector {
    pub fn tau(&self) -> f64 {
        match self {
            Projector::Frobenius { tau } => *tau,
            Projector::Weighted(s) => s.tau,
            Projector::Unconstrained => f64::INFINITY,
        }
    }

    /// Constraint function value at `fp`.
    pub fn constraint(&self, fp: &FactorPair) -> f64 {
        match self {
            Projector::Weighted(s) => lagrange_function(fp, &s.weights).value(0.0),
            _ => fp.frobenius_surrogate(),
        }
    }

    pub fn project(&self, fp: &FactorPair) -> Result<FactorPair> {
        let mut z = fp.to_flat();
        let (n, m) = fp.shape();
        self.project_flat(&mut z, n, m, fp.rank())?;
        Ok(FactorPair::from_flat(n, m, fp.rank(), &z))
    }

    fn project_flat(&self, z: &mut [f64], n: usize, m: usize, k: usize) -> Result<()> {
        match self {
            Projector::Frobenius { tau } => project_frobenius_flat(z, *tau),
            Projector::Weighted(spec) => {
                let fp = FactorPair::from_flat(n, m, k, z);
                let p = project_weighted_frobenius_ball(&fp, spec)?;
                z.copy_from_slice(&p.to_flat());
            }
            Projector::Unconstrained => {}
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpgOptions {
    /// Relative optimality tolerance: stop once the duality gap is below
    /// `tol·f`, or, without a constraint, once `‖P(z − g) − z‖ ≤ tol·max(1, f₀)`.
    pub tol: f64,
    pub max_iters: usize,
    /// Nonmonotone line-search memory.
    pub memory: usize,
    /// Stop as soon as the misfit drops to this value.
    pub target: Option<f64>,
}

impl SpgOptions {
    pub fn new(tol: f64, max_iters: usize) -> Self {
        Self {
            tol,
            max_iters,
            memory: 10,
            target: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpgStatus {
    /// Projected gradient below tolerance.
    Optimal,
    /// Objective stopped changing.
    Stagnated,
    /// Misfit reached the requested target.
    TargetReached,
    IterationLimit,
    /// No descent direction left at working precision.
    NoDescent,
}

/// One accepted SPG step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpgRecord {
    pub iteration: usize,
    pub objective: f64,
    pub step: f64,
    pub surrogate: f64,
}

/// Result of a factored subproblem solve.
///
/// `objective` is the misfit `ρ(r) − ρ(0)` of `residual = A(L·Rᵀ) − b`.
#[derive(Debug, Clone)]
pub struct SubproblemState {
    pub fp: FactorPair,
    pub residual: Vec<f64>,
    pub objective: f64,
    pub projected_gradient_norm: f64,
    pub iterations_used: usize,
    pub function_evaluations: usize,
    pub status: SpgStatus,
}

impl SubproblemState {
    /// Whether the solve ended at (approximate) optimality.
    pub fn converged(&self) -> bool {
        !matches!(self.status, SpgStatus::IterationLimit)
    }
}

pub fn spg_solve(
    problem: &Problem,
    projector: &Projector,
    init: &FactorPair,
    opts: &SpgOptions,
) -> Result<SubproblemState> {
    solve_factored(problem, projector, init, opts, None)
}

/// [`spg_solve`] reporting every accepted step to `sink`.
pub fn spg_solve_traced(
    problem: &Problem,
    projector: &Projector,
    init: &FactorPair,
    opts: &SpgOptions,
    sink: &mut dyn FnMut(&SpgRecord),
) -> Result<SubproblemState> {
    solve_factored(problem, projector, init, opts, Some(sink))
}

fn solve_factored(
    problem: &Problem,
    projector: &Projector,
    init: &FactorPair,
    opts: &SpgOptions,
    sink: Option<&mut dyn FnMut(&SpgRecord)>,
) -> Result<SubproblemState> {
    if init.shape() != problem.shape() {
        return Err(Error::DimensionMismatch {
            context: "initial factors",
            expected: problem.shape(),
            got: init.shape(),
        });
    }
    if !(opts.tol > 0.0) || opts.memory == 0 {
        return Err(Error::InvalidConfig("SPG needs tol > 0 and memory >= 1".into()));
    }
    let (n, m) = init.shape();
    let k = init.rank();
    let mut obj = FactoredObjective {
        problem,
        projector,
        n,
        m,
        k,
        resid: vec![0.0; problem.b().len()],
        gres: vec![0.0; problem.b().len()],
        dual_vec: power_start(m),
    };
    let out = run_spg(&mut obj, init.to_flat(), opts, sink)?;
    let fp = FactorPair::from_flat(n, m, k, &out.z);
    let residual = problem.residual(&fp)?;
    Ok(SubproblemState {
        objective: problem.misfit(&residual),
        fp,
        residual,
        projected_gradient_norm: out.pg,
        iterations_used: out.iterations,
        function_evaluations: out.fevals,
        status: out.status,
    })
}

/// Result of the convex reference solve on `X` itself.
#[derive(Debug, Clone)]
pub struct ConvexState {
    pub x: DenseMatrix,
    pub residual: Vec<f64>,
    pub objective: f64,
    pub projected_gradient_norm: f64,
    pub iterations_used: usize,
    pub status: SpgStatus,
}

/// `min ρ(A(X) − b) s.t. ‖X‖_* ≤ τ` by SPG with the SVD-based projection.
pub fn solve_convex_lasso(
    problem: &Problem,
    tau: f64,
    init: Option<&DenseMatrix>,
    opts: &SpgOptions,
) -> Result<ConvexState> {
    let (n, m) = problem.shape();
    let z = match init {
        Some(x) if x.shape() == (n, m) => x.as_slice().to_vec(),
        Some(x) => {
            return Err(Error::DimensionMismatch {
                context: "convex warm start",
                expected: (n, m),
                got: x.shape(),
            })
        }
        None => vec![0.0; n * m],
    };
    let mut obj = ConvexObjective {
        problem,
        tau,
        n,
        m,
        resid: vec![0.0; problem.b().len()],
        gres: vec![0.0; problem.b().len()],
        dual_vec: power_start(m),
    };
    let out = run_spg(&mut obj, z, opts, None)?;
    let x = DenseMatrix::from_vec_unchecked(n, m, out.z);
    let residual = problem.residual_dense(&x)?;
    Ok(ConvexState {
        objective: problem.misfit(&residual),
        x,
        residual,
        projected_gradient_norm: out.pg,
        iterations_used: out.iterations,
        status: out.status,
    })
}

/// A smooth objective over flat coordinates with a projection.
trait SmoothProblem {
    fn value_grad(&mut self, z: &[f64], g: &mut [f64]) -> f64;
    fn project(&mut self, z: &mut [f64]) -> Result<()>;
    fn misfit(&self, working: f64) -> f64;
    fn constraint(&self, z: &[f64]) -> f64;
    /// Frank–Wolfe duality gap `⟨G, X⟩ + τ·‖G‖_dual` at the point of the last
    /// `value_grad` call, `G` the gradient at `X`. With `exact = false` only a
    /// lower estimate. `None` when the feasible set is unbounded.
    fn gap(&mut self, exact: bool) -> Option<f64>;
}

/// `σ_max(op)`: the exact value, or a cheap lower estimate.
fn dual_norm(op: &dyn LinOp, warm: &mut [f64], exact: bool) -> f64 {
    if exact {
        sigma_max_from(op, warm, POWER_TOLERANCE, POWER_MAX_ITERS).value
    } else {
        power_steps(op, warm, QUICK_POWER_STEPS)
    }
}

/// `⟨∇ρ_w(r), r + b⟩ = ⟨G, X⟩`.
fn gradient_inner(gres: &[f64], resid: &[f64], b: &[f64]) -> f64 {
    gres.iter().zip(resid).zip(b).map(|((g, r), b)| g * (r + b)).sum()
}

struct FactoredObjective<'a> {
    problem: &'a Problem,
    projector: &'a Projector,
    n: usize,
    m: usize,
    k: usize,
    resid: Vec<f64>,
    gres: Vec<f64>,
    dual_vec: Vec<f64>,
}

impl SmoothProblem for FactoredObjective<'_> {
    fn value_grad(&mut self, z: &[f64], g: &mut [f64]) -> f64 {
        let split = self.n * self.k;
        let (l, r) = z.split_at(split);
        self.problem.factored_residual(l, r, self.k, &mut self.resid);
        let f = self.problem.penalty.working_value_grad(&self.resid, &mut self.gres);
        let (gl, gr) = g.split_at_mut(split);
        self.problem.factored_gradient(l, r, self.k, &self.gres, gl, gr);
        f
    }

    fn project(&mut self, z: &mut [f64]) -> Result<()> {
        self.projector.project_flat(z, self.n, self.m, self.k)
    }

    fn misfit(&self, working: f64) -> f64 {
        self.problem.penalty.misfit_from_working(working)
    }

    fn constraint(&self, z: &[f64]) -> f64 {
        match self.projector {
            Projector::Weighted(s) => {
                let fp = FactorPair::from_flat(self.n, self.m, self.k, z);
                lagrange_function(&fp, &s.weights).value(0.0)
            }
            _ => 0.5 * dot(z, z),
        }
    }

    fn gap(&mut self, exact: bool) -> Option<f64> {
        let tau = self.projector.tau();
        if !tau.is_finite() {
            return None;
        }
        let inner = gradient_inner(&self.gres, &self.resid, self.problem.b());
        let gm = self.problem.adjoint_matrix(&self.gres);
        let sigma = match self.projector {
            Projector::Weighted(spec) => {
                let op = WeightedDual::new(&gm, &spec.weights).ok()?;
                dual_norm(&op, &mut self.dual_vec, exact)
            }
            _ => dual_norm(&gm, &mut self.dual_vec, exact),
        };
        Some(inner + tau * sigma)
    }
}

struct ConvexObjective<'a> {
    problem: &'a Problem,
    tau: f64,
    n: usize,
    m: usize,
    resid: Vec<f64>,
    gres: Vec<f64>,
    dual_vec: Vec<f64>,
}

impl SmoothProblem for ConvexObjective<'_> {
    fn value_grad(&mut self, z: &[f64], g: &mut [f64]) -> f64 {
        self.problem.forward_flat(z, &mut self.resid);
        let f = self.problem.penalty.working_value_grad(&self.resid, &mut self.gres);
        self.problem.adjoint_flat(&self.gres, g);
        f
    }

    fn project(&mut self, z: &mut [f64]) -> Result<()> {
        let x = DenseMatrix::from_vec_unchecked(self.n, self.m, z.to_vec());
        z.copy_from_slice(project_nuclear_ball(&x, self.tau).as_slice());
        Ok(())
    }

    fn misfit(&self, working: f64) -> f64 {
        self.problem.penalty.misfit_from_working(working)
    }

    fn constraint(&self, z: &[f64]) -> f64 {
        DenseMatrix::from_vec_unchecked(self.n, self.m, z.to_vec()).nuclear_norm()
    }

    fn gap(&mut self, exact: bool) -> Option<f64> {
        let inner = gradient_inner(&self.gres, &self.resid, self.problem.b());
        let gm = self.problem.adjoint_matrix(&self.gres);
        Some(inner + self.tau * dual_norm(&gm, &mut self.dual_vec, exact))
    }
}

struct EngineOutput {
    z: Vec<f64>,
    pg: f64,
    iterations: usize,
    fevals: usize,
    status: SpgStatus,
}

/// `‖P(z − g) − z‖`, using `buf` as scratch.
fn projected_gradient<P: SmoothProblem>(p: &mut P, z: &[f64], g: &[f64], buf: &mut [f64]) -> Result<f64> {
    for ((b, zi), gi) in buf.iter_mut().zip(z).zip(g) {
        *b = zi - gi;
    }
    p.project(buf)?;
    Ok(buf.iter().zip(z).map(|(b, zi)| (b - zi) * (b - zi)).sum::<f64>().sqrt())
}

fn run_spg<P: SmoothProblem>(
    p: &mut P,
    mut z: Vec<f64>,
    opts: &SpgOptions,
    mut sink: Option<&mut dyn FnMut(&SpgRecord)>,
) -> Result<EngineOutput> {
    p.project(&mut z)?;
    let len = z.len();
    let mut g = vec![0.0; len];
    let mut f = p.value_grad(&z, &mut g);
    let mut fevals = 1;
    if !f.is_finite() {
        return Err(Error::Divergence { iterations: 0 });
    }
    let mem = opts.memory;
    let mut hist: VecDeque<f64> = VecDeque::with_capacity(mem + 1);
    hist.push_back(f);
    let gnorm = norm2(&g);
    let mut alpha = if gnorm > 0.0 { (1.0 / gnorm).clamp(STEP_MIN, STEP_MAX) } else { 1.0 };
    let scale = f.abs().max(1.0);
    let mut d = vec![0.0; len];
    let mut trial = vec![0.0; len];
    let mut gt = vec![0.0; len];
    let mut iter = 0;
    let mut pg;
    let status = loop {
        pg = projected_gradient(p, &z, &g, &mut d)?;
        if opts.target.is_some_and(|t| p.misfit(f) <= t) {
            break SpgStatus::TargetReached;
        }
        let allowed = opts.tol * f;
        let optimal = pg == 0.0
            || match p.gap(false) {
                Some(lower) => lower <= allowed && p.gap(true).is_some_and(|g| g <= allowed),
                None => pg <= opts.tol * scale,
            };
        if optimal {
            break SpgStatus::Optimal;
        }
        if iter >= opts.max_iters {
            break SpgStatus::IterationLimit;
        }
        if hist.len() == mem + 1 {
            let old = hist[0];
            if (old - f).abs() <= STAGNATION_TOLERANCE * f.abs() {
                break SpgStatus::Stagnated;
            }
        }

        for ((di, zi), gi) in d.iter_mut().zip(&z).zip(&g) {
            *di = zi - alpha * gi;
        }
        p.project(&mut d)?;
        for (di, zi) in d.iter_mut().zip(&z) {
            *di -= zi;
        }
        let gtd = dot(&g, &d);
        if !(gtd < 0.0) {
            break SpgStatus::NoDescent;
        }
        let fmax = hist.iter().rev().take(mem).copied().fold(f64::NEG_INFINITY, f64::max);

        let mut lambda = 1.0;
        let mut accepted = None;
        let mut any_finite = false;
        for _ in 0..MAX_BACKTRACKS {
            for ((t, zi), di) in trial.iter_mut().zip(&z).zip(&d) {
                *t = zi + lambda * di;
            }
            let ft = p.value_grad(&trial, &mut gt);
            fevals += 1;
            if ft.is_finite() {
                any_finite = true;
                if ft <= fmax + ARMIJO_CONSTANT * lambda * gtd {
                    accepted = Some(ft);
                    break;
                }
            }
            lambda *= BACKTRACK_FACTOR;
        }
        let Some(ft) = accepted else {
            if !any_finite {
                return Err(Error::Divergence { iterations: iter });
            }
            break SpgStatus::NoDescent;
        };

        let (mut sts, mut sty) = (0.0, 0.0);
        for i in 0..len {
            let s = trial[i] - z[i];
            sts += s * s;
            sty += s * (gt[i] - g[i]);
        }
        alpha = if sty > 0.0 { (sts / sty).clamp(STEP_MIN, STEP_MAX) } else { STEP_MAX };
        std::mem::swap(&mut z, &mut trial);
        std::mem::swap(&mut g, &mut gt);
        f = ft;
        iter += 1;
        hist.push_back(f);
        if hist.len() > mem + 1 {
            hist.pop_front();
        }
        if let Some(s) = sink.as_mut() {
            s(&SpgRecord {
                iteration: iter,
                objective: p.misfit(f),
                step: lambda * sts.sqrt(),
                surrogate: p.constraint(&z),
            });
        }
    };
    Ok(EngineOutput {
        z,
        pg,
        iterations: iter,
        fevals,
        status,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeded_rng;

    fn full_problem(x: &DenseMatrix, penalty: Penalty) -> Problem {
        let (n, m) = x.shape();
        let idx = (0..n).flat_map(|i| (0..m).map(move |j| (i, j))).collect();
        Problem::from_observations(&Observations::sample(x, idx).unwrap(), penalty)
    }

    #[test]
    fn exact_start_returns_immediately() {
        let mut rng = seeded_rng(3);
        let fp = FactorPair::gaussian(5, 4, 2, &mut rng);
        let p = full_problem(&fp.form_product(), Penalty::TwoNorm);
        let proj = Projector::Frobenius { tau: fp.frobenius_surrogate() + 1.0 };
        let st = spg_solve(&p, &proj, &fp, &SpgOptions::new(1e-6, 100)).unwrap();
        assert_eq!(st.iterations_used, 0);
        assert_eq!(st.objective, 0.0);
    }

    #[test]
    fn zero_radius_gives_zero_factors() {
        let mut rng = seeded_rng(4);
        let x = FactorPair::gaussian(4, 4, 2, &mut rng).form_product();
        let p = full_problem(&x, Penalty::TwoNorm);
        let init = FactorPair::gaussian(4, 4, 2, &mut rng);
        let st = spg_solve(&p, &Projector::Frobenius { tau: 0.0 }, &init, &SpgOptions::new(1e-6, 100)).unwrap();
        assert_eq!(st.fp.frobenius_surrogate(), 0.0);
        assert!((st.objective - p.zero_misfit()).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_shapes() {
        let x = DenseMatrix::zeros(3, 3);
        let p = full_problem(&x, Penalty::TwoNorm);
        let init = FactorPair::zeros(2, 3, 1);
        assert!(spg_solve(&p, &Projector::Unconstrained, &init, &SpgOptions::new(1e-6, 10)).is_err());
    }
}
