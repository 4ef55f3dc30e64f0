//! BPDN by root finding on the Pareto curve `v(τ) = η`.
//!
//! The Newton iteration `τ⁺ = τ + (v(τ) − η)/|v′(τ)|` is run on LASSO
//! subproblems, each warm-started from the previous solution. The same loop
//! drives the factored solver, its weighted variant and the convex reference.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::factor::{FactorPair, RankGrowth, SolverConfig};
use crate::linop::{POWER_MAX_ITERS, POWER_TOLERANCE};
use crate::matrix::{norm2, DenseMatrix};
use crate::subsolve::{solve_convex_lasso, spg_solve, Problem, Projector, SpgOptions, SubproblemState};
use crate::weight::{weighted_gradient_norm, SubspaceWeights};

pub use crate::linop::{sigma_max, LinOp, SigmaMax};

/// Initial radius relative to `‖b‖₂`.
pub const INITIAL_TAU_FRACTION: f64 = 1e-4;
/// Relative size of the columns added by [`increase_rank`].
pub const GROWTH_SCALE: f64 = 1e-6;
/// Stall threshold used when rank growth is off.
pub const DEFAULT_STALL_THRESHOLD: f64 = 1e-2;
/// Smallest fraction of the dual-norm slope the root finder will step with.
pub const SECANT_SLOPE_FLOOR: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParetoStatus {
    Converged,
    BudgetExhausted,
    InfeasibleRank,
}

/// One sampled point of the Pareto curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParetoRecord {
    pub tau: f64,
    pub v: f64,
    /// `None` when the derivative was not needed (last point) or undefined.
    pub v_prime: Option<f64>,
    pub inner_iterations: usize,
    pub factor_rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParetoTrace {
    pub eta: f64,
    pub records: Vec<ParetoRecord>,
    pub status: ParetoStatus,
}

impl ParetoTrace {
    fn new(eta: f64) -> Self {
        Self {
            eta,
            records: Vec::new(),
            status: ParetoStatus::BudgetExhausted,
        }
    }

    pub fn tau_final(&self) -> f64 {
        self.records.last().map_or(0.0, |r| r.tau)
    }

    pub fn misfit_final(&self) -> f64 {
        self.records.last().map_or(f64::NAN, |r| r.v)
    }

    pub fn inner_iterations_total(&self) -> usize {
        self.records.iter().map(|r| r.inner_iterations).sum()
    }

    /// Number of τ values visited after the initial one.
    pub fn tau_updates(&self) -> usize {
        self.records.len().saturating_sub(1)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Output of a factored BPDN solve.
#[derive(Debug, Clone)]
pub struct BpdnRun {
    pub fp: FactorPair,
    pub residual: Vec<f64>,
    pub misfit: f64,
    pub trace: ParetoTrace,
}

/// `v(τ)` by one SPG solve, warm-started from `warm` (projected into the
/// ball) or from small Gaussian factors with surrogate `1e-4·τ`.
pub fn evaluate_value_function(
    tau: f64,
    warm: Option<&FactorPair>,
    problem: &Problem,
    config: &SolverConfig,
) -> Result<(f64, SubproblemState)> {
    if !(tau >= 0.0) {
        return Err(Error::InvalidConfig(format!("tau must be >= 0, got {tau}")));
    }
    config.validate()?;
    let init = match warm {
        Some(w) => w.clone(),
        None => {
            let (n, m) = problem.shape();
            let mut rng = crate::seeded_rng(config.seed);
            FactorPair::gaussian_with_surrogate(n, m, config.factor_rank, INITIAL_TAU_FRACTION * tau, &mut rng)
        }
    };
    let mut opts = SpgOptions::new(config.inner_tolerance.floor, config.max_inner_spg_iterations);
    opts.memory = config.line_search_memory;
    let st = spg_solve(problem, &Projector::Frobenius { tau }, &init, &opts)?;
    Ok((st.objective, st))
}

/// `v′(τ) = −σ_max(A*(∇ρ(r)))` at a subproblem solution.
pub fn evaluate_derivative(solution: &SubproblemState, problem: &Problem) -> Result<f64> {
    derivative_from_residual(&solution.residual, problem)
}

fn derivative_from_residual(residual: &[f64], problem: &Problem) -> Result<f64> {
    let g = problem.gradient_matrix(residual)?;
    let s = sigma_max(&g, POWER_TOLERANCE, POWER_MAX_ITERS);
    if !s.converged {
        return Err(Error::DerivativeUncertain { estimate: -s.value });
    }
    Ok(-s.value)
}

/// Appends `delta_k` Gaussian columns with `‖[l; r]‖_F = 1e-6·‖[L; R]‖_F`.
pub fn increase_rank<G: Rng + ?Sized>(fp: &FactorPair, delta_k: usize, rng: &mut G) -> Result<FactorPair> {
    if delta_k == 0 {
        return Err(Error::InvalidConfig("rank increment must be at least 1".into()));
    }
    let (n, m) = fp.shape();
    let l = DenseMatrix::from_fn(n, delta_k, |_, _| rng.sample(StandardNormal));
    let r = DenseMatrix::from_fn(m, delta_k, |_, _| rng.sample(StandardNormal));
    let new_norm = (l.frobenius_sq() + r.frobenius_sq()).sqrt();
    let old_norm = (2.0 * fp.frobenius_surrogate()).sqrt();
    let c = if new_norm > 0.0 { GROWTH_SCALE * old_norm / new_norm } else { 0.0 };
    fp.append_columns(&l.scale(c), &r.scale(c))
}

/// Factored BPDN: factors whose misfit is within `root_tolerance·η` of `η`.
pub fn solve_bpdn(eta: f64, problem: &Problem, config: &SolverConfig) -> Result<(FactorPair, ParetoTrace)> {
    let run = solve_bpdn_run(eta, problem, config)?;
    Ok((run.fp, run.trace))
}

/// [`solve_bpdn`] with the final residual and misfit.
pub fn solve_bpdn_run(eta: f64, problem: &Problem, config: &SolverConfig) -> Result<BpdnRun> {
    let mut sub = FactoredSub::new(problem, None, config);
    finish_factored(newton_loop(&mut sub, eta, config)?)
}

pub(crate) fn solve_weighted_run(
    eta: f64,
    weights: &SubspaceWeights,
    problem: &Problem,
    config: &SolverConfig,
) -> Result<BpdnRun> {
    let mut sub = FactoredSub::new(problem, Some(weights), config);
    finish_factored(newton_loop(&mut sub, eta, config)?)
}

fn finish_factored(run: LoopOutput<FactorPair>) -> Result<BpdnRun> {
    Ok(BpdnRun {
        fp: run.point,
        misfit: run.misfit,
        residual: run.residual,
        trace: run.trace,
    })
}

/// The same root finding on `min ρ(A(X) − b) s.t. ‖X‖_* ≤ τ` with SVD
/// projections. Used as a reference on small instances.
pub fn solve_convex_bpdn(eta: f64, problem: &Problem, config: &SolverConfig) -> Result<(DenseMatrix, ParetoTrace)> {
    let mut sub = ConvexSub { problem };
    let run = newton_loop(&mut sub, eta, config)?;
    Ok((run.point, run.trace))
}

/// Convex reference value `v(τ)` solved to tolerance `tol`.
pub fn evaluate_convex_value(tau: f64, problem: &Problem, tol: f64, max_iters: usize) -> Result<f64> {
    Ok(solve_convex_lasso(problem, tau, None, &SpgOptions::new(tol, max_iters))?.objective)
}

/// Unregularized factored least squares: SPG without a constraint, run from
/// the same small Gaussian start through all `max_inner_spg_iterations`
/// unless it stagnates or hits an exact stationary point.
pub fn fit_unregularized(problem: &Problem, config: &SolverConfig) -> Result<SubproblemState> {
    config.validate()?;
    let (n, m) = problem.shape();
    let mut rng = crate::seeded_rng(config.seed);
    let init = FactorPair::gaussian_with_surrogate(
        n,
        m,
        config.factor_rank,
        INITIAL_TAU_FRACTION * norm2(problem.b()),
        &mut rng,
    );
    let mut opts = SpgOptions::new(f64::EPSILON, config.max_inner_spg_iterations);
    opts.memory = config.line_search_memory;
    spg_solve(problem, &Projector::Unconstrained, &init, &opts)
}

struct Evaluation<P> {
    point: P,
    residual: Vec<f64>,
    v: f64,
    iterations: usize,
    converged: bool,
}

trait ParetoSubproblem {
    type Point: Clone;
    fn problem(&self) -> &Problem;
    fn zero(&self) -> Self::Point;
    fn initial(&mut self, tau0: f64) -> Self::Point;
    fn evaluate(&mut self, tau: f64, warm: &Self::Point, opts: &SpgOptions) -> Result<Evaluation<Self::Point>>;
    fn derivative(&self, eval: &Evaluation<Self::Point>) -> Result<f64>;
    fn rank(&self, p: &Self::Point) -> usize;
    fn grow(&mut self, p: &Self::Point, delta: usize) -> Result<Self::Point>;
}

struct FactoredSub<'a> {
    problem: &'a Problem,
    weights: Option<&'a SubspaceWeights>,
    k: usize,
    rng: ChaCha8Rng,
}

impl<'a> FactoredSub<'a> {
    fn new(problem: &'a Problem, weights: Option<&'a SubspaceWeights>, config: &SolverConfig) -> Self {
        Self {
            problem,
            weights,
            k: config.factor_rank,
            rng: crate::seeded_rng(config.seed),
        }
    }
}

impl ParetoSubproblem for FactoredSub<'_> {
    type Point = FactorPair;

    fn problem(&self) -> &Problem {
        self.problem
    }

    fn zero(&self) -> FactorPair {
        let (n, m) = self.problem.shape();
        FactorPair::zeros(n, m, self.k)
    }

    fn initial(&mut self, tau0: f64) -> FactorPair {
        let (n, m) = self.problem.shape();
        FactorPair::gaussian_with_surrogate(n, m, self.k, tau0, &mut self.rng)
    }

    fn evaluate(&mut self, tau: f64, warm: &FactorPair, opts: &SpgOptions) -> Result<Evaluation<FactorPair>> {
        let projector = match self.weights {
            Some(w) => Projector::Weighted(crate::project::WeightedBallSpec::new(tau, w.clone())?),
            None => Projector::Frobenius { tau },
        };
        let st = spg_solve(self.problem, &projector, warm, opts)?;
        Ok(Evaluation {
            converged: st.converged(),
            v: st.objective,
            iterations: st.iterations_used,
            residual: st.residual,
            point: st.fp,
        })
    }

    fn derivative(&self, eval: &Evaluation<FactorPair>) -> Result<f64> {
        match self.weights {
            Some(w) => {
                let g = self.problem.gradient_matrix(&eval.residual)?;
                let s = weighted_gradient_norm(&g, w)?;
                if !s.converged {
                    return Err(Error::DerivativeUncertain { estimate: -s.value });
                }
                Ok(-s.value)
            }
            None => derivative_from_residual(&eval.residual, self.problem),
        }
    }

    fn rank(&self, p: &FactorPair) -> usize {
        p.rank()
    }

    fn grow(&mut self, p: &FactorPair, delta: usize) -> Result<FactorPair> {
        self.k += delta;
        increase_rank(p, delta, &mut self.rng)
    }
}

struct ConvexSub<'a> {
    problem: &'a Problem,
}

impl ParetoSubproblem for ConvexSub<'_> {
    type Point = DenseMatrix;

    fn problem(&self) -> &Problem {
        self.problem
    }

    fn zero(&self) -> DenseMatrix {
        let (n, m) = self.problem.shape();
        DenseMatrix::zeros(n, m)
    }

    fn initial(&mut self, _tau0: f64) -> DenseMatrix {
        self.zero()
    }

    fn evaluate(&mut self, tau: f64, warm: &DenseMatrix, opts: &SpgOptions) -> Result<Evaluation<DenseMatrix>> {
        let st = solve_convex_lasso(self.problem, tau, Some(warm), opts)?;
        Ok(Evaluation {
            converged: !matches!(st.status, crate::subsolve::SpgStatus::IterationLimit),
            v: st.objective,
            iterations: st.iterations_used,
            residual: st.residual,
            point: st.x,
        })
    }

    fn derivative(&self, eval: &Evaluation<DenseMatrix>) -> Result<f64> {
        derivative_from_residual(&eval.residual, self.problem)
    }

    fn rank(&self, p: &DenseMatrix) -> usize {
        let s = p.singular_values();
        let top = s.first().copied().unwrap_or(0.0);
        s.iter().filter(|&&v| v > 1e-10 * top && v > 0.0).count()
    }

    fn grow(&mut self, p: &DenseMatrix, _delta: usize) -> Result<DenseMatrix> {
        Ok(p.clone())
    }
}

struct LoopOutput<P> {
    point: P,
    residual: Vec<f64>,
    misfit: f64,
    trace: ParetoTrace,
}

fn newton_loop<S: ParetoSubproblem>(sub: &mut S, eta: f64, cfg: &SolverConfig) -> Result<LoopOutput<S::Point>> {
    cfg.validate()?;
    if !(eta >= 0.0 && eta.is_finite()) {
        return Err(Error::InvalidConfig(format!("eta must be finite and >= 0, got {eta}")));
    }
    let problem = sub.problem();
    let rho0 = problem.zero_misfit();
    let neg_b: Vec<f64> = problem.b().iter().map(|v| -v).collect();
    let bnorm = norm2(problem.b());
    let mut trace = ParetoTrace::new(eta);
    if eta >= rho0 {
        let zero = sub.zero();
        trace.records.push(ParetoRecord {
            tau: 0.0,
            v: rho0,
            v_prime: None,
            inner_iterations: 0,
            factor_rank: sub.rank(&zero),
        });
        trace.status = ParetoStatus::Converged;
        return Ok(LoopOutput {
            point: zero,
            residual: neg_b,
            misfit: rho0,
            trace,
        });
    }
    let window = if eta > 0.0 { cfg.root_tolerance * eta } else { cfg.root_tolerance * 1e-6 * rho0 };
    let (stall_threshold, growth) = match cfg.rank_growth {
        RankGrowth::Off => (DEFAULT_STALL_THRESHOLD, None),
        RankGrowth::Increment { delta, threshold } => (threshold, Some(delta)),
    };

    let mut tau = INITIAL_TAU_FRACTION * bnorm;
    let mut anchor = sub.initial(tau);
    // Last accepted point left of the root and the nearest known overshoot.
    let mut lo = (0.0, rho0);
    let mut hi: Option<(f64, f64)> = None;
    let mut prev_accepted: Option<(f64, f64)> = None;
    let mut stall = 0;
    let mut steps = 0;
    let mut used = 0;
    let mut pending = 0;

    loop {
        let remaining = cfg.inner_budget.map(|b| b.saturating_sub(used));
        let mut opts = SpgOptions::new(
            cfg.inner_tolerance.at(steps),
            remaining.map_or(cfg.max_inner_spg_iterations, |r| r.min(cfg.max_inner_spg_iterations)),
        );
        opts.memory = cfg.line_search_memory;
        opts.target = Some(eta + window);
        let ev = sub.evaluate(tau, &anchor, &opts)?;
        used += ev.iterations;
        pending += ev.iterations;
        let budget_hit = cfg.inner_budget.is_some_and(|b| used >= b);
        let record = |v_prime: Option<f64>, pending: usize, sub: &S| ParetoRecord {
            tau,
            v: ev.v,
            v_prime,
            inner_iterations: pending,
            factor_rank: sub.rank(&ev.point),
        };

        if (ev.v - eta).abs() <= window {
            trace.records.push(record(None, pending, sub));
            trace.status = ParetoStatus::Converged;
            return Ok(output(ev, trace));
        }

        let next_tau;
        let mut status = None;
        if ev.v < eta - window {
            hi = Some((tau, ev.v));
            next_tau = secant(lo, (tau, ev.v), eta);
        } else {
            let deriv = match sub.derivative(&ev) {
                Ok(d) => Some(d),
                Err(Error::DerivativeUncertain { estimate }) => Some(estimate),
                Err(Error::GradientUndefined) => None,
                Err(e) => return Err(e),
            };
            trace.records.push(record(deriv, pending, sub));
            pending = 0;
            if let Some((_, pv)) = prev_accepted {
                if ev.converged && pv - ev.v < stall_threshold * (pv - eta) {
                    stall += 1;
                } else {
                    stall = 0;
                }
            }
            let secant_slope = prev_accepted
                .map(|(pt, pv)| (ev.v - pv) / (tau - pt))
                .filter(|s| s.is_finite() && *s < 0.0);
            prev_accepted = Some((tau, ev.v));
            lo = (tau, ev.v);
            anchor = ev.point.clone();
            if stall >= 2 {
                match growth {
                    Some(delta) => {
                        anchor = sub.grow(&anchor, delta)?;
                        stall = 0;
                    }
                    None => status = Some(ParetoStatus::InfeasibleRank),
                }
            }
            let slope = match (deriv.filter(|d| d.is_finite() && *d < -f64::EPSILON * (ev.v.abs() + 1.0)), secant_slope) {
                // Rank-limited factors flatten the curve below the dual-norm
                // slope; the observed secant then gives the longer, better step.
                (Some(d), Some(s)) => Some(s.max(d).min(SECANT_SLOPE_FLOOR * d)),
                (d, s) => d.or(s),
            };
            let mut t = match slope {
                Some(s) => tau + (ev.v - eta) / s.abs(),
                None => 2.0 * tau,
            };
            if let Some(h) = hi {
                if t >= h.0 {
                    t = secant(lo, h, eta);
                }
            }
            next_tau = t;
        }

        steps += 1;
        if status.is_none() && (steps >= cfg.max_outer_newton_steps || budget_hit) {
            status = Some(ParetoStatus::BudgetExhausted);
        }
        if let Some(s) = status {
            if trace.records.last().is_none_or(|r| r.tau != tau) {
                trace.records.push(record(None, pending, sub));
            }
            trace.status = s;
            return Ok(output(ev, trace));
        }
        tau = next_tau;
    }
}

/// Root of the line through `a` and `b` at height `eta`.
fn secant(a: (f64, f64), b: (f64, f64), eta: f64) -> f64 {
    let t = a.0 + (a.1 - eta) * (b.0 - a.0) / (a.1 - b.1);
    if t.is_finite() && t > a.0 && t < b.0 {
        t
    } else {
        0.5 * (a.0 + b.0)
    }
}

fn output<P>(ev: Evaluation<P>, trace: ParetoTrace) -> LoopOutput<P> {
    LoopOutput {
        point: ev.point,
        misfit: ev.v,
        residual: ev.residual,
        trace,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::obs::Observations;
    use crate::penalty::Penalty;
    use crate::seeded_rng;

    fn sampled(seed: u64) -> (DenseMatrix, Problem) {
        let mut rng = seeded_rng(seed);
        let x = FactorPair::gaussian(20, 20, 3, &mut rng).form_product();
        let idx: Vec<_> = (0..20).flat_map(|i| (0..20).map(move |j| (i, j))).filter(|&(i, j)| (i + 3 * j) % 2 == 0).collect();
        let p = Problem::from_observations(&Observations::sample(&x, idx).unwrap(), Penalty::TwoNorm);
        (x, p)
    }

    #[test]
    fn trivial_target_returns_zero() {
        let (_, p) = sampled(1);
        let (fp, tr) = solve_bpdn(p.zero_misfit(), &p, &SolverConfig::default()).unwrap();
        assert_eq!(fp.frobenius_surrogate(), 0.0);
        assert_eq!(tr.tau_final(), 0.0);
        assert_eq!(tr.status, ParetoStatus::Converged);
    }

    #[test]
    fn secant_stays_in_bracket() {
        assert!((secant((0.0, 2.0), (2.0, 0.0), 1.0) - 1.0).abs() < 1e-15);
        assert_eq!(secant((0.0, 1.0), (2.0, 1.0), 0.5), 1.0);
    }

    #[test]
    fn grow_preserves_product_scale() {
        let mut rng = seeded_rng(2);
        let fp = FactorPair::gaussian(5, 4, 2, &mut rng);
        let g = increase_rank(&fp, 1, &mut rng).unwrap();
        assert_eq!(g.rank(), 3);
        let d = g.form_product().sub(&fp.form_product()).unwrap().frobenius_norm();
        assert!(d <= 1e-10 * fp.form_product().frobenius_norm());
    }

    #[test]
    fn reaches_target_on_small_instance() {
        let (_, p) = sampled(5);
        let eta = 0.1 * p.zero_misfit();
        let cfg = SolverConfig::default().with_rank(5);
        let run = solve_bpdn_run(eta, &p, &cfg).unwrap();
        assert_eq!(run.trace.status, ParetoStatus::Converged);
        assert!((run.misfit - eta).abs() <= cfg.root_tolerance * eta);
    }
}
