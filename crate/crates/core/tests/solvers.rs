mod common;

use common::*;
use fpareto::data::{absolute_eta, gen_low_rank, snr_db, InstanceSpec};
use fpareto::pareto::{
    evaluate_convex_value, evaluate_value_function, fit_unregularized, solve_bpdn_run, solve_convex_bpdn,
};
use fpareto::subsolve::{spg_solve, SpgOptions};
use fpareto::weight::{frequency_continuation, extract_subspaces, solve_weighted_bpdn_run, ContinuationOptions, Slice, SliceStack};
use fpareto::{
    FactorPair, Observations, Operator, ParetoStatus, Penalty, Problem, Projector, RankGrowth, SolverConfig,
    SubspaceWeights,
};

fn instance(n: usize, k: usize, frac: f64, seed: u64) -> (fpareto::DenseMatrix, Observations, Problem) {
    let inst = InstanceSpec::new(n, n, k, frac, seed).generate().unwrap();
    let problem = Problem::from_observations(&inst.obs, Penalty::TwoNorm);
    (inst.truth, inst.obs, problem)
}

fn assert_on_target(misfit: f64, eta: f64, config: &SolverConfig) {
    let tol = config.root_tolerance;
    assert!(misfit >= eta * (1.0 - tol) && misfit <= eta * (1.0 + tol), "misfit {misfit} vs eta {eta}");
}

#[test]
fn fully_observed_solve_recovers_truth() {
    let truth = gen_low_rank(20, 20, 3, 61);
    let problem = Problem::new(Operator::Identity { shape: (20, 20) }, truth.as_slice().to_vec(), Penalty::TwoNorm).unwrap();
    let tau = nuclear(&truth);
    let init = FactorPair::gaussian_with_surrogate(20, 20, 3, 1e-4 * tau, &mut rng(1));
    let st = spg_solve(&problem, &Projector::Frobenius { tau }, &init, &SpgOptions::new(1e-12, 20_000)).unwrap();
    // Exact fit sits on the ball boundary, where convergence is sublinear;
    // the misfit is measured against ρ(−b) like every other target.
    assert!(st.objective <= 1e-6 * problem.zero_misfit(), "objective {}", st.objective);
    assert!(frob_diff(&st.fp.form_product(), &truth) <= 1e-4 * truth.frobenius_norm());
}

#[test]
fn value_function_matches_convex_reference() {
    let (truth, _, problem) = instance(20, 3, 0.5, 62);
    let nuc = nuclear(&truth);
    let config = SolverConfig::default().with_rank(20).with_seed(62);
    for frac in [0.5, 1.0, 2.0] {
        let tau = frac * nuc;
        let (v, _) = evaluate_value_function(tau, None, &problem, &config).unwrap();
        let vc = evaluate_convex_value(tau, &problem, 1e-10, 20_000).unwrap();
        assert!((v - vc).abs() <= 1e-4, "tau {frac}: factored {v} convex {vc}");
    }
    let (v0, _) = evaluate_value_function(0.0, None, &problem, &config).unwrap();
    assert_eq!(v0, problem.zero_misfit());
}

#[test]
fn final_tau_matches_convex_pareto_solver() {
    let (_, _, problem) = instance(20, 3, 0.5, 63);
    let eta = absolute_eta(&problem, 0.1).unwrap();
    let config = SolverConfig::default().with_rank(20).with_seed(63);
    let run = solve_bpdn_run(eta, &problem, &config).unwrap();
    let (_, convex) = solve_convex_bpdn(eta, &problem, &config).unwrap();
    assert_eq!(run.trace.status, ParetoStatus::Converged);
    assert_eq!(convex.status, ParetoStatus::Converged);
    assert!(rel_err(run.trace.tau_final(), convex.tau_final()) <= 1e-2);
}

#[test]
fn pareto_run_contract() {
    let (truth, _, problem) = instance(40, 4, 0.5, 64);
    let config = SolverConfig::default().with_rank(4).with_seed(64);
    for eta_rel in [0.1, 0.01, 1e-3] {
        let eta = absolute_eta(&problem, eta_rel).unwrap();
        let run = solve_bpdn_run(eta, &problem, &config).unwrap();
        assert_eq!(run.trace.status, ParetoStatus::Converged);
        assert_on_target(run.misfit, eta, &config);
        assert!(run.trace.tau_updates() <= config.max_outer_newton_steps);
        assert_eq!(run.residual, problem.residual(&run.fp).unwrap());
        for rec in &run.trace.records {
            assert!(rec.v_prime.is_none_or(|d| d <= 0.0));
        }
        let mut by_tau = run.trace.records.clone();
        by_tau.sort_by(|a, b| a.tau.total_cmp(&b.tau));
        for w in by_tau.windows(2) {
            assert!(w[1].v <= w[0].v + 1e-6 * problem.zero_misfit());
        }
        assert!(snr_db(&truth, &run.fp.form_product()).unwrap() > 0.0);
    }
}

#[test]
fn solves_are_deterministic() {
    let (_, _, problem) = instance(30, 3, 0.5, 65);
    let eta = absolute_eta(&problem, 0.01).unwrap();
    let config = SolverConfig::default().with_rank(5).with_seed(9);
    let a = solve_bpdn_run(eta, &problem, &config).unwrap();
    let b = solve_bpdn_run(eta, &problem, &config).unwrap();
    assert_eq!(a.trace, b.trace);
    assert_eq!(a.fp, b.fp);
}

#[test]
fn rank_growth_reaches_target_a_fixed_rank_cannot() {
    let (truth, _, problem) = instance(40, 4, 0.6, 66);
    let eta = absolute_eta(&problem, 1e-3).unwrap();
    let fixed = SolverConfig::default().with_rank(2).with_seed(66);
    let stuck = solve_bpdn_run(eta, &problem, &fixed).unwrap();
    assert_ne!(stuck.trace.status, ParetoStatus::Converged);
    assert!(stuck.misfit > eta * (1.0 + fixed.root_tolerance));

    let growing = SolverConfig {
        rank_growth: RankGrowth::Increment { delta: 1, threshold: 1e-2 },
        ..fixed
    };
    let run = solve_bpdn_run(eta, &problem, &growing).unwrap();
    assert_eq!(run.trace.status, ParetoStatus::Converged);
    assert_on_target(run.misfit, eta, &growing);
    assert!(run.fp.rank() >= 4);
    assert!(snr_db(&truth, &run.fp.form_product()).unwrap() > 30.0);
}

#[test]
fn students_t_run_reaches_target() {
    let inst = InstanceSpec::new(30, 30, 3, 0.5, 67).generate().unwrap();
    let problem = Problem::from_observations(&inst.obs, Penalty::students_t(1.0).unwrap());
    let eta = absolute_eta(&problem, 0.05).unwrap();
    let config = SolverConfig::default().with_rank(3).with_seed(67);
    let run = solve_bpdn_run(eta, &problem, &config).unwrap();
    assert_eq!(run.trace.status, ParetoStatus::Converged);
    assert_on_target(run.misfit, eta, &config);
}

#[test]
fn unit_omega_reproduces_unweighted_trace() {
    let (_, _, problem) = instance(25, 3, 0.5, 68);
    let eta = absolute_eta(&problem, 0.01).unwrap();
    let config = SolverConfig::default().with_rank(3).with_seed(68);
    let fp = pair(25, 25, 3, &mut rng(68));
    let w = SubspaceWeights::from_factor_subspaces(&fp, 3, 1.0).unwrap();
    let weighted = solve_weighted_bpdn_run(eta, &w, &problem, &config).unwrap();
    let plain = solve_bpdn_run(eta, &problem, &config).unwrap();
    assert_eq!(weighted.trace, plain.trace);
    assert!(frob_diff(&weighted.fp.form_product(), &plain.fp.form_product()) <= 1e-10);
}

#[test]
fn exact_subspace_weighting_attains_target() {
    let (truth, _, problem) = instance(15, 3, 0.5, 69);
    let eta = absolute_eta(&problem, 0.01).unwrap();
    let config = SolverConfig::default().with_rank(3).with_seed(69);
    let svd = to_na(&truth).svd(true, true);
    let u = fpareto::DenseMatrix::from_fn(15, 3, |i, j| svd.u.as_ref().unwrap()[(i, j)]);
    let v = fpareto::DenseMatrix::from_fn(15, 3, |i, j| svd.v_t.as_ref().unwrap()[(j, i)]);
    let w = SubspaceWeights::new(u, v, 0.5).unwrap();
    let run = solve_weighted_bpdn_run(eta, &w, &problem, &config).unwrap();
    assert_eq!(run.trace.status, ParetoStatus::Converged);
    assert_on_target(run.misfit, eta, &config);
}

#[test]
fn single_slice_continuation_is_a_plain_solve() {
    let (truth, obs, problem) = instance(20, 3, 0.5, 70);
    let eta = absolute_eta(&problem, 0.01).unwrap();
    let config = SolverConfig::default().with_rank(3).with_seed(70);
    let stack = SliceStack::new(vec![Slice { label: 1.0, obs, truth: Some(truth) }]).unwrap();
    let res = frequency_continuation(&stack, &[eta], &ContinuationOptions::default(), &config).unwrap();
    let plain = solve_bpdn_run(eta, &problem, &config).unwrap();
    assert_eq!(res.solutions[0].as_ref().unwrap(), &plain.fp);
    assert!(!res.report[0].weighted);
}

#[test]
fn repeated_slice_needs_no_more_inner_iterations_when_weighted() {
    let (truth, obs, problem) = instance(40, 4, 0.4, 71);
    let eta = absolute_eta(&problem, 0.01).unwrap();
    let config = SolverConfig::default().with_rank(4).with_seed(71);
    let slice = |label| Slice { label, obs: obs.clone(), truth: Some(truth.clone()) };
    let stack = SliceStack::new(vec![slice(1.0), slice(2.0)]).unwrap();
    let res = frequency_continuation(&stack, &[eta, eta], &ContinuationOptions::default(), &config).unwrap();
    let second = &res.report[1];
    assert!(second.weighted);
    assert_eq!(second.status, Some(ParetoStatus::Converged));
    assert!(second.inner_iterations <= second.unweighted_inner_iterations.unwrap());
    let basis = extract_subspaces(res.solutions[0].as_ref().unwrap(), 4).unwrap();
    assert!(!basis.truncated);
}

#[test]
fn unregularized_fit_with_no_iterations_is_the_start() {
    let (truth, _, problem) = instance(20, 3, 0.5, 72);
    let config = SolverConfig {
        max_inner_spg_iterations: 0,
        ..SolverConfig::default().with_rank(3)
    };
    let st = fit_unregularized(&problem, &config).unwrap();
    assert_eq!(st.iterations_used, 0);
    assert!(snr_db(&truth, &st.fp.form_product()).unwrap().abs() < 0.1);
}
