mod common;

use common::*;
use fpareto::data::{gen_low_rank, gen_mask, MaskMode};
use fpareto::linop::{sigma_max, POWER_MAX_ITERS, POWER_TOLERANCE};
use fpareto::pareto::{evaluate_derivative, evaluate_value_function};
use fpareto::subsolve::{SpgStatus, SubproblemState};
use fpareto::weight::{apply_weight, extract_subspaces, principal_cosines, weighted_gradient_norm, weighted_norm, Side};
use fpareto::{DenseMatrix, FactorPair, Observations, Operator, Penalty, Problem, SolverConfig, SubspaceWeights};
use nalgebra::DMatrix;
use proptest::prelude::*;

#[test]
fn sigma_max_examples_and_svd_oracle() {
    assert!((sigma_max(&DenseMatrix::identity(3), POWER_TOLERANCE, POWER_MAX_ITERS).value - 1.0).abs() < 1e-14);
    assert!((sigma_max(&DenseMatrix::diag(&[3.0, 1.0]), POWER_TOLERANCE, POWER_MAX_ITERS).value - 3.0).abs() < 1e-14);
    let mut g = rng(41);
    for _ in 0..10 {
        let a = gaussian(30, 20, &mut g);
        let s = sigma_max(&a, POWER_TOLERANCE, POWER_MAX_ITERS);
        assert!(s.converged);
        assert!(rel_err(s.value, singular_values(&a)[0]) <= 1e-7);
    }
}

#[test]
fn sigma_max_handles_clustered_spectrum() {
    let mut g = rng(42);
    let (u, v) = (orthonormal(40, 6, &mut g), orthonormal(30, 6, &mut g));
    let sigma = [5.0, 5.0 - 1e-9, 5.0 - 2e-9, 4.999, 1.0, 0.5];
    let a = u.matmul(&DenseMatrix::diag(&sigma)).unwrap().matmul_transpose(&v).unwrap();
    let s = sigma_max(&a, POWER_TOLERANCE, POWER_MAX_ITERS);
    assert!(s.converged && rel_err(s.value, 5.0) <= 1e-7, "{s:?}");
}

fn sampled_problem(seed: u64) -> (Observations, Problem) {
    let truth = gen_low_rank(12, 10, 3, seed);
    let mask = gen_mask((12, 10), MaskMode::Entries, 0.5, seed).unwrap();
    let obs = Observations::sample(&truth, mask).unwrap();
    let problem = Problem::from_observations(&obs, Penalty::TwoNorm);
    (obs, problem)
}

#[test]
fn derivative_matches_dense_svd() {
    for seed in 1..=5 {
        let (obs, problem) = sampled_problem(seed);
        let tau = 0.3 * nuclear(&gen_low_rank(12, 10, 3, seed));
        let config = SolverConfig::default().with_rank(3).with_seed(seed);
        let (_, state) = evaluate_value_function(tau, None, &problem, &config).unwrap();
        let d = evaluate_derivative(&state, &problem).unwrap();
        let r = &state.residual;
        let nr = norm(r);
        let mut g = DenseMatrix::zeros(12, 10);
        for (&(i, j), ri) in obs.indices().iter().zip(r) {
            g.set(i, j, ri / nr);
        }
        assert!(d <= 0.0);
        assert!(rel_err(-d, singular_values(&g)[0]) <= 1e-8, "seed {seed}");
    }
}

#[test]
fn derivative_of_diagonal_gradient() {
    let problem = Problem::new(Operator::Identity { shape: (2, 2) }, vec![0.0; 4], Penalty::TwoNorm).unwrap();
    let residual = vec![3.0, 0.0, 0.0, 1.0];
    let state = SubproblemState {
        fp: FactorPair::zeros(2, 2, 1),
        objective: problem.misfit(&residual),
        residual,
        projected_gradient_norm: 0.0,
        iterations_used: 0,
        function_evaluations: 0,
        status: SpgStatus::Optimal,
    };
    let d = evaluate_derivative(&state, &problem).unwrap();
    assert!((d + 3.0 / 10f64.sqrt()).abs() < 1e-14);
}

#[test]
fn weighted_dual_matches_dense_svd() {
    let mut g = rng(43);
    for omega in [0.2, 0.5, 0.9] {
        let (u, v) = (orthonormal(15, 3, &mut g), orthonormal(11, 3, &mut g));
        let w = SubspaceWeights::new(u.clone(), v.clone(), omega).unwrap();
        let gm = gaussian(15, 11, &mut g);
        let qi = weight_dense(&u, 1.0 / omega);
        let wi = weight_dense(&v, 1.0 / omega);
        let dense = qi.matmul(&gm).unwrap().matmul(&wi).unwrap();
        let s = weighted_gradient_norm(&gm, &w).unwrap();
        assert!(rel_err(s.value, singular_values(&dense)[0]) <= 1e-7);
    }
}

#[test]
fn weight_examples() {
    let e1 = DenseMatrix::from_rows(&[[1.0], [0.0]]).unwrap();
    let w = SubspaceWeights::new(e1.clone(), e1, 0.5).unwrap();
    let m = DenseMatrix::from_rows(&[[2.0], [2.0]]).unwrap();
    let qm = apply_weight(&w, Side::Row, false, &m).unwrap();
    assert_eq!(qm, DenseMatrix::from_rows(&[[1.0], [2.0]]).unwrap());
    let ones = w.with_omega(1.0).unwrap();
    for (side, inverse) in [(Side::Row, false), (Side::Row, true)] {
        assert_eq!(apply_weight(&ones, side, inverse, &m).unwrap(), m);
    }
    let mt = m.transpose();
    for inverse in [false, true] {
        assert_eq!(apply_weight(&ones, Side::Col, inverse, &mt).unwrap(), mt);
    }
}

#[test]
fn extracted_subspaces_match_dense_svd() {
    let mut g = rng(44);
    for _ in 0..5 {
        let fp = pair(14, 9, 4, &mut g);
        let basis = extract_subspaces(&fp, 4).unwrap();
        assert!(!basis.truncated);
        let svd = to_na(&fp.form_product()).svd(true, true);
        let u_ref = svd.u.unwrap().columns(0, 4).into_owned();
        let v_ref = svd.v_t.unwrap().rows(0, 4).transpose();
        let proj = |a: &DMatrix<f64>| a * a.transpose();
        let (u, v) = (to_na(&basis.u), to_na(&basis.v));
        assert!((proj(&u) - proj(&u_ref)).norm() <= 1e-8);
        assert!((proj(&v) - proj(&v_ref)).norm() <= 1e-8);
        for b in [&u, &v] {
            assert!((b.transpose() * b - DMatrix::identity(4, 4)).norm() <= 1e-10);
        }
        for (s, t) in basis.sigma.iter().zip(svd.singular_values.iter()) {
            assert!(rel_err(*s, *t) <= 1e-10);
        }
    }
    let d = FactorPair::new(DenseMatrix::diag(&[3f64.sqrt(), 1.0]), DenseMatrix::diag(&[3f64.sqrt(), 1.0])).unwrap();
    let top = extract_subspaces(&d, 1).unwrap();
    assert!((top.u.get(0, 0).abs() - 1.0).abs() < 1e-12 && top.u.get(1, 0).abs() < 1e-12);
}

#[test]
fn surrogate_tight_at_balanced_svd_factors() {
    let mut g = rng(45);
    for _ in 0..10 {
        let x = pair(8, 8, 3, &mut g).form_product();
        let svd = to_na(&x).svd(true, true);
        let root: Vec<f64> = svd.singular_values.iter().take(3).map(|s| s.sqrt()).collect();
        let u = svd.u.as_ref().unwrap();
        let vt = svd.v_t.as_ref().unwrap();
        let l = DenseMatrix::from_fn(8, 3, |i, j| u[(i, j)] * root[j]);
        let r = DenseMatrix::from_fn(8, 3, |i, j| vt[(j, i)] * root[j]);
        let fp = FactorPair::new(l, r).unwrap();
        assert!(rel_err(fp.frobenius_surrogate(), nuclear(&x)) <= 1e-8);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn nuclear_norm_below_surrogate(seed in any::<u64>(), n in 1usize..9, m in 1usize..9, k in 1usize..5) {
        let fp = pair(n, m, k, &mut rng(seed));
        prop_assert!(nuclear(&fp.form_product()) <= fp.frobenius_surrogate() * (1.0 + 1e-12));
    }

    #[test]
    fn weighting_eigen_structure(seed in any::<u64>(), omega in 0.05f64..=1.0) {
        let mut g = rng(seed);
        let u = orthonormal(9, 3, &mut g);
        let w = SubspaceWeights::new(u.clone(), orthonormal(6, 2, &mut g), omega).unwrap();
        let coeffs = gaussian_vec(3, &mut g);
        let inside = u.mul_vec(&coeffs);
        prop_assert!((weighted_norm(&w, &inside) - omega * norm(&inside)).abs() <= 1e-12 * norm(&inside));
        let raw = gaussian_vec(9, &mut g);
        let c = u.tr_mul_vec(&raw);
        let uc = u.mul_vec(&c);
        let perp: Vec<f64> = raw.iter().zip(&uc).map(|(a, b)| a - b).collect();
        let col = DenseMatrix::new(9, 1, perp.clone()).unwrap();
        let qx = apply_weight(&w, Side::Row, false, &col).unwrap();
        prop_assert!(frob_diff(&qx, &col) <= 1e-12 * (1.0 + norm(&perp)));

        let m = gaussian(9, 4, &mut g);
        let back = apply_weight(&w, Side::Row, true, &apply_weight(&w, Side::Row, false, &m).unwrap()).unwrap();
        prop_assert!(frob_diff(&back, &m) <= 1e-12 * m.frobenius_norm());
        let mc = gaussian(5, 6, &mut g);
        let back = apply_weight(&w, Side::Col, false, &apply_weight(&w, Side::Col, true, &mc).unwrap()).unwrap();
        prop_assert!(frob_diff(&back, &mc) <= 1e-12 * mc.frobenius_norm());
    }

    #[test]
    fn principal_cosines_of_a_basis_with_itself(seed in any::<u64>()) {
        let u = orthonormal(10, 4, &mut rng(seed));
        for c in principal_cosines(&u, &u).unwrap() {
            prop_assert!((c - 1.0).abs() < 1e-12);
        }
    }
}
