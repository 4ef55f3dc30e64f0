mod common;

use common::*;
use fpareto::project::{
    project_frobenius_ball, project_l1_simplex, project_nuclear_ball, project_weighted_frobenius_ball,
    LagrangeFunction, WeightedBallSpec,
};
use fpareto::{DenseMatrix, FactorPair, SubspaceWeights};
use nalgebra::DMatrix;
use proptest::prelude::*;

/// `½(‖QL‖² + ‖WR‖²)` with dense weights.
fn weighted_surrogate(fp: &FactorPair, q: &DenseMatrix, w: &DenseMatrix) -> f64 {
    0.5 * (q.matmul(fp.l()).unwrap().frobenius_sq() + w.matmul(fp.r()).unwrap().frobenius_sq())
}

/// Nearest point of `{½zᵀDz ≤ τ}` from the KKT system `(I + μD)z = z₀`,
/// with `μ` found by bisection and each solve done by dense LU.
fn weighted_oracle(fp: &FactorPair, q: &DenseMatrix, w: &DenseMatrix, tau: f64) -> FactorPair {
    let solve = |mu: f64| {
        let side = |m: &DenseMatrix, x: &DenseMatrix| {
            let d = to_na(&m.matmul(m).unwrap());
            let a = DMatrix::identity(d.nrows(), d.ncols()) + d * mu;
            let sol = a.lu().solve(&to_na(x)).unwrap();
            DenseMatrix::from_fn(x.rows(), x.cols(), |i, j| sol[(i, j)])
        };
        FactorPair::new(side(q, fp.l()), side(w, fp.r())).unwrap()
    };
    if weighted_surrogate(fp, q, w) <= tau {
        return fp.clone();
    }
    let excess = |mu: f64| weighted_surrogate(&solve(mu), q, w) - tau;
    let mut hi = 1.0;
    while excess(hi) > 0.0 {
        hi *= 2.0;
    }
    solve(bisect(0.0, hi, excess))
}

fn factor_diff(a: &FactorPair, b: &FactorPair) -> f64 {
    (frob_diff(a.l(), b.l()).powi(2) + frob_diff(a.r(), b.r()).powi(2)).sqrt()
}

#[test]
fn weighted_projection_matches_dense_kkt_oracle() {
    let mut g = rng(31);
    for k in [1, 2] {
        for _ in 0..20 {
            let u = orthonormal(2, 1, &mut g);
            let v = orthonormal(2, 1, &mut g);
            let weights = SubspaceWeights::new(u.clone(), v.clone(), 0.5).unwrap();
            let fp = pair(2, 2, k, &mut g);
            let tau = 0.3 * fp.frobenius_surrogate();
            let got = project_weighted_frobenius_ball(&fp, &WeightedBallSpec::new(tau, weights).unwrap()).unwrap();
            let want = weighted_oracle(&fp, &weight_dense(&u, 0.5), &weight_dense(&v, 0.5), tau);
            assert!(factor_diff(&got, &want) <= 1e-6, "k={k}: {}", factor_diff(&got, &want));
        }
    }
}

#[test]
fn frobenius_projection_matches_kkt_oracle() {
    let mut g = rng(32);
    let eye = DenseMatrix::identity(2);
    for _ in 0..20 {
        let fp = pair(2, 2, 1, &mut g);
        let tau = 0.4 * fp.frobenius_surrogate();
        let got = project_frobenius_ball(&fp, tau);
        let want = weighted_oracle(&fp, &eye, &eye, tau);
        assert!(factor_diff(&got, &want) <= 1e-10);
    }
    let two = DenseMatrix::from_rows(&[[2.0]]).unwrap();
    let fp = FactorPair::new(two.clone(), two).unwrap();
    let p = project_frobenius_ball(&fp, 1.0);
    assert_eq!((p.l().get(0, 0), p.r().get(0, 0)), (1.0, 1.0));
}

/// Singular-value shift θ with `Σ max(σ − θ, 0) = τ`, by bisection.
fn shift_oracle(sigma: &[f64], tau: f64) -> f64 {
    let top = sigma.iter().copied().fold(0.0, f64::max);
    bisect(0.0, top, |t| sigma.iter().map(|s| (s - t).max(0.0)).sum::<f64>() - tau)
}

#[test]
fn nuclear_projection_matches_shift_search() {
    let mut g = rng(33);
    for _ in 0..10 {
        let x = gaussian(6, 5, &mut g);
        let svd = to_na(&x).svd(true, true);
        let theta = shift_oracle(svd.singular_values.as_slice(), 1.0);
        let shrunk = svd.singular_values.map(|s| (s - theta).max(0.0));
        let want = svd.u.as_ref().unwrap() * DMatrix::from_diagonal(&shrunk) * svd.v_t.as_ref().unwrap();
        let got = to_na(&project_nuclear_ball(&x, 1.0));
        assert!((got - want).norm() <= 1e-10);
    }
    let d = DenseMatrix::diag(&[3.0, 1.0]);
    assert_eq!(project_nuclear_ball(&d, 4.0), d);
    let p = project_nuclear_ball(&d, 2.0);
    assert!(frob_diff(&p, &DenseMatrix::diag(&[2.0, 0.0])) < 1e-12);
}

#[test]
fn simplex_examples() {
    assert_eq!(project_l1_simplex(&[3.0, 1.0], 2.0), vec![2.0, 0.0]);
    assert_eq!(project_l1_simplex(&[0.5, 0.25], 2.0), vec![0.5, 0.25]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn simplex_matches_bisection(v in prop::collection::vec(0.0f64..10.0, 1..12), frac in 0.05f64..0.95) {
        let tau = frac * v.iter().sum::<f64>();
        let theta = shift_oracle(&v, tau);
        let got = project_l1_simplex(&v, tau);
        for (a, s) in got.iter().zip(&v) {
            prop_assert!((a - (s - theta).max(0.0)).abs() <= 1e-12 * (1.0 + s));
        }
    }

    #[test]
    fn projections_are_idempotent_and_feasible(seed in any::<u64>(), frac in 0.0f64..1.5) {
        let mut g = rng(seed);
        let fp = pair(7, 5, 3, &mut g);
        let tau = frac * fp.frobenius_surrogate();
        let once = project_frobenius_ball(&fp, tau);
        prop_assert!(once.frobenius_surrogate() <= tau + 1e-10);
        prop_assert!(factor_diff(&project_frobenius_ball(&once, tau), &once) <= 1e-12 * (1.0 + tau));

        let (u, v) = (orthonormal(7, 2, &mut g), orthonormal(5, 2, &mut g));
        let spec = WeightedBallSpec::new(tau, SubspaceWeights::new(u.clone(), v.clone(), 0.4).unwrap()).unwrap();
        let wonce = project_weighted_frobenius_ball(&fp, &spec).unwrap();
        let (q, w) = (weight_dense(&u, 0.4), weight_dense(&v, 0.4));
        prop_assert!(weighted_surrogate(&wonce, &q, &w) <= tau * (1.0 + 1e-10) + 1e-10);
        let twice = project_weighted_frobenius_ball(&wonce, &spec).unwrap();
        prop_assert!(factor_diff(&twice, &wonce) <= 1e-12 * (1.0 + tau));

        let x = gaussian(6, 4, &mut g);
        let ntau = frac * nuclear(&x);
        let p = project_nuclear_ball(&x, ntau);
        prop_assert!(nuclear(&p) <= ntau + 1e-10);
        prop_assert!(frob_diff(&project_nuclear_ball(&p, ntau), &p) <= 1e-12 * (1.0 + ntau));
    }

    #[test]
    fn nuclear_projection_is_non_expansive(seed in any::<u64>(), tau in 0.1f64..5.0) {
        let mut g = rng(seed);
        let (x, y) = (gaussian(5, 4, &mut g), gaussian(5, 4, &mut g));
        let d = frob_diff(&project_nuclear_ball(&x, tau), &project_nuclear_ball(&y, tau));
        prop_assert!(d <= frob_diff(&x, &y) + 1e-12);
    }

    #[test]
    fn unit_omega_matches_unweighted(seed in any::<u64>(), frac in 0.0f64..1.5) {
        let mut g = rng(seed);
        let fp = pair(6, 4, 2, &mut g);
        let tau = frac * fp.frobenius_surrogate();
        let w = SubspaceWeights::new(orthonormal(6, 2, &mut g), orthonormal(4, 1, &mut g), 1.0).unwrap();
        let a = project_weighted_frobenius_ball(&fp, &WeightedBallSpec::new(tau, w).unwrap()).unwrap();
        let d = factor_diff(&a, &project_frobenius_ball(&fp, tau));
        prop_assert!(d <= 1e-10, "{d}");
    }

    #[test]
    fn lagrange_function_strictly_decreasing(omega in 0.05f64..1.0, inside in 0.0f64..10.0, outside in 0.01f64..10.0) {
        let f = LagrangeFunction { omega, inside, outside };
        let mut prev = f.value(0.0);
        for i in 1..50 {
            let mu = 0.1 * f64::from(i) * f64::from(i);
            let cur = f.value(mu);
            prop_assert!(cur < prev);
            prop_assert!(f.derivative(mu) < 0.0);
            prev = cur;
        }
    }
}
