mod common;

use common::*;
use fpareto::data::{contaminate, gen_correlated_slices, gen_mask, read_triplets, snr_db, InstanceSpec, MaskMode, SliceSpec};
use fpareto::weight::principal_cosines;
use fpareto::DenseMatrix;
use proptest::prelude::*;

fn slices(drift: f64, count: usize, seed: u64) -> SliceSpec {
    SliceSpec {
        n: 30,
        m: 25,
        rank: 4,
        count,
        drift,
        sampling_fraction: 0.5,
        mask_mode: MaskMode::Entries,
        seed,
    }
}

fn left_basis(x: &DenseMatrix, k: usize) -> DenseMatrix {
    let u = to_na(x).svd(true, false).u.unwrap();
    DenseMatrix::from_fn(x.rows(), k, |i, j| u[(i, j)])
}

#[test]
fn contamination_bound_and_placement() {
    let mut spec = InstanceSpec::new(20, 16, 3, 0.5, 7);
    spec.mask_mode = MaskMode::Columns;
    let clean = spec.generate().unwrap().obs;
    let max_b = clean.values().iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    let c = contaminate(&clean, 0.25, 3.0, MaskMode::Columns, 7).unwrap();
    assert_eq!(c.positions.len(), 2 * 20);
    for (p, (a, b)) in clean.values().iter().zip(c.obs.values()).enumerate() {
        if c.positions.binary_search(&p).is_ok() {
            assert!(b.abs() <= 3.0 * max_b);
        } else {
            assert_eq!(a, b);
        }
    }
    assert_eq!(contaminate(&clean, 0.0, 3.0, MaskMode::Columns, 7).unwrap().obs, clean);
    let zeroed = contaminate(&clean, 0.5, 0.0, MaskMode::Entries, 7).unwrap();
    assert!(zeroed.positions.iter().all(|&p| zeroed.obs.values()[p] == 0.0));
}

#[test]
fn angles_between_consecutive_slices_grow_with_drift() {
    let mean_angle = |drift: f64| {
        let mut total = 0.0;
        for seed in 1..=3 {
            let stack = gen_correlated_slices(&slices(drift, 2, seed)).unwrap();
            let t: Vec<&DenseMatrix> = stack.slices().iter().map(|s| s.truth.as_ref().unwrap()).collect();
            let cos = principal_cosines(&left_basis(t[0], 4), &left_basis(t[1], 4)).unwrap();
            total += cos.iter().map(|c| c.min(1.0).acos()).sum::<f64>();
        }
        total
    };
    let angles: Vec<f64> = [0.02, 0.1, 0.3, 0.6].into_iter().map(mean_angle).collect();
    assert!(angles.windows(2).all(|w| w[1] > w[0]), "{angles:?}");
}

#[test]
fn zero_drift_gives_identical_truths() {
    let stack = gen_correlated_slices(&slices(0.0, 2, 4)).unwrap();
    let s = stack.slices();
    assert_eq!(s[0].truth, s[1].truth);
    assert_eq!(stack, gen_correlated_slices(&slices(0.0, 2, 4)).unwrap());
}

#[test]
fn snr_examples() {
    let a = gaussian(6, 5, &mut rng(51));
    assert_eq!(snr_db(&a, &a).unwrap(), f64::INFINITY);
    assert!(snr_db(&a, &DenseMatrix::zeros(6, 5)).unwrap().abs() < 1e-12);
    assert!((snr_db(&a, &a.scale(1.01)).unwrap() - 40.0).abs() < 1e-9);
}

#[test]
fn triplet_examples() {
    let obs = read_triplets("0,0,5\n1,2,3".as_bytes(), None, 0).unwrap();
    assert_eq!(obs.len(), 2);
    assert_eq!(obs.shape(), (2, 3));
    assert!(read_triplets("".as_bytes(), None, 0).is_err());
    assert!(read_triplets("".as_bytes(), Some((3, 3)), 0).unwrap().is_empty());
    let ml = read_triplets("1::1193::5::978300760\n1::661::3::978302109\n".as_bytes(), None, 1).unwrap();
    assert_eq!(ml.indices(), &[(0, 1192), (0, 660)]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn snr_is_scale_invariant(seed in any::<u64>(), c in 0.01f64..100.0) {
        let mut g = rng(seed);
        let (a, e) = (gaussian(5, 5, &mut g), gaussian(5, 5, &mut g).scale(0.1));
        let base = snr_db(&a, &a.add(&e).unwrap()).unwrap();
        let scaled = snr_db(&a.scale(c), &a.add(&e).unwrap().scale(c)).unwrap();
        prop_assert!((base - scaled).abs() < 1e-9);
    }

    #[test]
    fn generators_are_deterministic(seed in any::<u64>()) {
        let spec = InstanceSpec::new(9, 7, 2, 0.4, seed);
        prop_assert_eq!(spec.generate().unwrap(), spec.generate().unwrap());
        let m = gen_mask((9, 7), MaskMode::Entries, 0.4, seed).unwrap();
        prop_assert_eq!(m.len(), 25);
        prop_assert_eq!(m, gen_mask((9, 7), MaskMode::Entries, 0.4, seed).unwrap());
    }
}
