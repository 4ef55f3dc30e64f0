//! Projections onto the factor surrogate balls and the SVD-based nuclear-norm
//! ball used by the convex reference solver.

use crate::error::{Error, Result};
use crate::factor::FactorPair;
use crate::matrix::DenseMatrix;
use crate::weight::SubspaceWeights;

/// Newton iteration cap for the weighted-ball multiplier.
pub const MAX_MULTIPLIER_ITERATIONS: usize = 100;
/// Relative accuracy `|f(μ) − τ| ≤ tol·τ` demanded of the multiplier.
pub const MULTIPLIER_TOLERANCE: f64 = 1e-13;

/// Ball `½(‖QL‖²_F + ‖WR‖²_F) ≤ τ` with `Q`, `W` built from `weights`.
#[derive(Debug, Clone)]
pub struct WeightedBallSpec {
    pub tau: f64,
    pub weights: SubspaceWeights,
}

impl WeightedBallSpec {
    pub fn new(tau: f64, weights: SubspaceWeights) -> Result<Self> {
        if !(tau >= 0.0 && tau.is_finite()) {
            return Err(Error::InvalidConfig(format!("ball radius must be >= 0, got {tau}")));
        }
        Ok(Self { tau, weights })
    }
}

/// Nearest point of `{½(‖L‖² + ‖R‖²) ≤ τ}`: a uniform rescaling when outside.
pub fn project_frobenius_ball(fp: &FactorPair, tau: f64) -> FactorPair {
    let g = fp.frobenius_surrogate();
    if g <= tau {
        return fp.clone();
    }
    fp.scale((tau.max(0.0) / g).sqrt())
}

/// In-place form on stacked coordinates `[vec L; vec R]`.
pub(crate) fn project_frobenius_flat(z: &mut [f64], tau: f64) {
    let g = 0.5 * z.iter().map(|v| v * v).sum::<f64>();
    if g > tau {
        let c = (tau.max(0.0) / g).sqrt();
        z.iter_mut().for_each(|v| *v *= c);
    }
}

/// The weighted constraint value as a function of the multiplier μ:
///
/// `f(μ) = ½[ω²·A/(μω² + 1)² + B/(μ + 1)²]`
///
/// where `A = ‖ŨᵀL‖² + ‖ṼᵀR‖²` is the in-subspace energy and `B` the energy
/// of the complements. `f(0)` is the weighted surrogate of the input point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LagrangeFunction {
    pub omega: f64,
    pub inside: f64,
    pub outside: f64,
}

impl LagrangeFunction {
    pub fn value(&self, mu: f64) -> f64 {
        let w2 = self.omega * self.omega;
        let a = 1.0 + mu * w2;
        let b = 1.0 + mu;
        0.5 * (w2 * self.inside / (a * a) + self.outside / (b * b))
    }

    pub fn derivative(&self, mu: f64) -> f64 {
        let w2 = self.omega * self.omega;
        let a = 1.0 + mu * w2;
        let b = 1.0 + mu;
        -(w2 * w2 * self.inside / (a * a * a)) - self.outside / (b * b * b)
    }

    /// Solves `f(μ) = τ` for `μ > 0` by Newton steps kept inside a bracket,
    /// falling back to bisection. Requires `f(0) > τ > 0`.
    pub fn solve(&self, tau: f64) -> Result<(f64, usize)> {
        let (mut lo, mut hi) = (0.0_f64, f64::INFINITY);
        let mut mu = 0.0;
        for it in 1..=MAX_MULTIPLIER_ITERATIONS {
            let f = self.value(mu);
            if (f - tau).abs() <= MULTIPLIER_TOLERANCE * tau {
                return Ok((mu, it));
            }
            if f > tau {
                lo = mu;
            } else {
                hi = mu;
            }
            let step = mu - (f - tau) / self.derivative(mu);
            mu = if step.is_finite() && step > lo && step < hi {
                step
            } else if hi.is_finite() {
                0.5 * (lo + hi)
            } else {
                2.0 * mu + 1.0
            };
        }
        Err(Error::ProjectionFailure {
            iterations: MAX_MULTIPLIER_ITERATIONS,
        })
    }
}

/// Split of a factor into its component in `span(basis)` and the remainder,
/// both computed with thin products: `P = basisᵀ·F`, `F_perp = F − basis·P`.
struct SubspaceSplit {
    coeffs: DenseMatrix,
    perp: DenseMatrix,
}

impl SubspaceSplit {
    fn new(basis: &DenseMatrix, f: &DenseMatrix) -> Self {
        let coeffs = basis.transpose_matmul(f).expect("basis rows match factor rows");
        let along = basis.matmul(&coeffs).expect("shapes agree");
        let perp = f.sub(&along).expect("shapes agree");
        Self { coeffs, perp }
    }

    /// `c_in·basis·P + c_out·F_perp`.
    fn recombine(&self, basis: &DenseMatrix, c_in: f64, c_out: f64) -> DenseMatrix {
        let along = basis.matmul(&self.coeffs).expect("shapes agree");
        DenseMatrix::from_fn(self.perp.rows(), self.perp.cols(), |i, j| {
            c_in * along.get(i, j) + c_out * self.perp.get(i, j)
        })
    }
}

pub(crate) fn lagrange_function(fp: &FactorPair, weights: &SubspaceWeights) -> LagrangeFunction {
    let sl = SubspaceSplit::new(weights.u(), fp.l());
    let sr = SubspaceSplit::new(weights.v(), fp.r());
    LagrangeFunction {
        omega: weights.omega(),
        inside: sl.coeffs.frobenius_sq() + sr.coeffs.frobenius_sq(),
        outside: sl.perp.frobenius_sq() + sr.perp.frobenius_sq(),
    }
}

/// Nearest point of the weighted ball `½(‖QL‖² + ‖WR‖²) ≤ τ`:
///
/// `L̃ = [(μω²+1)⁻¹ ŨŨᵀ + (μ+1)⁻¹ (I − ŨŨᵀ)] L`, and likewise for `R` with `Ṽ`.
pub fn project_weighted_frobenius_ball(
    fp: &FactorPair,
    spec: &WeightedBallSpec,
) -> Result<FactorPair> {
    let w = &spec.weights;
    check_weight_shapes(fp, w)?;
    if w.omega() == 1.0 {
        return Ok(project_frobenius_ball(fp, spec.tau));
    }
    let sl = SubspaceSplit::new(w.u(), fp.l());
    let sr = SubspaceSplit::new(w.v(), fp.r());
    let f = LagrangeFunction {
        omega: w.omega(),
        inside: sl.coeffs.frobenius_sq() + sr.coeffs.frobenius_sq(),
        outside: sl.perp.frobenius_sq() + sr.perp.frobenius_sq(),
    };
    if f.value(0.0) <= spec.tau {
        return Ok(fp.clone());
    }
    if spec.tau == 0.0 {
        let (n, m) = fp.shape();
        return Ok(FactorPair::zeros(n, m, fp.rank()));
    }
    let (mu, _) = f.solve(spec.tau)?;
    let c_in = 1.0 / (mu * w.omega() * w.omega() + 1.0);
    let c_out = 1.0 / (mu + 1.0);
    FactorPair::new(
        sl.recombine(w.u(), c_in, c_out),
        sr.recombine(w.v(), c_in, c_out),
    )
}

fn check_weight_shapes(fp: &FactorPair, w: &SubspaceWeights) -> Result<()> {
    let (n, m) = fp.shape();
    if w.u().rows() != n || w.v().rows() != m {
        return Err(Error::DimensionMismatch {
            context: "weighted projection",
            expected: (n, m),
            got: (w.u().rows(), w.v().rows()),
        });
    }
    Ok(())
}

/// Euclidean projection of a non-negative vector onto `{x ≥ 0, Σx ≤ τ}`.
pub fn project_l1_simplex(sigma: &[f64], tau: f64) -> Vec<f64> {
    let clipped: Vec<f64> = sigma.iter().map(|s| s.max(0.0)).collect();
    if clipped.iter().sum::<f64>() <= tau {
        return clipped;
    }
    if tau <= 0.0 {
        return vec![0.0; sigma.len()];
    }
    let mut sorted = clipped.clone();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (j, &u) in sorted.iter().enumerate() {
        cumsum += u;
        let t = (cumsum - tau) / (j + 1) as f64;
        if u - t > 0.0 {
            theta = t;
        } else {
            break;
        }
    }
    clipped.iter().map(|s| (s - theta).max(0.0)).collect()
}

/// Nearest point of `{‖X‖_* ≤ τ}`: project the singular values onto the
/// ℓ₁-ball and recompose.
pub fn project_nuclear_ball(x: &DenseMatrix, tau: f64) -> DenseMatrix {
    let svd = x.svd();
    if svd.sigma.iter().sum::<f64>() <= tau {
        return x.clone();
    }
    let s = project_l1_simplex(&svd.sigma, tau);
    svd.recompose(&s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeded_rng;

    fn scalar_pair(v: f64) -> FactorPair {
        let m = DenseMatrix::from_rows(&[[v]]).unwrap();
        FactorPair::new(m.clone(), m).unwrap()
    }

    #[test]
    fn frobenius_ball_examples() {
        let p = project_frobenius_ball(&scalar_pair(2.0), 1.0);
        assert!((p.l().get(0, 0) - 1.0).abs() < 1e-15);
        assert!((p.frobenius_surrogate() - 1.0).abs() < 1e-15);
        let inside = scalar_pair(0.5);
        assert_eq!(project_frobenius_ball(&inside, 1.0), inside);
        let zero = project_frobenius_ball(&scalar_pair(3.0), 0.0);
        assert_eq!(zero.frobenius_surrogate(), 0.0);
    }

    #[test]
    fn simplex_examples() {
        assert_eq!(project_l1_simplex(&[3.0, 1.0], 2.0), vec![2.0, 0.0]);
        assert_eq!(project_l1_simplex(&[0.5, 1.0], 2.0), vec![0.5, 1.0]);
        assert_eq!(project_l1_simplex(&[0.5, 1.0], 0.0), vec![0.0, 0.0]);
    }

    #[test]
    fn nuclear_ball_examples() {
        let d = DenseMatrix::diag(&[3.0, 1.0]);
        assert_eq!(project_nuclear_ball(&d, 4.0), d);
        let p = project_nuclear_ball(&d, 2.0);
        let expect = DenseMatrix::diag(&[2.0, 0.0]);
        assert!(p.sub(&expect).unwrap().frobenius_norm() < 1e-12);
    }

    #[test]
    fn lagrange_derivative_matches_finite_differences() {
        let f = LagrangeFunction {
            omega: 0.4,
            inside: 3.0,
            outside: 1.7,
        };
        for mu in [0.0, 0.3, 2.0, 11.0] {
            let h = 1e-6 * (1.0 + mu);
            let fd = (f.value(mu + h) - f.value(mu - h).max(f64::MIN)) / (2.0 * h);
            let fd = if mu == 0.0 { (f.value(h) - f.value(0.0)) / h } else { fd };
            let d = f.derivative(mu);
            let tol = if mu == 0.0 { 1e-4 } else { 1e-6 };
            assert!((fd - d).abs() <= tol * d.abs(), "mu={mu}: fd={fd} d={d}");
        }
    }

    #[test]
    fn unit_weights_match_uniform_scaling() {
        let mut rng = seeded_rng(11);
        let fp = FactorPair::gaussian(6, 5, 2, &mut rng);
        let w = SubspaceWeights::from_factor_subspaces(&FactorPair::gaussian(6, 5, 2, &mut rng), 2, 1.0)
            .unwrap();
        let tau = 0.3 * fp.frobenius_surrogate();
        let spec = WeightedBallSpec::new(tau, w).unwrap();
        let a = project_weighted_frobenius_ball(&fp, &spec).unwrap();
        let b = project_frobenius_ball(&fp, tau);
        let diff = a.form_product().sub(&b.form_product()).unwrap().frobenius_norm();
        assert!(diff <= 1e-10 * b.form_product().frobenius_norm());
    }
}
