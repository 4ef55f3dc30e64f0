//! Misfit functionals ρ: the (un-squared) 2-norm and the Student's t
//! negative log-likelihood.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{dot, norm2};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Penalty {
    TwoNorm,
    StudentsT { nu: f64 },
}

impl Penalty {
    pub fn students_t(nu: f64) -> Result<Self> {
        if !(nu > 0.0 && nu.is_finite()) {
            return Err(Error::InvalidConfig(format!("Student's t needs nu > 0, got {nu}")));
        }
        Ok(Penalty::StudentsT { nu })
    }

    /// `‖r‖₂` or `Σ log(ν + rᵢ²)`.
    pub fn rho_value(&self, r: &[f64]) -> Result<f64> {
        check_finite(r)?;
        Ok(match *self {
            Penalty::TwoNorm => norm2(r),
            Penalty::StudentsT { nu } => r.iter().map(|ri| (nu + ri * ri).ln()).sum(),
        })
    }

    /// The misfit the solvers target: `ρ(r) − ρ(0)`, zero at an exact fit.
    ///
    /// Identical to [`Penalty::rho_value`] for the 2-norm; for Student's t it
    /// is `Σ log(1 + rᵢ²/ν)`.
    pub fn misfit(&self, r: &[f64]) -> Result<f64> {
        check_finite(r)?;
        Ok(self.misfit_unchecked(r))
    }

    pub(crate) fn misfit_unchecked(&self, r: &[f64]) -> f64 {
        match *self {
            Penalty::TwoNorm => norm2(r),
            Penalty::StudentsT { nu } => r.iter().map(|ri| (ri * ri / nu).ln_1p()).sum(),
        }
    }

    /// `∇ρ(r)`: `r/‖r‖₂` or `2rᵢ/(ν + rᵢ²)`.
    pub fn rho_gradient(&self, r: &[f64]) -> Result<Vec<f64>> {
        check_finite(r)?;
        match *self {
            Penalty::TwoNorm => {
                let n = norm2(r);
                if n == 0.0 {
                    return Err(Error::GradientUndefined);
                }
                Ok(r.iter().map(|ri| ri / n).collect())
            }
            Penalty::StudentsT { nu } => Ok(r.iter().map(|&ri| 2.0 * ri / (nu + ri * ri)).collect()),
        }
    }

    /// Smooth objective minimized by the subproblem solver, with its gradient
    /// with respect to the residual written into `grad`.
    ///
    /// The 2-norm is minimized in its squared form `½‖r‖²`, which has the same
    /// minimizers on any constraint set and stays smooth at `r = 0`.
    pub(crate) fn working_value_grad(&self, r: &[f64], grad: &mut [f64]) -> f64 {
        match *self {
            Penalty::TwoNorm => {
                grad.copy_from_slice(r);
                0.5 * dot(r, r)
            }
            Penalty::StudentsT { nu } => {
                let mut acc = 0.0;
                for (g, &ri) in grad.iter_mut().zip(r) {
                    *g = 2.0 * ri / (nu + ri * ri);
                    acc += (ri * ri / nu).ln_1p();
                }
                acc
            }
        }
    }

    /// Misfit corresponding to a working objective value.
    pub(crate) fn misfit_from_working(&self, working: f64) -> f64 {
        match self {
            Penalty::TwoNorm => (2.0 * working.max(0.0)).sqrt(),
            Penalty::StudentsT { .. } => working,
        }
    }
}

/// Free function form of [`Penalty::rho_value`].
pub fn rho_value(p: &Penalty, r: &[f64]) -> Result<f64> {
    p.rho_value(r)
}

/// Free function form of [`Penalty::rho_gradient`].
pub fn rho_gradient(p: &Penalty, r: &[f64]) -> Result<Vec<f64>> {
    p.rho_gradient(r)
}

fn check_finite(r: &[f64]) -> Result<()> {
    if r.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite("residual"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_norm_examples() {
        let p = Penalty::TwoNorm;
        assert_eq!(rho_value(&p, &[3.0, 4.0]).unwrap(), 5.0);
        let g = rho_gradient(&p, &[3.0, 4.0]).unwrap();
        assert!((g[0] - 0.6).abs() < 1e-15 && (g[1] - 0.8).abs() < 1e-15);
        assert!(matches!(rho_gradient(&p, &[0.0, 0.0]), Err(Error::GradientUndefined)));
        assert_eq!(rho_value(&p, &[0.0; 4]).unwrap(), 0.0);
    }

    #[test]
    fn students_t_examples() {
        let p = Penalty::students_t(1.0).unwrap();
        assert_eq!(rho_value(&p, &[0.0, 0.0]).unwrap(), 0.0);
        assert!((rho_value(&p, &[1.0]).unwrap() - 2f64.ln()).abs() < 1e-15);
        assert_eq!(rho_gradient(&p, &[1.0]).unwrap(), vec![1.0]);
    }

    #[test]
    fn students_t_offset() {
        let p = Penalty::students_t(3.0).unwrap();
        let r = [0.0; 5];
        assert!((p.rho_value(&r).unwrap() - 5.0 * 3f64.ln()).abs() < 1e-14);
        assert_eq!(p.misfit(&r).unwrap(), 0.0);
        let r = [0.5, -2.0, 7.0];
        let expect = p.rho_value(&r).unwrap() - 3.0 * 3f64.ln();
        assert!((p.misfit(&r).unwrap() - expect).abs() < 1e-13);
    }

    #[test]
    fn invalid_inputs() {
        assert!(Penalty::students_t(0.0).is_err());
        assert!(Penalty::students_t(f64::NAN).is_err());
        assert!(matches!(
            Penalty::TwoNorm.rho_value(&[f64::INFINITY]),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn working_form_recovers_misfit() {
        let r = [0.3, -1.2, 2.0];
        for p in [Penalty::TwoNorm, Penalty::students_t(0.5).unwrap()] {
            let w = p.working_value_grad(&r, &mut [0.0; 3]);
            assert!((p.misfit_from_working(w) - p.misfit(&r).unwrap()).abs() < 1e-14);
        }
    }
}
