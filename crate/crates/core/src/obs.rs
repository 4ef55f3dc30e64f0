//! Observed entries `b` of an unknown matrix.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;
use crate::ops::Operator;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observations {
    shape: (usize, usize),
    indices: Vec<(usize, usize)>,
    values: Vec<f64>,
}

impl Observations {
    pub fn new(shape: (usize, usize), indices: Vec<(usize, usize)>, values: Vec<f64>) -> Result<Self> {
        if indices.len() != values.len() {
            return Err(Error::InvalidObservations(format!(
                "{} indices but {} values",
                indices.len(),
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("observation values"));
        }
        let mut seen = HashSet::with_capacity(indices.len());
        for &(i, j) in &indices {
            if i >= shape.0 || j >= shape.1 {
                return Err(Error::InvalidObservations(format!(
                    "index ({i}, {j}) outside {}x{}",
                    shape.0, shape.1
                )));
            }
            if !seen.insert((i, j)) {
                return Err(Error::InvalidObservations(format!("duplicate index ({i}, {j})")));
            }
        }
        Ok(Self { shape, indices, values })
    }

    /// Entries of `x` at `indices`.
    pub fn sample(x: &DenseMatrix, indices: Vec<(usize, usize)>) -> Result<Self> {
        let values = indices
            .iter()
            .map(|&(i, j)| {
                if i < x.rows() && j < x.cols() {
                    Ok(x.get(i, j))
                } else {
                    Err(Error::InvalidObservations(format!("index ({i}, {j}) out of range")))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(x.shape(), indices, values)
    }

    pub fn shape(&self) -> (usize, usize) {
        self.shape
    }

    pub fn indices(&self) -> &[(usize, usize)] {
        &self.indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Same positions, new values.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        Self::new(self.shape, self.indices.clone(), values)
    }

    /// The sampling operator picking these positions.
    pub fn operator(&self) -> Operator {
        Operator::sampling(self.shape, self.indices.clone()).expect("indices validated")
    }

    /// Zero-filled matrix holding the observed values.
    pub fn to_dense(&self) -> DenseMatrix {
        let mut x = DenseMatrix::zeros(self.shape.0, self.shape.1);
        for (&(i, j), &v) in self.indices.iter().zip(&self.values) {
            x.set(i, j, v);
        }
        x
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validation() {
        assert!(Observations::new((2, 2), vec![(0, 0), (0, 0)], vec![1.0, 2.0]).is_err());
        assert!(Observations::new((2, 2), vec![(2, 0)], vec![1.0]).is_err());
        assert!(Observations::new((2, 2), vec![(0, 0)], vec![f64::NAN]).is_err());
        assert!(Observations::new((2, 2), vec![(0, 0)], vec![]).is_err());
        let o = Observations::new((2, 2), vec![(1, 0)], vec![3.0]).unwrap();
        assert_eq!(o.to_dense().get(1, 0), 3.0);
    }
}
