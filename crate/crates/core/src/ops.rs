//! Linear measurement operators and their adjoints.
//!
//! Every operator maps a flattened row-major matrix of `input_shape()` to a
//! flat vector of `output_len()` entries. Operators that reduce to picking
//! coordinates of their input (sampling, the inverse midpoint-offset gather,
//! and compositions of those) expose the picked cells through
//! [`Operator::gather_cells`], which is what the O(kp) factored forward map
//! and the sparse gradient assembly run on.

use std::io::{BufRead, BufReader, Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::factor::FactorPair;
use crate::matrix::{dot, DenseMatrix};

/// Gathers `p` entries of an `n×m` matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingOp {
    shape: (usize, usize),
    indices: Vec<(usize, usize)>,
}

impl SamplingOp {
    pub fn new(shape: (usize, usize), indices: Vec<(usize, usize)>) -> Result<Self> {
        let mut seen = vec![false; shape.0 * shape.1];
        for &(i, j) in &indices {
            if i >= shape.0 || j >= shape.1 {
                return Err(Error::InvalidObservations(format!(
                    "index ({i}, {j}) outside {}×{}",
                    shape.0, shape.1
                )));
            }
            let flat = i * shape.1 + j;
            if seen[flat] {
                return Err(Error::InvalidObservations(format!("duplicate index ({i}, {j})")));
            }
            seen[flat] = true;
        }
        Ok(Self { shape, indices })
    }

    pub fn shape(&self) -> (usize, usize) {
        self.shape
    }

    pub fn indices(&self) -> &[(usize, usize)] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Relocates a source–receiver grid onto the midpoint–offset canvas.
///
/// With 1-based `(s, r)`, the entry lands at `(s + r − 1, s − r + nr)` on a
/// square canvas of side `ns + nr − 1`; cells not hit by any `(s, r)` stay zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MidpointOffsetOp {
    pub ns: usize,
    pub nr: usize,
}

impl MidpointOffsetOp {
    pub fn new(ns: usize, nr: usize) -> Result<Self> {
        if ns == 0 || nr == 0 {
            return Err(Error::InvalidConfig("midpoint-offset grid must be non-empty".into()));
        }
        Ok(Self { ns, nr })
    }

    pub fn canvas_side(&self) -> usize {
        self.ns + self.nr - 1
    }

    pub fn canvas_shape(&self) -> (usize, usize) {
        (self.canvas_side(), self.canvas_side())
    }

    /// Zero-based canvas cell `(midpoint, offset)` of zero-based `(s, r)`.
    #[inline]
    pub fn cell(&self, s: usize, r: usize) -> (usize, usize) {
        (s + r, s + self.nr - 1 - r)
    }

    /// Flat canvas index of every source–receiver pair, in row-major `(s, r)` order.
    fn canvas_flat(&self) -> Vec<usize> {
        let side = self.canvas_side();
        let mut out = Vec::with_capacity(self.ns * self.nr);
        for s in 0..self.ns {
            for r in 0..self.nr {
                let (mi, hi) = self.cell(s, r);
                out.push(mi * side + hi);
            }
        }
        out
    }

    /// Scatters an `ns×nr` slice onto the canvas.
    pub fn to_midpoint_offset(&self, x: &DenseMatrix) -> Result<DenseMatrix> {
        check_shape(x.shape(), (self.ns, self.nr), "source_receiver_to_midpoint_offset")?;
        let side = self.canvas_side();
        let mut out = DenseMatrix::zeros(side, side);
        for s in 0..self.ns {
            for r in 0..self.nr {
                let (mi, hi) = self.cell(s, r);
                out.set(mi, hi, x.get(s, r));
            }
        }
        Ok(out)
    }

    /// Gathers the `ns×nr` slice back out of a canvas.
    pub fn to_source_receiver(&self, canvas: &DenseMatrix) -> Result<DenseMatrix> {
        check_shape(canvas.shape(), self.canvas_shape(), "midpoint_offset_to_source_receiver")?;
        Ok(DenseMatrix::from_fn(self.ns, self.nr, |s, r| {
            let (mi, hi) = self.cell(s, r);
            canvas.get(mi, hi)
        }))
    }
}

/// Free function form of [`MidpointOffsetOp::to_midpoint_offset`].
pub fn source_receiver_to_midpoint_offset(
    op: &MidpointOffsetOp,
    x: &DenseMatrix,
) -> Result<DenseMatrix> {
    op.to_midpoint_offset(x)
}

/// Operators applied right to left: `components[0] ∘ … ∘ components[last]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompositeOp {
    components: Vec<Operator>,
}

impl CompositeOp {
    pub fn new(components: Vec<Operator>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::InvalidConfig("composite operator needs a component".into()));
        }
        for pair in components.windows(2) {
            let (outer, inner) = (&pair[0], &pair[1]);
            if inner.output_len() != flat_len(outer.input_shape()) {
                return Err(Error::DimensionMismatch {
                    context: "composite operator",
                    expected: outer.input_shape(),
                    got: inner.output_shape(),
                });
            }
        }
        Ok(Self { components })
    }

    pub fn components(&self) -> &[Operator] {
        &self.components
    }
}

/// A linear measurement map and its descriptor form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Operator {
    Identity { shape: (usize, usize) },
    Sampling(SamplingOp),
    MidpointOffset(MidpointOffsetOp),
    Adjoint { inner: Box<Operator> },
    Composite(CompositeOp),
}

impl Operator {
    pub fn sampling(shape: (usize, usize), indices: Vec<(usize, usize)>) -> Result<Self> {
        Ok(Self::Sampling(SamplingOp::new(shape, indices)?))
    }

    pub fn adjoint_of(op: Operator) -> Self {
        match op {
            Operator::Adjoint { inner } => *inner,
            other => Operator::Adjoint { inner: Box::new(other) },
        }
    }

    pub fn composite(components: Vec<Operator>) -> Result<Self> {
        Ok(Self::Composite(CompositeOp::new(components)?))
    }

    /// `A = R·Sᴴ`: the unknown lives on the midpoint–offset canvas, is
    /// gathered back to the source–receiver grid, then sampled there.
    pub fn midpoint_offset_sampling(
        grid: MidpointOffsetOp,
        sr_indices: Vec<(usize, usize)>,
    ) -> Result<Self> {
        let sampling = Self::sampling((grid.ns, grid.nr), sr_indices)?;
        Self::composite(vec![sampling, Self::adjoint_of(Self::MidpointOffset(grid))])
    }

    pub fn input_shape(&self) -> (usize, usize) {
        match self {
            Operator::Identity { shape } => *shape,
            Operator::Sampling(s) => s.shape,
            Operator::MidpointOffset(mo) => (mo.ns, mo.nr),
            Operator::Adjoint { inner } => inner.output_shape(),
            Operator::Composite(c) => c.components.last().expect("non-empty").input_shape(),
        }
    }

    pub fn output_shape(&self) -> (usize, usize) {
        match self {
            Operator::Identity { shape } => *shape,
            Operator::Sampling(s) => (s.indices.len(), 1),
            Operator::MidpointOffset(mo) => mo.canvas_shape(),
            Operator::Adjoint { inner } => inner.input_shape(),
            Operator::Composite(c) => c.components[0].output_shape(),
        }
    }

    pub fn output_len(&self) -> usize {
        flat_len(self.output_shape())
    }

    /// Flat input positions picked by each output entry, when the operator is
    /// a pure coordinate gather.
    pub fn gather_indices(&self) -> Option<Vec<usize>> {
        match self {
            Operator::Identity { shape } => Some((0..flat_len(*shape)).collect()),
            Operator::Sampling(s) => Some(s.indices.iter().map(|&(i, j)| i * s.shape.1 + j).collect()),
            Operator::MidpointOffset(_) => None,
            Operator::Adjoint { inner } => match inner.as_ref() {
                Operator::MidpointOffset(mo) => Some(mo.canvas_flat()),
                Operator::Identity { shape } => Some((0..flat_len(*shape)).collect()),
                Operator::Adjoint { inner } => inner.gather_indices(),
                Operator::Composite(c) => {
                    let reversed: Vec<Operator> =
                        c.components.iter().rev().cloned().map(Operator::adjoint_of).collect();
                    Operator::Composite(CompositeOp { components: reversed }).gather_indices()
                }
                Operator::Sampling(_) => None,
            },
            Operator::Composite(c) => {
                let mut iter = c.components.iter().rev();
                let mut idx = iter.next()?.gather_indices()?;
                for op in iter {
                    let outer = op.gather_indices()?;
                    idx = outer.into_iter().map(|o| idx[o]).collect();
                }
                Some(idx)
            }
        }
    }

    /// Cells `(row, col)` of the input matrix picked by each output entry.
    pub fn gather_cells(&self) -> Option<Vec<(usize, usize)>> {
        let cols = self.input_shape().1.max(1);
        self.gather_indices()
            .map(|idx| idx.into_iter().map(|f| (f / cols, f % cols)).collect())
    }

    fn forward_flat(&self, x: &[f64]) -> Vec<f64> {
        match self {
            Operator::Identity { .. } => x.to_vec(),
            Operator::Sampling(s) => s.indices.iter().map(|&(i, j)| x[i * s.shape.1 + j]).collect(),
            Operator::MidpointOffset(mo) => {
                let mut out = vec![0.0; flat_len(mo.canvas_shape())];
                for (sr, c) in mo.canvas_flat().into_iter().enumerate() {
                    out[c] = x[sr];
                }
                out
            }
            Operator::Adjoint { inner } => inner.adjoint_flat(x),
            Operator::Composite(c) => {
                let mut v = x.to_vec();
                for op in c.components.iter().rev() {
                    v = op.forward_flat(&v);
                }
                v
            }
        }
    }

    fn adjoint_flat(&self, y: &[f64]) -> Vec<f64> {
        match self {
            Operator::Identity { .. } => y.to_vec(),
            Operator::Sampling(s) => {
                let mut out = vec![0.0; flat_len(s.shape)];
                for (&(i, j), &v) in s.indices.iter().zip(y) {
                    out[i * s.shape.1 + j] += v;
                }
                out
            }
            Operator::MidpointOffset(mo) => mo.canvas_flat().into_iter().map(|c| y[c]).collect(),
            Operator::Adjoint { inner } => inner.forward_flat(y),
            Operator::Composite(c) => {
                let mut v = y.to_vec();
                for op in &c.components {
                    v = op.adjoint_flat(&v);
                }
                v
            }
        }
    }
}

fn flat_len(shape: (usize, usize)) -> usize {
    shape.0 * shape.1
}

fn check_shape(got: (usize, usize), expected: (usize, usize), context: &'static str) -> Result<()> {
    if got != expected {
        return Err(Error::DimensionMismatch {
            context,
            expected,
            got,
        });
    }
    Ok(())
}

/// `A(X)`.
pub fn apply_forward(op: &Operator, x: &DenseMatrix) -> Result<Vec<f64>> {
    check_shape(x.shape(), op.input_shape(), "apply_forward")?;
    Ok(op.forward_flat(x.as_slice()))
}

/// `A*(y)`, reshaped to the operator's input shape.
pub fn apply_adjoint(op: &Operator, y: &[f64]) -> Result<DenseMatrix> {
    if y.len() != op.output_len() {
        return Err(Error::DimensionMismatch {
            context: "apply_adjoint",
            expected: (op.output_len(), 1),
            got: (y.len(), 1),
        });
    }
    let (n, m) = op.input_shape();
    Ok(DenseMatrix::from_vec_unchecked(n, m, op.adjoint_flat(y)))
}

/// `A(L·Rᵀ)` evaluated only on the gathered cells, O(k) per entry.
pub fn apply_forward_factored(op: &Operator, fp: &FactorPair) -> Result<Vec<f64>> {
    apply_forward_factored_with(op, fp, |_, _| {})
}

/// Like [`apply_forward_factored`], calling `hook(row, col)` for each product
/// entry it forms.
pub fn apply_forward_factored_with(
    op: &Operator,
    fp: &FactorPair,
    mut hook: impl FnMut(usize, usize),
) -> Result<Vec<f64>> {
    check_shape(fp.shape(), op.input_shape(), "apply_forward_factored")?;
    let cells = op.gather_cells().ok_or(Error::UnsupportedOperator)?;
    Ok(cells
        .into_iter()
        .map(|(i, j)| {
            hook(i, j);
            dot(fp.l().row(i), fp.r().row(j))
        })
        .collect())
}

/// Reads a mask file of zero-based `row,col` lines.
pub fn read_mask_csv<R: Read>(r: R) -> Result<Vec<(usize, usize)>> {
    let mut out = Vec::new();
    for (lineno, line) in BufReader::new(r).lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let parse = |tok: Option<&str>| -> Result<usize> {
            let tok = tok.ok_or_else(|| Error::Parse {
                line: lineno + 1,
                message: "expected row,col".into(),
            })?;
            tok.trim().parse().map_err(|e| Error::Parse {
                line: lineno + 1,
                message: format!("{tok:?}: {e}"),
            })
        };
        let mut toks = line.split(',');
        let row = parse(toks.next())?;
        let col = parse(toks.next())?;
        if toks.next().is_some() {
            return Err(Error::Parse {
                line: lineno + 1,
                message: "expected exactly two fields".into(),
            });
        }
        out.push((row, col));
    }
    Ok(out)
}

pub fn write_mask_csv<W: Write>(mut w: W, indices: &[(usize, usize)]) -> Result<()> {
    for (i, j) in indices {
        writeln!(w, "{i},{j}")?;
    }
    Ok(())
}
