//! Turning instance flags into a problem plus whatever truth it is scored on.

use fpareto::data::{contaminate, gen_correlated_slices, gen_low_rank, gen_mask, read_triplets, snr_db, InstanceSpec, MaskMode, SliceSpec};
use fpareto::ops::MidpointOffsetOp;
use fpareto::weight::SliceStack;
use fpareto::{DenseMatrix, FactorPair, Observations, Operator, Penalty, Problem};

use crate::args::{GenSpec, InstanceArgs, Transform};
use crate::CliError;

/// What a recovered factorization is compared against.
#[derive(Debug, Clone)]
pub enum Truth {
    None,
    /// The unknown itself.
    Full(DenseMatrix),
    /// Unknown on the midpoint–offset canvas, scored on the source–receiver grid.
    SourceReceiver { grid: MidpointOffsetOp, truth: DenseMatrix },
    /// Held-out observations.
    Holdout { cells: Vec<(usize, usize)>, values: Vec<f64> },
}

impl Truth {
    pub fn snr(&self, fp: &FactorPair) -> Option<f64> {
        match self {
            Truth::None => None,
            Truth::Full(t) => snr_db(t, &fp.form_product()).ok(),
            Truth::SourceReceiver { grid, truth } => {
                let sr = grid.to_source_receiver(&fp.form_product()).ok()?;
                snr_db(truth, &sr).ok()
            }
            Truth::Holdout { cells, values } => {
                let (mut num, mut den) = (0.0, 0.0);
                for (&(i, j), v) in cells.iter().zip(values) {
                    let p: f64 = fp.l().row(i).iter().zip(fp.r().row(j)).map(|(a, b)| a * b).sum();
                    num += v * v;
                    den += (p - v) * (p - v);
                }
                if num == 0.0 {
                    None
                } else if den == 0.0 {
                    Some(f64::INFINITY)
                } else {
                    Some(10.0 * (num / den).log10())
                }
            }
        }
    }
}

/// A single completion problem ready to solve.
#[derive(Debug, Clone)]
pub struct Prepared {
    /// Least-squares problem; other penalties via [`Problem::with_penalty`].
    pub problem: Problem,
    /// Shape of the data grid (source–receiver grid under the transform).
    pub shape: (usize, usize),
    pub truth: Truth,
}

impl Prepared {
    /// The recovered matrix on the data grid.
    pub fn estimate(&self, fp: &FactorPair) -> Result<DenseMatrix, CliError> {
        let x = fp.form_product();
        Ok(match &self.truth {
            Truth::SourceReceiver { grid, .. } => grid.to_source_receiver(&x)?,
            _ => x,
        })
    }
}

fn bad(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn contamination_of(args: &InstanceArgs) -> (f64, f64) {
    args.contaminate.map_or((0.0, 0.0), |c| (c.fraction, c.multiplier))
}

pub fn prepare(args: &InstanceArgs, seed: u64) -> Result<Prepared, CliError> {
    match (args.generate, &args.input) {
        (Some(GenSpec::LowRank { n, m, rank }), _) => match args.transform {
            Transform::None => generated(args, n, m, rank, seed),
            Transform::MidpointOffset => generated_midpoint_offset(args, n, m, rank, seed),
        },
        (Some(GenSpec::Slices { .. }), _) => Err(bad("this command needs a lowrank:… instance, not a slice stack")),
        (None, Some(path)) => ingested(args, path, seed),
        (None, None) => Err(bad("give --gen or --input")),
    }
}

fn generated(args: &InstanceArgs, n: usize, m: usize, rank: usize, seed: u64) -> Result<Prepared, CliError> {
    let (fraction, multiplier) = contamination_of(args);
    let spec = InstanceSpec {
        mask_mode: args.mask_mode.into(),
        contamination_fraction: fraction,
        contamination_amplitude_multiplier: multiplier,
        ..InstanceSpec::new(n, m, rank, args.sample, seed)
    };
    let inst = spec.generate()?;
    Ok(Prepared {
        problem: Problem::from_observations(&inst.obs, Penalty::TwoNorm),
        shape: (n, m),
        truth: Truth::Full(inst.truth),
    })
}

/// Low rank on the `(n+m−1)²` canvas; sampling and contamination act on the
/// `n×m` source–receiver grid it is gathered to.
fn generated_midpoint_offset(args: &InstanceArgs, n: usize, m: usize, rank: usize, seed: u64) -> Result<Prepared, CliError> {
    let grid = MidpointOffsetOp::new(n, m)?;
    let side = grid.canvas_side();
    if rank > side {
        return Err(bad("rank exceeds the canvas side"));
    }
    let truth = grid.to_source_receiver(&gen_low_rank(side, side, rank, seed))?;
    let mode: MaskMode = args.mask_mode.into();
    let mask = gen_mask((n, m), mode, args.sample, seed)?;
    let clean = Observations::sample(&truth, mask)?;
    let (fraction, multiplier) = contamination_of(args);
    let obs = contaminate(&clean, fraction, multiplier, mode, seed)?.obs;
    let op = Operator::midpoint_offset_sampling(grid, obs.indices().to_vec())?;
    Ok(Prepared {
        problem: Problem::new(op, obs.values().to_vec(), Penalty::TwoNorm)?,
        shape: (n, m),
        truth: Truth::SourceReceiver { grid, truth },
    })
}

fn ingested(args: &InstanceArgs, path: &std::path::Path, seed: u64) -> Result<Prepared, CliError> {
    if args.transform != Transform::None || args.contaminate.is_some() {
        return Err(bad("--transform and --contaminate apply to generated instances only"));
    }
    let obs = read_triplets(std::fs::File::open(path)?, None, args.index_base)?;
    let shape = obs.shape();
    let Some(frac) = args.holdout else {
        return Ok(Prepared {
            problem: Problem::from_observations(&obs, Penalty::TwoNorm),
            shape,
            truth: Truth::None,
        });
    };
    let held: std::collections::HashSet<usize> = gen_mask((obs.len(), 1), MaskMode::Entries, frac, seed)?
        .into_iter()
        .map(|(p, _)| p)
        .collect();
    let (mut train_idx, mut train_val, mut cells, mut values) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for (p, (&cell, &v)) in obs.indices().iter().zip(obs.values()).enumerate() {
        if held.contains(&p) {
            cells.push(cell);
            values.push(v);
        } else {
            train_idx.push(cell);
            train_val.push(v);
        }
    }
    let train = Observations::new(shape, train_idx, train_val)?;
    Ok(Prepared {
        problem: Problem::from_observations(&train, Penalty::TwoNorm),
        shape,
        truth: Truth::Holdout { cells, values },
    })
}

/// A correlated slice stack from `slices:…`.
pub fn prepare_stack(args: &InstanceArgs, seed: u64) -> Result<SliceStack, CliError> {
    let Some(GenSpec::Slices { n, m, rank, count, drift }) = args.generate else {
        return Err(bad("this command needs --gen slices:NxM:rK:COUNT:DRIFT"));
    };
    if args.transform != Transform::None || args.contaminate.is_some() {
        return Err(bad("--transform and --contaminate are not supported on slice stacks"));
    }
    Ok(gen_correlated_slices(&SliceSpec {
        n,
        m,
        rank,
        count,
        drift,
        sampling_fraction: args.sample,
        mask_mode: args.mask_mode.into(),
        seed,
    })?)
}
