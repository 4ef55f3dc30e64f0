//! Command-line surface. Every argument struct is also serializable so a
//! report can carry the exact invocation and be re-run from it.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use fpareto::data::MaskMode;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Parser, Serialize, Deserialize)]
#[command(name = "fpareto", version, about = "Factorized Pareto-curve matrix completion benchmarks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, PartialEq, Subcommand, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "kebab-case")]
pub enum Command {
    /// Factored BPDN solve on a generated or ingested instance.
    Complete(RunArgs),
    /// Unregularized factored least squares run to its iteration budget.
    BaselineLsqr(RunArgs),
    /// Student's t solves over a list of ν against a least-squares solve.
    Robust(RunArgs),
    /// Subspace-weighted solve of one slice against its unweighted solve.
    Weighted(WeightedArgs),
    /// Weighted continuation over a slice stack.
    Continuation(RunArgs),
    /// Factored against SVD-projected value functions on small instances.
    OracleCheck(OracleArgs),
    /// Re-runs the invocation stored in a JSON report.
    Rerun(RerunArgs),
}

impl Command {
    pub fn output(&self) -> &OutputArgs {
        match self {
            Command::Complete(a) | Command::BaselineLsqr(a) | Command::Robust(a) | Command::Continuation(a) => &a.output,
            Command::Weighted(a) => &a.run.output,
            Command::OracleCheck(a) => &a.output,
            Command::Rerun(a) => &a.output,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct RunArgs {
    #[command(flatten)]
    pub instance: InstanceArgs,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct InstanceArgs {
    /// Synthetic instance: lowrank:NxM:rK or slices:NxM:rK:COUNT:DRIFT.
    #[arg(long = "gen", value_name = "SPEC", conflicts_with = "input")]
    pub generate: Option<GenSpec>,
    /// Observed triplets `row,col,value` (or `row::col::value::…`).
    #[arg(long, value_name = "PATH")]
    pub input: Option<PathBuf>,
    /// Index base of the triplet file.
    #[arg(long, default_value_t = 0)]
    pub index_base: usize,
    /// Hold out this fraction of ingested entries and score on them.
    #[arg(long, value_name = "F")]
    pub holdout: Option<f64>,
    /// Sampling fraction for generated instances.
    #[arg(long, default_value_t = 0.5)]
    pub sample: f64,
    #[arg(long, value_enum, default_value_t = MaskArg::Entries)]
    pub mask_mode: MaskArg,
    /// Replace a fraction F of the sampled units by uniform noise on ±MULT·max|b|.
    #[arg(long, value_name = "F:MULT")]
    pub contaminate: Option<Contamination>,
    /// Domain the low-rank unknown lives in.
    #[arg(long, value_enum, default_value_t = Transform::None)]
    pub transform: Transform,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct SolverArgs {
    #[arg(long, value_enum, default_value_t = PenaltyArg::Ls)]
    pub penalty: PenaltyArg,
    /// Student's t degrees of freedom; a comma list for `robust`.
    #[arg(long, value_delimiter = ',', default_value = "1")]
    pub nu: Vec<f64>,
    /// Factor rank k.
    #[arg(long, default_value_t = 10)]
    pub rank: usize,
    /// Grow the rank by DK columns when Newton progress stalls.
    #[arg(long, value_name = "DK")]
    pub rank_grow: Option<usize>,
    /// Target misfit as a fraction of the misfit of the zero matrix.
    #[arg(long, conflicts_with = "eta_abs")]
    pub eta_rel: Option<f64>,
    #[arg(long)]
    pub eta_abs: Option<f64>,
    /// Weight on the prior subspaces, in (0, 1].
    #[arg(long, default_value_t = fpareto::weight::DEFAULT_OMEGA)]
    pub omega: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Independent runs with seeds seed, seed+1, …, solved in parallel.
    #[arg(long, default_value_t = 1)]
    pub repeats: usize,
    /// Iteration cap of one inner solve.
    #[arg(long)]
    pub max_inner: Option<usize>,
    /// Cap on τ updates.
    #[arg(long)]
    pub max_outer: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct OutputArgs {
    /// Report destination; stdout when absent.
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    pub format: Format,
    /// Write the recovered matrix of the first run (binary format).
    #[arg(long, value_name = "PATH")]
    pub save_matrix: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct WeightedArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Where the subspaces come from: true, previous, or file:U.bin,V.bin.
    #[arg(long, default_value = "true")]
    pub subspace: SubspaceSource,
    /// Zero-based slice to solve when --gen makes a stack.
    #[arg(long, default_value_t = 1)]
    pub slice: usize,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct OracleArgs {
    #[arg(long = "gen", value_name = "SPEC", default_value = "lowrank:15x15:r3")]
    pub generate: GenSpec,
    #[arg(long, default_value_t = 0.5)]
    pub sample: f64,
    /// Factor rank of the factored solver.
    #[arg(long, default_value_t = 3)]
    pub rank: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Number of seeded instances.
    #[arg(long, default_value_t = 10)]
    pub repeats: usize,
    /// τ grid as fractions of the truth's nuclear norm.
    #[arg(long, value_delimiter = ',', default_value = "0.08,0.16,0.24,0.32,0.40")]
    pub tau_grid: Vec<f64>,
    /// Largest tolerated |v_factored − v_convex| at rank-valid points.
    #[arg(long, default_value_t = 1e-4)]
    pub threshold: f64,
    /// Target of the final-τ comparison.
    #[arg(long, default_value_t = 0.1)]
    pub eta_rel: f64,
    #[arg(long, default_value_t = 20_000)]
    pub max_inner: usize,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct RerunArgs {
    pub report: PathBuf,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MaskArg {
    Entries,
    Columns,
}

impl From<MaskArg> for MaskMode {
    fn from(m: MaskArg) -> Self {
        match m {
            MaskArg::Entries => MaskMode::Entries,
            MaskArg::Columns => MaskMode::Columns,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PenaltyArg {
    Ls,
    Student,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Transform {
    None,
    /// Unknown on the midpoint–offset canvas, data on the source–receiver grid.
    MidpointOffset,
}

/// A synthetic instance description.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum GenSpec {
    LowRank { n: usize, m: usize, rank: usize },
    Slices { n: usize, m: usize, rank: usize, count: usize, drift: f64 },
}

impl GenSpec {
    pub fn shape(&self) -> (usize, usize) {
        match *self {
            GenSpec::LowRank { n, m, .. } | GenSpec::Slices { n, m, .. } => (n, m),
        }
    }

    pub fn rank(&self) -> usize {
        match *self {
            GenSpec::LowRank { rank, .. } | GenSpec::Slices { rank, .. } => rank,
        }
    }
}

fn parse_shape(s: &str) -> Result<(usize, usize), String> {
    let (n, m) = s.split_once('x').ok_or_else(|| format!("expected NxM, got {s:?}"))?;
    let n = n.parse().map_err(|_| format!("bad row count {n:?}"))?;
    let m = m.parse().map_err(|_| format!("bad column count {m:?}"))?;
    Ok((n, m))
}

fn parse_rank(s: &str) -> Result<usize, String> {
    s.strip_prefix('r')
        .and_then(|k| k.parse().ok())
        .ok_or_else(|| format!("expected rK, got {s:?}"))
}

impl FromStr for GenSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let parts: Vec<&str> = s.split(':').collect();
        match parts.as_slice() {
            ["lowrank", shape, rank] => {
                let (n, m) = parse_shape(shape)?;
                Ok(GenSpec::LowRank { n, m, rank: parse_rank(rank)? })
            }
            ["slices", shape, rank, count, drift] => {
                let (n, m) = parse_shape(shape)?;
                Ok(GenSpec::Slices {
                    n,
                    m,
                    rank: parse_rank(rank)?,
                    count: count.parse().map_err(|_| format!("bad slice count {count:?}"))?,
                    drift: drift.parse().map_err(|_| format!("bad drift {drift:?}"))?,
                })
            }
            _ => Err(format!("expected lowrank:NxM:rK or slices:NxM:rK:COUNT:DRIFT, got {s:?}")),
        }
    }
}

impl fmt::Display for GenSpec {
    fn fmt(&self, f: &mut fmt::Formatter) -> fmt::Result {
        match *self {
            GenSpec::LowRank { n, m, rank } => write!(f, "lowrank:{n}x{m}:r{rank}"),
            GenSpec::Slices { n, m, rank, count, drift } => write!(f, "slices:{n}x{m}:r{rank}:{count}:{drift}"),
        }
    }
}

impl From<GenSpec> for String {
    fn from(g: GenSpec) -> Self {
        g.to_string()
    }
}

impl TryFrom<String> for GenSpec {
    type Error = String;

    fn try_from(s: String) -> Result<Self, String> {
        s.parse()
    }
}

/// `F:MULT`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub struct Contamination {
    pub fraction: f64,
    pub multiplier: f64,
}

impl FromStr for Contamination {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let (f, m) = s.split_once(':').ok_or_else(|| format!("expected F:MULT, got {s:?}"))?;
        Ok(Self {
            fraction: f.parse().map_err(|_| format!("bad fraction {f:?}"))?,
            multiplier: m.parse().map_err(|_| format!("bad multiplier {m:?}"))?,
        })
    }
}

impl fmt::Display for Contamination {
    fn fmt(&self, f: &mut fmt::Formatter) -> fmt::Result {
        write!(f, "{}:{}", self.fraction, self.multiplier)
    }
}

impl From<Contamination> for String {
    fn from(c: Contamination) -> Self {
        c.to_string()
    }
}

impl TryFrom<String> for Contamination {
    type Error = String;

    fn try_from(s: String) -> Result<Self, String> {
        s.parse()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum SubspaceSource {
    /// Leading singular vectors of the slice's own truth.
    True,
    /// Subspaces of the solution of the preceding slice.
    Previous,
    /// Bases stored as binary matrices.
    File { u: PathBuf, v: PathBuf },
}

impl FromStr for SubspaceSource {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "true" => Ok(SubspaceSource::True),
            "previous" => Ok(SubspaceSource::Previous),
            _ => {
                let paths = s
                    .strip_prefix("file:")
                    .and_then(|p| p.split_once(','))
                    .ok_or_else(|| format!("expected true, previous or file:U,V, got {s:?}"))?;
                Ok(SubspaceSource::File {
                    u: paths.0.into(),
                    v: paths.1.into(),
                })
            }
        }
    }
}

impl fmt::Display for SubspaceSource {
    fn fmt(&self, f: &mut fmt::Formatter) -> fmt::Result {
        match self {
            SubspaceSource::True => f.write_str("true"),
            SubspaceSource::Previous => f.write_str("previous"),
            SubspaceSource::File { u, v } => write!(f, "file:{},{}", u.display(), v.display()),
        }
    }
}

impl From<SubspaceSource> for String {
    fn from(s: SubspaceSource) -> Self {
        s.to_string()
    }
}

impl TryFrom<String> for SubspaceSource {
    type Error = String;

    fn try_from(s: String) -> Result<Self, String> {
        s.parse()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gen_specs_round_trip() {
        for s in ["lowrank:100x80:r20", "slices:50x50:r5:5:0.1"] {
            let g: GenSpec = s.parse().unwrap();
            assert_eq!(g.to_string(), s);
        }
        assert!("lowrank:100:r2".parse::<GenSpec>().is_err());
        assert!("lowrank:10x10:2".parse::<GenSpec>().is_err());
        assert!("cube:1x1:r1".parse::<GenSpec>().is_err());
    }

    #[test]
    fn contamination_and_subspace_parse() {
        let c: Contamination = "0.1:3".parse().unwrap();
        assert_eq!((c.fraction, c.multiplier), (0.1, 3.0));
        assert!("0.1".parse::<Contamination>().is_err());
        assert_eq!("previous".parse::<SubspaceSource>().unwrap(), SubspaceSource::Previous);
        let f: SubspaceSource = "file:u.bin,v.bin".parse().unwrap();
        assert_eq!(f.to_string(), "file:u.bin,v.bin");
        assert!("elsewhere".parse::<SubspaceSource>().is_err());
    }

    #[test]
    fn invocation_serializes() {
        let cli = Cli::try_parse_from(["fpareto", "complete", "--gen", "lowrank:20x20:r2", "--eta-rel", "0.1"]).unwrap();
        let json = serde_json::to_string(&cli).unwrap();
        assert_eq!(serde_json::from_str::<Cli>(&json).unwrap(), cli);
    }
}
