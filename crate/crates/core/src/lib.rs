//! Low-rank matrix completion by root finding on the Pareto curve of a
//! factored LASSO problem.
//!
//! The unknown is parametrized as `X = L·Rᵀ` and the nuclear norm is replaced
//! by the surrogate `½(‖L‖²_F + ‖R‖²_F)`, so no SVD is needed in the solver
//! loop. See [`pareto::solve_bpdn`] for the entry point.

pub mod data;
pub mod error;
pub mod factor;
pub mod linop;
pub mod matrix;
pub mod obs;
pub mod ops;
pub mod pareto;
pub mod penalty;
pub mod project;
pub mod subsolve;
pub mod weight;

pub use error::{Error, Result};
pub use factor::{FactorPair, RankGrowth, SolverConfig, ToleranceSchedule};
pub use matrix::DenseMatrix;
pub use obs::Observations;
pub use ops::Operator;
pub use pareto::{solve_bpdn, ParetoStatus, ParetoTrace};
pub use penalty::Penalty;
pub use subsolve::{Problem, Projector};
pub use weight::{solve_weighted_bpdn, SubspaceWeights};

/// Crate version, recorded in reports.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The deterministic generator used throughout the crate.
pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
