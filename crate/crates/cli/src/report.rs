//! Run records and the report written by every command.

use std::io::Write;

use fpareto::data::db_serde;
use fpareto::{DenseMatrix, ParetoStatus, ParetoTrace};
use serde::{Deserialize, Serialize};

use crate::args::{Cli, Format};
use crate::CliError;

/// One solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub solver: String,
    pub seed: u64,
    /// Slice index for stack commands.
    pub slice: Option<usize>,
    pub nu: Option<f64>,
    pub n: usize,
    pub m: usize,
    pub sample: f64,
    pub eta_rel: Option<f64>,
    pub eta_abs: Option<f64>,
    pub rank: usize,
    /// `null` when there is nothing to score against.
    #[serde(with = "db_serde::option")]
    pub snr_db: Option<f64>,
    pub misfit_final: Option<f64>,
    pub tau_final: Option<f64>,
    pub wall_seconds: f64,
    pub inner_iterations_total: usize,
    pub status: Option<ParetoStatus>,
    pub pareto_trace: Option<ParetoTrace>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Versions {
    pub fpareto: String,
    pub fpareto_cli: String,
}

impl Default for Versions {
    fn default() -> Self {
        Self {
            fpareto: fpareto::VERSION.to_string(),
            fpareto_cli: env!("CARGO_PKG_VERSION").to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    /// argv as given.
    pub command: Vec<String>,
    pub versions: Versions,
    pub seed: u64,
    /// The parsed invocation; `rerun` executes it again.
    pub config: Cli,
    pub records: Vec<RunRecord>,
    pub summary: serde_json::Value,
    pub exit_code: i32,
}

impl RunReport {
    pub fn to_json(&self) -> Result<String, CliError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Columns `solver,n,m,rank,sample,eta_rel,snr_db,seconds`; missing
    /// values are empty cells.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), CliError> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["solver", "n", "m", "rank", "sample", "eta_rel", "snr_db", "seconds"])?;
        let opt = |v: Option<f64>| v.map_or_else(String::new, |x| x.to_string());
        for r in &self.records {
            out.write_record([
                r.solver.clone(),
                r.n.to_string(),
                r.m.to_string(),
                r.rank.to_string(),
                r.sample.to_string(),
                opt(r.eta_rel),
                opt(r.snr_db),
                r.wall_seconds.to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn write<W: Write>(&self, format: Format, mut w: W) -> Result<(), CliError> {
        match format {
            Format::Json => {
                w.write_all(self.to_json()?.as_bytes())?;
                w.write_all(b"\n")?;
                Ok(())
            }
            Format::Csv => self.write_csv(w),
        }
    }
}

/// A finished command.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub report: RunReport,
    /// Recovered matrix of the first run, if the command produces one.
    pub matrix: Option<DenseMatrix>,
}

impl Outcome {
    pub fn exit_code(&self) -> i32 {
        self.report.exit_code
    }
}
