//! Synthetic instances, masks, contamination, triplet files and the SNR metric.

use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::factor::FactorPair;
use crate::matrix::DenseMatrix;
use crate::obs::Observations;
use crate::subsolve::Problem;
use crate::weight::{Slice, SliceStack};

// Offsets separating the random streams drawn from one user seed.
const MASK_STREAM: u64 = 0x6d61_736b;
const NOISE_STREAM: u64 = 0x6e6f_6973;
const DRIFT_STREAM: u64 = 0x6472_6966;

/// `L·Rᵀ` with i.i.d. standard Gaussian `L` (n×k) and `R` (m×k).
pub fn gen_low_rank(n: usize, m: usize, k: usize, seed: u64) -> DenseMatrix {
    if k == 0 {
        return DenseMatrix::zeros(n, m);
    }
    FactorPair::gaussian(n, m, k, &mut crate::seeded_rng(seed)).form_product()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskMode {
    Entries,
    Columns,
}

impl std::str::FromStr for MaskMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "entries" => Ok(MaskMode::Entries),
            "columns" => Ok(MaskMode::Columns),
            _ => Err(Error::InvalidConfig(format!("unknown mask mode {s:?}"))),
        }
    }
}

fn check_fraction(f: f64, what: &str) -> Result<()> {
    if (0.0..=1.0).contains(&f) {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!("{what} must lie in [0, 1], got {f}")))
    }
}

fn floor_count(fraction: f64, total: usize) -> usize {
    ((fraction * total as f64).floor() as usize).min(total)
}

/// Retained cells, sorted row-major. `Entries` keeps `floor(f·n·m)` uniform
/// cells; `Columns` keeps `floor(f·m)` whole columns.
pub fn gen_mask(shape: (usize, usize), mode: MaskMode, fraction: f64, seed: u64) -> Result<Vec<(usize, usize)>> {
    check_fraction(fraction, "sampling fraction")?;
    let (n, m) = shape;
    let mut rng = crate::seeded_rng(seed ^ MASK_STREAM);
    let mut cells: Vec<(usize, usize)> = match mode {
        MaskMode::Entries => sample(&mut rng, n * m, floor_count(fraction, n * m))
            .into_iter()
            .map(|f| (f / m, f % m))
            .collect(),
        MaskMode::Columns => {
            let cols = sample(&mut rng, m, floor_count(fraction, m)).into_vec();
            cols.iter().flat_map(|&j| (0..n).map(move |i| (i, j))).collect()
        }
    };
    cells.sort_unstable();
    Ok(cells)
}

/// Observations with some columns (or entries) replaced by gross errors.
#[derive(Debug, Clone, PartialEq)]
pub struct Contaminated {
    pub obs: Observations,
    /// Positions into the observation vector that were replaced.
    pub positions: Vec<usize>,
}

/// Replaces a `floor(fraction·count)` subset of the observed columns (or
/// observed entries) with uniform noise on `[−c, c]`, `c = multiplier·max|b|`.
pub fn contaminate(
    obs: &Observations,
    fraction: f64,
    multiplier: f64,
    mode: MaskMode,
    seed: u64,
) -> Result<Contaminated> {
    check_fraction(fraction, "contamination fraction")?;
    if !(multiplier >= 0.0 && multiplier.is_finite()) {
        return Err(Error::InvalidConfig(format!("multiplier must be >= 0, got {multiplier}")));
    }
    let mut rng = crate::seeded_rng(seed ^ NOISE_STREAM);
    let mut positions: Vec<usize> = match mode {
        MaskMode::Entries => sample(&mut rng, obs.len(), floor_count(fraction, obs.len())).into_vec(),
        MaskMode::Columns => {
            let mut cols: Vec<usize> = obs.indices().iter().map(|&(_, j)| j).collect();
            cols.sort_unstable();
            cols.dedup();
            let chosen: std::collections::HashSet<usize> = sample(&mut rng, cols.len(), floor_count(fraction, cols.len()))
                .into_iter()
                .map(|c| cols[c])
                .collect();
            obs.indices()
                .iter()
                .enumerate()
                .filter(|(_, (_, j))| chosen.contains(j))
                .map(|(p, _)| p)
                .collect()
        }
    };
    positions.sort_unstable();
    let amp = multiplier * obs.values().iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    let mut values = obs.values().to_vec();
    for &p in &positions {
        values[p] = if amp > 0.0 { rng.random_range(-amp..=amp) } else { 0.0 };
    }
    Ok(Contaminated {
        obs: obs.with_values(values)?,
        positions,
    })
}

/// `20·log₁₀(‖A‖_F / ‖P − A‖_F)`, `+∞` when `P = A`.
pub fn snr_db(reference: &DenseMatrix, estimate: &DenseMatrix) -> Result<f64> {
    let err = estimate.sub(reference)?.frobenius_norm();
    let ref_norm = reference.frobenius_norm();
    if ref_norm == 0.0 {
        return Err(Error::UndefinedMetric("SNR of a zero reference"));
    }
    if err == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(20.0 * (ref_norm / err).log10())
}

/// Absolute target `η = η_rel·ρ(−b)`.
pub fn absolute_eta(problem: &Problem, eta_rel: f64) -> Result<f64> {
    if !(eta_rel >= 0.0 && eta_rel.is_finite()) {
        return Err(Error::InvalidConfig(format!("relative eta must be >= 0, got {eta_rel}")));
    }
    Ok(eta_rel * problem.zero_misfit())
}

/// Parses `row,col,value` lines (also `row::col::value[::...]`), skipping
/// blank lines and `#` comments. `offset` is subtracted from both indices.
pub fn read_triplets<R: Read>(reader: R, shape: Option<(usize, usize)>, offset: usize) -> Result<Observations> {
    let mut indices = Vec::new();
    let mut values = Vec::new();
    let mut seen = std::collections::HashMap::new();
    for (lineno, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        let line_no = lineno + 1;
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = if t.contains("::") { t.split("::").collect() } else { t.split(',').collect() };
        if fields.len() < 3 {
            return Err(Error::Parse {
                line: line_no,
                message: format!("expected row,col,value, got {t:?}"),
            });
        }
        let index = |s: &str| -> Result<usize> {
            let raw: usize = s.trim().parse().map_err(|_| Error::Parse {
                line: line_no,
                message: format!("bad index {s:?}"),
            })?;
            raw.checked_sub(offset).ok_or(Error::Parse {
                line: line_no,
                message: format!("index {raw} below offset {offset}"),
            })
        };
        let (i, j) = (index(fields[0])?, index(fields[1])?);
        let v: f64 = fields[2].trim().parse().map_err(|_| Error::Parse {
            line: line_no,
            message: format!("bad value {:?}", fields[2]),
        })?;
        if !v.is_finite() {
            return Err(Error::Parse {
                line: line_no,
                message: "non-finite value".into(),
            });
        }
        if seen.insert((i, j), line_no).is_some() {
            return Err(Error::DuplicateIndex {
                row: i,
                col: j,
                line: line_no,
            });
        }
        indices.push((i, j));
        values.push(v);
    }
    let shape = match shape {
        Some(s) => s,
        None if indices.is_empty() => {
            return Err(Error::InvalidObservations(
                "cannot infer the shape of an empty triplet file".into(),
            ))
        }
        None => (
            indices.iter().map(|p| p.0).max().unwrap_or(0) + 1,
            indices.iter().map(|p| p.1).max().unwrap_or(0) + 1,
        ),
    };
    Observations::new(shape, indices, values)
}

/// [`read_triplets`] on a file with zero-based indices.
pub fn load_triplets_csv(path: impl AsRef<Path>, shape: Option<(usize, usize)>) -> Result<Observations> {
    read_triplets(File::open(path)?, shape, 0)
}

/// A synthetic completion instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceSpec {
    pub n: usize,
    pub m: usize,
    pub true_rank: usize,
    pub sampling_fraction: f64,
    pub mask_mode: MaskMode,
    pub contamination_fraction: f64,
    pub contamination_amplitude_multiplier: f64,
    pub seed: u64,
}

impl InstanceSpec {
    pub fn new(n: usize, m: usize, true_rank: usize, sampling_fraction: f64, seed: u64) -> Self {
        Self {
            n,
            m,
            true_rank,
            sampling_fraction,
            mask_mode: MaskMode::Entries,
            contamination_fraction: 0.0,
            contamination_amplitude_multiplier: 0.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_fraction(self.sampling_fraction, "sampling fraction")?;
        check_fraction(self.contamination_fraction, "contamination fraction")?;
        if self.n == 0 || self.m == 0 {
            return Err(Error::InvalidConfig("instance dimensions must be positive".into()));
        }
        if self.true_rank > self.n.min(self.m) {
            return Err(Error::InvalidConfig("true rank exceeds min(n, m)".into()));
        }
        Ok(())
    }

    pub fn generate(&self) -> Result<Instance> {
        self.validate()?;
        let truth = gen_low_rank(self.n, self.m, self.true_rank, self.seed);
        let mask = gen_mask((self.n, self.m), self.mask_mode, self.sampling_fraction, self.seed)?;
        let clean = Observations::sample(&truth, mask)?;
        let c = contaminate(
            &clean,
            self.contamination_fraction,
            self.contamination_amplitude_multiplier,
            self.mask_mode,
            self.seed,
        )?;
        Ok(Instance {
            truth,
            obs: c.obs,
            contaminated: c.positions,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub truth: DenseMatrix,
    pub obs: Observations,
    /// Contaminated observation positions; for evaluation only.
    pub contaminated: Vec<usize>,
}

/// Parameters of a synthetic stack of correlated slices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceSpec {
    pub n: usize,
    pub m: usize,
    pub rank: usize,
    pub count: usize,
    pub drift: f64,
    pub sampling_fraction: f64,
    pub mask_mode: MaskMode,
    pub seed: u64,
}

/// Each slice's factors are the previous ones plus `drift`-scaled Gaussian
/// perturbations, rescaled to the previous Frobenius norms. Each slice gets
/// its own mask. Labels are `1, 2, …`.
pub fn gen_correlated_slices(spec: &SliceSpec) -> Result<SliceStack> {
    check_fraction(spec.drift, "drift")?;
    check_fraction(spec.sampling_fraction, "sampling fraction")?;
    if spec.rank == 0 || spec.rank > spec.n.min(spec.m) {
        return Err(Error::InvalidConfig("slice rank must be in 1..=min(n, m)".into()));
    }
    let mut rng = crate::seeded_rng(spec.seed);
    let mut fp = FactorPair::gaussian(spec.n, spec.m, spec.rank, &mut rng);
    let mut drift_rng = crate::seeded_rng(spec.seed ^ DRIFT_STREAM);
    let mut slices = Vec::with_capacity(spec.count);
    for s in 0..spec.count {
        if s > 0 {
            let step = FactorPair::gaussian(spec.n, spec.m, spec.rank, &mut drift_rng);
            let l = renormalize(fp.l(), step.l(), spec.drift)?;
            let r = renormalize(fp.r(), step.r(), spec.drift)?;
            fp = FactorPair::new(l, r)?;
        }
        let truth = fp.form_product();
        let mask = gen_mask(
            (spec.n, spec.m),
            spec.mask_mode,
            spec.sampling_fraction,
            spec.seed.wrapping_add(s as u64 + 1),
        )?;
        slices.push(Slice {
            label: (s + 1) as f64,
            obs: Observations::sample(&truth, mask)?,
            truth: Some(truth),
        });
    }
    SliceStack::new(slices)
}

fn renormalize(prev: &DenseMatrix, step: &DenseMatrix, drift: f64) -> Result<DenseMatrix> {
    let moved = prev.add(&step.scale(drift))?;
    let nm = moved.frobenius_norm();
    Ok(if nm > 0.0 { moved.scale(prev.frobenius_norm() / nm) } else { moved })
}

/// Serde adapters that write non-finite decibel values as the strings
/// `"inf"`, `"-inf"` and `"nan"`.
pub mod db_serde {
    use serde::de::{self, Visitor};
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if v.is_nan() {
            s.serialize_str("nan")
        } else if *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }

    struct DbVisitor;

    impl Visitor<'_> for DbVisitor {
        type Value = f64;

        fn expecting(&self, f: &mut std::fmt::Formatter) -> std::fmt::Result {
            f.write_str("a number or one of \"inf\", \"-inf\", \"nan\"")
        }

        fn visit_f64<E: de::Error>(self, v: f64) -> Result<f64, E> {
            Ok(v)
        }

        fn visit_i64<E: de::Error>(self, v: i64) -> Result<f64, E> {
            Ok(v as f64)
        }

        fn visit_u64<E: de::Error>(self, v: u64) -> Result<f64, E> {
            Ok(v as f64)
        }

        fn visit_str<E: de::Error>(self, v: &str) -> Result<f64, E> {
            match v {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                _ => Err(E::invalid_value(de::Unexpected::Str(v), &self)),
            }
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        d.deserialize_any(DbVisitor)
    }

    pub mod option {
        use serde::{Deserialize, Deserializer, Serializer};

        pub fn serialize<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
            match v {
                Some(x) => super::serialize(x, s),
                None => s.serialize_none(),
            }
        }

        #[derive(Deserialize)]
        struct Wrap(#[serde(with = "super")] f64);

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
            Ok(Option::<Wrap>::deserialize(d)?.map(|w| w.0))
        }
    }
}
