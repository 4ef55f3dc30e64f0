//! One function per subcommand, plus the seed fan-out they share.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use fpareto::data::{absolute_eta, InstanceSpec};
use fpareto::pareto::{evaluate_value_function, fit_unregularized, solve_bpdn_run, solve_convex_bpdn, BpdnRun, DEFAULT_STALL_THRESHOLD};
use fpareto::subsolve::{solve_convex_lasso, SpgOptions};
use fpareto::weight::{frequency_continuation, solve_weighted_bpdn_run, ContinuationOptions, SliceStack};
use fpareto::{DenseMatrix, ParetoStatus, Penalty, Problem, RankGrowth, SolverConfig, SubspaceWeights};
use serde_json::{json, Value};

use crate::args::{Cli, Command, GenSpec, OracleArgs, PenaltyArg, RunArgs, SolverArgs, SubspaceSource, WeightedArgs};
use crate::instance::{prepare, prepare_stack, Prepared, Truth};
use crate::report::{Outcome, RunRecord, RunReport, Versions};
use crate::{exit, CliError};

/// Relative singular-value cutoff when counting the rank of a convex solution.
pub const RANK_CUTOFF: f64 = 1e-6;

/// Largest tolerated relative final-τ discrepancy in `oracle-check`.
pub const FINAL_TAU_TOLERANCE: f64 = 1e-2;

struct Done {
    records: Vec<RunRecord>,
    summary: Value,
    exit_code: i32,
    matrix: Option<DenseMatrix>,
}

pub fn dispatch(cli: &Cli, argv: Vec<String>) -> Result<Outcome, CliError> {
    let (seed, done) = match &cli.command {
        Command::Complete(a) => (a.solver.seed, complete(a)?),
        Command::BaselineLsqr(a) => (a.solver.seed, baseline(a)?),
        Command::Robust(a) => (a.solver.seed, robust(a)?),
        Command::Weighted(a) => (a.run.solver.seed, weighted(a)?),
        Command::Continuation(a) => (a.solver.seed, continuation(a)?),
        Command::OracleCheck(a) => (a.seed, oracle_check(a)?),
        Command::Rerun(a) => {
            let stored: RunReport = serde_json::from_reader(std::fs::File::open(&a.report)?)?;
            if matches!(stored.config.command, Command::Rerun(_)) {
                return Err(CliError::Usage("a rerun report cannot be rerun".into()));
            }
            let mut outcome = dispatch(&stored.config, argv)?;
            outcome.report.config = stored.config;
            return Ok(outcome);
        }
    };
    Ok(Outcome {
        report: RunReport {
            command: argv,
            versions: Versions::default(),
            seed,
            config: cli.clone(),
            records: done.records,
            summary: done.summary,
            exit_code: done.exit_code,
        },
        matrix: done.matrix,
    })
}

/// Maps `f` over `items` on up to `available_parallelism` threads, in order.
pub fn par_map<T: Sync, R: Send>(items: &[T], f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(items.len());
    if workers <= 1 {
        return items.iter().map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<R>>> = items.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                *slots[i].lock().expect("slot") = Some(r);
            });
        }
    });
    slots.into_iter().map(|m| m.into_inner().expect("slot").expect("filled")).collect()
}

fn collect<R>(results: Vec<Result<R, CliError>>) -> Result<Vec<R>, CliError> {
    results.into_iter().collect()
}

fn seeds(solver: &SolverArgs) -> Result<Vec<u64>, CliError> {
    if solver.repeats == 0 {
        return Err(CliError::Usage("--repeats must be at least 1".into()));
    }
    Ok((0..solver.repeats as u64).map(|i| solver.seed + i).collect())
}

fn config_of(solver: &SolverArgs, seed: u64) -> SolverConfig {
    let base = SolverConfig::default();
    SolverConfig {
        factor_rank: solver.rank,
        max_outer_newton_steps: solver.max_outer.unwrap_or(base.max_outer_newton_steps),
        max_inner_spg_iterations: solver.max_inner.unwrap_or(base.max_inner_spg_iterations),
        seed,
        rank_growth: solver.rank_grow.map_or(RankGrowth::Off, |delta| RankGrowth::Increment {
            delta,
            threshold: DEFAULT_STALL_THRESHOLD,
        }),
        ..base
    }
}

fn penalty_of(solver: &SolverArgs) -> Result<Penalty, CliError> {
    Ok(match solver.penalty {
        PenaltyArg::Ls => Penalty::TwoNorm,
        PenaltyArg::Student => Penalty::students_t(solver.nu.first().copied().unwrap_or(1.0))?,
    })
}

/// Absolute target for `problem` from --eta-rel or --eta-abs.
fn eta_of(problem: &Problem, solver: &SolverArgs) -> Result<f64, CliError> {
    match (solver.eta_rel, solver.eta_abs) {
        (Some(rel), _) => Ok(absolute_eta(problem, rel)?),
        (None, Some(abs)) if abs >= 0.0 && abs.is_finite() => Ok(abs),
        (None, Some(abs)) => Err(CliError::Usage(format!("--eta-abs must be a finite non-negative number, got {abs}"))),
        (None, None) => Err(CliError::Usage("give --eta-rel or --eta-abs".into())),
    }
}

fn status_exit<'a>(statuses: impl Iterator<Item = Option<&'a ParetoStatus>>) -> i32 {
    let mut code = exit::SUCCESS;
    for s in statuses.flatten() {
        match s {
            ParetoStatus::InfeasibleRank => return exit::INFEASIBLE_RANK,
            ParetoStatus::BudgetExhausted => code = exit::BUDGET_EXHAUSTED,
            ParetoStatus::Converged => {}
        }
    }
    code
}

fn records_exit(records: &[RunRecord]) -> i32 {
    status_exit(records.iter().map(|r| r.status.as_ref()))
}

/// Non-finite values as the strings `"inf"` / `"-inf"` / `"nan"`.
fn num(v: Option<f64>) -> Value {
    match v {
        None => Value::Null,
        Some(x) if x.is_finite() => json!(x),
        Some(x) if x.is_nan() => json!("nan"),
        Some(x) if x > 0.0 => json!("inf"),
        Some(_) => json!("-inf"),
    }
}

pub fn median(values: &[f64]) -> Option<f64> {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| !x.is_nan()).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let h = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[h] } else { 0.5 * (v[h - 1] + v[h]) })
}

fn median_snr<'a>(records: impl Iterator<Item = &'a RunRecord>) -> Option<f64> {
    median(&records.filter_map(|r| r.snr_db).collect::<Vec<_>>())
}

fn run_summary(records: &[RunRecord]) -> Value {
    let secs: Vec<f64> = records.iter().map(|r| r.wall_seconds).collect();
    json!({
        "runs": records.len(),
        "median_snr_db": num(median_snr(records.iter())),
        "median_seconds": num(median(&secs)),
        "converged": records.iter().filter(|r| r.status == Some(ParetoStatus::Converged)).count(),
    })
}

/// Fields shared by every record of a run.
struct Base {
    seed: u64,
    shape: (usize, usize),
    sample: f64,
    eta_rel: Option<f64>,
    rank: usize,
}

impl Base {
    fn new(args: &RunArgs, shape: (usize, usize), seed: u64) -> Self {
        Self {
            seed,
            shape,
            sample: args.instance.sample,
            eta_rel: args.solver.eta_rel,
            rank: args.solver.rank,
        }
    }

    fn record(&self, solver: &str) -> RunRecord {
        RunRecord {
            solver: solver.into(),
            seed: self.seed,
            slice: None,
            nu: None,
            n: self.shape.0,
            m: self.shape.1,
            sample: self.sample,
            eta_rel: self.eta_rel,
            eta_abs: None,
            rank: self.rank,
            snr_db: None,
            misfit_final: None,
            tau_final: None,
            wall_seconds: 0.0,
            inner_iterations_total: 0,
            status: None,
            pareto_trace: None,
        }
    }

    fn bpdn_record(&self, solver: &str, run: &BpdnRun, eta: f64, snr: Option<f64>, secs: f64) -> RunRecord {
        RunRecord {
            eta_abs: Some(eta),
            rank: run.fp.rank(),
            snr_db: snr,
            misfit_final: Some(run.misfit),
            tau_final: Some(run.trace.tau_final()),
            wall_seconds: secs,
            inner_iterations_total: run.trace.inner_iterations_total(),
            status: Some(run.trace.status),
            pareto_trace: Some(run.trace.clone()),
            ..self.record(solver)
        }
    }
}

fn timed<R>(f: impl FnOnce() -> R) -> (R, f64) {
    let t = Instant::now();
    let r = f();
    (r, t.elapsed().as_secs_f64())
}

fn complete(a: &RunArgs) -> Result<Done, CliError> {
    let penalty = penalty_of(&a.solver)?;
    let seeds = seeds(&a.solver)?;
    let keep = a.output.save_matrix.is_some();
    let out = collect(par_map(&seeds, |&seed| {
        let prepared = prepare(&a.instance, seed)?;
        let problem = prepared.problem.with_penalty(penalty);
        let eta = eta_of(&problem, &a.solver)?;
        let (run, secs) = timed(|| solve_bpdn_run(eta, &problem, &config_of(&a.solver, seed)));
        let run = run?;
        let mut rec = Base::new(a, prepared.shape, seed).bpdn_record("factored-bpdn", &run, eta, prepared.truth.snr(&run.fp), secs);
        if let Penalty::StudentsT { nu } = penalty {
            rec.nu = Some(nu);
        }
        let matrix = if keep && seed == a.solver.seed { Some(prepared.estimate(&run.fp)?) } else { None };
        Ok((rec, matrix))
    }))?;
    let (records, matrices): (Vec<_>, Vec<_>) = out.into_iter().unzip();
    Ok(Done {
        summary: run_summary(&records),
        exit_code: records_exit(&records),
        matrix: matrices.into_iter().next().flatten(),
        records,
    })
}

fn baseline(a: &RunArgs) -> Result<Done, CliError> {
    let penalty = penalty_of(&a.solver)?;
    let seeds = seeds(&a.solver)?;
    let keep = a.output.save_matrix.is_some();
    let out = collect(par_map(&seeds, |&seed| {
        let prepared = prepare(&a.instance, seed)?;
        let problem = prepared.problem.with_penalty(penalty);
        let (st, secs) = timed(|| fit_unregularized(&problem, &config_of(&a.solver, seed)));
        let st = st?;
        let rec = RunRecord {
            eta_rel: None,
            snr_db: prepared.truth.snr(&st.fp),
            misfit_final: Some(problem.misfit(&st.residual)),
            wall_seconds: secs,
            inner_iterations_total: st.iterations_used,
            ..Base::new(a, prepared.shape, seed).record("lsqr-baseline")
        };
        let matrix = if keep && seed == a.solver.seed { Some(prepared.estimate(&st.fp)?) } else { None };
        Ok((rec, matrix))
    }))?;
    let (records, matrices): (Vec<_>, Vec<_>) = out.into_iter().unzip();
    Ok(Done {
        summary: run_summary(&records),
        exit_code: exit::SUCCESS,
        matrix: matrices.into_iter().next().flatten(),
        records,
    })
}

/// Least squares and Student's t for each ν, all at the same relative target.
fn robust(a: &RunArgs) -> Result<Done, CliError> {
    if a.solver.eta_rel.is_none() {
        return Err(CliError::Usage("robust compares at a matched --eta-rel".into()));
    }
    let mut penalties = vec![(None, Penalty::TwoNorm)];
    for &nu in &a.solver.nu {
        penalties.push((Some(nu), Penalty::students_t(nu)?));
    }
    let seeds = seeds(&a.solver)?;
    let prepared = collect(seeds.iter().map(|&s| prepare(&a.instance, s)).collect())?;
    let jobs: Vec<(usize, usize)> = (0..seeds.len()).flat_map(|s| (0..penalties.len()).map(move |p| (s, p))).collect();
    let records = collect(par_map(&jobs, |&(s, p)| {
        let (nu, penalty) = penalties[p];
        let prep: &Prepared = &prepared[s];
        let problem = prep.problem.with_penalty(penalty);
        let eta = eta_of(&problem, &a.solver)?;
        let (run, secs) = timed(|| solve_bpdn_run(eta, &problem, &config_of(&a.solver, seeds[s])));
        let run = run?;
        let name = if nu.is_some() { "students-t" } else { "least-squares" };
        let rec = Base::new(a, prep.shape, seeds[s]).bpdn_record(name, &run, eta, prep.truth.snr(&run.fp), secs);
        Ok(RunRecord { nu, ..rec })
    }))?;

    let ls = median_snr(records.iter().filter(|r| r.nu.is_none()));
    let mut per_nu = Vec::new();
    let mut best: Option<(f64, f64)> = None;
    for &nu in &a.solver.nu {
        let med = median_snr(records.iter().filter(|r| r.nu == Some(nu)));
        per_nu.push(json!({ "nu": nu, "median_snr_db": num(med) }));
        if let Some(m) = med {
            if best.is_none_or(|(_, b)| m > b) {
                best = Some((nu, m));
            }
        }
    }
    let margin = best.zip(ls).map(|((_, b), l)| b - l);
    Ok(Done {
        summary: json!({
            "least_squares_median_snr_db": num(ls),
            "students_t": per_nu,
            "best_nu": best.map(|(nu, _)| nu),
            "best_median_snr_db": num(best.map(|(_, m)| m)),
            "margin_db": num(margin),
        }),
        exit_code: records_exit(&records),
        matrix: None,
        records,
    })
}

/// The problem, truth and weights for one `weighted` run.
struct WeightedCase {
    problem: Problem,
    truth: Truth,
    shape: (usize, usize),
    weights: SubspaceWeights,
}

fn truth_weights(truth: &DenseMatrix, k: usize, omega: f64) -> Result<SubspaceWeights, CliError> {
    let svd = truth.svd();
    let k = k.min(svd.sigma.len());
    Ok(SubspaceWeights::new(svd.u.leading_columns(k), svd.v.leading_columns(k), omega)?)
}

fn file_weights(u: &std::path::Path, v: &std::path::Path, omega: f64) -> Result<SubspaceWeights, CliError> {
    Ok(SubspaceWeights::new(DenseMatrix::load_binary(u)?, DenseMatrix::load_binary(v)?, omega)?)
}

fn weighted_case(a: &WeightedArgs, penalty: Penalty, seed: u64) -> Result<WeightedCase, CliError> {
    let run = &a.run;
    let omega = run.solver.omega;
    if let Some(GenSpec::Slices { rank, .. }) = run.instance.generate {
        let stack: SliceStack = prepare_stack(&run.instance, seed)?;
        let slices = stack.slices();
        let slice = slices
            .get(a.slice)
            .ok_or_else(|| CliError::Usage(format!("--slice {} out of range for {} slices", a.slice, slices.len())))?;
        let problem = Problem::from_observations(&slice.obs, penalty);
        let truth = slice.truth.clone().expect("generated slices carry truth");
        let weights = match &a.subspace {
            SubspaceSource::True => truth_weights(&truth, rank, omega)?,
            SubspaceSource::File { u, v } => file_weights(u, v, omega)?,
            SubspaceSource::Previous => {
                let prev = a
                    .slice
                    .checked_sub(1)
                    .map(|p| &slices[p])
                    .ok_or_else(|| CliError::Usage("--subspace previous needs --slice ≥ 1".into()))?;
                let prev_problem = Problem::from_observations(&prev.obs, penalty);
                let eta = eta_of(&prev_problem, &run.solver)?;
                let fp = solve_bpdn_run(eta, &prev_problem, &config_of(&run.solver, seed))?.fp;
                SubspaceWeights::from_factor_subspaces(&fp, fp.rank(), omega)?
            }
        };
        return Ok(WeightedCase {
            problem,
            shape: truth.shape(),
            truth: Truth::Full(truth),
            weights,
        });
    }
    if run.instance.transform != crate::args::Transform::None {
        return Err(CliError::Usage("weighted solves do not support --transform".into()));
    }
    let prepared = prepare(&run.instance, seed)?;
    let weights = match (&a.subspace, &prepared.truth) {
        (SubspaceSource::True, Truth::Full(t)) => {
            let k = run.instance.generate.map_or(run.solver.rank, |g| g.rank());
            truth_weights(t, k, omega)?
        }
        (SubspaceSource::File { u, v }, _) => file_weights(u, v, omega)?,
        (SubspaceSource::True, _) => return Err(CliError::Usage("--subspace true needs a generated instance".into())),
        (SubspaceSource::Previous, _) => return Err(CliError::Usage("--subspace previous needs a slice stack".into())),
    };
    Ok(WeightedCase {
        problem: prepared.problem.with_penalty(penalty),
        truth: prepared.truth,
        shape: prepared.shape,
        weights,
    })
}

fn weighted(a: &WeightedArgs) -> Result<Done, CliError> {
    let run = &a.run;
    let penalty = penalty_of(&run.solver)?;
    let seeds = seeds(&run.solver)?;
    let cases = collect(par_map(&seeds, |&seed| weighted_case(a, penalty, seed)))?;
    let jobs: Vec<(usize, bool)> = (0..seeds.len()).flat_map(|s| [(s, true), (s, false)]).collect();
    let records = collect(par_map(&jobs, |&(s, with_weights)| {
        let case = &cases[s];
        let eta = eta_of(&case.problem, &run.solver)?;
        let config = config_of(&run.solver, seeds[s]);
        let (out, secs) = timed(|| {
            if with_weights {
                solve_weighted_bpdn_run(eta, &case.weights, &case.problem, &config)
            } else {
                solve_bpdn_run(eta, &case.problem, &config)
            }
        });
        let out = out?;
        let name = if with_weights { "weighted" } else { "unweighted" };
        let rec = Base::new(run, case.shape, seeds[s]).bpdn_record(name, &out, eta, case.truth.snr(&out.fp), secs);
        Ok(RunRecord { slice: Some(a.slice), ..rec })
    }))?;
    let deltas: Vec<f64> = records
        .chunks(2)
        .filter_map(|p| Some(p[0].snr_db? - p[1].snr_db?))
        .collect();
    let iters = |w: &str| {
        let v: Vec<f64> = records.iter().filter(|r| r.solver == w).map(|r| r.inner_iterations_total as f64).collect();
        num(median(&v))
    };
    Ok(Done {
        summary: json!({
            "omega": run.solver.omega,
            "subspace": a.subspace.to_string(),
            "weighted_median_snr_db": num(median_snr(records.iter().filter(|r| r.solver == "weighted"))),
            "unweighted_median_snr_db": num(median_snr(records.iter().filter(|r| r.solver == "unweighted"))),
            "delta_db": deltas.iter().map(|d| num(Some(*d))).collect::<Vec<_>>(),
            "median_delta_db": num(median(&deltas)),
            "weighted_median_inner_iterations": iters("weighted"),
            "unweighted_median_inner_iterations": iters("unweighted"),
        }),
        exit_code: records_exit(&records),
        matrix: None,
        records,
    })
}

fn continuation(a: &RunArgs) -> Result<Done, CliError> {
    let penalty = penalty_of(&a.solver)?;
    let seeds = seeds(&a.solver)?;
    let opts = ContinuationOptions {
        omega: a.solver.omega,
        penalty,
        k_keep: None,
        compare_unweighted: true,
    };
    let per_seed = collect(par_map(&seeds, |&seed| {
        let stack = prepare_stack(&a.instance, seed)?;
        let problems: Vec<Problem> = stack.slices().iter().map(|s| Problem::from_observations(&s.obs, penalty)).collect();
        let etas = collect(problems.iter().map(|p| eta_of(p, &a.solver)).collect())?;
        let (res, secs) = timed(|| frequency_continuation(&stack, &etas, &opts, &config_of(&a.solver, seed)));
        let res = res?;
        let shape = problems[0].shape();
        let base = Base::new(a, shape, seed);
        let share = secs / stack.len() as f64;
        let mut records = Vec::new();
        for (s, entry) in res.report.iter().enumerate() {
            let misfit = match &res.solutions[s] {
                Some(fp) => Some(problems[s].misfit(&problems[s].residual(fp)?)),
                None => None,
            };
            records.push(RunRecord {
                slice: Some(s),
                eta_abs: Some(entry.eta),
                rank: entry.rank,
                snr_db: entry.snr_db,
                misfit_final: misfit,
                tau_final: Some(entry.tau_final),
                wall_seconds: share,
                inner_iterations_total: entry.inner_iterations,
                status: entry.status,
                ..base.record(if entry.weighted { "weighted-continuation" } else { "continuation" })
            });
            if let Some(it) = entry.unweighted_inner_iterations {
                records.push(RunRecord {
                    slice: Some(s),
                    eta_abs: Some(entry.eta),
                    snr_db: entry.unweighted_snr_db,
                    inner_iterations_total: it,
                    ..base.record("unweighted")
                });
            }
        }
        let errors: Vec<String> = res.report.iter().filter_map(|e| e.error.clone()).collect();
        let summary = json!({
            "seed": seed,
            "mean_snr_db": num(res.mean_snr()),
            "mean_unweighted_snr_db": num(res.mean_unweighted_snr()),
            "slices": res.report,
            "errors": errors,
        });
        Ok((records, summary, res.mean_snr(), res.mean_unweighted_snr()))
    }))?;
    let mut records = Vec::new();
    let mut runs = Vec::new();
    let (mut w, mut u) = (Vec::new(), Vec::new());
    for (r, s, mw, mu) in per_seed {
        records.extend(r);
        runs.push(s);
        w.extend(mw);
        u.extend(mu);
    }
    let (mw, mu) = (median(&w), median(&u));
    Ok(Done {
        summary: json!({
            "omega": a.solver.omega,
            "median_mean_snr_db": num(mw),
            "median_mean_unweighted_snr_db": num(mu),
            "delta_db": num(mw.zip(mu).map(|(a, b)| a - b)),
            "runs": runs,
        }),
        exit_code: records_exit(&records),
        matrix: None,
        records,
    })
}

fn count_rank(x: &DenseMatrix) -> usize {
    let s = x.singular_values();
    let top = s.first().copied().unwrap_or(0.0);
    s.iter().filter(|&&v| v > RANK_CUTOFF * top).count()
}

/// Factored against convex value functions over a τ grid, plus the final τ
/// of both Pareto solvers. Points where the convex solution has higher rank
/// than the factor rank are reported but do not count as regressions.
fn oracle_check(a: &OracleArgs) -> Result<Done, CliError> {
    let GenSpec::LowRank { n, m, rank: true_rank } = a.generate else {
        return Err(CliError::Usage("oracle-check needs a lowrank:… instance".into()));
    };
    if a.repeats == 0 {
        return Err(CliError::Usage("--repeats must be at least 1".into()));
    }
    let seeds: Vec<u64> = (0..a.repeats as u64).map(|i| a.seed + i).collect();
    let per_seed = collect(par_map(&seeds, |&seed| {
        let inst = InstanceSpec::new(n, m, true_rank, a.sample, seed).generate()?;
        let problem = Problem::from_observations(&inst.obs, Penalty::TwoNorm);
        let nuc = inst.truth.nuclear_norm();
        let config = SolverConfig {
            max_inner_spg_iterations: a.max_inner,
            ..SolverConfig::default().with_rank(a.rank).with_seed(seed)
        };
        let mut points = Vec::new();
        for &frac in &a.tau_grid {
            let tau = frac * nuc;
            let (_, st) = evaluate_value_function(tau, None, &problem, &config)?;
            let v_fact = problem.misfit(&st.residual);
            let convex = solve_convex_lasso(&problem, tau, None, &SpgOptions::new(1e-9, a.max_inner))?;
            let v_convex = problem.misfit(&convex.residual);
            let convex_rank = count_rank(&convex.x);
            points.push(json!({
                "seed": seed,
                "tau_fraction": frac,
                "tau": tau,
                "v_factored": v_fact,
                "v_convex": v_convex,
                "gap": (v_fact - v_convex).abs(),
                "convex_rank": convex_rank,
                "rank_valid": convex_rank <= a.rank,
            }));
        }

        let eta = absolute_eta(&problem, a.eta_rel)?;
        let (run, secs) = timed(|| solve_bpdn_run(eta, &problem, &config));
        let run = run?;
        let (convex, csecs) = timed(|| solve_convex_bpdn(eta, &problem, &config));
        let (x, ctrace) = convex?;
        let convex_rank = count_rank(&x);
        let (tf, tc) = (run.trace.tau_final(), ctrace.tau_final());
        let final_tau = json!({
            "seed": seed,
            "tau_factored": tf,
            "tau_convex": tc,
            "rel_diff": (tf - tc).abs() / tc.abs().max(f64::MIN_POSITIVE),
            "convex_rank": convex_rank,
            "rank_valid": convex_rank <= a.rank,
        });
        let base = Base {
            seed,
            shape: (n, m),
            sample: a.sample,
            eta_rel: Some(a.eta_rel),
            rank: a.rank,
        };
        let snr = Truth::Full(inst.truth.clone());
        let fact_rec = base.bpdn_record("factored-bpdn", &run, eta, snr.snr(&run.fp), secs);
        let convex_rec = RunRecord {
            eta_abs: Some(eta),
            rank: convex_rank,
            snr_db: fpareto::data::snr_db(&inst.truth, &x).ok(),
            misfit_final: ctrace.misfit_final().is_finite().then(|| ctrace.misfit_final()),
            tau_final: Some(tc),
            wall_seconds: csecs,
            inner_iterations_total: ctrace.inner_iterations_total(),
            status: Some(ctrace.status),
            pareto_trace: Some(ctrace),
            ..base.record("convex-bpdn")
        };
        Ok((points, final_tau, [fact_rec, convex_rec]))
    }))?;

    let mut points = Vec::new();
    let mut finals = Vec::new();
    let mut records = Vec::new();
    for (p, f, r) in per_seed {
        points.extend(p);
        finals.push(f);
        records.extend(r);
    }
    let max_of = |vals: &[Value], key: &str, valid_only: bool| {
        vals.iter()
            .filter(|p| !valid_only || p["rank_valid"] == json!(true))
            .filter_map(|p| p[key].as_f64())
            .fold(None, |acc: Option<f64>, g| Some(acc.map_or(g, |a| a.max(g))))
    };
    let max_gap = max_of(&points, "gap", false);
    let max_gap_valid = max_of(&points, "gap", true);
    let max_final_valid = max_of(&finals, "rel_diff", true);
    let infeasible = points.iter().filter(|p| p["rank_valid"] == json!(false)).count();
    let regression = max_gap_valid.is_some_and(|g| g > a.threshold) || max_final_valid.is_some_and(|d| d > FINAL_TAU_TOLERANCE);
    let exit_code = if regression {
        exit::ORACLE_REGRESSION
    } else if infeasible > 0 {
        exit::INFEASIBLE_RANK
    } else {
        exit::SUCCESS
    };
    Ok(Done {
        summary: json!({
            "threshold": a.threshold,
            "max_gap": num(max_gap),
            "max_gap_rank_valid": num(max_gap_valid),
            "expected_infeasible_points": infeasible,
            "max_final_tau_rel_diff_rank_valid": num(max_final_valid),
            "final_tau_tolerance": FINAL_TAU_TOLERANCE,
            "regression": regression,
            "points": points,
            "final_tau": finals,
        }),
        exit_code,
        matrix: None,
        records,
    })
}
