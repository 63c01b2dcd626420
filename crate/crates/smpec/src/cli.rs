//! Experiment harness behind the `smpec` binary: configuration, seeded
//! replicate runs, CSV output and the benchmark-table presets.

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Deserialize;

use crate::baselines::{confidence_interval, saa_solve, SaaConfig};
use crate::error::SmpecError;
use crate::problems::{
    build_problem, grid_oracle, validation_tokens, ProblemParams, SmpecProblem, Staging, DEFAULT_VALIDATION_SEED,
    DEFAULT_VALIDATION_SIZE,
};
use crate::smoothing::McEstimate;
use crate::zsol::{
    residual_norm, run_accelerated, run_convex, run_nonconvex, BatchRule, Counters, LowerMode, ResidualConfig,
    RunTrace, Schedule,
};

/// Overrides `--seed` and the config file seed when set.
pub const SEED_ENV: &str = "SMPEC_SEED";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("solver failure: {0}")]
    Solver(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            _ => 1,
        }
    }
}

impl From<SmpecError> for CliError {
    fn from(e: SmpecError) -> Self {
        match e {
            SmpecError::Config(m) => CliError::Config(m),
            other => CliError::Solver(other.to_string()),
        }
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

/// Problem construction failures are configuration errors whatever their kind.
fn build(id: &str, params: &ProblemParams) -> CliResult<SmpecProblem> {
    build_problem(id, params).map_err(|e| match e {
        SmpecError::Config(m) => CliError::Config(m),
        other => CliError::Config(other.to_string()),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolverId {
    ZsolConvex,
    ZsolNonconvex,
    ZsolAcc,
    Saa,
}

impl SolverId {
    pub fn name(&self) -> &'static str {
        match self {
            SolverId::ZsolConvex => "zsol-convex",
            SolverId::ZsolNonconvex => "zsol-nonconvex",
            SolverId::ZsolAcc => "zsol-acc",
            SolverId::Saa => "saa",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LowerArg {
    Exact,
    Inexact,
}

impl From<LowerArg> for LowerMode {
    fn from(l: LowerArg) -> Self {
        match l {
            LowerArg::Exact => LowerMode::Exact,
            LowerArg::Inexact => LowerMode::Inexact,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "smpec", version, about = "Zeroth-order solvers for stochastic MPECs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Seeded replicate runs; one CSV row per run plus a summary row.
    Run(SpecArgs),
    /// Gap (or value) along the iterations, averaged over runs.
    Trajectory(TrajectoryArgs),
    /// Regenerate one of the benchmark tables.
    Table(TableArgs),
    /// Reference optimum of a problem (registry value and grid search).
    Oracle(OracleArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct SpecArgs {
    /// TOML experiment file; flags override its entries.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub problem: Option<String>,
    /// Problem parameter override, e.g. `--param N=100`.
    #[arg(long = "param", value_name = "KEY=VALUE")]
    pub params: Vec<String>,
    #[arg(long, value_enum)]
    pub solver: Option<SolverId>,
    #[arg(long, value_enum)]
    pub lower: Option<LowerArg>,
    #[arg(long)]
    pub runs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub gamma0: Option<f64>,
    #[arg(long)]
    pub eta0: Option<f64>,
    /// Step-size decay exponent.
    #[arg(long)]
    pub a: Option<f64>,
    /// Smoothing decay exponent.
    #[arg(long)]
    pub b: Option<f64>,
    #[arg(long)]
    pub r: Option<f64>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub rho: Option<f64>,
    #[arg(long)]
    pub m0: Option<f64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub delta: Option<f64>,
    /// Constant mini-batch size of the nonconvex scheme (default `k+1`).
    #[arg(long)]
    pub batch: Option<usize>,
    /// Lower-level step size.
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub warm_start: bool,
    /// Sample size of the SAA baseline.
    #[arg(long)]
    pub saa_samples: Option<usize>,
    /// Size of the validation sample used for objective values.
    #[arg(long)]
    pub validation: Option<usize>,
    /// Mini-batch for the stationarity residual (0 disables it).
    #[arg(long)]
    pub residual_batch: Option<usize>,
    /// Worker threads (0 uses every core).
    #[arg(long)]
    pub jobs: Option<usize>,
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct TrajectoryArgs {
    #[command(flatten)]
    pub spec: SpecArgs,
    /// Record every n-th iteration (default: iters/100).
    #[arg(long)]
    pub log_every: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TableName {
    Time,
    Time2,
    Time3,
    P0,
    Ci,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Scale {
    Full,
    Desk,
}

#[derive(Debug, Clone, Args)]
pub struct TableArgs {
    #[arg(value_enum)]
    pub name: TableName,
    #[arg(long, value_enum, default_value = "desk")]
    pub scale: Scale,
    #[arg(long)]
    pub runs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub jobs: Option<usize>,
    /// CSV path; the text rendering goes next to it with a `.txt` extension.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct OracleArgs {
    #[arg(long)]
    pub problem: String,
    #[arg(long = "param", value_name = "KEY=VALUE")]
    pub params: Vec<String>,
    #[arg(long, default_value_t = 201)]
    pub resolution: usize,
    /// Monte Carlo samples per grid node.
    #[arg(long, default_value_t = 2000)]
    pub mc: usize,
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub problem: Option<String>,
    pub solver: Option<SolverId>,
    pub lower: Option<LowerArg>,
    pub runs: Option<usize>,
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
    pub out: Option<PathBuf>,
    pub validation: Option<usize>,
    pub residual_batch: Option<usize>,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
    #[serde(default)]
    pub schedule: ScheduleOverrides,
    #[serde(default)]
    pub saa: SaaOverrides,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleOverrides {
    pub iters: Option<usize>,
    pub gamma0: Option<f64>,
    pub eta0: Option<f64>,
    pub a: Option<f64>,
    pub b: Option<f64>,
    pub r: Option<f64>,
    pub tau: Option<f64>,
    pub rho: Option<f64>,
    pub m0: Option<f64>,
    pub lambda: Option<f64>,
    pub delta: Option<f64>,
    pub batch: Option<usize>,
    pub alpha: Option<f64>,
    pub alpha0: Option<f64>,
    pub gamma_shift: Option<f64>,
    pub warm_start: Option<bool>,
    pub relax_step_bound: Option<bool>,
}

impl ScheduleOverrides {
    pub fn apply(&self, s: &mut Schedule) {
        macro_rules! set {
            ($($f:ident => $t:ident),*) => { $(if let Some(v) = self.$f { s.$t = v; })* };
        }
        set!(iters => iters, gamma0 => gamma0, eta0 => eta0, a => a, b => b, r => r, tau => tau, rho => rho,
             m0 => m0, lambda => lambda, delta => delta, gamma_shift => gamma_shift,
             warm_start => warm_start, relax_step_bound => relax_step_bound);
        if let Some(n) = self.batch {
            s.batch = BatchRule::Constant(n);
        }
        if self.alpha.is_some() {
            s.lower_alpha = self.alpha;
        }
        if self.alpha0.is_some() {
            s.lower_alpha0 = self.alpha0;
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SaaOverrides {
    pub samples: Option<usize>,
    pub step0: Option<f64>,
    pub max_iters: Option<usize>,
    pub tol: Option<f64>,
}

impl SpecArgs {
    fn schedule_overrides(&self) -> ScheduleOverrides {
        ScheduleOverrides {
            iters: self.iters,
            gamma0: self.gamma0,
            eta0: self.eta0,
            a: self.a,
            b: self.b,
            r: self.r,
            tau: self.tau,
            rho: self.rho,
            m0: self.m0,
            lambda: self.lambda,
            delta: self.delta,
            batch: self.batch,
            alpha: self.alpha,
            warm_start: self.warm_start.then_some(true),
            ..Default::default()
        }
    }
}

pub fn parse_params(items: &[String]) -> CliResult<ProblemParams> {
    let mut out = ProblemParams::new();
    for item in items {
        let (k, v) = item
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("parameter '{item}' is not KEY=VALUE")))?;
        let v: f64 = v
            .trim()
            .parse()
            .map_err(|_| CliError::Config(format!("parameter '{k}' has a non-numeric value '{v}'")))?;
        out.insert(k.trim().to_string(), v);
    }
    Ok(out)
}

pub fn default_solver(problem_id: &str) -> SolverId {
    if problem_id.starts_with("cournot") {
        SolverId::ZsolConvex
    } else {
        SolverId::ZsolNonconvex
    }
}

/// Experimental settings for a problem/solver pair.
pub fn preset(problem: &SmpecProblem, solver: SolverId) -> (Schedule, LowerMode) {
    let base = Schedule::default();
    match (problem.id.as_str(), solver) {
        ("cournot1s", SolverId::ZsolConvex) => (
            Schedule { lower_alpha: Some(0.15f64.min(1.0 / problem.lower.lip)), relax_step_bound: true, ..base },
            LowerMode::Inexact,
        ),
        ("bard", _) => (
            Schedule {
                gamma0: 1e-3,
                eta0: 1e-2,
                iters: 10_000,
                lower_alpha0: Some(1.0),
                gamma_shift: 0.01,
                ..base
            },
            LowerMode::Exact,
        ),
        ("p2" | "p3" | "p4" | "hd2", _) => {
            (Schedule { gamma0: 1e-3, eta0: 1e-2, iters: 10_000, ..base }, LowerMode::Exact)
        }
        ("p1" | "p5" | "hd1", _) => (Schedule { gamma0: 0.5, eta0: 0.1, iters: 200, ..base }, LowerMode::Exact),
        _ => (base, LowerMode::Exact),
    }
}

/// A fully resolved experiment.
#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    pub problem_id: String,
    pub params: ProblemParams,
    pub problem: SmpecProblem,
    pub solver: SolverId,
    pub lower: LowerMode,
    pub schedule: Schedule,
    pub saa: SaaConfig,
    pub runs: usize,
    pub base_seed: u64,
    pub jobs: usize,
    pub validation_size: usize,
    pub residual_batch: usize,
    pub out: Option<PathBuf>,
}

impl ExperimentSpec {
    /// Preset-based spec with 20 runs from seed 0.
    pub fn new(problem_id: &str, params: ProblemParams, solver: SolverId) -> CliResult<Self> {
        let problem = build(problem_id, &params)?;
        let (schedule, lower) = preset(&problem, solver);
        Ok(ExperimentSpec {
            problem_id: problem_id.to_string(),
            params,
            problem,
            solver,
            lower,
            schedule,
            saa: SaaConfig::default(),
            runs: 20,
            base_seed: 0,
            jobs: 1,
            validation_size: DEFAULT_VALIDATION_SIZE,
            residual_batch: if solver == SolverId::ZsolNonconvex { 1000 } else { 0 },
            out: None,
        })
    }

    /// Merges presets, the config file, flags and `SMPEC_SEED` (in that order).
    pub fn resolve(args: &SpecArgs, env_seed: Option<&str>) -> CliResult<Self> {
        let file = match &args.config {
            Some(path) => {
                let text = fs::read_to_string(path)
                    .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
                toml::from_str::<ConfigFile>(&text)
                    .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
            }
            None => ConfigFile::default(),
        };
        let problem_id = args
            .problem
            .clone()
            .or(file.problem.clone())
            .ok_or_else(|| CliError::Config("no problem given (use --problem or the config file)".into()))?;
        let mut params: ProblemParams = file.params.clone();
        params.extend(parse_params(&args.params)?);
        let solver = args.solver.or(file.solver).unwrap_or_else(|| default_solver(&problem_id));
        let mut spec = ExperimentSpec::new(&problem_id, params, solver)?;
        file.schedule.apply(&mut spec.schedule);
        args.schedule_overrides().apply(&mut spec.schedule);
        if let Some(l) = args.lower.or(file.lower) {
            spec.lower = l.into();
        }
        spec.runs = args.runs.or(file.runs).unwrap_or(spec.runs);
        spec.base_seed = args.seed.or(file.seed).unwrap_or(0);
        if let Some(s) = env_seed {
            spec.base_seed = s
                .trim()
                .parse()
                .map_err(|_| CliError::Config(format!("{SEED_ENV}='{s}' is not an unsigned integer")))?;
        }
        spec.jobs = args.jobs.or(file.jobs).unwrap_or(1);
        spec.validation_size = args.validation.or(file.validation).unwrap_or(spec.validation_size);
        spec.residual_batch = args.residual_batch.or(file.residual_batch).unwrap_or(spec.residual_batch);
        spec.out = args.out.clone().or(file.out.clone());
        let so = &file.saa;
        spec.saa = SaaConfig {
            k_samples: args.saa_samples.or(so.samples).unwrap_or(spec.saa.k_samples),
            step0: so.step0.unwrap_or(spec.saa.step0),
            max_iters: so.max_iters.unwrap_or(spec.saa.max_iters),
            tol: so.tol.unwrap_or(spec.saa.tol),
            ..spec.saa
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> CliResult<()> {
        if self.runs == 0 {
            return Err(CliError::Config("--runs must be at least 1".into()));
        }
        if self.validation_size == 0 {
            return Err(CliError::Config("validation sample size must be at least 1".into()));
        }
        if self.saa.k_samples == 0 {
            return Err(CliError::Config("SAA sample size must be at least 1".into()));
        }
        if self.solver == SolverId::ZsolAcc && self.lower == LowerMode::Inexact {
            return Err(CliError::Config("the accelerated scheme uses exact lower-level solves only".into()));
        }
        self.schedule.validate()?;
        Ok(())
    }

    /// Seed of run `index`.
    pub fn seed(&self, index: usize) -> u64 {
        self.base_seed.wrapping_add(index as u64)
    }

    /// Validation tokens, empty when the objective has a closed form or no noise.
    pub fn tokens(&self) -> Vec<Vec<f64>> {
        if self.problem.expected_value.is_some() || self.problem.omega.dim() == 0 {
            Vec::new()
        } else {
            validation_tokens(&self.problem, self.validation_size, DEFAULT_VALIDATION_SEED)
        }
    }

    /// Smoothing radius and step at the returned point, for the residual.
    fn final_eta_gamma(&self) -> (f64, f64) {
        let s = &self.schedule;
        let k = s.iters;
        match self.solver {
            SolverId::ZsolNonconvex => (s.eta0, s.gamma0),
            SolverId::ZsolAcc => (s.eta0 / (k + 1) as f64, s.gamma0 / (2.0 * (k + 1) as f64)),
            _ => (s.eta(k), s.gamma(k)),
        }
    }
}

/// Expected implicit value (minimization convention) with its Monte Carlo
/// standard error over `tokens`.
pub fn value_estimate(problem: &SmpecProblem, x: &[f64], tokens: &[Vec<f64>]) -> crate::Result<McEstimate> {
    if let Some(f) = &problem.expected_value {
        return Ok(McEstimate { mean: f(x), stderr: 0.0 });
    }
    if tokens.is_empty() {
        return Ok(McEstimate { mean: problem.implicit_value(x, &problem.omega.mean())?, stderr: 0.0 });
    }
    let vals = match problem.staging {
        Staging::SingleStage => {
            let y = problem.solve_lower_exact(x, &[])?;
            tokens.iter().map(|w| (problem.upper)(x, &y, w)).collect::<Vec<_>>()
        }
        Staging::TwoStage => tokens.iter().map(|w| problem.implicit_value(x, w)).collect::<crate::Result<Vec<_>>>()?,
    };
    Ok(McEstimate::from_samples(&vals))
}

/// One point of a recorded trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryPoint {
    pub k: usize,
    pub value: McEstimate,
    pub eta: f64,
    pub gamma: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub seed: u64,
    pub x: Vec<f64>,
    /// Expected objective at `x` in the reported sign convention.
    pub objective: McEstimate,
    /// `f(x) - f*` in the minimization convention when `f*` is known.
    pub gap: Option<f64>,
    pub residual: Option<McEstimate>,
    pub counters: Counters,
    pub r_index: Option<usize>,
    pub wall_time: f64,
    pub trajectory: Option<Vec<TrajectoryPoint>>,
}

fn run_solver(spec: &ExperimentSpec, seed: u64) -> crate::Result<RunTrace> {
    let p = &spec.problem;
    match spec.solver {
        SolverId::ZsolConvex => run_convex(p, &spec.schedule, spec.lower, seed),
        SolverId::ZsolNonconvex => run_nonconvex(p, &spec.schedule, spec.lower, seed),
        SolverId::ZsolAcc => run_accelerated(p, &spec.schedule, seed),
        SolverId::Saa => {
            let r = saa_solve(p, &spec.saa, seed)?;
            Ok(RunTrace {
                iterates: None,
                output: r.x_hat,
                r_index: None,
                counters: Counters::default(),
                wall_time: r.wall_time,
                seed,
            })
        }
    }
}

/// Executes run `index` of `spec` and evaluates its output on `tokens`.
pub fn execute_run(spec: &ExperimentSpec, tokens: &[Vec<f64>], index: usize) -> crate::Result<RunRecord> {
    let seed = spec.seed(index);
    let p = &spec.problem;
    let trace = run_solver(spec, seed)?;
    let raw = value_estimate(p, &trace.output, tokens)?;
    let gap = p.optimum.as_ref().map(|o| raw.mean - o.f_star);
    let residual = if spec.residual_batch > 0 && spec.solver != SolverId::Saa {
        let (eta, gamma) = spec.final_eta_gamma();
        let cfg = ResidualConfig { eta, beta: 1.0 / gamma, mc_batch: spec.residual_batch };
        Some(residual_norm(p, &trace.output, &cfg, seed)?)
    } else {
        None
    };
    let trajectory = match &trace.iterates {
        Some(points) => Some(
            points
                .iter()
                .map(|tp| {
                    Ok(TrajectoryPoint { k: tp.k, value: value_estimate(p, &tp.x, tokens)?, eta: tp.eta, gamma: tp.gamma })
                })
                .collect::<crate::Result<Vec<_>>>()?,
        ),
        None => None,
    };
    Ok(RunRecord {
        seed,
        objective: McEstimate { mean: p.reported(raw.mean), stderr: raw.stderr },
        x: trace.output,
        gap,
        residual,
        counters: trace.counters,
        r_index: trace.r_index,
        wall_time: trace.wall_time,
        trajectory,
    })
}

fn pool(jobs: usize) -> CliResult<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| CliError::Io(format!("worker pool: {e}")))
}

/// All runs of `spec` in seed order.
pub fn run_all(spec: &ExperimentSpec) -> CliResult<Vec<RunRecord>> {
    spec.validate()?;
    let tokens = spec.tokens();
    let results: Vec<_> =
        pool(spec.jobs)?.install(|| (0..spec.runs).into_par_iter().map(|i| execute_run(spec, &tokens, i)).collect());
    results
        .into_iter()
        .enumerate()
        .map(|(i, r)| {
            r.map_err(|e| match e {
                SmpecError::Config(m) => CliError::Config(m),
                other => CliError::Solver(format!(
                    "{} on {} run {i} (seed {}): {other}",
                    spec.solver.name(),
                    spec.problem_id,
                    spec.seed(i)
                )),
            })
        })
        .collect()
}

/// Compact number rendering that round-trips.
pub fn fmt_num(v: f64) -> String {
    let a = v.abs();
    if v == 0.0 || (1e-4..1e15).contains(&a) {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}

fn fmt_vec(x: &[f64]) -> String {
    x.iter().map(|v| fmt_num(*v)).collect::<Vec<_>>().join(" ")
}

fn opt(v: Option<f64>) -> String {
    v.map(fmt_num).unwrap_or_default()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn ci_half(v: &[f64]) -> Option<f64> {
    confidence_interval(v).ok().map(|c| c.half_width)
}

pub const RUN_HEADER: [&str; 16] = [
    "seed",
    "objective",
    "objective_stderr",
    "gap",
    "residual",
    "residual_stderr",
    "upper_projections",
    "upper_samples",
    "lower_solves",
    "lower_projections",
    "lower_samples",
    "r_index",
    "x",
    "objective_ci95",
    "gap_ci95",
    "wall_time",
];

/// Per-run rows followed by a summary row (means and 95% half-widths).
pub fn write_run_csv<W: Write>(records: &[RunRecord], w: W) -> CliResult<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(RUN_HEADER)?;
    for r in records {
        let c = &r.counters;
        out.write_record([
            r.seed.to_string(),
            fmt_num(r.objective.mean),
            fmt_num(r.objective.stderr),
            opt(r.gap),
            opt(r.residual.map(|e| e.mean)),
            opt(r.residual.map(|e| e.stderr)),
            c.upper_projections.to_string(),
            c.upper_samples.to_string(),
            c.lower_solves.to_string(),
            c.lower_projections.to_string(),
            c.lower_samples.to_string(),
            r.r_index.map(|v| v.to_string()).unwrap_or_default(),
            fmt_vec(&r.x),
            String::new(),
            String::new(),
            fmt_num(r.wall_time),
        ])?;
    }
    let objs: Vec<f64> = records.iter().map(|r| r.objective.mean).collect();
    let gaps: Option<Vec<f64>> = records.iter().map(|r| r.gap).collect();
    let res: Option<Vec<f64>> = records.iter().map(|r| r.residual.map(|e| e.mean)).collect();
    let times: Vec<f64> = records.iter().map(|r| r.wall_time).collect();
    let mut row = vec![String::new(); RUN_HEADER.len()];
    row[0] = "summary".into();
    row[1] = fmt_num(mean(&objs));
    row[3] = opt(gaps.as_deref().map(mean));
    row[4] = opt(res.as_deref().map(mean));
    row[13] = opt(ci_half(&objs));
    row[14] = opt(gaps.as_deref().and_then(ci_half));
    row[15] = fmt_num(mean(&times));
    out.write_record(&row)?;
    out.flush()?;
    Ok(())
}

/// Mean value (or gap) per recorded iteration across runs. The standard
/// error is taken across runs, or from the validation sample for one run.
pub fn write_trajectory_csv<W: Write>(spec: &ExperimentSpec, records: &[RunRecord], w: W) -> CliResult<()> {
    let f_star = spec.problem.optimum.as_ref().map(|o| o.f_star);
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["k", if f_star.is_some() { "gap_estimate" } else { "value" }, "stderr", "eta_k", "gamma_k"])?;
    let series: Vec<&Vec<TrajectoryPoint>> = records.iter().filter_map(|r| r.trajectory.as_ref()).collect();
    let Some(first) = series.first() else {
        return Err(CliError::Config("the selected solver does not record trajectories".into()));
    };
    for (j, p0) in first.iter().enumerate() {
        let vals: Vec<f64> = series
            .iter()
            .map(|s| match f_star {
                Some(fs) => s[j].value.mean - fs,
                None => spec.problem.reported(s[j].value.mean),
            })
            .collect();
        let m = mean(&vals);
        let se = if vals.len() > 1 { McEstimate::from_samples(&vals).stderr } else { p0.value.stderr };
        out.write_record([p0.k.to_string(), fmt_num(m), fmt_num(se), fmt_num(p0.eta), fmt_num(p0.gamma)])?;
    }
    out.flush()?;
    Ok(())
}

fn open_out(path: Option<&Path>) -> CliResult<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(io::BufWriter::new(
            fs::File::create(p).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?,
        )),
        None => Box::new(io::stdout().lock()),
    })
}

pub fn cmd_run(args: &SpecArgs) -> CliResult<()> {
    let env = std::env::var(SEED_ENV).ok();
    let spec = ExperimentSpec::resolve(args, env.as_deref())?;
    let records = run_all(&spec)?;
    write_run_csv(&records, open_out(spec.out.as_deref())?)
}

pub fn cmd_trajectory(args: &TrajectoryArgs) -> CliResult<()> {
    let env = std::env::var(SEED_ENV).ok();
    let mut spec = ExperimentSpec::resolve(&args.spec, env.as_deref())?;
    if spec.solver == SolverId::Saa {
        return Err(CliError::Config("trajectories are recorded for the zsol solvers only".into()));
    }
    if args.spec.validation.is_none() {
        spec.validation_size = spec.validation_size.min(10_000);
    }
    spec.residual_batch = 0;
    spec.schedule.record_every = match args.log_every {
        Some(0) => return Err(CliError::Config("--log-every must be at least 1".into())),
        Some(n) => n,
        None => (spec.schedule.iters / 100).max(1),
    };
    let records = run_all(&spec)?;
    write_trajectory_csv(&spec, &records, open_out(spec.out.as_deref())?)
}

/// Registry optimum and, for one- and two-dimensional problems, a grid search.
pub fn cmd_oracle(args: &OracleArgs) -> CliResult<()> {
    let params = parse_params(&args.params)?;
    let problem = build(&args.problem, &params)?;
    let mut rows = Vec::new();
    if let Some(o) = &problem.optimum {
        rows.push(("registry", format!("{:?}", o.provenance), o.x_star.clone(), problem.reported(o.f_star), o.stderr));
    }
    if problem.dim_x <= 2 {
        let g = grid_oracle(&problem, args.resolution, args.mc)?;
        rows.push(("grid", format!("{:?}", g.provenance), g.x_star, problem.reported(g.f_star), g.stderr));
    }
    if rows.is_empty() {
        return Err(CliError::Config(format!("no oracle available for {} (dimension {})", problem.id, problem.dim_x)));
    }
    let mut out = csv::Writer::from_writer(open_out(args.out.as_deref())?);
    out.write_record(["problem", "source", "provenance", "x_star", "f_star", "stderr"])?;
    for (src, prov, x, f, se) in rows {
        out.write_record([problem.id.clone(), src.into(), prov, fmt_vec(&x), fmt_num(f), fmt_num(se)])?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Text(String),
    /// Rendered in scientific notation.
    Sci(f64),
    /// Rendered with the given number of decimals.
    Fixed(f64, usize),
    Missing,
}

impl Cell {
    fn csv(&self) -> String {
        match self {
            Cell::Text(s) => s.clone(),
            Cell::Sci(v) | Cell::Fixed(v, _) => fmt_num(*v),
            Cell::Missing => String::new(),
        }
    }

    fn text(&self) -> String {
        match self {
            Cell::Text(s) => s.clone(),
            Cell::Sci(v) => format!("{v:.2e}"),
            Cell::Fixed(v, d) => format!("{v:.d$}"),
            Cell::Missing => "--".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub title: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    fn new(title: &str, header: &[&str]) -> Self {
        Table { title: title.into(), header: header.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    pub fn write_csv<W: Write>(&self, w: W) -> CliResult<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(&self.header)?;
        for r in &self.rows {
            out.write_record(r.iter().map(Cell::csv))?;
        }
        out.flush()?;
        Ok(())
    }

    /// Right-aligned columns under a title line.
    pub fn render(&self) -> String {
        let cells: Vec<Vec<String>> = self.rows.iter().map(|r| r.iter().map(Cell::text).collect()).collect();
        let widths: Vec<usize> = (0..self.header.len())
            .map(|j| cells.iter().map(|r| r[j].len()).chain([self.header[j].len()]).max().unwrap_or(0))
            .collect();
        let line = |r: &[String]| {
            r.iter().zip(&widths).map(|(c, w)| format!("{c:>w$}")).collect::<Vec<_>>().join("  ").trim_end().to_string()
        };
        let mut s = format!("{}\n{}\n", self.title, line(&self.header));
        for r in &cells {
            s.push_str(&line(r));
            s.push('\n');
        }
        s
    }
}

/// Runs, base seed and worker count shared by every cell of a table.
#[derive(Debug, Clone, Copy)]
pub struct TableRun {
    pub scale: Scale,
    pub runs: Option<usize>,
    pub seed: u64,
    pub jobs: usize,
}

impl TableRun {
    fn runs(&self, desk: usize) -> usize {
        self.runs.unwrap_or(match self.scale {
            Scale::Desk => desk,
            Scale::Full => 20,
        })
    }
}

fn params(kv: &[(&str, f64)]) -> ProblemParams {
    kv.iter().map(|(k, v)| (k.to_string(), *v)).collect()
}

fn cell_runs(id: &str, p: ProblemParams, solver: SolverId, runs: usize, t: &TableRun) -> CliResult<Vec<RunRecord>> {
    let mut spec = ExperimentSpec::new(id, p, solver)?;
    spec.runs = runs;
    spec.base_seed = t.seed;
    spec.jobs = t.jobs;
    spec.residual_batch = 0;
    log::info!("table cell {id} {:?} {}", spec.params, solver.name());
    run_all(&spec)
}

fn gap_and_time(records: &[RunRecord]) -> [Cell; 2] {
    let gaps: Vec<f64> = records.iter().filter_map(|r| r.gap).collect();
    let times: Vec<f64> = records.iter().map(|r| r.wall_time).collect();
    [if gaps.is_empty() { Cell::Missing } else { Cell::Sci(mean(&gaps)) }, Cell::Fixed(mean(&times), 3)]
}

fn gap_ci(records: &[RunRecord]) -> CliResult<[Cell; 3]> {
    let gaps: Vec<f64> = records.iter().filter_map(|r| r.gap).collect();
    let ci = confidence_interval(&gaps).map_err(|e| CliError::Config(format!("confidence interval: {e}")))?;
    Ok([Cell::Sci(ci.mean), Cell::Sci(ci.lower()), Cell::Sci(ci.upper())])
}

const COURNOT_GRID_2S: [(f64, f64); 4] = [(1.0, 0.05), (1.0, 0.1), (0.5, 0.05), (0.5, 0.1)];
const COURNOT_GRID_1S: [(f64, f64); 4] = [(0.01, 3.0), (0.01, 5.0), (0.02, 3.0), (0.02, 5.0)];

/// Best known objective values of the Bard variants, keyed by `(a, c)` with `b = 0`, `d = c`.
const BARD_REFERENCE: [(f64, f64, f64); 9] = [
    (1.0, 1.0, -7.50),
    (1.0, 2.0, -9.23),
    (1.0, 3.0, -9.25),
    (5.0, 1.0, -11.50),
    (5.0, 2.0, -13.23),
    (5.0, 3.0, -13.25),
    (10.0, 1.0, -16.50),
    (10.0, 2.0, -18.23),
    (10.0, 3.0, -18.25),
];

pub fn build_table(name: TableName, t: &TableRun) -> CliResult<Table> {
    let full = t.scale == Scale::Full;
    match name {
        TableName::Time => {
            let ns: &[f64] = if full { &[10.0, 20.0, 100.0, 1000.0, 10000.0] } else { &[10.0, 100.0, 1000.0] };
            let mut tab = Table::new(
                "Two-stage Cournot: convex, accelerated and SAA",
                &["N", "b", "c", "cnvx_gap", "cnvx_time", "acc_gap", "acc_time", "saa_gap", "saa_time"],
            );
            for &n in ns {
                for (b, c) in COURNOT_GRID_2S {
                    let p = params(&[("N", n), ("b", b), ("c", c)]);
                    let runs = t.runs(20);
                    let mut row = vec![Cell::Fixed(n, 0), Cell::Fixed(b, 2), Cell::Fixed(c, 2)];
                    for solver in [SolverId::ZsolConvex, SolverId::ZsolAcc, SolverId::Saa] {
                        row.extend(gap_and_time(&cell_runs("cournot2s", p.clone(), solver, runs, t)?));
                    }
                    tab.rows.push(row);
                }
            }
            Ok(tab)
        }
        TableName::Time2 => {
            let ns: &[f64] = if full { &[100.0, 1000.0, 10000.0, 100000.0] } else { &[100.0, 1000.0] };
            let mut tab = Table::new(
                "Single-stage Cournot: convex scheme with VR-SA lower level and SAA",
                &["N", "b", "c", "cnvx_gap", "cnvx_time", "saa_gap", "saa_time"],
            );
            for &n in ns {
                for (b, c) in COURNOT_GRID_1S {
                    let p = params(&[("N", n), ("b", b), ("c", c)]);
                    let runs = t.runs(20);
                    let mut row = vec![Cell::Fixed(n, 0), Cell::Fixed(b, 2), Cell::Fixed(c, 0)];
                    for solver in [SolverId::ZsolConvex, SolverId::Saa] {
                        row.extend(gap_and_time(&cell_runs("cournot1s", p.clone(), solver, runs, t)?));
                    }
                    tab.rows.push(row);
                }
            }
            Ok(tab)
        }
        TableName::Time3 => {
            let mut tab = Table::new(
                "Bard bilevel variants: nonconvex scheme",
                &["a", "b", "c", "d", "f_mean", "f_ci95", "global_ref"],
            );
            for (a, c, reference) in BARD_REFERENCE {
                let p = params(&[("a", a), ("b", 0.0), ("c", c), ("d", c)]);
                let recs = cell_runs("bard", p, SolverId::ZsolNonconvex, t.runs(3), t)?;
                let f: Vec<f64> = recs.iter().map(|r| r.objective.mean).collect();
                tab.rows.push(vec![
                    Cell::Fixed(a, 0),
                    Cell::Fixed(0.0, 0),
                    Cell::Fixed(c, 0),
                    Cell::Fixed(c, 0),
                    Cell::Fixed(mean(&f), 2),
                    ci_half(&f).map_or(Cell::Missing, |h| Cell::Fixed(h, 3)),
                    Cell::Fixed(reference, 2),
                ]);
            }
            Ok(tab)
        }
        TableName::P0 => {
            let mut tab = Table::new(
                "Deterministic literature problems: nonconvex scheme",
                &["problem", "setting", "f", "x", "reference_f", "reference_x"],
            );
            let cases: Vec<(&str, &str, ProblemParams)> = vec![
                ("p1", "L=150 gamma=1.0", params(&[("gamma", 1.0)])),
                ("p1", "L=150 gamma=1.1", params(&[("gamma", 1.1)])),
                ("p1", "L=150 gamma=1.3", params(&[("gamma", 1.3)])),
                ("p2", "", params(&[])),
                ("p3", "", params(&[])),
                ("p4", "", params(&[])),
                ("p5", "variant 1", params(&[("variant", 1.0)])),
                ("p5", "variant 2", params(&[("variant", 2.0)])),
                ("p5", "variant 3", params(&[("variant", 3.0)])),
            ];
            for (id, setting, p) in cases {
                let refp = build(id, &p)?;
                let recs = cell_runs(id, p, SolverId::ZsolNonconvex, t.runs(1), t)?;
                let f: Vec<f64> = recs.iter().map(|r| r.objective.mean).collect();
                let dim = recs[0].x.len();
                let xm: Vec<f64> = (0..dim).map(|i| mean(&recs.iter().map(|r| r.x[i]).collect::<Vec<_>>())).collect();
                let (rf, rx) = match &refp.optimum {
                    Some(o) => (Cell::Fixed(refp.reported(o.f_star), 2), Cell::Text(fmt_point(&o.x_star))),
                    None => (Cell::Missing, Cell::Missing),
                };
                tab.rows.push(vec![
                    Cell::Text(id.into()),
                    Cell::Text(setting.into()),
                    Cell::Fixed(mean(&f), 2),
                    Cell::Text(fmt_point(&xm)),
                    rf,
                    rx,
                ]);
            }
            Ok(tab)
        }
        TableName::Ci => {
            let (n2, n1) = if full { (10000.0, 100000.0) } else { (1000.0, 1000.0) };
            let mut tab = Table::new(
                "95% confidence intervals of the gap",
                &["problem", "N", "b", "c", "cnvx_gap", "cnvx_lo", "cnvx_hi", "acc_gap", "acc_lo", "acc_hi"],
            );
            let runs = t.runs(20);
            for (b, c) in COURNOT_GRID_2S {
                let p = params(&[("N", n2), ("b", b), ("c", c)]);
                let mut row = vec![Cell::Text("cournot2s".into()), Cell::Fixed(n2, 0), Cell::Fixed(b, 2), Cell::Fixed(c, 2)];
                row.extend(gap_ci(&cell_runs("cournot2s", p.clone(), SolverId::ZsolConvex, runs, t)?)?);
                row.extend(gap_ci(&cell_runs("cournot2s", p, SolverId::ZsolAcc, runs, t)?)?);
                tab.rows.push(row);
            }
            for (b, c) in COURNOT_GRID_1S {
                let p = params(&[("N", n1), ("b", b), ("c", c)]);
                let mut row = vec![Cell::Text("cournot1s".into()), Cell::Fixed(n1, 0), Cell::Fixed(b, 2), Cell::Fixed(c, 0)];
                row.extend(gap_ci(&cell_runs("cournot1s", p, SolverId::ZsolConvex, runs, t)?)?);
                row.extend([Cell::Missing, Cell::Missing, Cell::Missing]);
                tab.rows.push(row);
            }
            Ok(tab)
        }
    }
}

fn fmt_point(x: &[f64]) -> String {
    let parts: Vec<String> = x.iter().map(|v| format!("{v:.2}")).collect();
    if parts.len() == 1 {
        parts[0].clone()
    } else {
        format!("({})", parts.join(","))
    }
}

pub fn cmd_table(args: &TableArgs) -> CliResult<()> {
    let env = std::env::var(SEED_ENV).ok();
    let seed = match env.as_deref() {
        Some(s) => s
            .trim()
            .parse()
            .map_err(|_| CliError::Config(format!("{SEED_ENV}='{s}' is not an unsigned integer")))?,
        None => args.seed.unwrap_or(0),
    };
    if args.runs == Some(0) {
        return Err(CliError::Config("--runs must be at least 1".into()));
    }
    let t = TableRun { scale: args.scale, runs: args.runs, seed, jobs: args.jobs.unwrap_or(1) };
    let table = build_table(args.name, &t)?;
    let text = table.render();
    match &args.out {
        Some(path) => {
            table.write_csv(open_out(Some(path))?)?;
            fs::write(path.with_extension("txt"), &text)?;
            print!("{text}");
        }
        None => {
            table.write_csv(io::stdout().lock())?;
            eprint!("{text}");
        }
    }
    Ok(())
}

pub fn dispatch(cli: &Cli) -> CliResult<()> {
    match &cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Trajectory(a) => cmd_trajectory(a),
        Command::Table(a) => cmd_table(a),
        Command::Oracle(a) => cmd_oracle(a),
    }
}
