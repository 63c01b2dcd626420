//! Upper-level zeroth-order schemes: convex (single- and two-stage),
//! variance-reduced nonconvex, and the accelerated two-stage method.

use std::time::Instant;

use crate::error::{Result, SmpecError};
use crate::geometry::{sample_sphere, seeded_rng, SmpecRng};
use crate::lower_level::{
    deterministic_projection_solve, log_steps, sa_solve_diminishing, vr_batch, vr_sa_solve, DiminishingSaConfig,
    ProjectionConfig, VrSaConfig,
};
use crate::problems::{expected_value, SmpecProblem, Staging};
use crate::smoothing::{Exactness, ImplicitValueOracle, McEstimate, ZoGradientEstimator};
use crate::vecops::norm;

/// Stream ids derived from a run seed.
pub const UPPER_STREAM: u64 = 0;
pub const LOWER_STREAM: u64 = 1;
pub const RESIDUAL_STREAM: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BatchRule {
    /// `N_k = n` for every k.
    Constant(usize),
    /// `N_k = k + 1`.
    Linear,
    /// `N_k = floor((k+1)^(1+delta))`.
    Power(f64),
}

impl BatchRule {
    pub fn size(&self, k: usize) -> usize {
        match *self {
            BatchRule::Constant(n) => n.max(1),
            BatchRule::Linear => k + 1,
            BatchRule::Power(delta) => (((k + 1) as f64).powf(1.0 + delta).floor() as usize).max(1),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LowerMode {
    Exact,
    Inexact,
}

/// Step sizes, smoothing radii, lower-level effort and output rules.
#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    pub gamma0: f64,
    pub a: f64,
    pub eta0: f64,
    pub b: f64,
    /// Averaging exponent.
    pub r: f64,
    pub tau: f64,
    pub rho: f64,
    pub m0: f64,
    /// Tail fraction for the nonconvex output index.
    pub lambda: f64,
    pub iters: usize,
    /// Mini-batch rule of the nonconvex scheme.
    pub batch: BatchRule,
    /// Exponent slack of the accelerated batch rule.
    pub delta: f64,
    /// Lower-level step (VR-SA / projection); `None` picks `mu/(2L^2)` or `mu/L^2`.
    pub lower_alpha: Option<f64>,
    /// First SA step of the diminishing lower solver; `None` picks `1/mu`.
    pub lower_alpha0: Option<f64>,
    pub gamma_shift: f64,
    pub relax_step_bound: bool,
    /// Start every lower solve from the previous solution.
    pub warm_start: bool,
    /// Keep every `record_every`-th iterate (0 keeps none).
    pub record_every: usize,
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule {
            gamma0: 1.0,
            a: 0.5,
            eta0: 1.0,
            b: 0.5,
            r: 0.0,
            tau: 5.0,
            rho: 1.0 / 1.5,
            m0: 1e-4,
            lambda: 0.5,
            iters: 1000,
            batch: BatchRule::Linear,
            delta: 0.01,
            lower_alpha: None,
            lower_alpha0: None,
            gamma_shift: 1.0,
            relax_step_bound: false,
            warm_start: false,
            record_every: 0,
        }
    }
}

/// Values of the schedule at one outer iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleStep {
    pub gamma: f64,
    pub eta: f64,
    pub t_k: usize,
    pub n_k: usize,
    pub n_k_accelerated: usize,
    pub m_t: Vec<u64>,
}

impl Schedule {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(SmpecError::Config(m));
        if !(self.gamma0 > 0.0 && self.eta0 > 0.0) {
            return bad(format!("gamma0 and eta0 must be positive (got {}, {})", self.gamma0, self.eta0));
        }
        if !(self.a > 0.0 && self.b > 0.0) {
            return bad(format!("a and b must be positive (got {}, {})", self.a, self.b));
        }
        if !(0.0..1.0).contains(&self.r) {
            return bad(format!("averaging exponent r must lie in [0,1), got {}", self.r));
        }
        if !(self.lambda > 0.0 && self.lambda < 1.0) {
            return bad(format!("lambda must lie in (0,1), got {}", self.lambda));
        }
        if !(self.tau > 0.0 && self.m0 > 0.0) || !(self.rho > 0.0 && self.rho < 1.0) {
            return bad("tau, M0 must be positive and rho must lie in (0,1)".into());
        }
        if !(self.delta >= 0.0) || !(self.gamma_shift > 0.0) {
            return bad("delta must be nonnegative and the SA step shift positive".into());
        }
        if let BatchRule::Constant(0) = self.batch {
            return bad("constant batch size must be at least 1".into());
        }
        Ok(())
    }

    pub fn gamma(&self, k: usize) -> f64 {
        self.gamma0 / ((k + 1) as f64).powf(self.a)
    }

    pub fn eta(&self, k: usize) -> f64 {
        self.eta0 / ((k + 1) as f64).powf(self.b)
    }
}

pub fn schedule_eval(sched: &Schedule, k: usize) -> ScheduleStep {
    let t_k = log_steps(sched.tau, k);
    ScheduleStep {
        gamma: sched.gamma(k),
        eta: sched.eta(k),
        t_k,
        n_k: sched.batch.size(k),
        n_k_accelerated: BatchRule::Power(sched.delta).size(k),
        m_t: (0..t_k).map(|t| vr_batch(sched.m0, sched.rho, t)).collect(),
    }
}

/// Running weighted average `x_bar = sum w_j x_j / sum w_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct AveragingState {
    pub s: f64,
    pub x_bar: Vec<f64>,
}

impl AveragingState {
    pub fn new(x0: &[f64], w0: f64) -> Self {
        AveragingState { s: w0, x_bar: x0.to_vec() }
    }

    pub fn update(&mut self, x: &[f64], w: f64) {
        let s_next = self.s + w;
        for (xb, xi) in self.x_bar.iter_mut().zip(x) {
            *xb = (self.s * *xb + w * xi) / s_next;
        }
        self.s = s_next;
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Counters {
    pub upper_projections: u64,
    pub upper_samples: u64,
    pub lower_solves: u64,
    pub lower_projections: u64,
    pub lower_samples: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TracePoint {
    pub k: usize,
    pub x: Vec<f64>,
    pub gamma: f64,
    pub eta: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunTrace {
    /// Recorded points of the reported sequence (averages, iterates or z_k).
    pub iterates: Option<Vec<TracePoint>>,
    pub output: Vec<f64>,
    /// Output index of the nonconvex scheme.
    pub r_index: Option<usize>,
    pub counters: Counters,
    pub wall_time: f64,
    pub seed: u64,
}

/// Which inexact lower-level method the evaluator calls.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InexactSolver {
    VrSa(VrSaConfig),
    Diminishing(DiminishingSaConfig),
    Projection(ProjectionConfig),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Scheme {
    Convex,
    Nonconvex,
}

fn inexact_solver(problem: &SmpecProblem, sched: &Schedule, scheme: Scheme) -> InexactSolver {
    let vi = &problem.lower;
    match (problem.staging, scheme) {
        (Staging::SingleStage, Scheme::Nonconvex) => {
            let a0 = sched.lower_alpha0.unwrap_or(1.0 / vi.mu);
            InexactSolver::Diminishing(DiminishingSaConfig { alpha0: a0, alpha: a0, gamma_shift: sched.gamma_shift })
        }
        (Staging::SingleStage, _) => InexactSolver::VrSa(VrSaConfig {
            alpha: sched.lower_alpha.unwrap_or(vi.mu / (2.0 * vi.lip * vi.lip)),
            rho: sched.rho,
            m0: sched.m0,
            tau: sched.tau,
            relax_step_bound: sched.relax_step_bound,
        }),
        (Staging::TwoStage, _) => InexactSolver::Projection(ProjectionConfig {
            alpha: sched.lower_alpha.unwrap_or(problem.lower_alpha),
            tau: sched.tau,
            relax_step_bound: sched.relax_step_bound,
        }),
    }
}

/// Implicit objective `x -> f~(x, y(x[,omega]), omega)` backed by an exact or
/// inexact lower-level solve, with exact counters.
pub struct ImplicitEvaluator<'a> {
    problem: &'a SmpecProblem,
    mode: LowerMode,
    solver: InexactSolver,
    /// Outer iteration index driving the inexact solvers' effort.
    pub k: usize,
    rng: SmpecRng,
    base: Option<(Vec<f64>, Vec<f64>)>,
    warm: Option<Vec<f64>>,
    warm_start: bool,
    pub counters: Counters,
}

impl<'a> ImplicitEvaluator<'a> {
    pub fn new(problem: &'a SmpecProblem, mode: LowerMode, solver: InexactSolver, seed: u64) -> Result<Self> {
        match solver {
            InexactSolver::VrSa(c) => c.validate(&problem.lower)?,
            InexactSolver::Diminishing(c) => c.validate(&problem.lower)?,
            InexactSolver::Projection(c) => c.validate(&problem.lower)?,
        }
        Ok(ImplicitEvaluator {
            problem,
            mode,
            solver,
            k: 0,
            rng: seeded_rng(seed, LOWER_STREAM),
            base: None,
            warm: None,
            warm_start: false,
            counters: Counters::default(),
        })
    }

    pub fn exact(problem: &'a SmpecProblem, seed: u64) -> Self {
        ImplicitEvaluator {
            problem,
            mode: LowerMode::Exact,
            solver: InexactSolver::Projection(ProjectionConfig {
                alpha: problem.lower_alpha,
                tau: 1.0,
                relax_step_bound: true,
            }),
            k: 0,
            rng: seeded_rng(seed, LOWER_STREAM),
            base: None,
            warm: None,
            warm_start: false,
            counters: Counters::default(),
        }
    }

    pub fn with_warm_start(mut self, on: bool) -> Self {
        self.warm_start = on;
        self
    }

    /// Lower-level solution at `x` (and `omega` for two-stage problems).
    pub fn solve(&mut self, x: &[f64], omega: &[f64]) -> Result<Vec<f64>> {
        self.counters.lower_solves += 1;
        if self.mode == LowerMode::Exact {
            return self.problem.solve_lower_exact(x, omega);
        }
        let vi = &self.problem.lower;
        let y0 = if self.warm_start { self.warm.as_deref() } else { None };
        let problem = self.problem;
        let mut draw = |r: &mut SmpecRng| problem.draw_omega(r);
        let report = match self.solver {
            InexactSolver::VrSa(c) => vr_sa_solve(vi, x, self.k, &c, y0, &mut self.rng, &mut draw)?,
            InexactSolver::Diminishing(c) => sa_solve_diminishing(vi, x, self.k, &c, y0, &mut self.rng, &mut draw)?,
            InexactSolver::Projection(c) => deterministic_projection_solve(vi, x, omega, self.k, &c, y0)?,
        };
        self.counters.lower_projections += report.projections;
        self.counters.lower_samples += report.samples;
        if self.warm_start {
            self.warm = Some(report.y.clone());
        }
        Ok(report.y)
    }
}

impl ImplicitValueOracle for ImplicitEvaluator<'_> {
    fn dim(&self) -> usize {
        self.problem.dim_x
    }

    fn eval(&mut self, x: &[f64], omega: &[f64]) -> Result<f64> {
        let y = self.solve(x, omega)?;
        Ok((self.problem.upper)(x, &y, omega))
    }

    fn prepare_base(&mut self, x: &[f64]) -> Result<()> {
        self.base = match self.problem.staging {
            Staging::SingleStage => Some((x.to_vec(), self.solve(x, &[])?)),
            Staging::TwoStage => None,
        };
        Ok(())
    }

    fn eval_base(&mut self, x: &[f64], omega: &[f64]) -> Result<f64> {
        match &self.base {
            Some((bx, y)) if bx.as_slice() == x => Ok((self.problem.upper)(x, y, omega)),
            _ => self.eval(x, omega),
        }
    }
}

fn iteration_context(k: usize) -> impl Fn(SmpecError) -> SmpecError {
    move |e| e.in_lower(format!("outer iteration {k}"))
}

fn record(trace: &mut Option<Vec<TracePoint>>, every: usize, k: usize, x: &[f64], gamma: f64, eta: f64) {
    if let Some(t) = trace {
        if every > 0 && k % every == 0 {
            t.push(TracePoint { k, x: x.to_vec(), gamma, eta });
        }
    }
}

fn start(problem: &SmpecProblem) -> Result<Vec<f64>> {
    problem.x_set.project(&problem.x0)
}

/// Convex scheme: `x_{k+1} = P_X[x_k - gamma_k g_k]` with one
/// single-direction estimate per iteration and weighted averaging with
/// weights `gamma_k^r`. Two-stage problems use the fixed-omega projection
/// solver in inexact mode, single-stage ones VR-SA.
pub fn run_convex(problem: &SmpecProblem, sched: &Schedule, mode: LowerMode, seed: u64) -> Result<RunTrace> {
    sched.validate()?;
    let t0 = Instant::now();
    let n = problem.dim_x;
    let mut rng = seeded_rng(seed, UPPER_STREAM);
    let solver = inexact_solver(problem, sched, Scheme::Convex);
    let mut ev = match mode {
        LowerMode::Exact => ImplicitEvaluator::exact(problem, seed),
        LowerMode::Inexact => ImplicitEvaluator::new(problem, mode, solver, seed)?,
    }
    .with_warm_start(sched.warm_start);
    let mut x = start(problem)?;
    let mut avg = AveragingState::new(&x, sched.gamma(0).powf(sched.r));
    let mut trace = (sched.record_every > 0).then(Vec::new);
    let mut upper = Counters::default();
    record(&mut trace, sched.record_every, 0, &avg.x_bar, sched.gamma(0), sched.eta(0));
    for k in 0..sched.iters {
        let (gamma, eta) = (sched.gamma(k), sched.eta(k));
        ev.k = k;
        let est = ZoGradientEstimator::new(n, eta, 1)?.with_mode(match mode {
            LowerMode::Exact => Exactness::Exact,
            LowerMode::Inexact => Exactness::Inexact,
        });
        let v = sample_sphere(&mut rng, n, eta)?;
        let omega = problem.draw_omega(&mut rng);
        upper.upper_samples += 1;
        let g = est.zo_gradient_sample(&mut ev, &x, &v, &omega).map_err(iteration_context(k))?;
        let step: Vec<f64> = x.iter().zip(&g).map(|(xi, gi)| xi - gamma * gi).collect();
        x = problem.x_set.project(&step)?;
        upper.upper_projections += 1;
        avg.update(&x, sched.gamma(k + 1).powf(sched.r));
        record(&mut trace, sched.record_every, k + 1, &avg.x_bar, sched.gamma(k + 1), sched.eta(k + 1));
    }
    let counters = Counters { upper_projections: upper.upper_projections, upper_samples: upper.upper_samples, ..ev.counters };
    Ok(RunTrace {
        iterates: trace,
        output: avg.x_bar,
        r_index: None,
        counters,
        wall_time: t0.elapsed().as_secs_f64(),
        seed,
    })
}

/// Variance-reduced nonconvex scheme with constant `gamma = gamma0`,
/// `eta = eta0` and mini-batches `N_k`. Returns `x_R` with `R` uniform on
/// `{ceil(lambda K), ..., K}`, drawn after the loop.
pub fn run_nonconvex(problem: &SmpecProblem, sched: &Schedule, mode: LowerMode, seed: u64) -> Result<RunTrace> {
    sched.validate()?;
    let t0 = Instant::now();
    let n = problem.dim_x;
    let (gamma, eta) = (sched.gamma0, sched.eta0);
    match problem.lipschitz.and_then(|l| l.l0) {
        Some(l0) if gamma >= eta / (n as f64 * l0) => {
            return Err(SmpecError::Config(format!(
                "nonconvex step gamma = {gamma} must be below eta/(n L0) = {}",
                eta / (n as f64 * l0)
            )))
        }
        Some(_) => {}
        None => log::debug!("no L0 declared for {}; step condition not checked", problem.id),
    }
    let mut rng = seeded_rng(seed, UPPER_STREAM);
    let solver = inexact_solver(problem, sched, Scheme::Nonconvex);
    let mut ev = match mode {
        LowerMode::Exact => ImplicitEvaluator::exact(problem, seed),
        LowerMode::Inexact => ImplicitEvaluator::new(problem, mode, solver, seed)?,
    }
    .with_warm_start(sched.warm_start);
    let kk = sched.iters;
    let tail_start = ((sched.lambda * kk as f64).ceil() as usize).min(kk);
    let mut x = start(problem)?;
    let mut tail = Vec::with_capacity(kk - tail_start + 1);
    if tail_start == 0 {
        tail.push(x.clone());
    }
    let mut trace = (sched.record_every > 0).then(Vec::new);
    record(&mut trace, sched.record_every, 0, &x, gamma, eta);
    let mut upper = Counters::default();
    let shared = problem.staging == Staging::SingleStage;
    for k in 0..kk {
        ev.k = k;
        let nk = sched.batch.size(k);
        let est = ZoGradientEstimator::new(n, eta, nk)?.with_shared_base(shared);
        let g = est
            .zo_gradient_minibatch(&mut ev, &x, &mut rng, &mut |r: &mut SmpecRng| problem.draw_omega(r))
            .map_err(iteration_context(k))?;
        upper.upper_samples += nk as u64;
        let step: Vec<f64> = x.iter().zip(&g.mean).map(|(xi, gi)| xi - gamma * gi).collect();
        x = problem.x_set.project(&step)?;
        upper.upper_projections += 1;
        if k + 1 >= tail_start {
            tail.push(x.clone());
        }
        record(&mut trace, sched.record_every, k + 1, &x, gamma, eta);
    }
    let r = if kk == 0 { 0 } else { rand::Rng::random_range(&mut rng, tail_start..=kk) };
    let output = tail[r - tail_start].clone();
    let counters = Counters { upper_projections: upper.upper_projections, upper_samples: upper.upper_samples, ..ev.counters };
    Ok(RunTrace {
        iterates: trace,
        output,
        r_index: Some(r),
        counters,
        wall_time: t0.elapsed().as_secs_f64(),
        seed,
    })
}

/// `(1 + sqrt(1 + 4 l^2))/2`.
pub fn momentum_next(l: f64) -> f64 {
    0.5 * (1.0 + (1.0 + 4.0 * l * l).sqrt())
}

/// Accelerated exact scheme with `gamma_k = gamma0/(2(k+1))`,
/// `eta_k = eta0/(k+1)` and `N_k = floor((k+1)^(1+delta))`; returns `z_K`.
pub fn run_accelerated(problem: &SmpecProblem, sched: &Schedule, seed: u64) -> Result<RunTrace> {
    sched.validate()?;
    let t0 = Instant::now();
    let n = problem.dim_x;
    let mut rng = seeded_rng(seed, UPPER_STREAM);
    let mut ev = ImplicitEvaluator::exact(problem, seed);
    let mut x = start(problem)?;
    let mut z = x.clone();
    let mut lam = 1.0;
    let mut trace = (sched.record_every > 0).then(Vec::new);
    let gamma = |k: usize| sched.gamma0 / (2.0 * (k + 1) as f64);
    let eta = |k: usize| sched.eta0 / (k + 1) as f64;
    record(&mut trace, sched.record_every, 0, &z, gamma(0), eta(0));
    let mut upper = Counters::default();
    let rule = BatchRule::Power(sched.delta);
    let shared = problem.staging == Staging::SingleStage;
    for k in 0..sched.iters {
        let nk = rule.size(k);
        let est = ZoGradientEstimator::new(n, eta(k), nk)?.with_shared_base(shared);
        let g = est
            .zo_gradient_minibatch(&mut ev, &x, &mut rng, &mut |r: &mut SmpecRng| problem.draw_omega(r))
            .map_err(iteration_context(k))?;
        upper.upper_samples += nk as u64;
        let step: Vec<f64> = x.iter().zip(&g.mean).map(|(xi, gi)| xi - gamma(k) * gi).collect();
        let z_next = problem.x_set.project(&step)?;
        upper.upper_projections += 1;
        let lam_next = momentum_next(lam);
        let w = (lam - 1.0) / lam_next;
        x = z_next.iter().zip(&z).map(|(zn, zo)| zn + w * (zn - zo)).collect();
        z = z_next;
        lam = lam_next;
        record(&mut trace, sched.record_every, k + 1, &z, gamma(k + 1), eta(k + 1));
    }
    let counters = Counters { upper_projections: upper.upper_projections, upper_samples: upper.upper_samples, ..ev.counters };
    Ok(RunTrace { iterates: trace, output: z, r_index: None, counters, wall_time: t0.elapsed().as_secs_f64(), seed })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResidualConfig {
    pub eta: f64,
    pub beta: f64,
    pub mc_batch: usize,
}

/// `|beta (x - P_X[x - grad f_eta(x)/beta])|` with `grad f_eta` estimated by
/// an exact mini-batch of `mc_batch` samples; the standard error is
/// propagated to first order through the norm.
pub fn residual_norm(problem: &SmpecProblem, x: &[f64], cfg: &ResidualConfig, seed: u64) -> Result<McEstimate> {
    if !(cfg.eta > 0.0 && cfg.beta > 0.0) || cfg.mc_batch == 0 {
        return Err(SmpecError::arg("residual needs eta, beta > 0 and a positive batch"));
    }
    let mut rng = seeded_rng(seed, RESIDUAL_STREAM);
    let mut ev = ImplicitEvaluator::exact(problem, seed);
    let est = ZoGradientEstimator::new(problem.dim_x, cfg.eta, cfg.mc_batch)?
        .with_shared_base(problem.staging == Staging::SingleStage);
    let g = est.zo_gradient_minibatch(&mut ev, x, &mut rng, &mut |r: &mut SmpecRng| problem.draw_omega(r))?;
    let step: Vec<f64> = x.iter().zip(&g.mean).map(|(xi, gi)| xi - gi / cfg.beta).collect();
    let p = problem.x_set.project(&step)?;
    let res: Vec<f64> = x.iter().zip(&p).map(|(xi, pi)| cfg.beta * (xi - pi)).collect();
    let value = norm(&res);
    let stderr = if value > 0.0 {
        res.iter().zip(&g.stderr).map(|(ri, si)| (ri / value * si).powi(2)).sum::<f64>().sqrt()
    } else {
        norm(&g.stderr)
    };
    Ok(McEstimate { mean: value, stderr })
}

/// `f(x) - f*` in the minimization convention (nonnegative up to noise),
/// which equals the reported `f* - f(x)` for maximization problems.
pub fn optimality_gap(problem: &SmpecProblem, x: &[f64], f_star: f64, tokens: &[Vec<f64>]) -> Result<f64> {
    Ok(expected_value(problem, x, tokens)? - f_star)
}
