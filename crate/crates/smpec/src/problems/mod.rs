//! Benchmark problems: Stackelberg-Nash-Cournot (two-stage and single-stage),
//! the stochastic Bard bilevel program, literature Problems 1-5 and their
//! high-dimensional stochastic counterparts.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::Rng;

use crate::error::{Result, SmpecError};
use crate::geometry::{ConvexSet, SmpecRng};
use crate::lower_level::{solve_to_tolerance, ViProblem};

mod appendix;
mod bard;
mod cournot;

pub use appendix::{hd1, hd2, problem1, problem2, problem3, problem4, problem5, Problem5Objective};
pub use bard::{bard_bilevel, bard_lower_exact};
pub use cournot::{cournot_single_stage, cournot_two_stage, CournotParams};

/// `f~(x, y, omega)`.
pub type UpperFn = Arc<dyn Fn(&[f64], &[f64], &[f64]) -> f64 + Send + Sync>;
/// Exact lower-level solution `y(x, omega)`.
pub type ExactLowerFn = Arc<dyn Fn(&[f64], &[f64]) -> Result<Vec<f64>> + Send + Sync>;
/// Closed-form expected upper objective `f(x)`.
pub type ValueFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
/// Gradient of the sample-average implicit objective over fixed tokens.
pub type SaaGradFn = Arc<dyn Fn(&SmpecProblem, &[f64], &[Vec<f64>]) -> Result<Vec<f64>> + Send + Sync>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Staging {
    /// `y(x)` solves the expectation-valued VI; omega enters only the upper objective.
    SingleStage,
    /// `y(x, omega)` solves a VI for every realization.
    TwoStage,
}

/// Product of independent uniforms; the empty product is the deterministic case.
#[derive(Debug, Clone, PartialEq)]
pub struct OmegaDist {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl OmegaDist {
    pub fn uniform(lo: f64, hi: f64) -> Self {
        OmegaDist { lo: vec![lo], hi: vec![hi] }
    }

    pub fn deterministic() -> Self {
        OmegaDist { lo: Vec::new(), hi: Vec::new() }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(l, h)| if l == h { *l } else { rng.random_range(*l..*h) })
            .collect()
    }

    pub fn mean(&self) -> Vec<f64> {
        self.lo.iter().zip(&self.hi).map(|(l, h)| 0.5 * (l + h)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LipschitzInfo {
    pub l0: Option<f64>,
    pub l0_tilde: Option<f64>,
    pub mu_f: f64,
    pub l_f: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    ClosedForm,
    GridOracle,
    Literature,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalyticOptimum {
    pub x_star: Vec<f64>,
    /// In the toolkit's minimization convention.
    pub f_star: f64,
    pub stderr: f64,
    pub provenance: Provenance,
}

#[derive(Clone)]
pub struct SmpecProblem {
    pub id: String,
    pub dim_x: usize,
    pub dim_y: usize,
    pub x_set: ConvexSet,
    pub x0: Vec<f64>,
    pub lower: ViProblem,
    pub upper: UpperFn,
    pub omega: OmegaDist,
    pub staging: Staging,
    pub lipschitz: Option<LipschitzInfo>,
    pub exact_lower: Option<ExactLowerFn>,
    pub expected_value: Option<ValueFn>,
    pub optimum: Option<AnalyticOptimum>,
    /// The original problem maximizes; values are negated internally.
    pub maximize: bool,
    pub saa_gradient: Option<SaaGradFn>,
    /// Step used by the inexact two-stage projection solver (<= mu/L^2).
    pub lower_alpha: f64,
}

impl std::fmt::Debug for SmpecProblem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SmpecProblem")
            .field("id", &self.id)
            .field("dim_x", &self.dim_x)
            .field("dim_y", &self.dim_y)
            .field("staging", &self.staging)
            .field("omega", &self.omega)
            .finish()
    }
}

pub const EXACT_LOWER_TOL: f64 = 1e-11;
pub const EXACT_LOWER_MAX_STEPS: usize = 2_000_000;

impl SmpecProblem {
    pub fn draw_omega<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.omega.sample(rng)
    }

    /// Exact `y(x, omega)`; single-stage problems use the mean token, which
    /// is exact because every lower map here is affine in omega.
    pub fn solve_lower_exact(&self, x: &[f64], omega: &[f64]) -> Result<Vec<f64>> {
        let mut buf = [0.0; 8];
        let mean;
        let w = match self.staging {
            Staging::SingleStage if self.omega.dim() <= buf.len() => {
                let d = self.omega.dim();
                for (b, (l, h)) in buf.iter_mut().zip(self.omega.lo.iter().zip(&self.omega.hi)) {
                    *b = 0.5 * (l + h);
                }
                &buf[..d]
            }
            Staging::SingleStage => {
                mean = self.omega.mean();
                &mean[..]
            }
            Staging::TwoStage => omega,
        };
        match &self.exact_lower {
            Some(f) => f(x, w),
            None => {
                let alpha = self.lower.mu / (self.lower.lip * self.lower.lip);
                solve_to_tolerance(&self.lower, x, w, alpha, EXACT_LOWER_TOL, EXACT_LOWER_MAX_STEPS, None)
            }
        }
    }

    /// `f~(x, y(x[,omega]), omega)` with an exact lower solve.
    pub fn implicit_value(&self, x: &[f64], omega: &[f64]) -> Result<f64> {
        let y = self.solve_lower_exact(x, omega)?;
        Ok((self.upper)(x, &y, omega))
    }

    /// Value in the paper's sign convention.
    pub fn reported(&self, v: f64) -> f64 {
        if self.maximize {
            -v
        } else {
            v
        }
    }
}

/// Parameter overrides keyed by name (e.g. `N`, `b`, `c`).
pub type ProblemParams = BTreeMap<String, f64>;

pub const PROBLEM_IDS: &[&str] =
    &["cournot2s", "cournot1s", "bard", "p1", "p2", "p3", "p4", "p5", "hd1", "hd2"];

fn take(params: &ProblemParams, key: &str, default: f64) -> f64 {
    params.get(key).copied().unwrap_or(default)
}

fn take_usize(params: &ProblemParams, key: &str, default: usize) -> Result<usize> {
    match params.get(key) {
        None => Ok(default),
        Some(v) if *v >= 1.0 && v.fract() == 0.0 => Ok(*v as usize),
        Some(v) => Err(SmpecError::Config(format!("parameter {key} must be a positive integer, got {v}"))),
    }
}

fn check_known(params: &ProblemParams, allowed: &[&str], id: &str) -> Result<()> {
    for k in params.keys() {
        if !allowed.contains(&k.as_str()) {
            return Err(SmpecError::Config(format!(
                "unknown parameter '{k}' for problem {id} (allowed: {})",
                allowed.join(", ")
            )));
        }
    }
    Ok(())
}

/// Builds a problem from its registry id and parameter overrides.
pub fn build_problem(id: &str, params: &ProblemParams) -> Result<SmpecProblem> {
    match id {
        "cournot2s" | "cournot1s" => {
            check_known(params, &["N", "b", "c", "d", "a_lo", "a_hi", "x_u"], id)?;
            let two = id == "cournot2s";
            let c = take(params, "c", if two { 0.1 } else { 3.0 });
            let p = CournotParams {
                n: take_usize(params, "N", if two { 10 } else { 100 })?,
                b: take(params, "b", if two { 1.0 } else { 0.01 }),
                c,
                d: take(params, "d", if two { 0.1 } else { c }),
                a_lo: take(params, "a_lo", 7.5),
                a_hi: take(params, "a_hi", 12.5),
                x_u: take(params, "x_u", 150.0),
            };
            if two {
                cournot_two_stage(&p)
            } else {
                cournot_single_stage(&p)
            }
        }
        "bard" => {
            check_known(params, &["a", "b", "c", "d", "xi_lo", "xi_hi"], id)?;
            bard_bilevel(
                take(params, "a", 1.0),
                take(params, "b", 0.0),
                take(params, "c", 1.0),
                take(params, "d", 1.0),
                OmegaDist::uniform(take(params, "xi_lo", 4.0), take(params, "xi_hi", 6.0)),
            )
        }
        "p1" => {
            check_known(params, &["L", "gamma"], id)?;
            problem1(take(params, "L", 150.0), take(params, "gamma", 1.0))
        }
        "p2" => {
            check_known(params, &[], id)?;
            problem2()
        }
        "p3" => {
            check_known(params, &["R"], id)?;
            problem3(take(params, "R", 100.0))
        }
        "p4" => {
            check_known(params, &[], id)?;
            problem4()
        }
        "p5" => {
            check_known(params, &["variant"], id)?;
            let v = match take_usize(params, "variant", 1)? {
                1 => Problem5Objective::Base,
                2 => Problem5Objective::WithY3,
                3 => Problem5Objective::WithY4,
                other => return Err(SmpecError::Config(format!("p5 variant must be 1, 2 or 3, got {other}"))),
            };
            problem5(v)
        }
        "hd1" => {
            check_known(params, &["N", "L"], id)?;
            hd1(take_usize(params, "N", 5)?, take(params, "L", 150.0))
        }
        "hd2" => {
            check_known(params, &["N", "ball"], id)?;
            hd2(take_usize(params, "N", 2)?, take(params, "ball", 0.0) != 0.0)
        }
        other => Err(SmpecError::Config(format!(
            "unknown problem '{other}' (known: {})",
            PROBLEM_IDS.join(", ")
        ))),
    }
}

/// Expected implicit value: analytic when available, otherwise the mean over
/// `tokens` with exact lower solves.
pub fn expected_value(problem: &SmpecProblem, x: &[f64], tokens: &[Vec<f64>]) -> Result<f64> {
    if let Some(f) = &problem.expected_value {
        return Ok(f(x));
    }
    if problem.omega.dim() == 0 {
        return problem.implicit_value(x, &[]);
    }
    match problem.staging {
        Staging::SingleStage => {
            let y = problem.solve_lower_exact(x, &[])?;
            Ok(tokens.iter().map(|w| (problem.upper)(x, &y, w)).sum::<f64>() / tokens.len() as f64)
        }
        Staging::TwoStage => {
            let mut s = 0.0;
            for w in tokens {
                s += problem.implicit_value(x, w)?;
            }
            Ok(s / tokens.len() as f64)
        }
    }
}

/// Fixed validation sample of `m` tokens from a dedicated seed.
pub fn validation_tokens(problem: &SmpecProblem, m: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng: SmpecRng = crate::geometry::seeded_rng(seed, 7);
    (0..m).map(|_| problem.draw_omega(&mut rng)).collect()
}

pub const DEFAULT_VALIDATION_SIZE: usize = 100_000;
pub const DEFAULT_VALIDATION_SEED: u64 = 0x5eed_0f_da7a;

/// Brute-force optimum for `dim_x <= 2`: grid over the bounding box of X,
/// keep feasible nodes, then refine twice around the best node.
pub fn grid_oracle(problem: &SmpecProblem, resolution: usize, mc_samples: usize) -> Result<AnalyticOptimum> {
    if problem.dim_x > 2 {
        return Err(SmpecError::arg("grid oracle supports at most two upper-level variables"));
    }
    if resolution < 2 {
        return Err(SmpecError::arg("grid resolution must be at least 2"));
    }
    let (lo, hi) = problem.x_set.bounding_box();
    if lo.iter().chain(&hi).any(|v| !v.is_finite()) {
        return Err(SmpecError::arg("grid oracle needs a bounded upper-level set"));
    }
    let tokens = if problem.omega.dim() == 0 || problem.expected_value.is_some() {
        Vec::new()
    } else {
        validation_tokens(problem, mc_samples.max(1), DEFAULT_VALIDATION_SEED)
    };
    let eval = |x: &[f64]| expected_value(problem, x, &tokens);
    let mut lo = lo;
    let mut hi = hi;
    let mut best: Option<(f64, Vec<f64>)> = None;
    for _round in 0..3 {
        let steps: Vec<f64> = lo.iter().zip(&hi).map(|(l, h)| (h - l) / (resolution - 1) as f64).collect();
        let count = if problem.dim_x == 1 { resolution } else { resolution * resolution };
        for idx in 0..count {
            let x: Vec<f64> = (0..problem.dim_x)
                .map(|d| {
                    let i = if d == 0 { idx % resolution } else { idx / resolution };
                    lo[d] + steps[d] * i as f64
                })
                .collect();
            if !problem.x_set.contains(&x, 1e-12) {
                continue;
            }
            let v = eval(&x)?;
            if best.as_ref().is_none_or(|(bv, _)| v < *bv) {
                best = Some((v, x));
            }
        }
        let (_, bx) = best.as_ref().ok_or_else(|| SmpecError::arg("no feasible grid node"))?;
        let (blo, bhi) = problem.x_set.bounding_box();
        for d in 0..problem.dim_x {
            lo[d] = (bx[d] - steps[d]).max(blo[d]);
            hi[d] = (bx[d] + steps[d]).min(bhi[d]);
        }
    }
    let (f_star, x_star) = best.expect("checked above");
    let stderr = if tokens.is_empty() {
        0.0
    } else {
        let vals: Vec<f64> = tokens
            .iter()
            .map(|w| problem.implicit_value(&x_star, w))
            .collect::<Result<_>>()?;
        crate::smoothing::McEstimate::from_samples(&vals).stderr
    };
    Ok(AnalyticOptimum { x_star, f_star, stderr, provenance: Provenance::GridOracle })
}

/// 1-D minimization on `[lo, hi]`: dense scan then golden section around the
/// best node.
pub(crate) fn minimize_scalar(f: impl Fn(f64) -> f64, lo: f64, hi: f64) -> (f64, f64) {
    let n = 4000;
    let h = (hi - lo) / n as f64;
    let mut bi = 0;
    let mut bv = f64::INFINITY;
    for i in 0..=n {
        let v = f(lo + h * i as f64);
        if v < bv {
            bv = v;
            bi = i;
        }
    }
    let mut a = (lo + h * (bi as f64 - 1.0)).max(lo);
    let mut b = (lo + h * (bi as f64 + 1.0)).min(hi);
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..200 {
        if (b - a).abs() < 1e-13 * (1.0 + a.abs()) {
            break;
        }
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    let x = 0.5 * (a + b);
    let fx = f(x);
    if fx <= bv {
        (x, fx)
    } else {
        (lo + h * bi as f64, bv)
    }
}
