//! Stackelberg-Nash-Cournot leader problem with N followers, linear inverse
//! demand `p(Q) = a(omega) - b Q` and quadratic costs. The leader minimizes
//! minus its profit.

use std::sync::Arc;

use crate::error::{Result, SmpecError};
use crate::geometry::ConvexSet;
use crate::lower_level::{LowerSet, ViProblem};

use super::{
    minimize_scalar, AnalyticOptimum, LipschitzInfo, OmegaDist, Provenance, SmpecProblem, Staging,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CournotParams {
    pub n: usize,
    pub b: f64,
    /// Follower cost coefficient.
    pub c: f64,
    /// Leader cost coefficient.
    pub d: f64,
    pub a_lo: f64,
    pub a_hi: f64,
    /// Leader capacity.
    pub x_u: f64,
}

impl CournotParams {
    fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(SmpecError::arg("Cournot needs at least one follower"));
        }
        if !(self.b > 0.0 && self.c > 0.0 && self.d > 0.0) {
            return Err(SmpecError::arg("Cournot needs b, c, d > 0"));
        }
        if !(self.a_lo <= self.a_hi) || !(self.x_u > 0.0) {
            return Err(SmpecError::arg("Cournot needs a_lo <= a_hi and x_u > 0"));
        }
        Ok(())
    }

    /// `c + b(N+1)`, the denominator of the symmetric follower response.
    pub fn denom(&self) -> f64 {
        self.c + self.b * (self.n as f64 + 1.0)
    }

    pub fn mean_a(&self) -> f64 {
        0.5 * (self.a_lo + self.a_hi)
    }

    /// Symmetric follower quantity `max(0, (a - b x)/(c + b(N+1)))`.
    pub fn follower_quantity(&self, x: f64, a: f64) -> f64 {
        ((a - self.b * x) / self.denom()).max(0.0)
    }

    /// `E[max(0, a - t)]` for `a ~ U(a_lo, a_hi)`.
    fn expected_excess(&self, t: f64) -> f64 {
        let (lo, hi) = (self.a_lo, self.a_hi);
        if hi == lo {
            return (lo - t).max(0.0);
        }
        if t <= lo {
            0.5 * (lo + hi) - t
        } else if t >= hi {
            0.0
        } else {
            (hi - t) * (hi - t) / (2.0 * (hi - lo))
        }
    }

    fn lower_vi(&self) -> Result<ViProblem> {
        let (b, c, n) = (self.b, self.c, self.n);
        let map = Arc::new(move |x: &[f64], q: &[f64], w: &[f64], out: &mut [f64]| {
            let s: f64 = q.iter().sum();
            let shift = b * s + b * x[0] - w[0];
            for (o, qi) in out.iter_mut().zip(q) {
                *o = (c + b) * qi + shift;
            }
        });
        ViProblem::new(n, map, LowerSet::Fixed(ConvexSet::orthant(n)), c + b, self.denom())
    }

    /// Leader-optimal quantity for `f(x) = -kappa x (A - b x) + d x^2/2`, the
    /// expected objective while every follower stays active.
    fn closed_form_leader(&self, active_limit: f64) -> Option<f64> {
        let kappa = (self.c + self.b) / self.denom();
        let xs = kappa * self.mean_a() / (2.0 * kappa * self.b + self.d);
        (xs <= active_limit && xs <= self.x_u).then_some(xs)
    }
}

fn base_problem(p: &CournotParams, id: &str, staging: Staging) -> Result<SmpecProblem> {
    p.validate()?;
    let pc = *p;
    let exact = Arc::new(move |x: &[f64], w: &[f64]| Ok(vec![pc.follower_quantity(x[0], w[0]); pc.n]));
    let upper = Arc::new(move |x: &[f64], q: &[f64], w: &[f64]| {
        let s: f64 = q.iter().sum();
        -x[0] * (w[0] - pc.b * (x[0] + s)) + 0.5 * pc.d * x[0] * x[0]
    });
    let lower = p.lower_vi()?.affine_in_omega(true);
    let x_set = ConvexSet::new_interval(0.0, p.x_u)?;
    Ok(SmpecProblem {
        id: id.to_string(),
        dim_x: 1,
        dim_y: p.n,
        x0: vec![0.0],
        x_set,
        lower_alpha: lower.mu / (lower.lip * lower.lip),
        lower,
        upper,
        omega: OmegaDist::uniform(p.a_lo, p.a_hi),
        staging,
        lipschitz: Some(LipschitzInfo { l0: None, l0_tilde: None, mu_f: p.c + p.b, l_f: p.denom() }),
        exact_lower: Some(exact),
        expected_value: None,
        optimum: None,
        maximize: true,
        saa_gradient: Some(Arc::new(move |pr: &SmpecProblem, x: &[f64], t: &[Vec<f64>]| saa_gradient(pc, pr, x, t))),
    })
}

fn attach_optimum(problem: &mut SmpecProblem, p: &CournotParams, active_limit: f64) {
    let f = problem.expected_value.clone().expect("set by caller");
    let (x_star, provenance) = match p.closed_form_leader(active_limit) {
        Some(x) => (x, Provenance::ClosedForm),
        None => (minimize_scalar(|x| f(&[x]), 0.0, p.x_u).0, Provenance::GridOracle),
    };
    problem.optimum =
        Some(AnalyticOptimum { x_star: vec![x_star], f_star: f(&[x_star]), stderr: 0.0, provenance });
}

/// Two-stage model: followers observe `a(omega)` before choosing quantities.
pub fn cournot_two_stage(p: &CournotParams) -> Result<SmpecProblem> {
    let mut problem = base_problem(p, "cournot2s", Staging::TwoStage)?;
    let pc = *p;
    problem.expected_value = Some(Arc::new(move |x: &[f64]| {
        let x = x[0];
        let es = pc.n as f64 * pc.expected_excess(pc.b * x) / pc.denom();
        -x * (pc.mean_a() - pc.b * x) + pc.b * x * es + 0.5 * pc.d * x * x
    }));
    attach_optimum(&mut problem, p, p.a_lo / p.b);
    Ok(problem)
}

/// Single-stage model: followers respond to the expectation-valued map, so
/// their quantities depend on `x` only.
pub fn cournot_single_stage(p: &CournotParams) -> Result<SmpecProblem> {
    let mut problem = base_problem(p, "cournot1s", Staging::SingleStage)?;
    let pc = *p;
    problem.expected_value = Some(Arc::new(move |x: &[f64]| {
        let x = x[0];
        let s = pc.n as f64 * pc.follower_quantity(x, pc.mean_a());
        -x * (pc.mean_a() - pc.b * (x + s)) + 0.5 * pc.d * x * x
    }));
    attach_optimum(&mut problem, p, p.mean_a() / p.b);
    Ok(problem)
}

/// Analytic derivative of the sample-average objective. Follower responses
/// come from the exact solver per token (two-stage) or at the token mean
/// (single-stage).
fn saa_gradient(p: CournotParams, problem: &SmpecProblem, x: &[f64], tokens: &[Vec<f64>]) -> Result<Vec<f64>> {
    let exact = problem.exact_lower.as_ref().expect("Cournot problems have an exact lower solver");
    let (b, n, x0) = (p.b, p.n as f64, x[0]);
    let m = tokens.len() as f64;
    let slope = |a: f64| if a - b * x0 > 0.0 { -n * b / p.denom() } else { 0.0 };
    let mut grad = 0.0;
    match problem.staging {
        Staging::TwoStage => {
            for w in tokens {
                let s: f64 = exact(x, w)?.iter().sum();
                grad += (-w[0] + 2.0 * b * x0 + b * s + b * x0 * slope(w[0])) / m;
            }
        }
        Staging::SingleStage => {
            let abar = tokens.iter().map(|w| w[0]).sum::<f64>() / m;
            let s: f64 = exact(x, &[abar])?.iter().sum();
            grad = -abar + 2.0 * b * x0 + b * s + b * x0 * slope(abar);
        }
    }
    Ok(vec![grad + p.d * x0])
}
