//! Sample average approximation baseline and Student-t intervals.

use std::time::Instant;

use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Result, SmpecError};
use crate::geometry::seeded_rng;
use crate::lower_level::solve_to_tolerance;
use crate::problems::{SmpecProblem, Staging, EXACT_LOWER_MAX_STEPS, EXACT_LOWER_TOL};
use crate::vecops::{dist, dot, norm};

pub const ARMIJO: f64 = 1e-4;
pub const STALL_LIMIT: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SaaConfig {
    pub k_samples: usize,
    /// First trial step of the backtracking search.
    pub step0: f64,
    pub max_iters: usize,
    /// Stop when the unit-step gradient mapping `|x - P_X[x - g]|` is below this.
    pub tol: f64,
    /// Relative central-difference step.
    pub fd_step: f64,
}

impl Default for SaaConfig {
    fn default() -> Self {
        SaaConfig { k_samples: 1000, step0: 1.0, max_iters: 500, tol: 1e-6, fd_step: 1e-6 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SaaResult {
    pub x_hat: Vec<f64>,
    pub objective: f64,
    /// Objective after every accepted step.
    pub trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub wall_time: f64,
}

fn token_mean(tokens: &[Vec<f64>]) -> Vec<f64> {
    let d = tokens.first().map_or(0, |t| t.len());
    let mut m = vec![0.0; d];
    for t in tokens {
        m.iter_mut().zip(t).for_each(|(a, b)| *a += b);
    }
    m.iter_mut().for_each(|a| *a /= tokens.len() as f64);
    m
}

/// Lower solve of the sampled problem: per token for two-stage problems,
/// at the sample mean for single-stage ones (their maps are affine in omega).
fn saa_lower(problem: &SmpecProblem, x: &[f64], w: &[f64]) -> Result<Vec<f64>> {
    match &problem.exact_lower {
        Some(f) => f(x, w),
        None => solve_to_tolerance(
            &problem.lower,
            x,
            w,
            problem.lower.mu / (problem.lower.lip * problem.lower.lip),
            EXACT_LOWER_TOL,
            EXACT_LOWER_MAX_STEPS,
            None,
        ),
    }
}

/// Empirical implicit objective over fixed tokens.
pub fn saa_objective(problem: &SmpecProblem, x: &[f64], tokens: &[Vec<f64>]) -> Result<f64> {
    let m = tokens.len() as f64;
    match problem.staging {
        Staging::SingleStage => {
            let y = saa_lower(problem, x, &token_mean(tokens))?;
            Ok(tokens.iter().map(|w| (problem.upper)(x, &y, w)).sum::<f64>() / m)
        }
        Staging::TwoStage => {
            let mut s = 0.0;
            for w in tokens {
                let y = saa_lower(problem, x, w)?;
                s += (problem.upper)(x, &y, w);
            }
            Ok(s / m)
        }
    }
}

fn saa_grad(problem: &SmpecProblem, x: &[f64], tokens: &[Vec<f64>], fd: f64) -> Result<Vec<f64>> {
    if let Some(g) = &problem.saa_gradient {
        return g(problem, x, tokens);
    }
    let h = fd * (1.0 + norm(x));
    let mut g = vec![0.0; x.len()];
    let mut xp = x.to_vec();
    for i in 0..x.len() {
        xp[i] = x[i] + h;
        let fp = saa_objective(problem, &xp, tokens)?;
        xp[i] = x[i] - h;
        let fm = saa_objective(problem, &xp, tokens)?;
        xp[i] = x[i];
        g[i] = (fp - fm) / (2.0 * h);
    }
    Ok(g)
}

/// Projected gradient with Armijo backtracking on the sample average of
/// `k_samples` tokens drawn from `seed`.
pub fn saa_solve(problem: &SmpecProblem, cfg: &SaaConfig, seed: u64) -> Result<SaaResult> {
    if cfg.k_samples == 0 {
        return Err(SmpecError::Config("SAA needs at least one sample".into()));
    }
    if !(cfg.step0 > 0.0 && cfg.tol > 0.0 && cfg.fd_step > 0.0) {
        return Err(SmpecError::Config("SAA step, tolerance and difference step must be positive".into()));
    }
    let t0 = Instant::now();
    let mut rng = seeded_rng(seed, 0);
    let tokens: Vec<Vec<f64>> = (0..cfg.k_samples).map(|_| problem.draw_omega(&mut rng)).collect();
    let mut x = problem.x_set.project(&problem.x0)?;
    let mut fx = saa_objective(problem, &x, &tokens)?;
    let mut trace = vec![fx];
    let mut step = cfg.step0;
    let mut stalled = 0;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < cfg.max_iters {
        iterations += 1;
        let g = saa_grad(problem, &x, &tokens, cfg.fd_step)?;
        let unit: Vec<f64> = x.iter().zip(&g).map(|(xi, gi)| xi - gi).collect();
        if dist(&problem.x_set.project(&unit)?, &x) <= cfg.tol {
            converged = true;
            break;
        }
        let mut accepted = None;
        let mut s = step;
        for _ in 0..60 {
            let trial: Vec<f64> = x.iter().zip(&g).map(|(xi, gi)| xi - s * gi).collect();
            let xn = problem.x_set.project(&trial)?;
            let d: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
            let fn_ = saa_objective(problem, &xn, &tokens)?;
            if fn_ <= fx + ARMIJO * dot(&g, &d) {
                accepted = Some((xn, fn_, s));
                break;
            }
            s *= 0.5;
        }
        match accepted {
            Some((xn, fn_, s)) => {
                if fn_ < fx {
                    stalled = 0;
                } else {
                    stalled += 1;
                }
                x = xn;
                fx = fn_;
                trace.push(fx);
                step = (2.0 * s).min(cfg.step0);
            }
            None => {
                stalled += 1;
                step = cfg.step0;
            }
        }
        if stalled >= STALL_LIMIT {
            return Err(SmpecError::Stall(format!(
                "SAA objective did not decrease for {STALL_LIMIT} consecutive steps at f = {fx}"
            )));
        }
    }
    Ok(SaaResult { x_hat: x, objective: fx, trace, iterations, converged, wall_time: t0.elapsed().as_secs_f64() })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConfidenceInterval {
    pub mean: f64,
    pub half_width: f64,
}

impl ConfidenceInterval {
    pub fn lower(&self) -> f64 {
        self.mean - self.half_width
    }

    pub fn upper(&self) -> f64 {
        self.mean + self.half_width
    }
}

/// Two-sided 95% Student-t interval `mean +- t_{0.975,n-1} s/sqrt(n)`.
pub fn confidence_interval(values: &[f64]) -> Result<ConfidenceInterval> {
    let n = values.len();
    if n < 2 {
        return Err(SmpecError::arg("a confidence interval needs at least two values"));
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let t = StudentsT::new(0.0, 1.0, (n - 1) as f64)
        .map_err(|e| SmpecError::arg(format!("Student t: {e}")))?
        .inverse_cdf(0.975);
    Ok(ConfidenceInterval { mean, half_width: t * (var / n as f64).sqrt() })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_point_interval() {
        let ci = confidence_interval(&[0.0, 2.0]).unwrap();
        assert!((ci.mean - 1.0).abs() < 1e-15);
        assert!((ci.half_width - 12.706).abs() < 1e-3);
    }

    #[test]
    fn constant_values_zero_width() {
        let ci = confidence_interval(&[1.0; 4]).unwrap();
        assert_eq!(ci.half_width, 0.0);
    }
}
