//! Literature test problems 1-5 and two stochastic high-dimensional
//! counterparts.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, SmpecError};
use crate::geometry::{dykstra, ConvexSet, Halfspace};
use crate::lower_level::{
    monotonicity_modulus, LowerSet, ViProblem,
};

use super::{AnalyticOptimum, LipschitzInfo, OmegaDist, Provenance, SmpecProblem, Staging};

fn literature(x_star: Vec<f64>, f_star: f64) -> Option<AnalyticOptimum> {
    Some(AnalyticOptimum { x_star, f_star, stderr: 0.0, provenance: Provenance::Literature })
}

#[allow(clippy::too_many_arguments)]
fn deterministic(
    id: &str,
    x_set: ConvexSet,
    lower: ViProblem,
    upper: super::UpperFn,
    exact: super::ExactLowerFn,
    optimum: Option<AnalyticOptimum>,
) -> Result<SmpecProblem> {
    let dim_x = x_set.dim();
    let x0 = x_set.project(&vec![0.0; dim_x])?;
    Ok(SmpecProblem {
        id: id.into(),
        dim_x,
        dim_y: lower.dim,
        x_set,
        x0,
        lower_alpha: lower.mu / (lower.lip * lower.lip),
        lipschitz: Some(LipschitzInfo { l0: None, l0_tilde: None, mu_f: lower.mu, l_f: lower.lip }),
        lower,
        upper,
        omega: OmegaDist::deterministic(),
        staging: Staging::TwoStage,
        exact_lower: Some(exact),
        expected_value: None,
        optimum,
        maximize: false,
        saa_gradient: None,
    })
}

/// Production cost `c v + beta/(beta+1) K^(-1/beta) v^((1+beta)/beta)`,
/// extended by `c v` for negative arguments.
fn cost(c: f64, k: f64, beta: f64, v: f64) -> f64 {
    c * v + beta / (beta + 1.0) * k.powf(-1.0 / beta) * v.max(0.0).powf((1.0 + beta) / beta)
}

fn marginal_cost(c: f64, k: f64, beta: f64, v: f64) -> f64 {
    c + k.powf(-1.0 / beta) * v.max(0.0).powf(1.0 / beta)
}

/// Inverse demand `5000^(1/g) Q^(-1/g)` and its derivative.
fn price(q: f64, g: f64) -> (f64, f64) {
    let q = q.max(1e-12);
    let p = 5000f64.powf(1.0 / g) * q.powf(-1.0 / g);
    (p, -p / (g * q))
}

/// Root of an increasing function on `[lo, hi]` by the Illinois variant of
/// regula falsi, clamped to the ends.
fn increasing_root(g: impl Fn(f64) -> f64, lo: f64, hi: f64) -> f64 {
    let (mut a, mut b) = (lo, hi);
    let (mut ga, mut gb) = (g(a), g(b));
    if ga >= 0.0 {
        return a;
    }
    if gb <= 0.0 {
        return b;
    }
    let mut side = 0i8;
    for _ in 0..200 {
        let c = (a * gb - b * ga) / (gb - ga);
        let gc = g(c);
        if gc == 0.0 {
            return c;
        }
        if gc < 0.0 {
            a = c;
            ga = gc;
            if side == -1 {
                gb *= 0.5;
            }
            side = -1;
        } else {
            b = c;
            gb = gc;
            if side == 1 {
                ga *= 0.5;
            }
            side = 1;
        }
        if b - a <= 1e-14 * (1.0 + b.abs()) {
            break;
        }
    }
    if -ga < gb {
        a
    } else {
        b
    }
}

/// Follower equilibrium on `[0, L]^m` for costs `(c, K, beta)`. For a fixed
/// total `Q` each follower's condition is increasing in its own quantity;
/// `x + sum y_i(Q) - Q` is decreasing in `Q`, so two nested bisections
/// give the unique solution.
fn oligopoly_followers(x: f64, firms: &[(f64, f64, f64)], gamma: f64, l: f64) -> Vec<f64> {
    let respond = |q: f64| -> Vec<f64> {
        let (p, dp) = price(q, gamma);
        firms
            .iter()
            .map(|&(c, k, beta)| increasing_root(|t| marginal_cost(c, k, beta, t) - p - t * dp, 0.0, l))
            .collect()
    };
    let lo = x.max(1e-9);
    let q = increasing_root(|q| q - x - respond(q).iter().sum::<f64>(), lo, x.max(0.0) + firms.len() as f64 * l + 1e-9);
    respond(q)
}

const P1_C: [f64; 5] = [10.0, 8.0, 6.0, 4.0, 2.0];
const P1_K: [f64; 5] = [5.0; 5];
const P1_BETA: [f64; 5] = [1.2, 1.1, 1.0, 0.9, 0.8];

/// Outrata's oligopoly: one leader and four Cournot followers on `[0, L]`.
pub fn problem1(l: f64, gamma: f64) -> Result<SmpecProblem> {
    if !(l > 0.0 && gamma > 0.0) {
        return Err(SmpecError::arg("Problem 1 needs L > 0 and gamma > 0"));
    }
    let map = Arc::new(move |x: &[f64], y: &[f64], _w: &[f64], out: &mut [f64]| {
        let q = x[0] + y.iter().sum::<f64>();
        let (p, dp) = price(q, gamma);
        for i in 0..4 {
            out[i] = marginal_cost(P1_C[i + 1], P1_K[i + 1], P1_BETA[i + 1], y[i]) - p - y[i] * dp;
        }
    });
    // Constants probed on the region of interest; only the exact solver runs here.
    let lower = ViProblem::new(4, map, LowerSet::Fixed(ConvexSet::cube(4, 0.0, l)), 0.05, 2.0)?;
    let upper = Arc::new(move |x: &[f64], y: &[f64], _w: &[f64]| {
        let q = x[0] + y.iter().sum::<f64>();
        cost(P1_C[0], P1_K[0], P1_BETA[0], x[0]) - x[0] * price(q, gamma).0
    });
    let firms: Vec<(f64, f64, f64)> = (1..5).map(|i| (P1_C[i], P1_K[i], P1_BETA[i])).collect();
    let exact = Arc::new(move |x: &[f64], _w: &[f64]| Ok(oligopoly_followers(x[0], &firms, gamma, l)));
    let opt = match gamma {
        g if g == 1.0 && l == 150.0 => literature(vec![55.55], -343.35),
        g if g == 1.1 && l == 150.0 => literature(vec![42.54], -203.15),
        g if g == 1.3 && l == 150.0 => literature(vec![24.14], -68.14),
        _ => None,
    };
    deterministic("p1", ConvexSet::new_interval(0.0, l)?, lower, upper, exact, opt)
}

/// `min x1^2 - 2x1 + x2^2 - 2x2 + y1^2 + y2^2`, `y = clamp(x, 0.5, 1.5)`.
pub fn problem2() -> Result<SmpecProblem> {
    let map = Arc::new(|x: &[f64], y: &[f64], _w: &[f64], out: &mut [f64]| {
        for i in 0..2 {
            out[i] = 2.0 * y[i] - 2.0 * x[i];
        }
    });
    let y_set = ConvexSet::cube(2, 0.5, 1.5);
    let lower = ViProblem::new(2, map, LowerSet::Fixed(y_set.clone()), 2.0, 2.0)?;
    let upper = Arc::new(|x: &[f64], y: &[f64], _w: &[f64]| {
        x[0] * x[0] - 2.0 * x[0] + x[1] * x[1] - 2.0 * x[1] + y[0] * y[0] + y[1] * y[1]
    });
    let exact = Arc::new(move |x: &[f64], _w: &[f64]| y_set.project(x));
    deterministic("p2", ConvexSet::cube(2, 0.0, 2.0), lower, upper, exact, literature(vec![0.5, 0.5], -1.0))
}

fn p3_set(x: &[f64]) -> ConvexSet {
    let upper: Vec<f64> = x.iter().map(|xj| (20f64).min((xj - 10.0) / 2.0).max(-10.0)).collect();
    ConvexSet::Box { lower: vec![-10.0; 2], upper }
}

/// Penalized bilevel problem with `x`-dependent bounds on `y`.
pub fn problem3(r: f64) -> Result<SmpecProblem> {
    if !(r >= 0.0) {
        return Err(SmpecError::arg("Problem 3 penalty R must be nonnegative"));
    }
    let map = Arc::new(|x: &[f64], y: &[f64], _w: &[f64], out: &mut [f64]| {
        for i in 0..2 {
            out[i] = 2.0 * y[i] - 2.0 * x[i] + 40.0;
        }
    });
    let lower = ViProblem::new(2, map, LowerSet::Param(Arc::new(|x: &[f64], _: &[f64]| p3_set(x))), 2.0, 2.0)?;
    let upper = Arc::new(move |x: &[f64], y: &[f64], _w: &[f64]| {
        let pen = (x[0] + x[1] + y[0] - 2.0 * y[1] - 40.0).max(0.0);
        2.0 * x[0] + 2.0 * x[1] - 3.0 * y[0] - 3.0 * y[1] - 60.0 + r * pen * pen
    });
    let exact = Arc::new(|x: &[f64], _w: &[f64]| {
        let target: Vec<f64> = x.iter().map(|xj| xj - 20.0).collect();
        p3_set(x).project(&target)
    });
    deterministic("p3", ConvexSet::cube(2, 0.0, 50.0), lower, upper, exact, literature(vec![0.0, 0.0], 0.01))
}

fn p4_set(x: &[f64]) -> ConvexSet {
    ConvexSet::Polyhedron {
        halfspaces: vec![
            Halfspace::new(vec![1.0, 0.0], 15.0 - x[1]),
            Halfspace::new(vec![0.0, 1.0], 15.0 - x[0]),
        ],
        bbox: None,
    }
}

/// Enumerates the four active sets of `y_i <= h_i` for the affine map
/// `A y + b`; the first KKT point found is the unique solution.
fn p4_lower_exact(a: &DMatrix<f64>, b: &[f64; 2], x: &[f64]) -> Vec<f64> {
    let h = [15.0 - x[1], 15.0 - x[0]];
    let (a11, a12, a21, a22) = (a[(0, 0)], a[(0, 1)], a[(1, 0)], a[(1, 1)]);
    let tol = 1e-12 * (1.0 + h[0].abs() + h[1].abs());
    let det = a11 * a22 - a12 * a21;
    let free = [(-b[0] * a22 + a12 * b[1]) / det, (-a11 * b[1] + a21 * b[0]) / det];
    if free[0] <= h[0] + tol && free[1] <= h[1] + tol {
        return free.to_vec();
    }
    // y1 = h1 active
    let y2 = -(a21 * h[0] + b[1]) / a22;
    if y2 <= h[1] + tol && -(a11 * h[0] + a12 * y2 + b[0]) >= -tol {
        return vec![h[0], y2];
    }
    let y1 = -(a12 * h[1] + b[0]) / a11;
    if y1 <= h[0] + tol && -(a21 * y1 + a22 * h[1] + b[1]) >= -tol {
        return vec![y1, h[1]];
    }
    h.to_vec()
}

/// Least-distance upper level over an asymmetric affine lower map.
pub fn problem4() -> Result<SmpecProblem> {
    let a = DMatrix::from_row_slice(2, 2, &[2.0, 8.0 / 3.0, 1.25, 2.0]);
    let b = [-34.0, -24.25];
    let mu = monotonicity_modulus(&a);
    let lip = a.clone().svd(false, false).singular_values.max();
    let am = a.clone();
    let map = Arc::new(move |_x: &[f64], y: &[f64], _w: &[f64], out: &mut [f64]| {
        for i in 0..2 {
            out[i] = am[(i, 0)] * y[0] + am[(i, 1)] * y[1] + b[i];
        }
    });
    let lower = ViProblem::new(2, map, LowerSet::Param(Arc::new(|x: &[f64], _: &[f64]| p4_set(x))), mu, lip)?;
    let upper = Arc::new(|x: &[f64], y: &[f64], _w: &[f64]| {
        0.5 * ((x[0] - y[0]).powi(2) + (x[1] - y[1]).powi(2))
    });
    let exact = Arc::new(move |x: &[f64], _w: &[f64]| Ok(p4_lower_exact(&a, &b, x)));
    deterministic("p4", ConvexSet::cube(2, 0.0, 10.0), lower, upper, exact, literature(vec![5.0, 9.0], 0.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Problem5Objective {
    /// `0.5((y1-3)^2 + (y2-4)^2)`
    Base,
    /// adds `0.5 (y3-1)^2`
    WithY3,
    /// adds `5 y4^2`
    WithY4,
}

fn p5_primal_set(x: f64) -> Vec<ConvexSet> {
    vec![
        ConvexSet::Halfspace(Halfspace::new(vec![-0.333, 1.0], 1.0 - 0.1 * x)),
        ConvexSet::Ball { center: vec![0.0, 0.0], radius: (9.0 + 0.1 * x).sqrt() },
        ConvexSet::orthant(2),
    ]
}

/// Solves the lower-level KKT system through its convex primal
/// `min 1/2 (1+0.2x) y1^2 - (3+1.333x) y1 + 1/2 (1+0.1x) y2^2 - x y2` over
/// `{0.333 y1 - y2 + 1 - 0.1x >= 0, y1^2 + y2^2 <= 9 + 0.1x, y >= 0}` and
/// recovers the four multipliers from stationarity.
fn p5_lower_exact(x: f64) -> Result<Vec<f64>> {
    let h = [1.0 + 0.2 * x, 1.0 + 0.1 * x];
    let q = [-(3.0 + 1.333 * x), -x];
    let parts = p5_primal_set(x);
    let step = 1.0 / h[0].max(h[1]);
    let mut y = vec![0.0, 0.0];
    let mut change = f64::INFINITY;
    for _ in 0..100_000 {
        let trial = [y[0] - step * (h[0] * y[0] + q[0]), y[1] - step * (h[1] * y[1] + q[1])];
        let next = dykstra(&parts, &trial)?;
        change = crate::vecops::dist(&next, &y);
        y = next;
        if change <= 1e-13 {
            break;
        }
    }
    if change > 1e-9 {
        return Err(SmpecError::numerical("Problem 5 primal projected gradient", change));
    }
    // constraint gradients for g_i(y) >= 0
    let grads = [[0.333, -1.0], [-2.0 * y[0], -2.0 * y[1]], [1.0, 0.0], [0.0, 1.0]];
    let slack = [
        0.333 * y[0] - y[1] + 1.0 - 0.1 * x,
        9.0 + 0.1 * x - y[0] * y[0] - y[1] * y[1],
        y[0],
        y[1],
    ];
    let active: Vec<usize> = (0..4).filter(|&i| slack[i] <= 1e-7).collect();
    let mut lam = [0.0; 4];
    if !active.is_empty() {
        let g = DMatrix::from_fn(2, active.len(), |r, c| grads[active[c]][r]);
        let rhs = DVector::from_vec(vec![h[0] * y[0] + q[0], h[1] * y[1] + q[1]]);
        let sol = g
            .svd(true, true)
            .solve(&rhs, 1e-12)
            .map_err(|e| SmpecError::numerical(format!("Problem 5 multipliers ({e})"), f64::NAN))?;
        for (k, &i) in active.iter().enumerate() {
            lam[i] = sol[k].max(0.0);
        }
    }
    Ok(vec![y[0], y[1], lam[0], lam[1], lam[2], lam[3]])
}

/// KKT-form lower level with multiplier coordinates y3..y6 (best-effort:
/// the map is only monotone, its constants are conservative probes).
pub fn problem5(objective: Problem5Objective) -> Result<SmpecProblem> {
    let map = Arc::new(|x: &[f64], y: &[f64], _w: &[f64], out: &mut [f64]| {
        let x = x[0];
        out[0] = (1.0 + 0.2 * x) * y[0] - (3.0 + 1.333 * x) - 0.333 * y[2] + 2.0 * y[0] * y[3] - y[4];
        out[1] = (1.0 + 0.1 * x) * y[1] - x + y[2] + 2.0 * y[1] * y[3] - y[5];
        out[2] = 0.333 * y[0] - y[1] + 1.0 - 0.1 * x;
        out[3] = 9.0 + 0.1 * x - y[0] * y[0] - y[1] * y[1];
        out[4] = y[0];
        out[5] = y[1];
    });
    let y_set = ConvexSet::Box {
        lower: vec![f64::NEG_INFINITY, f64::NEG_INFINITY, 0.0, 0.0, 0.0, 0.0],
        upper: vec![f64::INFINITY; 6],
    };
    let lower = ViProblem::new(6, map, LowerSet::Fixed(y_set), 0.01, 25.0)?;
    let upper = Arc::new(move |_x: &[f64], y: &[f64], _w: &[f64]| {
        let base = 0.5 * ((y[0] - 3.0).powi(2) + (y[1] - 4.0).powi(2));
        match objective {
            Problem5Objective::Base => base,
            Problem5Objective::WithY3 => base + 0.5 * (y[2] - 1.0).powi(2),
            Problem5Objective::WithY4 => base + 5.0 * y[3] * y[3],
        }
    });
    let exact = Arc::new(|x: &[f64], _w: &[f64]| p5_lower_exact(x[0]));
    let opt = match objective {
        Problem5Objective::Base => literature(vec![4.06], 3.20),
        Problem5Objective::WithY3 => literature(vec![5.15], 3.45),
        Problem5Objective::WithY4 => literature(vec![2.39], 4.60),
    };
    deterministic("p5", ConvexSet::new_interval(0.0, 10.0)?, lower, upper, exact, opt)
}

/// Stochastic oligopoly with `n` firms in total (one leader, `n - 1`
/// identical followers with c = 6, beta = 1, K = 5) and demand elasticity
/// `gamma(omega) ~ U(0.9, 1.1)`.
pub fn hd1(n: usize, l: f64) -> Result<SmpecProblem> {
    if n < 2 {
        return Err(SmpecError::arg("hd1 needs at least two firms"));
    }
    let nf = n - 1;
    let (c, k, beta) = (6.0, 5.0, 1.0);
    let map = Arc::new(move |x: &[f64], y: &[f64], w: &[f64], out: &mut [f64]| {
        let q = x[0] + y.iter().sum::<f64>();
        let (p, dp) = price(q, w[0]);
        for i in 0..y.len() {
            out[i] = marginal_cost(c, k, beta, y[i]) - p - y[i] * dp;
        }
    });
    let lower = ViProblem::new(nf, map, LowerSet::Fixed(ConvexSet::cube(nf, 0.0, l)), 0.2, 2.0)?;
    let upper = Arc::new(move |x: &[f64], y: &[f64], w: &[f64]| {
        let q = x[0] + y.iter().sum::<f64>();
        cost(c, k, beta, x[0]) - x[0] * price(q, w[0]).0
    });
    // Identical followers share one quantity t solving the scalar condition.
    let exact = Arc::new(move |x: &[f64], w: &[f64]| {
        let phi = |t: f64| {
            let (p, dp) = price(x[0] + nf as f64 * t, w[0]);
            marginal_cost(c, k, beta, t) - p - t * dp
        };
        let t = if phi(0.0) >= 0.0 {
            0.0
        } else if phi(l) <= 0.0 {
            l
        } else {
            let (mut lo, mut hi) = (0.0, l);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if phi(mid) < 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
                if hi - lo <= 1e-14 * (1.0 + hi) {
                    break;
                }
            }
            0.5 * (lo + hi)
        };
        Ok(vec![t; nf])
    });
    let x_set = ConvexSet::new_interval(0.0, l)?;
    Ok(SmpecProblem {
        id: "hd1".into(),
        dim_x: 1,
        dim_y: nf,
        x0: vec![0.0],
        x_set,
        lower_alpha: lower.mu / (lower.lip * lower.lip),
        lipschitz: Some(LipschitzInfo { l0: None, l0_tilde: None, mu_f: lower.mu, l_f: lower.lip }),
        lower,
        upper,
        omega: OmegaDist::uniform(0.9, 1.1),
        staging: Staging::TwoStage,
        exact_lower: Some(exact),
        expected_value: None,
        optimum: None,
        maximize: false,
        saa_gradient: None,
    })
}

/// `E[sum x_i^2 - 2 x_i + y_i(omega)^2]` with `y(omega)` solving the VI of
/// `2y - 2x + omega` over `[0.5, 1.5]^n` (or the ball `|y - 1| <= 0.5` when
/// `ball` is set), `omega ~ U(-0.5, 0.5)`.
pub fn hd2(n: usize, ball: bool) -> Result<SmpecProblem> {
    let map = Arc::new(|x: &[f64], y: &[f64], w: &[f64], out: &mut [f64]| {
        for i in 0..y.len() {
            out[i] = 2.0 * y[i] - 2.0 * x[i] + w[0];
        }
    });
    let y_set = if ball {
        ConvexSet::new_ball(vec![1.0; n], 0.5)?
    } else {
        ConvexSet::cube(n, 0.5, 1.5)
    };
    let lower = ViProblem::new(n, map, LowerSet::Fixed(y_set.clone()), 2.0, 2.0)?.affine_in_omega(true);
    let upper = Arc::new(|x: &[f64], y: &[f64], _w: &[f64]| {
        x.iter().zip(y).map(|(xi, yi)| xi * xi - 2.0 * xi + yi * yi).sum::<f64>()
    });
    // gradient of an isotropic quadratic: the solution is a projection
    let exact = Arc::new(move |x: &[f64], w: &[f64]| {
        let target: Vec<f64> = x.iter().map(|xi| xi - 0.5 * w[0]).collect();
        y_set.project(&target)
    });
    let x_set = ConvexSet::cube(n, 0.0, 2.0);
    Ok(SmpecProblem {
        id: "hd2".into(),
        dim_x: n,
        dim_y: n,
        x0: vec![0.0; n],
        x_set,
        lower_alpha: 0.5,
        lipschitz: Some(LipschitzInfo { l0: None, l0_tilde: None, mu_f: 2.0, l_f: 2.0 }),
        lower,
        upper,
        omega: OmegaDist::uniform(-0.5, 0.5),
        staging: Staging::TwoStage,
        exact_lower: Some(exact),
        expected_value: None,
        optimum: None,
        maximize: false,
        saa_gradient: None,
    })
}
