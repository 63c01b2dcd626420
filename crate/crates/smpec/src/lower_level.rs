//! Solvers for the parametrized strongly monotone lower-level VI
//! `find y in Y(x): (z - y)^T F(x, y) >= 0 for all z in Y(x)`.

use std::borrow::Cow;
use std::sync::Arc;

use log::warn;
use nalgebra::{DMatrix, DVector};

use crate::error::{Result, SmpecError};
use crate::geometry::{ConvexSet, Halfspace, SmpecRng};

/// `G(x, y, omega)` written into `out`. Deterministic problems ignore omega.
pub type MapFn = Arc<dyn Fn(&[f64], &[f64], &[f64], &mut [f64]) + Send + Sync>;
/// Builds `Y(x, omega)` for parametrized feasible sets.
pub type SetFn = Arc<dyn Fn(&[f64], &[f64]) -> ConvexSet + Send + Sync>;

#[derive(Clone)]
pub enum LowerSet {
    Fixed(ConvexSet),
    Param(SetFn),
}

impl LowerSet {
    pub fn at(&self, x: &[f64], omega: &[f64]) -> Cow<'_, ConvexSet> {
        match self {
            LowerSet::Fixed(s) => Cow::Borrowed(s),
            LowerSet::Param(f) => Cow::Owned(f(x, omega)),
        }
    }
}

impl std::fmt::Debug for LowerSet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            LowerSet::Fixed(s) => write!(f, "Fixed({s:?})"),
            LowerSet::Param(_) => write!(f, "Param(..)"),
        }
    }
}

#[derive(Clone)]
pub struct ViProblem {
    pub dim: usize,
    pub map: MapFn,
    pub set: LowerSet,
    /// Strong monotonicity modulus.
    pub mu: f64,
    /// Lipschitz constant of the map in y.
    pub lip: f64,
    /// The map is affine in omega, so a batch mean of samples equals one
    /// evaluation at the mean token.
    pub affine_in_omega: bool,
}

impl std::fmt::Debug for ViProblem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ViProblem")
            .field("dim", &self.dim)
            .field("set", &self.set)
            .field("mu", &self.mu)
            .field("lip", &self.lip)
            .finish()
    }
}

impl ViProblem {
    pub fn new(dim: usize, map: MapFn, set: LowerSet, mu: f64, lip: f64) -> Result<Self> {
        if !(mu > 0.0) || !(lip >= mu) {
            return Err(SmpecError::arg(format!(
                "lower map needs mu > 0 and L >= mu (got mu={mu}, L={lip})"
            )));
        }
        Ok(ViProblem { dim, map, set, mu, lip, affine_in_omega: false })
    }

    pub fn affine_in_omega(mut self, yes: bool) -> Self {
        self.affine_in_omega = yes;
        self
    }

    pub fn eval(&self, x: &[f64], y: &[f64], omega: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        (self.map)(x, y, omega, &mut out);
        out
    }

    /// Natural residual `|y - P_Y[y - F(x, y, omega)]|`.
    pub fn residual(&self, x: &[f64], y: &[f64], omega: &[f64]) -> Result<f64> {
        let set = self.set.at(x, omega);
        let g = self.eval(x, y, omega);
        let step: Vec<f64> = y.iter().zip(&g).map(|(a, b)| a - b).collect();
        let p = set.project(&step)?;
        Ok(crate::vecops::dist(y, &p))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ViSolveReport {
    pub y: Vec<f64>,
    pub projections: u64,
    pub samples: u64,
    pub steps: u64,
}

/// `ceil(tau ln(k+1))`, zero at `k = 0`.
pub fn log_steps(tau: f64, k: usize) -> usize {
    let v = (tau * ((k + 1) as f64).ln()).ceil();
    if v <= 0.0 {
        0
    } else {
        v as usize
    }
}

/// `max(1, ceil(m0 rho^-t))`.
pub fn vr_batch(m0: f64, rho: f64, t: usize) -> u64 {
    let m = (m0 * rho.powi(-(t as i32))).ceil();
    if m.is_finite() && m >= 1.0 {
        m as u64
    } else if m.is_finite() {
        1
    } else {
        u64::MAX
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VrSaConfig {
    pub alpha: f64,
    pub rho: f64,
    pub m0: f64,
    pub tau: f64,
    /// Accept `alpha > mu/(2L^2)` with a warning instead of an error.
    pub relax_step_bound: bool,
}

impl VrSaConfig {
    pub fn validate(&self, vi: &ViProblem) -> Result<()> {
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return Err(SmpecError::arg(format!("rho must lie in (0,1), got {}", self.rho)));
        }
        if !(self.alpha > 0.0) || !(self.tau > 0.0) || !(self.m0 > 0.0) {
            return Err(SmpecError::arg("alpha, tau and M0 must be positive"));
        }
        let bound = vi.mu / (2.0 * vi.lip * vi.lip);
        if self.alpha > bound {
            if self.relax_step_bound {
                warn!("VR-SA step {} exceeds mu/(2L^2) = {bound:.4}", self.alpha);
            } else {
                return Err(SmpecError::arg(format!(
                    "VR-SA step {} exceeds mu/(2L^2) = {bound:.6}",
                    self.alpha
                )));
            }
        }
        Ok(())
    }
}

fn start_point(set: &ConvexSet, y0: Option<&[f64]>) -> Result<Vec<f64>> {
    match y0 {
        Some(y) => set.project(y),
        None => set.default_start(),
    }
}

/// Variance-reduced SA: `t_k = ceil(tau ln(k+1))` projected steps, step `t`
/// averaging `M_t = max(1, ceil(M0 rho^-t))` fresh samples of the map.
pub fn vr_sa_solve(
    vi: &ViProblem,
    x: &[f64],
    k: usize,
    cfg: &VrSaConfig,
    y0: Option<&[f64]>,
    rng: &mut SmpecRng,
    draw: &mut dyn FnMut(&mut SmpecRng) -> Vec<f64>,
) -> Result<ViSolveReport> {
    cfg.validate(vi)?;
    let set = vi.set.at(x, &[]);
    let mut y = start_point(&set, y0)?;
    let tk = log_steps(cfg.tau, k);
    let n = vi.dim;
    let mut g = vec![0.0; n];
    let mut acc = vec![0.0; n];
    let mut samples = 0u64;
    for t in 0..tk {
        let mt = vr_batch(cfg.m0, cfg.rho, t);
        acc.iter_mut().for_each(|a| *a = 0.0);
        if vi.affine_in_omega {
            let mut wbar: Vec<f64> = Vec::new();
            for _ in 0..mt {
                let w = draw(rng);
                if wbar.is_empty() {
                    wbar = vec![0.0; w.len()];
                }
                wbar.iter_mut().zip(&w).for_each(|(a, b)| *a += b);
            }
            wbar.iter_mut().for_each(|a| *a /= mt as f64);
            (vi.map)(x, &y, &wbar, &mut acc);
        } else {
            for _ in 0..mt {
                let w = draw(rng);
                (vi.map)(x, &y, &w, &mut g);
                acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b / mt as f64);
            }
        }
        samples += mt;
        let step: Vec<f64> = y.iter().zip(&acc).map(|(a, b)| a - cfg.alpha * b).collect();
        y = set.project(&step)?;
    }
    Ok(ViSolveReport { y, projections: tk as u64, samples, steps: tk as u64 })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiminishingSaConfig {
    /// First step size.
    pub alpha0: f64,
    /// Numerator of the later steps `alpha/(t + gamma_shift)`.
    pub alpha: f64,
    pub gamma_shift: f64,
}

impl DiminishingSaConfig {
    pub fn validate(&self, vi: &ViProblem) -> Result<()> {
        if !(self.alpha0 > 1.0 / (2.0 * vi.mu)) {
            return Err(SmpecError::arg(format!(
                "alpha0 = {} must exceed 1/(2 mu) = {}",
                self.alpha0,
                1.0 / (2.0 * vi.mu)
            )));
        }
        if !(self.alpha > 0.0) || !(self.gamma_shift > 0.0) {
            return Err(SmpecError::arg("alpha and Gamma must be positive"));
        }
        if self.gamma_shift < 1.0 {
            warn!("SA step shift Gamma = {} is below 1", self.gamma_shift);
        }
        Ok(())
    }

    pub fn step(&self, t: usize) -> f64 {
        if t == 0 {
            self.alpha0
        } else {
            self.alpha / ((t - 1) as f64 + self.gamma_shift)
        }
    }
}

/// Single-sample projected SA with `t_k = k + 1` steps and steps
/// `alpha_0, alpha/Gamma, alpha/(1+Gamma), ...`.
pub fn sa_solve_diminishing(
    vi: &ViProblem,
    x: &[f64],
    k: usize,
    cfg: &DiminishingSaConfig,
    y0: Option<&[f64]>,
    rng: &mut SmpecRng,
    draw: &mut dyn FnMut(&mut SmpecRng) -> Vec<f64>,
) -> Result<ViSolveReport> {
    cfg.validate(vi)?;
    let set = vi.set.at(x, &[]);
    let mut y = start_point(&set, y0)?;
    let tk = k + 1;
    let mut g = vec![0.0; vi.dim];
    for t in 0..tk {
        let w = draw(rng);
        (vi.map)(x, &y, &w, &mut g);
        let a = cfg.step(t);
        let step: Vec<f64> = y.iter().zip(&g).map(|(yi, gi)| yi - a * gi).collect();
        y = set.project(&step)?;
    }
    Ok(ViSolveReport { y, projections: tk as u64, samples: tk as u64, steps: tk as u64 })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectionConfig {
    pub alpha: f64,
    pub tau: f64,
    pub relax_step_bound: bool,
}

impl ProjectionConfig {
    pub fn validate(&self, vi: &ViProblem) -> Result<()> {
        if !(self.alpha > 0.0) || !(self.tau > 0.0) {
            return Err(SmpecError::arg("alpha and tau must be positive"));
        }
        let bound = vi.mu / (vi.lip * vi.lip);
        if self.alpha > bound * (1.0 + 1e-12) {
            if self.relax_step_bound {
                warn!("projection step {} exceeds mu/L^2 = {bound:.4}", self.alpha);
            } else {
                return Err(SmpecError::arg(format!(
                    "projection step {} exceeds mu/L^2 = {bound:.6}",
                    self.alpha
                )));
            }
        }
        Ok(())
    }
}

/// Fixed-omega projection method, `t_k = ceil(tau ln(k+1))` steps.
pub fn deterministic_projection_solve(
    vi: &ViProblem,
    x: &[f64],
    omega: &[f64],
    k: usize,
    cfg: &ProjectionConfig,
    y0: Option<&[f64]>,
) -> Result<ViSolveReport> {
    cfg.validate(vi)?;
    let tk = log_steps(cfg.tau, k);
    projection_steps(vi, x, omega, cfg.alpha, tk, y0)
}

/// `steps` iterations of `y <- P_Y[y - alpha G(x, y, omega)]`.
pub fn projection_steps(
    vi: &ViProblem,
    x: &[f64],
    omega: &[f64],
    alpha: f64,
    steps: usize,
    y0: Option<&[f64]>,
) -> Result<ViSolveReport> {
    let set = vi.set.at(x, omega);
    let mut y = start_point(&set, y0)?;
    let mut g = vec![0.0; vi.dim];
    for _ in 0..steps {
        (vi.map)(x, &y, omega, &mut g);
        let step: Vec<f64> = y.iter().zip(&g).map(|(a, b)| a - alpha * b).collect();
        y = set.project(&step)?;
    }
    Ok(ViSolveReport { y, projections: steps as u64, samples: 0, steps: steps as u64 })
}

/// Projection iteration run until the natural residual drops below `tol`.
/// Used as the exact oracle for nonlinear maps.
pub fn solve_to_tolerance(
    vi: &ViProblem,
    x: &[f64],
    omega: &[f64],
    alpha: f64,
    tol: f64,
    max_steps: usize,
    y0: Option<&[f64]>,
) -> Result<Vec<f64>> {
    let set = vi.set.at(x, omega);
    let mut y = start_point(&set, y0)?;
    let mut g = vec![0.0; vi.dim];
    let mut res = f64::INFINITY;
    for _ in 0..max_steps {
        (vi.map)(x, &y, omega, &mut g);
        let step: Vec<f64> = y.iter().zip(&g).map(|(a, b)| a - alpha * b).collect();
        let next = set.project(&step)?;
        res = crate::vecops::dist(&next, &y) / alpha;
        y = next;
        if res <= tol {
            return Ok(y);
        }
    }
    Err(SmpecError::numerical("lower-level projection iteration", res))
}

/// Linear inequality description `G y <= h` of a box or polyhedron, or
/// `None` for sets that are not polyhedral.
pub fn linear_constraints(set: &ConvexSet) -> Option<(Vec<Vec<f64>>, Vec<f64>)> {
    let n = set.dim();
    let mut rows = Vec::new();
    let mut rhs = Vec::new();
    let push_box = |lower: &[f64], upper: &[f64], rows: &mut Vec<Vec<f64>>, rhs: &mut Vec<f64>| {
        for i in 0..n {
            if upper[i].is_finite() {
                let mut r = vec![0.0; n];
                r[i] = 1.0;
                rows.push(r);
                rhs.push(upper[i]);
            }
            if lower[i].is_finite() {
                let mut r = vec![0.0; n];
                r[i] = -1.0;
                rows.push(r);
                rhs.push(-lower[i]);
            }
        }
    };
    match set {
        ConvexSet::Box { lower, upper } => push_box(lower, upper, &mut rows, &mut rhs),
        ConvexSet::Interval { lower, upper } => push_box(&[*lower], &[*upper], &mut rows, &mut rhs),
        ConvexSet::Halfspace(Halfspace { normal, offset }) => {
            rows.push(normal.clone());
            rhs.push(*offset);
        }
        ConvexSet::Polyhedron { halfspaces, bbox } => {
            for h in halfspaces {
                rows.push(h.normal.clone());
                rhs.push(h.offset);
            }
            if let Some(b) = bbox {
                let (g, h) = linear_constraints(b)?;
                rows.extend(g);
                rhs.extend(h);
            }
        }
        _ => return None,
    }
    Some((rows, rhs))
}

/// Solves the affine VI `(A y + b)` over `{G y <= h}` by enumerating active
/// sets in order of size. Exact for strongly monotone `A`; intended for a
/// handful of constraints.
pub fn kkt_enumeration(a: &DMatrix<f64>, b: &[f64], g: &[Vec<f64>], h: &[f64]) -> Result<Vec<f64>> {
    let n = b.len();
    let m = g.len();
    if m > 20 {
        return Err(SmpecError::arg("active-set enumeration limited to 20 constraints"));
    }
    let feas_tol = 1e-10 * (1.0 + h.iter().fold(0.0f64, |acc, v| acc.max(v.abs())));
    for size in 0..=m.min(n) {
        let mut subset: Vec<usize> = (0..size).collect();
        loop {
            if let Some(y) = try_active_set(a, b, g, h, &subset, feas_tol) {
                return Ok(y);
            }
            if !next_combination(&mut subset, m) {
                break;
            }
        }
    }
    Err(SmpecError::numerical("active-set enumeration (no KKT point found)", f64::NAN))
}

fn next_combination(c: &mut [usize], m: usize) -> bool {
    let k = c.len();
    if k == 0 {
        return false;
    }
    let mut i = k;
    while i > 0 {
        i -= 1;
        if c[i] < m - k + i {
            c[i] += 1;
            for j in i + 1..k {
                c[j] = c[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

fn try_active_set(
    a: &DMatrix<f64>,
    b: &[f64],
    g: &[Vec<f64>],
    h: &[f64],
    active: &[usize],
    feas_tol: f64,
) -> Option<Vec<f64>> {
    let n = b.len();
    let s = active.len();
    let mut k = DMatrix::<f64>::zeros(n + s, n + s);
    let mut rhs = DVector::<f64>::zeros(n + s);
    k.view_mut((0, 0), (n, n)).copy_from(a);
    for i in 0..n {
        rhs[i] = -b[i];
    }
    for (j, &c) in active.iter().enumerate() {
        for i in 0..n {
            k[(i, n + j)] = g[c][i];
            k[(n + j, i)] = g[c][i];
        }
        rhs[n + j] = h[c];
    }
    let sol = k.lu().solve(&rhs)?;
    if sol.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let y: Vec<f64> = sol.iter().take(n).copied().collect();
    let lam_ok = (0..s).all(|j| sol[n + j] >= -1e-10);
    let feas = g
        .iter()
        .zip(h)
        .all(|(row, hi)| row.iter().zip(&y).map(|(p, q)| p * q).sum::<f64>() <= hi + feas_tol);
    (lam_ok && feas).then_some(y)
}

/// Smallest eigenvalue of the symmetric part of `a`.
pub fn monotonicity_modulus(a: &DMatrix<f64>) -> f64 {
    let sym = (a + a.transpose()) * 0.5;
    sym.symmetric_eigenvalues().iter().copied().fold(f64::INFINITY, f64::min)
}

pub const AFFINE_TOL: f64 = 1e-12;
pub const AFFINE_MAX_ITERS: usize = 1_000_000;

/// High-accuracy solution of `VI(set, y -> A y + b)`.
///
/// Boxes with diagonal `A` are clamped coordinatewise, small polyhedra go
/// through active-set enumeration, and anything else falls back on the
/// projection method with the best constant step until the natural residual
/// is below `1e-12`.
pub fn affine_vi_exact(a: &DMatrix<f64>, b: &[f64], set: &ConvexSet) -> Result<Vec<f64>> {
    let n = b.len();
    if a.nrows() != n || a.ncols() != n || set.dim() != n {
        return Err(SmpecError::arg("matrix, vector and set dimensions differ"));
    }
    let mu = monotonicity_modulus(a);
    if !(mu > 0.0) {
        return Err(SmpecError::arg(format!(
            "affine map is not strongly monotone (min eigenvalue of symmetric part {mu:.3e})"
        )));
    }
    let diagonal = (0..n).all(|i| (0..n).all(|j| i == j || a[(i, j)] == 0.0));
    if diagonal {
        if let ConvexSet::Box { .. } | ConvexSet::Interval { .. } = set {
            let y: Vec<f64> = (0..n).map(|i| -b[i] / a[(i, i)]).collect();
            return set.project(&y);
        }
    }
    if let Some((g, h)) = linear_constraints(set) {
        if g.len() <= 12 && n <= 8 {
            return kkt_enumeration(a, b, &g, &h);
        }
    }
    let lip = a.clone().svd(false, false).singular_values.max();
    let symmetric = (a - a.transpose()).amax() == 0.0;
    let alpha = if symmetric { 2.0 / (mu + lip) } else { mu / (lip * lip) };
    let bv = DVector::from_column_slice(b);
    let mut y = DVector::from_vec(set.default_start()?);
    let mut res = f64::INFINITY;
    for _ in 0..AFFINE_MAX_ITERS {
        let f = a * &y + &bv;
        let step: Vec<f64> = y.iter().zip(f.iter()).map(|(p, q)| p - alpha * q).collect();
        y = DVector::from_vec(set.project(&step)?);
        let f = a * &y + &bv;
        let full: Vec<f64> = y.iter().zip(f.iter()).map(|(p, q)| p - q).collect();
        let proj = set.project(&full)?;
        res = y.iter().zip(&proj).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt();
        if res <= AFFINE_TOL {
            return Ok(y.iter().copied().collect());
        }
    }
    Err(SmpecError::numerical("affine VI projection iteration", res))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_steps_values() {
        assert_eq!(log_steps(5.0, 0), 0);
        assert_eq!(log_steps(5.0, 9), 12);
    }

    #[test]
    fn batch_sizes() {
        assert_eq!(vr_batch(1.0, 1.0 / 1.5, 0), 1);
        assert_eq!(vr_batch(1.0, 1.0 / 1.5, 3), 4);
        assert_eq!(vr_batch(1e-4, 1.0 / 1.5, 5), 1);
    }

    #[test]
    fn orthant_interior_and_clamped() {
        let a = DMatrix::identity(2, 2);
        let o = ConvexSet::orthant(2);
        assert_eq!(affine_vi_exact(&a, &[-1.0, -1.0], &o).unwrap(), vec![1.0, 1.0]);
        assert_eq!(affine_vi_exact(&a, &[1.0, 1.0], &o).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn non_monotone_rejected() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        let r = affine_vi_exact(&a, &[0.0, 0.0], &ConvexSet::orthant(2));
        assert!(matches!(r, Err(SmpecError::Argument(_))));
    }

    #[test]
    fn combinations_enumerate_all() {
        let mut c = vec![0, 1];
        let mut count = 1;
        while next_combination(&mut c, 4) {
            count += 1;
        }
        assert_eq!(count, 6);
    }
}
