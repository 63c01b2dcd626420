//! Stochastic variant of Bard's bilevel program:
//!
//! upper: min -a x1^2 - b x2^2 - 3 x2 - 4 y1 + y2^2 over
//!        {x1^2 + 2 x2 <= 4, 0 <= x1 <= 1, 0 <= x2 <= 2}
//! lower: min E[2 x1^2 + c y1^2 + d y2^2 - xi y2] subject to
//!        2 y1 - y2 <= x1^2 - 2 x1 + x2^2 + 3, -3 y1 + y2 <= x2 - 4, y >= 0.

use std::sync::Arc;

use crate::error::{Result, SmpecError};
use crate::geometry::{ConvexSet, Halfspace};
use crate::lower_level::{LowerSet, ViProblem};

use super::{LipschitzInfo, OmegaDist, SmpecProblem, Staging};

const ROWS: [[f64; 2]; 4] = [[2.0, -1.0], [-3.0, 1.0], [-1.0, 0.0], [0.0, -1.0]];

fn rhs(x: &[f64]) -> [f64; 4] {
    [x[0] * x[0] - 2.0 * x[0] + x[1] * x[1] + 3.0, x[1] - 4.0, 0.0, 0.0]
}

fn lower_set(x: &[f64]) -> ConvexSet {
    let h = rhs(x);
    ConvexSet::Polyhedron {
        halfspaces: vec![
            Halfspace::new(ROWS[0].to_vec(), h[0]),
            Halfspace::new(ROWS[1].to_vec(), h[1]),
        ],
        bbox: Some(Box::new(ConvexSet::orthant(2))),
    }
}

fn feasible(y: [f64; 2], h: &[f64; 4], tol: f64) -> bool {
    ROWS.iter().zip(h).all(|(r, hi)| r[0] * y[0] + r[1] * y[1] <= hi + tol)
}

/// Active-set enumeration for `min 1/2 y^T diag(hd) y + q^T y` subject to
/// `ROWS y <= h` in two dimensions.
fn qp2_diag(hd: [f64; 2], q: [f64; 2], h: &[f64; 4]) -> Option<[f64; 2]> {
    let tol = 1e-10 * (1.0 + h.iter().fold(0.0f64, |a, v| a.max(v.abs())));
    let yu = [-q[0] / hd[0], -q[1] / hd[1]];
    if feasible(yu, h, tol) {
        return Some(yu);
    }
    for (i, g) in ROWS.iter().enumerate() {
        let ghg = g[0] * g[0] / hd[0] + g[1] * g[1] / hd[1];
        let lam = (g[0] * yu[0] + g[1] * yu[1] - h[i]) / ghg;
        if lam < 0.0 {
            continue;
        }
        let y = [yu[0] - lam * g[0] / hd[0], yu[1] - lam * g[1] / hd[1]];
        if feasible(y, h, tol) {
            return Some(y);
        }
    }
    for i in 0..4 {
        for j in i + 1..4 {
            let (gi, gj) = (ROWS[i], ROWS[j]);
            let det = gi[0] * gj[1] - gi[1] * gj[0];
            if det.abs() < 1e-14 {
                continue;
            }
            let y = [(h[i] * gj[1] - gi[1] * h[j]) / det, (gi[0] * h[j] - h[i] * gj[0]) / det];
            // multipliers from diag(hd) y + q + lam_i g_i + lam_j g_j = 0
            let r = [-(hd[0] * y[0] + q[0]), -(hd[1] * y[1] + q[1])];
            let li = (r[0] * gj[1] - gj[0] * r[1]) / det;
            let lj = (gi[0] * r[1] - r[0] * gi[1]) / det;
            if li >= -1e-12 && lj >= -1e-12 && feasible(y, h, tol) {
                return Some(y);
            }
        }
    }
    None
}

/// Exact lower-level solution for the expected multiplier `xi`.
pub fn bard_lower_exact(x: &[f64], c: f64, d: f64, xi: f64) -> Result<Vec<f64>> {
    let h = rhs(x);
    qp2_diag([2.0 * c, 2.0 * d], [0.0, -xi], &h)
        .map(|y| y.to_vec())
        .ok_or_else(|| SmpecError::numerical("Bard lower-level enumeration (no KKT point)", f64::NAN))
}

pub fn bard_bilevel(a: f64, b: f64, c: f64, d: f64, xi: OmegaDist) -> Result<SmpecProblem> {
    if !(c > 0.0 && d > 0.0) {
        return Err(SmpecError::arg("Bard lower objective needs c, d > 0"));
    }
    if xi.dim() != 1 {
        return Err(SmpecError::arg("Bard xi must be a scalar distribution"));
    }
    let map = Arc::new(move |_x: &[f64], y: &[f64], w: &[f64], out: &mut [f64]| {
        out[0] = 2.0 * c * y[0];
        out[1] = 2.0 * d * y[1] - w[0];
    });
    let (mu, lip) = (2.0 * c.min(d), 2.0 * c.max(d));
    let lower = ViProblem::new(2, map, LowerSet::Param(Arc::new(|x: &[f64], _: &[f64]| lower_set(x))), mu, lip)?
        .affine_in_omega(true);
    let upper = Arc::new(move |x: &[f64], y: &[f64], _w: &[f64]| {
        -a * x[0] * x[0] - b * x[1] * x[1] - 3.0 * x[1] - 4.0 * y[0] + y[1] * y[1]
    });
    let x_set = ConvexSet::Intersection(vec![
        // x2 <= 2 follows from the cap; stating it again makes the two
        // boundaries tangent at (0, 2), where Dykstra crawls
        ConvexSet::new_box(vec![0.0, 0.0], vec![1.0, f64::INFINITY])?,
        ConvexSet::ParabolicCap { dim: 2, sq: 0, lin: 1, coef: 2.0, rhs: 4.0 },
    ]);
    // the upper objective is even in x1, so starting on x1 = 0 leaves the
    // x1 gradient at zero and runs drift to the corner (0, 2)
    let x0 = x_set.project(&[0.5, 1.0])?;
    Ok(SmpecProblem {
        id: "bard".into(),
        dim_x: 2,
        dim_y: 2,
        x_set,
        x0,
        lower_alpha: mu / (lip * lip),
        lower,
        upper,
        omega: xi,
        staging: Staging::SingleStage,
        lipschitz: Some(LipschitzInfo { l0: None, l0_tilde: None, mu_f: mu, l_f: lip }),
        exact_lower: Some(Arc::new(move |x: &[f64], w: &[f64]| bard_lower_exact(x, c, d, w[0]))),
        expected_value: None,
        optimum: None,
        maximize: false,
        saa_gradient: None,
    })
}
