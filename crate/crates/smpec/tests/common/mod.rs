#![allow(dead_code)]

use std::sync::Arc;

use smpec::geometry::ConvexSet;
use smpec::lower_level::{LowerSet, ViProblem};
use smpec::problems::{OmegaDist, SmpecProblem, Staging};

/// Upper-level-only problem `x -> f(x)` over the box `[lo, hi]^n`; the lower
/// level is the trivial VI with solution 0.
pub fn upper_only(
    id: &str,
    n: usize,
    lo: f64,
    hi: f64,
    x0: Vec<f64>,
    f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
) -> SmpecProblem {
    let map = Arc::new(|_x: &[f64], y: &[f64], _w: &[f64], out: &mut [f64]| out[0] = y[0]);
    let lower = ViProblem::new(1, map, LowerSet::Fixed(ConvexSet::cube(1, -1.0, 1.0)), 1.0, 1.0).unwrap();
    let f = Arc::new(f);
    let fv = f.clone();
    SmpecProblem {
        id: id.into(),
        dim_x: n,
        dim_y: 1,
        x_set: ConvexSet::cube(n, lo, hi),
        x0,
        lower,
        upper: Arc::new(move |x: &[f64], _y: &[f64], _w: &[f64]| f(x)),
        omega: OmegaDist::deterministic(),
        staging: Staging::TwoStage,
        lipschitz: None,
        exact_lower: Some(Arc::new(|_x: &[f64], _w: &[f64]| Ok(vec![0.0]))),
        expected_value: Some(Arc::new(move |x: &[f64]| fv(x))),
        optimum: None,
        maximize: false,
        saa_gradient: None,
        lower_alpha: 1.0,
    }
}

/// `|x - c|^2` on `[lo, hi]^n`, started at the lower corner.
pub fn quadratic(c: Vec<f64>, lo: f64, hi: f64) -> SmpecProblem {
    let n = c.len();
    upper_only("quadratic", n, lo, hi, vec![lo; n], move |x| {
        x.iter().zip(&c).map(|(a, b)| (a - b) * (a - b)).sum()
    })
}

/// `c . x` on `[lo, hi]^n`.
pub fn linear(c: Vec<f64>, lo: f64, hi: f64) -> SmpecProblem {
    let n = c.len();
    upper_only("linear", n, lo, hi, vec![lo; n], move |x| x.iter().zip(&c).map(|(a, b)| a * b).sum())
}
