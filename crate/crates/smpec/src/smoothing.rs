//! Spherical smoothing and zeroth-order gradient estimators.
//!
//! For `v` uniform on the sphere of radius `eta` the single-sample estimate
//! `(n/eta) (f(x+v, w) - f(x, w)) v/|v|` is unbiased for the gradient of the
//! ball-smoothed function `f_eta(x) = E_u f(x + eta u)`.

use rand::Rng;

use crate::error::{Result, SmpecError};
use crate::geometry::{sample_ball, sample_sphere};
use crate::vecops::norm;

/// Mean of a Monte Carlo aggregate with its empirical standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub mean: f64,
    pub stderr: f64,
}

impl McEstimate {
    pub fn from_samples(values: &[f64]) -> Self {
        let m = values.len() as f64;
        let mean = values.iter().sum::<f64>() / m;
        if values.len() < 2 {
            return McEstimate { mean, stderr: 0.0 };
        }
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (m - 1.0);
        McEstimate { mean, stderr: (var / m).sqrt() }
    }
}

/// `x -> f~(x, y(x[,w]), w)` with the lower-level solve hidden inside.
pub trait ImplicitValueOracle {
    fn dim(&self) -> usize;

    fn eval(&mut self, x: &[f64], omega: &[f64]) -> Result<f64>;

    /// Solve whatever can be shared by all base evaluations at `x` within one
    /// batch (single-stage problems: y(x)).
    fn prepare_base(&mut self, _x: &[f64]) -> Result<()> {
        Ok(())
    }

    /// Base evaluation reusing the state from `prepare_base`.
    fn eval_base(&mut self, x: &[f64], omega: &[f64]) -> Result<f64> {
        self.eval(x, omega)
    }

    /// Accuracy the lower solver currently guarantees (0 when exact).
    fn inexactness(&self) -> f64 {
        0.0
    }
}

/// Wraps a plain function of `(x, omega)`.
pub struct FnOracle<F> {
    n: usize,
    f: F,
}

impl<F: FnMut(&[f64], &[f64]) -> f64> FnOracle<F> {
    pub fn new(n: usize, f: F) -> Self {
        FnOracle { n, f }
    }
}

impl<F: FnMut(&[f64], &[f64]) -> f64> ImplicitValueOracle for FnOracle<F> {
    fn dim(&self) -> usize {
        self.n
    }

    fn eval(&mut self, x: &[f64], omega: &[f64]) -> Result<f64> {
        Ok((self.f)(x, omega))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exactness {
    Exact,
    Inexact,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ZoGradientEstimator {
    pub n: usize,
    pub eta: f64,
    pub mode: Exactness,
    pub batch: usize,
    /// Evaluate f~(x, .) through `prepare_base`/`eval_base`.
    pub shared_base: bool,
}

/// Mini-batch gradient with per-coordinate standard errors.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchGradient {
    pub mean: Vec<f64>,
    pub stderr: Vec<f64>,
}

impl ZoGradientEstimator {
    pub fn new(n: usize, eta: f64, batch: usize) -> Result<Self> {
        if n == 0 {
            return Err(SmpecError::arg("dimension must be positive"));
        }
        if !(eta > 0.0) {
            return Err(SmpecError::arg(format!("smoothing radius must be positive, got {eta}")));
        }
        if batch == 0 {
            return Err(SmpecError::arg("batch size must be at least 1"));
        }
        Ok(ZoGradientEstimator { n, eta, mode: Exactness::Exact, batch, shared_base: false })
    }

    pub fn with_mode(mut self, mode: Exactness) -> Self {
        self.mode = mode;
        self
    }

    pub fn with_shared_base(mut self, shared: bool) -> Self {
        self.shared_base = shared;
        self
    }

    /// One estimate from a given direction `v` (with |v| = eta) and token.
    /// Both evaluations use the same `omega`.
    pub fn zo_gradient_sample<O: ImplicitValueOracle + ?Sized>(
        &self,
        oracle: &mut O,
        x: &[f64],
        v: &[f64],
        omega: &[f64],
    ) -> Result<Vec<f64>> {
        let s = self.sample_scale(oracle, x, v, omega)?;
        Ok(v.iter().map(|vi| s * vi).collect())
    }

    /// `(n/eta)(f(x+v, w) - f(x, w))/|v|`, the factor multiplying `v`.
    fn sample_scale<O: ImplicitValueOracle + ?Sized>(
        &self,
        oracle: &mut O,
        x: &[f64],
        v: &[f64],
        omega: &[f64],
    ) -> Result<f64> {
        if x.len() != self.n || v.len() != self.n {
            return Err(SmpecError::arg("point or direction has the wrong dimension"));
        }
        let vn = norm(v);
        if (vn - self.eta).abs() > 1e-9 * self.eta {
            return Err(SmpecError::arg(format!("direction norm {vn} differs from eta {}", self.eta)));
        }
        let shifted: Vec<f64> = x.iter().zip(v).map(|(a, b)| a + b).collect();
        let f1 = oracle
            .eval(&shifted, omega)
            .map_err(|e| e.in_lower("perturbed evaluation f(x+v)"))?;
        let f0 = if self.shared_base {
            oracle.eval_base(x, omega)
        } else {
            oracle.eval(x, omega)
        }
        .map_err(|e| e.in_lower("base evaluation f(x)"))?;
        Ok(self.n as f64 / self.eta * (f1 - f0) / vn)
    }

    /// Average of `batch` estimates with fresh `(v_j, omega_j)`; for each
    /// member the direction is drawn first, then the token.
    pub fn zo_gradient_minibatch<O, R, D>(
        &self,
        oracle: &mut O,
        x: &[f64],
        rng: &mut R,
        draw_omega: &mut D,
    ) -> Result<BatchGradient>
    where
        O: ImplicitValueOracle + ?Sized,
        R: Rng + ?Sized,
        D: FnMut(&mut R) -> Vec<f64>,
    {
        if self.shared_base {
            oracle.prepare_base(x).map_err(|e| e.in_lower("shared base solve y(x)"))?;
        }
        let n = self.n;
        let mut sum = vec![0.0; n];
        let mut sumsq = vec![0.0; n];
        for _ in 0..self.batch {
            let v = sample_sphere(rng, n, self.eta)?;
            let omega = draw_omega(rng);
            let s = self.sample_scale(oracle, x, &v, &omega)?;
            for i in 0..n {
                let g = s * v[i];
                sum[i] += g;
                sumsq[i] += g * g;
            }
        }
        let m = self.batch as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / m).collect();
        let stderr = if self.batch > 1 {
            (0..n)
                .map(|i| ((sumsq[i] - m * mean[i] * mean[i]).max(0.0) / (m - 1.0) / m).sqrt())
                .collect()
        } else {
            vec![0.0; n]
        };
        Ok(BatchGradient { mean, stderr })
    }
}

/// Monte Carlo estimate of `h_eta(x) = E_{u in unit ball} h(x + eta u)`.
pub fn smoothed_value_mc<H, R>(h: H, x: &[f64], eta: f64, m: usize, rng: &mut R) -> Result<McEstimate>
where
    H: Fn(&[f64]) -> f64,
    R: Rng + ?Sized,
{
    if m == 0 {
        return Err(SmpecError::arg("sample count must be at least 1"));
    }
    let n = x.len();
    let mut vals = Vec::with_capacity(m);
    let mut p = vec![0.0; n];
    for _ in 0..m {
        let u = sample_ball(rng, n, eta)?;
        for i in 0..n {
            p[i] = x[i] + u[i];
        }
        vals.push(h(&p));
    }
    Ok(McEstimate::from_samples(&vals))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::seeded_rng;

    #[test]
    fn constant_oracle_gives_zero() {
        let est = ZoGradientEstimator::new(2, 0.5, 1).unwrap();
        let mut o = FnOracle::new(2, |_: &[f64], _: &[f64]| 7.0);
        let g = est.zo_gradient_sample(&mut o, &[1.0, 2.0], &[0.3, 0.4], &[]).unwrap();
        assert_eq!(g, vec![0.0, 0.0]);
    }

    #[test]
    fn linear_substitution() {
        let est = ZoGradientEstimator::new(2, 1.0, 1).unwrap();
        let mut o = FnOracle::new(2, |x: &[f64], _: &[f64]| 3.0 * x[0] - x[1]);
        let g = est.zo_gradient_sample(&mut o, &[0.0, 0.0], &[1.0, 0.0], &[]).unwrap();
        assert_eq!(g, vec![6.0, 0.0]);
    }

    #[test]
    fn wrong_radius_is_rejected() {
        let est = ZoGradientEstimator::new(2, 1.0, 1).unwrap();
        let mut o = FnOracle::new(2, |_: &[f64], _: &[f64]| 0.0);
        assert!(est.zo_gradient_sample(&mut o, &[0.0, 0.0], &[0.5, 0.0], &[]).is_err());
    }

    #[test]
    fn constant_smoothed_value() {
        let mut rng = seeded_rng(3, 0);
        let e = smoothed_value_mc(|_| 3.0, &[1.0, -1.0], 0.7, 100, &mut rng).unwrap();
        assert_eq!(e.mean, 3.0);
        assert_eq!(e.stderr, 0.0);
    }

    #[test]
    fn bad_parameters() {
        assert!(ZoGradientEstimator::new(2, 0.0, 1).is_err());
        assert!(ZoGradientEstimator::new(2, 1.0, 0).is_err());
    }
}
