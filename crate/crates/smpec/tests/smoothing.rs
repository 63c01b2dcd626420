use proptest::prelude::*;
use rand::Rng;

use smpec::geometry::{sample_sphere, seeded_rng, SmpecRng};
use smpec::smoothing::{smoothed_value_mc, FnOracle, McEstimate, ZoGradientEstimator};
use smpec::vecops::norm;

fn sq(x: &[f64], _: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

fn no_omega(_: &mut SmpecRng) -> Vec<f64> {
    Vec::new()
}

#[test]
fn constant_oracle_minibatch_is_zero() {
    let est = ZoGradientEstimator::new(3, 0.2, 50).unwrap();
    let mut o = FnOracle::new(3, |_: &[f64], _: &[f64]| 7.0);
    let g = est.zo_gradient_minibatch(&mut o, &[1.0, 2.0, 3.0], &mut seeded_rng(1, 0), &mut no_omega).unwrap();
    assert_eq!(g.mean, vec![0.0; 3]);
}

#[test]
fn omega_is_shared_between_the_two_evaluations() {
    let est = ZoGradientEstimator::new(2, 0.5, 200).unwrap();
    let mut o = FnOracle::new(2, |_: &[f64], w: &[f64]| 10.0 * w[0]);
    let mut draw = |r: &mut SmpecRng| vec![r.random_range(-1.0..1.0)];
    let g = est.zo_gradient_minibatch(&mut o, &[0.3, 0.1], &mut seeded_rng(2, 0), &mut draw).unwrap();
    assert_eq!(g.mean, vec![0.0; 2]);
    let v = [0.3, 0.4];
    let s = ZoGradientEstimator::new(2, 0.5, 1).unwrap();
    assert_eq!(s.zo_gradient_sample(&mut o, &[0.0, 0.0], &v, &[0.9]).unwrap(), vec![0.0; 2]);
}

#[test]
fn batch_of_one_equals_single_sample() {
    let eta = 0.3;
    let x = [0.5, -1.0, 2.0];
    let mut o = FnOracle::new(3, |x: &[f64], w: &[f64]| x[0] * x[1] + w[0] * x[2]);
    let mut draw = |r: &mut SmpecRng| vec![r.random_range(0.0..1.0)];
    let est = ZoGradientEstimator::new(3, eta, 1).unwrap();
    let g = est.zo_gradient_minibatch(&mut o, &x, &mut seeded_rng(5, 0), &mut draw).unwrap();
    let mut rng = seeded_rng(5, 0);
    let v = sample_sphere(&mut rng, 3, eta).unwrap();
    let w = draw(&mut rng);
    assert_eq!(g.mean, est.zo_gradient_sample(&mut o, &x, &v, &w).unwrap());
}

#[test]
fn quadratic_single_samples_are_unbiased() {
    let est = ZoGradientEstimator::new(2, 0.1, 1_000_000).unwrap();
    let mut o = FnOracle::new(2, sq);
    let g = est.zo_gradient_minibatch(&mut o, &[1.0, 1.0], &mut seeded_rng(9, 0), &mut no_omega).unwrap();
    for i in 0..2 {
        assert!((g.mean[i] - 2.0).abs() <= 3.0 * g.stderr[i], "{:?}", g);
    }
}

#[test]
fn quadratic_minibatch_within_three_sigma() {
    let est = ZoGradientEstimator::new(2, 0.1, 10_000).unwrap();
    let mut o = FnOracle::new(2, sq);
    let g = est.zo_gradient_minibatch(&mut o, &[1.0, 1.0], &mut seeded_rng(10, 0), &mut no_omega).unwrap();
    for i in 0..2 {
        assert!(g.stderr[i] > 0.0);
        assert!((g.mean[i] - 2.0).abs() <= 3.0 * g.stderr[i], "{:?}", g);
    }
}

#[test]
fn linear_oracle_substitution() {
    let est = ZoGradientEstimator::new(2, 1.0, 1).unwrap();
    let mut o = FnOracle::new(2, |x: &[f64], _: &[f64]| 1.5 * x[0] - 4.0 * x[1]);
    let g = est.zo_gradient_sample(&mut o, &[0.2, 0.7], &[1.0, 0.0], &[]).unwrap();
    assert!((g[0] - 2.0 * 1.5).abs() < 1e-12 && g[1] == 0.0);
}

#[test]
fn lower_failure_names_the_evaluation() {
    struct Failing;
    impl smpec::smoothing::ImplicitValueOracle for Failing {
        fn dim(&self) -> usize {
            1
        }
        fn eval(&mut self, x: &[f64], _: &[f64]) -> smpec::Result<f64> {
            if x[0] > 0.5 {
                Err(smpec::SmpecError::numerical("inner", 1.0))
            } else {
                Ok(0.0)
            }
        }
    }
    let est = ZoGradientEstimator::new(1, 1.0, 1).unwrap();
    let e = est.zo_gradient_sample(&mut Failing, &[0.0], &[1.0], &[]).unwrap_err();
    assert!(e.to_string().contains("f(x+v)"), "{e}");
}

#[test]
fn ball_average_of_square_norm() {
    let mut rng = seeded_rng(12, 0);
    let e = smoothed_value_mc(|x| sq(x, &[]), &[0.0, 0.0], 1.0, 1_000_000, &mut rng).unwrap();
    assert!((e.mean - 0.5).abs() <= 3.0 * e.stderr, "{e:?}");
}

#[test]
fn linear_smoothing_is_exact_in_mean() {
    let mut rng = seeded_rng(13, 0);
    let h = |x: &[f64]| 2.0 * x[0] - x[1] + 0.5 * x[2];
    let x = [1.0, 2.0, -1.0];
    let e = smoothed_value_mc(h, &x, 0.7, 100_000, &mut rng).unwrap();
    assert!((e.mean - h(&x)).abs() <= 3.0 * e.stderr);
}

#[test]
fn smoothing_sandwich_for_convex_functions() {
    let fs: [(fn(&[f64]) -> f64, f64); 3] = [
        (|x| norm(x), 1.0),
        (|x| x.iter().map(|v| v.abs()).sum::<f64>(), 3f64.sqrt()),
        (|x| (x[0] - x[1]).abs().max(2.0 * x[2]), 2.0),
    ];
    let mut rng = seeded_rng(14, 0);
    for (h, l0) in fs {
        for x in [[0.0, 0.0, 0.0], [0.1, -0.2, 0.05], [1.0, 2.0, 3.0]] {
            for eta in [0.5, 0.05] {
                let e = smoothed_value_mc(h, &x, eta, 20_000, &mut rng).unwrap();
                assert!(h(&x) <= e.mean + 3.0 * e.stderr);
                assert!(e.mean - 3.0 * e.stderr <= h(&x) + eta * l0);
            }
        }
    }
}

/// `E|x + eta u|` for `u ~ U(-1, 1)`.
fn smoothed_abs(x: f64, eta: f64) -> f64 {
    if x.abs() >= eta {
        x.abs()
    } else {
        (x * x + eta * eta) / (2.0 * eta)
    }
}

#[test]
fn smoothed_gradient_lipschitz_bound() {
    let eta = 0.2;
    let h = 1e-6;
    let grad = |x: f64| (smoothed_abs(x + h, eta) - smoothed_abs(x - h, eta)) / (2.0 * h);
    let mut rng = seeded_rng(15, 0);
    for _ in 0..100 {
        let a: f64 = rng.random_range(-1.0..1.0);
        let b: f64 = rng.random_range(-1.0..1.0);
        if (a - b).abs() < 1e-3 {
            continue;
        }
        let ratio = (grad(a) - grad(b)).abs() / (a - b).abs();
        assert!(ratio <= 1.0 / eta * 1.05, "{ratio}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn single_samples_bounded_by_n_l0(
        n in 1usize..6,
        eta in 0.01f64..2.0,
        seed in any::<u64>(),
        shift in -3.0f64..3.0,
    ) {
        let mut rng = seeded_rng(seed, 0);
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let v = sample_sphere(&mut rng, n, eta).unwrap();
        let est = ZoGradientEstimator::new(n, eta, 1).unwrap();
        // 2-Lipschitz
        let mut o = FnOracle::new(n, move |x: &[f64], _: &[f64]| 2.0 * (x[0] - shift).abs());
        let g = est.zo_gradient_sample(&mut o, &x, &v, &[]).unwrap();
        prop_assert!(norm(&g) <= 2.0 * n as f64 * (1.0 + 1e-12));
        // 1-Lipschitz
        let mut o = FnOracle::new(n, move |x: &[f64], _: &[f64]| {
            x.iter().map(|v| (v - shift) * (v - shift)).sum::<f64>().sqrt()
        });
        let g = est.zo_gradient_sample(&mut o, &x, &v, &[]).unwrap();
        prop_assert!(norm(&g) <= n as f64 * (1.0 + 1e-12));
    }
}

#[test]
fn standard_error_of_known_sample() {
    let e = McEstimate::from_samples(&[1.0, 2.0, 3.0, 4.0]);
    assert_eq!(e.mean, 2.5);
    assert!((e.stderr - (5.0f64 / 3.0 / 4.0).sqrt()).abs() < 1e-15);
}
