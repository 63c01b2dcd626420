//! Acceptance run: one PASS/FAIL line per criterion, then a tally.
//!
//! The process exits 0 even when a criterion fails so the remaining test
//! binaries still run; set `SMPEC_ACCEPTANCE_STRICT=1` to turn any failure
//! into a nonzero exit.

use std::sync::Arc;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::Rng;

use smpec::baselines::confidence_interval;
use smpec::cli::{run_all, ExperimentSpec, RunRecord, SolverId};
use smpec::geometry::{sample_sphere, seeded_rng, ConvexSet, SmpecRng};
use smpec::lower_level::{monotonicity_modulus, projection_steps, vr_sa_solve, LowerSet, ViProblem, VrSaConfig};
use smpec::problems::ProblemParams;
use smpec::smoothing::{smoothed_value_mc, FnOracle, ZoGradientEstimator};
use smpec::vecops::{dist, norm};
use smpec::zsol::{AveragingState, Schedule};

const SEEDS: usize = 20;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn params(kv: &[(&str, f64)]) -> ProblemParams {
    kv.iter().map(|(k, v)| (k.to_string(), *v)).collect()
}

fn spec(id: &str, p: ProblemParams, solver: SolverId, runs: usize) -> ExperimentSpec {
    let mut s = ExperimentSpec::new(id, p, solver).expect("preset spec");
    s.runs = runs;
    s.residual_batch = 0;
    s
}

fn runs(s: &ExperimentSpec) -> Vec<RunRecord> {
    run_all(s).unwrap_or_else(|e| panic!("{} on {}: {e}", s.solver.name(), s.problem_id))
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn gaps(r: &[RunRecord]) -> Vec<f64> {
    r.iter().map(|r| r.gap.expect("known optimum")).collect()
}

fn times(r: &[RunRecord]) -> Vec<f64> {
    r.iter().map(|r| r.wall_time).collect()
}

fn fit_slope(pts: &[(f64, f64)]) -> f64 {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

fn criterion1(cnvx: &mut Option<Vec<f64>>) -> Outcome {
    let t0 = Instant::now();
    let r = runs(&spec("cournot2s", params(&[("N", 10.0), ("b", 1.0), ("c", 0.1)]), SolverId::ZsolConvex, SEEDS));
    let secs = t0.elapsed().as_secs_f64();
    let g = gaps(&r);
    let m = mean(&g);
    *cnvx = Some(g);
    outcome(m <= 5e-3 && secs <= 60.0, format!("cournot2s N=10 convex K=1000: mean gap {m:.3e} (<= 5e-3), {secs:.1} s (<= 60)"))
}

fn criterion2(cnvx: &Option<Vec<f64>>) -> Outcome {
    let t0 = Instant::now();
    let r = runs(&spec("cournot2s", params(&[("N", 10.0), ("b", 1.0), ("c", 0.1)]), SolverId::ZsolAcc, SEEDS));
    let secs = t0.elapsed().as_secs_f64();
    let m = mean(&gaps(&r));
    let c = cnvx.as_ref().map(|g| mean(g)).unwrap_or(f64::INFINITY);
    outcome(
        m <= 1e-3 && m < c && secs <= 600.0,
        format!("accelerated mean gap {m:.3e} (<= 1e-3, convex {c:.3e}), {secs:.1} s (<= 600)"),
    )
}

fn criterion3() -> Outcome {
    let t0 = Instant::now();
    let r = runs(&spec("cournot2s", params(&[("N", 1000.0), ("b", 1.0), ("c", 0.1)]), SolverId::ZsolConvex, SEEDS));
    let secs = t0.elapsed().as_secs_f64();
    let m = mean(&gaps(&r));
    outcome(m <= 1e-3 && secs <= 120.0, format!("cournot2s N=1000 convex: mean gap {m:.3e} (<= 1e-3), {secs:.1} s (<= 120)"))
}

fn criterion4() -> Outcome {
    let s = spec("cournot1s", params(&[("N", 100.0), ("b", 0.01), ("c", 3.0)]), SolverId::ZsolConvex, SEEDS);
    let alpha = s.schedule.lower_alpha.unwrap_or(f64::NAN);
    let r = runs(&s);
    let m = mean(&gaps(&r));
    outcome(m <= 5e-3, format!("cournot1s N=100 VR-SA (alpha {alpha}): mean gap {m:.3e} (<= 5e-3)"))
}

fn criterion5() -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for (a, target) in [(1.0, -7.5), (5.0, -11.5), (10.0, -16.5)] {
        let p = params(&[("a", a), ("b", 0.0), ("c", 1.0), ("d", 1.0)]);
        let r = runs(&spec("bard", p, SolverId::ZsolNonconvex, SEEDS));
        let f = mean(&r.iter().map(|r| r.objective.mean).collect::<Vec<_>>());
        pass &= (f - target).abs() <= 0.05;
        parts.push(format!("a={a}: {f:.4} vs {target}"));
    }
    outcome(pass, format!("Bard mean f(x_R) over {SEEDS} seeds, tolerance 0.05: {}", parts.join("; ")))
}

fn criterion6() -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for (id, target) in [("p2", -1.0), ("p3", 0.01), ("p4", 0.0)] {
        let r = runs(&spec(id, ProblemParams::new(), SolverId::ZsolNonconvex, 3));
        let worst = r.iter().map(|r| (r.objective.mean - target).abs()).fold(0.0, f64::max);
        let slowest = times(&r).into_iter().fold(0.0, f64::max);
        pass &= worst <= 0.02 && slowest <= 30.0;
        parts.push(format!("{id}: max |f - {target}| {worst:.4}, slowest run {slowest:.2} s"));
    }
    outcome(pass, parts.join("; "))
}

fn criterion7() -> Outcome {
    let mut pts = Vec::new();
    for k in [100usize, 1000, 10_000] {
        let mut s = spec("cournot2s", params(&[("N", 10.0)]), SolverId::ZsolConvex, SEEDS);
        s.schedule.iters = k;
        let m = mean(&gaps(&runs(&s)));
        pts.push(((k as f64).ln(), m.ln()));
    }
    let slope = fit_slope(&pts);
    let shown: Vec<String> = pts.iter().map(|p| format!("{:.2e}", p.1.exp())).collect();
    outcome(slope <= -0.35, format!("log-log slope {slope:.3} (<= -0.35), mean gaps {}", shown.join(" / ")))
}

fn affine_vi(a: DMatrix<f64>, y_star: Vec<f64>) -> ViProblem {
    let n = y_star.len();
    let mu = monotonicity_modulus(&a);
    let lip = a.clone().svd(false, false).singular_values.max();
    let map = Arc::new(move |_x: &[f64], y: &[f64], w: &[f64], out: &mut [f64]| {
        for i in 0..n {
            out[i] = (0..n).map(|j| a[(i, j)] * (y[j] - y_star[j])).sum::<f64>() + w.get(i).copied().unwrap_or(0.0);
        }
    });
    ViProblem::new(n, map, LowerSet::Fixed(ConvexSet::cube(n, -10.0, 10.0)), mu, lip).unwrap()
}

fn criterion8() -> Outcome {
    let y_star = vec![3.0, -2.0];
    let vi = affine_vi(DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]), y_star.clone());
    let alpha = vi.mu / (2.0 * vi.lip * vi.lip);
    let bound = (1.0 - alpha * vi.mu).ln() / 2.0 + 0.02;
    let cfg = VrSaConfig { alpha, rho: 1.0 / 1.5, m0: 1e-3, tau: 10.0, relax_step_bound: false };
    let y0 = [-8.0, 8.0];
    let mut vr = Vec::new();
    let mut det = Vec::new();
    for k in [1usize, 2, 4, 8, 16, 32, 64, 128] {
        let mut steps = 0;
        let mse = (0..30u64)
            .map(|s| {
                let mut draw = |r: &mut SmpecRng| vec![r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)];
                let rep = vr_sa_solve(&vi, &[], k, &cfg, Some(&y0), &mut seeded_rng(s, 1), &mut draw).unwrap();
                steps = rep.steps as usize;
                dist(&rep.y, &y_star).powi(2)
            })
            .sum::<f64>()
            / 30.0;
        vr.push((steps as f64, 0.5 * mse.ln()));
        let d = projection_steps(&vi, &[], &[], alpha, steps, Some(&y0)).unwrap();
        det.push((steps as f64, dist(&d.y, &y_star).ln()));
    }
    let (sv, sd) = (fit_slope(&vr), fit_slope(&det));
    outcome(
        sv <= bound && sd <= bound,
        format!("per-step log-error slope: VR-SA {sv:.4}, projection {sd:.4} (<= {bound:.4})"),
    )
}

fn criterion9() -> Outcome {
    let t0 = Instant::now();
    let mut fails = Vec::new();
    let mut rng = seeded_rng(9, 0);
    let none = |_: &mut SmpecRng| Vec::<f64>::new();

    let est = ZoGradientEstimator::new(3, 0.3, 100).unwrap();
    let mut c = FnOracle::new(3, |_: &[f64], _: &[f64]| 4.0);
    if est.zo_gradient_minibatch(&mut c, &[1.0, 0.0, -1.0], &mut rng, &mut { none }).unwrap().mean != vec![0.0; 3] {
        fails.push("constant");
    }
    let lin = |x: &[f64]| 2.0 * x[0] - x[1] + 0.5 * x[2];
    let e = smoothed_value_mc(lin, &[1.0, 2.0, -1.0], 0.7, 100_000, &mut rng).unwrap();
    if (e.mean - lin(&[1.0, 2.0, -1.0])).abs() > 3.0 * e.stderr {
        fails.push("linear");
    }
    for x in [[0.0, 0.0, 0.0], [0.3, -0.2, 0.1]] {
        let e = smoothed_value_mc(norm, &x, 0.2, 20_000, &mut rng).unwrap();
        if norm(&x) > e.mean + 3.0 * e.stderr || e.mean - 3.0 * e.stderr > norm(&x) + 0.2 {
            fails.push("band");
        }
    }
    for _ in 0..2000 {
        let n = rng.random_range(1..6);
        let eta = rng.random_range(0.01..2.0);
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let v = sample_sphere(&mut rng, n, eta).unwrap();
        let mut o = FnOracle::new(n, |x: &[f64], _: &[f64]| norm(x));
        let g = ZoGradientEstimator::new(n, eta, 1).unwrap().zo_gradient_sample(&mut o, &x, &v, &[]).unwrap();
        if norm(&g) > n as f64 * (1.0 + 1e-12) {
            fails.push("sample bound");
            break;
        }
    }
    let est = ZoGradientEstimator::new(2, 0.1, 200_000).unwrap();
    let mut q = FnOracle::new(2, |x: &[f64], _: &[f64]| x.iter().map(|v| v * v).sum::<f64>());
    let g = est.zo_gradient_minibatch(&mut q, &[1.0, 1.0], &mut rng, &mut { none }).unwrap();
    if (0..2).any(|i| (g.mean[i] - 2.0).abs() > 3.0 * g.stderr[i]) {
        fails.push("unbiasedness");
    }
    let xs: Vec<Vec<f64>> = (0..200).map(|_| (0..3).map(|_| rng.random_range(-5.0..5.0)).collect()).collect();
    let s = Schedule { r: 0.7, ..Schedule::default() };
    let w = |k: usize| s.gamma(k).powf(s.r);
    let mut avg = AveragingState::new(&xs[0], w(0));
    for (k, x) in xs.iter().enumerate().skip(1) {
        avg.update(x, w(k));
    }
    let total: f64 = (0..xs.len()).map(w).sum();
    let direct: Vec<f64> = (0..3).map(|i| (0..xs.len()).map(|j| w(j) * xs[j][i]).sum::<f64>() / total).collect();
    if dist(&avg.x_bar, &direct) > 1e-12 * (1.0 + norm(&direct)) {
        fails.push("averaging");
    }
    let sets = [
        ConvexSet::cube(3, -1.0, 2.0),
        ConvexSet::new_ball(vec![0.5; 3], 1.5).unwrap(),
        ConvexSet::Intersection(vec![ConvexSet::new_ball(vec![0.0; 3], 2.0).unwrap(), ConvexSet::cube(3, 0.0, 5.0)]),
    ];
    for set in &sets {
        for _ in 0..500 {
            let p: Vec<f64> = (0..3).map(|_| rng.random_range(-10.0..10.0)).collect();
            let q: Vec<f64> = (0..3).map(|_| rng.random_range(-10.0..10.0)).collect();
            if dist(&set.project(&p).unwrap(), &set.project(&q).unwrap()) > dist(&p, &q) + 1e-9 {
                fails.push("nonexpansive");
                break;
            }
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    let pass = fails.is_empty() && secs <= 120.0;
    let what = if fails.is_empty() { "all checks hold".to_string() } else { format!("failed: {}", fails.join(", ")) };
    outcome(pass, format!("{what}, {secs:.1} s (<= 120)"))
}

fn criterion10() -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for (id, n) in [("cournot2s", 10.0), ("cournot1s", 100.0)] {
        let p = params(&[("N", n)]);
        let z = mean(&gaps(&runs(&spec(id, p.clone(), SolverId::ZsolConvex, SEEDS))));
        let s = mean(&gaps(&runs(&spec(id, p, SolverId::Saa, SEEDS))));
        pass &= s <= 10.0 * z;
        parts.push(format!("{id} N={n}: SAA gap {s:.2e} vs ZSOL {z:.2e}"));
    }
    for id in ["cournot2s", "cournot1s"] {
        let p = params(&[("N", 1000.0)]);
        let z = mean(&times(&runs(&spec(id, p.clone(), SolverId::ZsolConvex, 5))));
        let s = mean(&times(&runs(&spec(id, p, SolverId::Saa, 5))));
        pass &= z < s;
        parts.push(format!("{id} N=1000: ZSOL {:.1} ms vs SAA {:.1} ms", 1e3 * z, 1e3 * s));
    }
    outcome(pass, parts.join("; "))
}

fn criterion11() -> Outcome {
    let p = params(&[("N", 1000.0), ("b", 1.0), ("c", 0.1)]);
    let ci = confidence_interval(&gaps(&runs(&spec("cournot2s", p.clone(), SolverId::ZsolConvex, SEEDS)))).unwrap();
    let acc = confidence_interval(&gaps(&runs(&spec("cournot2s", p, SolverId::ZsolAcc, SEEDS)))).unwrap();
    let (rc, ra) = (ci.half_width / ci.mean, acc.half_width / acc.mean);
    outcome(
        rc <= 0.5,
        format!(
            "cournot2s N=1000 half-width / mean gap: convex {rc:.3} (mean {:.2e}), accelerated {ra:.3} (mean {:.2e}); limit 0.5",
            ci.mean, acc.mean
        ),
    )
}

fn main() {
    let strict = std::env::var("SMPEC_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    let mut cnvx = None;
    let mut passed = 0;
    let mut report = |i: usize, f: &mut dyn FnMut() -> Outcome| {
        let t0 = Instant::now();
        let o = f();
        println!(
            "criterion {i:>2}: {} {} [{:.1} s]",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            t0.elapsed().as_secs_f64()
        );
        passed += o.pass as usize;
    };
    report(1, &mut || criterion1(&mut cnvx));
    report(2, &mut || criterion2(&cnvx));
    report(3, &mut criterion3);
    report(4, &mut criterion4);
    report(5, &mut criterion5);
    report(6, &mut criterion6);
    report(7, &mut criterion7);
    report(8, &mut criterion8);
    report(9, &mut criterion9);
    report(10, &mut criterion10);
    report(11, &mut criterion11);
    println!("acceptance: {passed}/11 criteria pass");
    if strict && passed < 11 {
        std::process::exit(1);
    }
}
