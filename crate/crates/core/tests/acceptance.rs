//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fails.
//! Build with optimizations; several criteria integrate 3D grids.

use std::time::Instant;

use riccilab::conservation::{observed_order, ricci_lichnerowicz_residual};
use riccilab::flows::{integrate_ricci, FlowOptions};
use riccilab::kernel::{
    evolve_kernel_slot, metric_representation_check, ricci_representation_check, RepresentationReport,
};
use riccilab::milnor::MilnorMetric;
use riccilab::scenario::{bundled, BUNDLED};
use riccilab::torus::{perturbed_metric, torus_chart, Scheme};
use riccilab::{run_scenario, Chart, RunOutcome, ScenarioConfig};
use serde_json::{json, Value};

type Criterion = (&'static str, fn() -> Outcome);

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome { passed, detail: detail.into() }
}

fn bundled_json(name: &str) -> Value {
    let text = BUNDLED.iter().find(|(n, _)| *n == name).expect("bundled scenario").1;
    serde_json::from_str(text).unwrap()
}

/// Bundled config with JSON-pointer overrides; `checks` is replaced by `[{name, tolerance}]`.
fn config(base: &str, overrides: &[(&str, Value)], checks: &[(&str, f64)]) -> ScenarioConfig {
    let mut v = bundled_json(base);
    for (ptr, val) in overrides {
        let (parent, key) = ptr.rsplit_once('/').unwrap();
        let obj = v.pointer_mut(parent).and_then(Value::as_object_mut).unwrap_or_else(|| panic!("{ptr}"));
        obj.insert(key.to_string(), val.clone());
    }
    v["checks"] = checks.iter().map(|(n, t)| json!({ "name": n, "tolerance": t })).collect();
    ScenarioConfig::from_json(&v.to_string()).unwrap()
}

fn run(cfg: &ScenarioConfig) -> RunOutcome {
    let out = run_scenario(cfg, None).unwrap();
    assert!(!out.guard_tripped(), "{:?}", out.manifest.guard);
    out
}

fn metric(out: &RunOutcome, check: &str, key: &str) -> f64 {
    let c = out.manifest.checks.iter().find(|c| c.name == check).unwrap_or_else(|| panic!("{check}"));
    *c.metrics.get(key).unwrap_or_else(|| panic!("{check}.{key}"))
}

fn check_passed(out: &RunOutcome, check: &str) -> bool {
    out.manifest.checks.iter().find(|c| c.name == check).unwrap().passed
}

fn criterion_1() -> Outcome {
    let mut milnor = 0.0f64;
    for base in ["round_soliton", "berger"] {
        let out = run(&config(base, &[], &[("lichnerowicz_metric", 1e-12)]));
        milnor = milnor.max(metric(&out, "lichnerowicz_metric", "endomorphism"));
        milnor = milnor.max(metric(&out, "lichnerowicz_metric", "covariant"));
    }
    let torus = run(&config(
        "perturbed_torus",
        &[("/backend/scheme", json!("fd4")), ("/backend/n", json!(16)), ("/dt", json!(0.002))],
        &[("lichnerowicz_metric", 1e-12)],
    ));
    let mut detail = format!("milnor max residual {milnor:.2e}");
    let mut ok = milnor <= 1e-12;
    for form in ["endomorphism", "covariant"] {
        let res = metric(&torus, "lichnerowicz_metric", form);
        let order = metric(&torus, "lichnerowicz_metric", &format!("{form}_order"));
        ok &= res <= 1e-12 || order >= 3.5;
        if res <= 1e-12 {
            detail += &format!("; torus {form} residual {res:.2e} (roundoff)");
        } else {
            detail += &format!("; torus {form} order {order:.2} (N 24->32)");
        }
    }
    outcome(ok, detail)
}

fn criterion_2() -> Outcome {
    let out = run(&config(
        "round_soliton",
        &[("/beta_star", json!(0.1)), ("/dt", json!(1e-4))],
        &[("soliton_radius", 1e-10)],
    ));
    let e = metric(&out, "soliton_radius", "endpoint_error");
    outcome(e <= 1e-10, format!("max |A - (1 - 4 beta)| = {e:.2e} at beta* = 0.1"))
}

fn criterion_3() -> Outcome {
    let chart = Chart::Milnor;
    let g0 = MilnorMetric::new(1.2, 1.0, 1.0).unwrap().field();
    let res = |dt: f64| {
        ricci_lichnerowicz_residual(&integrate_ricci(&chart, &g0, FlowOptions::new(0.01, dt)).unwrap()).unwrap()
    };
    let (coarse, fine) = (res(2e-4), res(1e-4));
    let order = observed_order(coarse, fine, 2.0);
    outcome(
        fine <= 1e-6 && (1.8..=2.2).contains(&order),
        format!("residual {fine:.2e} at dt 1e-4, {coarse:.2e} at dt 2e-4, order {order:.2}"),
    )
}

fn criterion_4() -> Outcome {
    let mut ok = true;
    let mut detail = String::new();
    let mut milnor = 0.0f64;
    for base in ["round_soliton", "berger"] {
        let out = run(&config(base, &[], &[("conjugate_pairings", 1e-8)]));
        for key in ["h_tilde", "ricci", "metric_minus_ricci"] {
            milnor = milnor.max(metric(&out, "conjugate_pairings", key));
        }
    }
    ok &= milnor <= 1e-8;
    detail += &format!("milnor max drift {milnor:.2e}");
    // Fd4 shows a truncation drift; the Fourier scheme conserves at roundoff
    let torus = |scheme: &str, n: usize, dt: f64| {
        run(&config(
            "perturbed_torus",
            &[("/backend/scheme", json!(scheme)), ("/backend/n", json!(n)), ("/dt", json!(dt))],
            &[("conjugate_pairings", 1.0)],
        ))
    };
    let runs = [torus("fd4", 16, 0.002), torus("fd4", 24, 0.002 / 1.5)];
    let spectral = torus("fourier", 24, 0.002);
    for key in ["h_tilde", "ricci", "metric_minus_ricci"] {
        let (a, b) = (metric(&runs[0], "conjugate_pairings", key), metric(&runs[1], "conjugate_pairings", key));
        let order = observed_order(a, b, 1.5);
        let s = metric(&spectral, "conjugate_pairings", key);
        ok &= (order >= 2.0 || b <= 1e-12) && s <= 1e-12;
        if b <= 1e-12 {
            detail += &format!("; fd4 {key} {a:.1e} -> {b:.1e} (roundoff)");
        } else {
            detail += &format!("; fd4 {key} {a:.2e} -> {b:.2e} (order {order:.2})");
        }
        detail += &format!(", fourier N = 24 {s:.1e}");
    }
    outcome(ok, detail)
}

fn criterion_5() -> Outcome {
    let out = run(&config(
        "perturbed_torus",
        &[("/backend/n", json!(24)), ("/dt", json!(0.002))],
        &[("divergence_free", 3.0)],
    ));
    let g = metric(&out, "divergence_free", "conjugate_growth");
    let f = metric(&out, "divergence_free", "forward_growth");
    let floor = metric(&out, "divergence_free", "floor");
    outcome(
        check_passed(&out, "divergence_free"),
        format!("N = 24: floor {floor:.2e}, conjugate max/floor {g:.2}, forward max/floor {f:.2e}"),
    )
}

fn criterion_6() -> Outcome {
    let res = |dt: f64| {
        let out = run(&config("perturbed_torus", &[("/dt", json!(dt))], &[("monotonicity", 1.0)]));
        metric(&out, "monotonicity", "relative_residual")
    };
    let (coarse, fine) = (res(0.002), res(0.001));
    let order = observed_order(coarse, fine, 2.0);
    let flat = run(&config("flat_torus", &[], &[("monotonicity", 1e-6)]));
    let decreasing = metric(&flat, "monotonicity", "nonincreasing") == 1.0;
    outcome(
        order >= 2.0 && decreasing,
        format!(
            "perturbed residual {coarse:.2e} -> {fine:.2e} (order {order:.2}); flat energy nonincreasing: {decreasing}"
        ),
    )
}

fn criterion_7() -> Outcome {
    let cfg = config(
        "flat_torus",
        &[
            ("/backend/n", json!(32)),
            ("/beta_star", json!(0.05)),
            ("/dt", json!(0.0025)),
            ("/kernel/sigma", json!(0.6)),
        ],
        &[("kernel_theta", 1e-6), ("kernel_positivity", 1e-12)],
    );
    let out = run(&cfg);
    let err = metric(&out, "kernel_theta", "relative_error");
    let min = metric(&out, "kernel_positivity", "min_value");
    outcome(
        check_passed(&out, "kernel_theta") && check_passed(&out, "kernel_positivity"),
        format!("N = 32, eta = 0.05: theta relative error {err:.2e}; min quadratic form over 100 vectors {min:.3e}"),
    )
}

fn representations(n: usize, sigma: f64) -> (RepresentationReport, RepresentationReport) {
    let chart = torus_chart(n, 2.0 * std::f64::consts::PI, Scheme::Fourier).unwrap();
    let g0 = perturbed_metric(&chart, 0.05).unwrap();
    let traj = integrate_ricci(&chart, &g0, FlowOptions::new(0.02, 0.002)).unwrap();
    let back = traj.backward();
    let cols = evolve_kernel_slot(&back, [1.0, 2.0, 0.5], sigma).unwrap();
    (ricci_representation_check(&back, &cols).unwrap(), metric_representation_check(&back, &cols).unwrap())
}

fn criterion_8() -> Outcome {
    let (ric24, met24) = representations(24, 0.8);
    let drift = ric24.max_rel_drift.max(met24.max_rel_drift);
    let mut ok = drift <= 1e-6;
    let mut detail = format!("N = 24 drifts: ricci {:.2e}, metric {:.2e}", ric24.max_rel_drift, met24.max_rel_drift);
    let sigmas = [1.6, 0.8, 0.4];
    let study: Vec<_> = sigmas.iter().map(|&s| representations(32, s)).collect();
    for (name, pick) in [("ricci", 0usize), ("metric", 1usize)] {
        let errs: Vec<f64> =
            study.iter().map(|r| if pick == 0 { r.0.max_endpoint_error } else { r.1.max_endpoint_error }).collect();
        let order = observed_order(errs[1], errs[2], 2.0);
        ok &= order >= 1.8;
        detail += &format!(
            "; N = 32 {name} endpoint errors {} (sigma-order {order:.2})",
            errs.iter().map(|e| format!("{e:.2e}")).collect::<Vec<_>>().join(", ")
        );
    }
    outcome(ok, detail)
}

fn criterion_9() -> Outcome {
    let out = run(&config("round_soliton", &[("/beta_star", json!(0.1))], &[("sphere_normalization", 1e-8)]));
    let dev = metric(&out, "sphere_normalization", "max_deviation");
    outcome(dev <= 1e-8, format!("T0 = 0.25, beta* = 0.1: max |value - 1| = {dev:.2e}"))
}

fn criterion_10() -> Outcome {
    let out = run(&config("round_soliton", &[], &[("parametrix_radial", 1e-8)]));
    let slope = run(&config("perturbed_torus", &[], &[("volterra_slope", 0.4)]));
    let s = metric(&slope, "volterra_slope", "slope");
    outcome(
        check_passed(&out, "parametrix_radial") && s >= 0.4,
        format!(
            "phi0 error {:.2e}; phi1 fit deviation static {:.2e}, expanding {:.2e}; Volterra slope {s:.3}",
            metric(&out, "parametrix_radial", "phi0_error"),
            metric(&out, "parametrix_radial", "phi1_fit_static"),
            metric(&out, "parametrix_radial", "phi1_fit_expanding"),
        ),
    )
}

fn criterion_11() -> Outcome {
    let good = run(&config("constraint_demo", &[], &[("constraint_pair", 1e-12)]));
    let bad = run(&config("constraint_demo", &[("/constraint/fault", json!(1.1))], &[("constraint_pair", 1e-12)]));
    let verdict = |o: &RunOutcome| o.manifest.checks[0].note.clone().unwrap_or_default();
    let drift = ["drift_h_tilde", "drift_ricci", "drift_scalar"]
        .iter()
        .fold(0.0f64, |m, k| m.max(metric(&good, "constraint_pair", k)));
    let res =
        metric(&good, "constraint_pair", "forward_residual").max(metric(&good, "constraint_pair", "backward_residual"));
    outcome(
        check_passed(&good, "constraint_pair") && verdict(&good) == "conjugated" && verdict(&bad) == "not conjugated",
        format!("max drift {drift:.2e}, max residual {res:.2e}; fault verdict \"{}\"", verdict(&bad)),
    )
}

fn criterion_12() -> Outcome {
    let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let eight = rayon::ThreadPoolBuilder::new().num_threads(8).build().unwrap();
    let mut differing = vec![];
    let configs = bundled().unwrap();
    for cfg in &configs {
        let a = one.install(|| run_scenario(cfg, None).unwrap().table.to_bytes().unwrap());
        let b = eight.install(|| run_scenario(cfg, None).unwrap().table.to_bytes().unwrap());
        if a != b {
            differing.push(cfg.name.clone());
        }
    }
    outcome(differing.is_empty(), format!("{} bundled scenarios, differing: {differing:?}", configs.len()))
}

fn main() {
    // `cargo test -- --list` and filters are not meaningful for this target
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let criteria: [Criterion; 12] = [
        ("Lichnerowicz Laplacian of the metric", criterion_1),
        ("round-sphere soliton radius", criterion_2),
        ("Ricci evolution by the Lichnerowicz Laplacian", criterion_3),
        ("conjugate pairing conservation", criterion_4),
        ("divergence-free invariance", criterion_5),
        ("monotonicity identity", criterion_6),
        ("flat kernel ground truth and positivity", criterion_7),
        ("integral representations", criterion_8),
        ("sphere normalization", criterion_9),
        ("parametrix", criterion_10),
        ("constraint conjugation", criterion_11),
        ("determinism across thread counts", criterion_12),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let o = f();
        let verdict = if o.passed { "PASS" } else { "FAIL" };
        failed += usize::from(!o.passed);
        println!("criterion {:>2} {verdict} {name} [{:.1}s]: {}", i + 1, t.elapsed().as_secs_f64(), o.detail);
    }
    println!("acceptance: {} of 12 criteria passed", 12 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
