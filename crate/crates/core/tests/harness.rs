use haes::algorithms::{build_case1, quasi_optimal_tmax, Algorithm, HaesConfig};
use haes::costs::{builtin, Builtin};
use haes::harness::{
    perturb, preset, run_config, run_experiment, sweep, DisturbanceSpec, ErrorMeasure, ExperimentConfig, Preset,
    SweepParam,
};
use haes::hybrid::HybridSystem;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

fn short_quartic() -> ExperimentConfig {
    preset(Preset::QuarticComparison)
        .with_overrides(&json!({"solve": {"t_max": 30.0}, "keep_arcs": false}))
        .unwrap()
}

#[test]
fn zero_disturbance_leaves_the_flow_unchanged() {
    let (cost, _) = builtin(Builtin::Quartic, 0).unwrap();
    let cfg = HaesConfig::new(Algorithm::Case1, 0.01, 0.02);
    let plain = build_case1(&cfg, &cost).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for waveform in [DisturbanceSpec::square(0.0, 10.0), DisturbanceSpec::sine(0.0, 3.0), DisturbanceSpec::constant(0.0)] {
        let noisy = perturb(plain.clone(), &waveform).unwrap();
        assert_eq!(noisy.dim(), plain.dim() + 1);
        for _ in 0..100 {
            let angle: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            let x = [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), rng.random_range(0.01..25.0), angle.cos(), angle.sin()];
            let mut xc = x.to_vec();
            xc.push(rng.random_range(0.0..1e4));
            let (mut a, mut b) = (vec![0.0; 5], vec![0.0; 6]);
            plain.flow_map(&x, &mut a);
            noisy.flow_map(&xc, &mut b);
            assert_eq!(a[..], b[..5]);
            assert_eq!(b[5], 1.0);
        }
    }
}

#[test]
fn disturbance_shapes() {
    let sq = DisturbanceSpec::square(1e-2, 1e4);
    assert_eq!(sq.value(100.0), 1e-2);
    assert_eq!(sq.value(7500.0), -1e-2);
    assert!(DisturbanceSpec::sine(0.4, 6.0).value(3.0).abs() < 1e-15);
    assert_eq!(DisturbanceSpec::none().value(12.0), 0.0);
}

#[test]
fn disturbance_enters_the_probe_term() {
    let (cost, _) = builtin(Builtin::Quartic, 0).unwrap();
    let cfg = HaesConfig::new(Algorithm::Case1, 0.01, 0.02);
    let noisy = perturb(build_case1(&cfg, &cost).unwrap(), &DisturbanceSpec::constant(0.3)).unwrap();
    // At x1 = 1 the probe φ(1 + 0.01) is negligible next to the disturbance.
    let x = [1.0, 1.0, 2.0, 1.0, 0.0, 5.0];
    let mut dx = vec![0.0; 6];
    noisy.flow_map(&x, &mut dx);
    let expected = -4.0 / 0.01 * 2.0 * (cost.phi(&[1.01]) + 0.3);
    assert!((dx[1] - expected).abs() < 1e-12);
}

#[test]
fn metrics_are_deterministic() {
    let cfg = short_quartic();
    let a = run_config(&cfg).unwrap();
    let b = run_config(&cfg).unwrap();
    for (x, y) in a.runs.iter().zip(&b.runs) {
        assert_eq!(x.metrics, y.metrics);
    }
}

#[test]
fn tiny_disturbance_barely_moves_metrics() {
    let base = short_quartic();
    let clean = run_config(&base).unwrap();
    let mut noisy_cfg = base.clone();
    noisy_cfg.disturbance = Some(DisturbanceSpec::square(1e-12, 10.0));
    let noisy = run_config(&noisy_cfg).unwrap();
    for (x, y) in clean.runs.iter().zip(&noisy.runs) {
        assert!((x.metrics.final_error - y.metrics.final_error).abs() < 1e-8);
        assert_eq!(x.metrics.jump_count, y.metrics.jump_count);
    }
    let mut zero_cfg = base.clone();
    zero_cfg.disturbance = Some(DisturbanceSpec::square(0.0, 10.0));
    let zero = run_config(&zero_cfg).unwrap();
    for (x, y) in clean.runs.iter().zip(&zero.runs) {
        assert_eq!(x.metrics.final_error, y.metrics.final_error);
    }
}

#[test]
fn single_value_sweep_matches_direct_run() {
    let base = short_quartic();
    let rows = sweep(SweepParam::TMax, &[25.0], &base).unwrap();
    assert_eq!(rows.len(), 1);
    let direct = run_config(&base).unwrap();
    for r in &direct.runs {
        assert_eq!(&rows[0].runs[&r.label], &r.metrics);
    }
    assert!(sweep(SweepParam::K, &[], &base).is_err());
}

#[test]
fn quasi_optimal_restart_is_near_the_best_in_a_grid() {
    let base = preset(Preset::SphereRestart)
        .with_overrides(&json!({"solve": {"t_max": 60.0}, "metrics": {"thresholds": [1e-4]}}))
        .unwrap();
    let star = quasi_optimal_tmax(0.25, 0.5, 0.1).unwrap();
    let grid: Vec<f64> = [0.4, 0.6, 0.8, 1.0, 1.25, 1.6, 2.2].iter().map(|f| f * star).collect();
    let rows = sweep(SweepParam::TMax, &grid, &base).unwrap();
    let times: Vec<f64> = rows.iter().map(|r| r.runs["haes"].time_to(1e-4).unwrap_or(f64::INFINITY)).collect();
    let best = times.iter().copied().fold(f64::INFINITY, f64::min);
    let at_star = times[3];
    assert!(best.is_finite());
    assert!(at_star <= 2.0 * best, "{at_star} vs best {best}: {times:?}");
}

#[test]
fn restart_instants_follow_the_recursion_bound() {
    let res = run_experiment(Preset::SphereRestart, &json!({"keep_arcs": false})).unwrap();
    let m = &res.runs[0].metrics;
    let cfg = &res.runs[0].config;
    let f = haes::algorithms::contraction_factors(cfg, 0.5).unwrap();
    let s0 = m.initial_error;
    assert!(m.jump_count >= 5);
    for (j, s) in m.errors_at_jumps.iter().enumerate() {
        let bound = f.alpha0 * f.gamma_tilde.powi(j as i32 + 1) * s0 + 0.05;
        assert!(*s <= bound, "j = {j}: {s} > {bound}");
    }
}

#[test]
fn trajectory_rows_expose_derived_columns() {
    let res = run_experiment(Preset::QuarticComparison, &json!({"solve": {"t_max": 3.0}})).unwrap();
    let run = res.run("haes").unwrap();
    let first = run.rows().next().unwrap();
    assert_eq!((first.t, first.j, first.x1[0]), (0.0, 0, 2.0));
    assert!((first.z[0] - 2.01).abs() < 1e-15);
    assert!((first.subopt - 0.25 * 1.01f64.powi(4)).abs() < 1e-12);
    assert_eq!(res.manifest["runs"][0]["algorithm"]["T_max"], json!(25.0));
}

#[test]
fn measure_validation() {
    let mut cfg = short_quartic();
    cfg.metrics.measure = ErrorMeasure::ComponentAbs { index: 3 };
    assert!(run_config(&cfg).is_err());
    cfg.metrics.measure = ErrorMeasure::SaddleDistance;
    assert!(run_config(&cfg).is_err());
    let bad = preset(Preset::QuarticComparison).with_overrides(&json!({"runs": {"haes": {"T_med": 0.001}}}));
    let err = bad.and_then(|c| run_config(&c).map(|_| ())).unwrap_err();
    assert!(err.to_string().contains("T_med − T_min > 0"), "{err}");
}
