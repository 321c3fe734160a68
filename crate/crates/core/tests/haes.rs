use haes::algorithms::{
    build, build_case1, build_case2, build_case3, build_case4, build_grad_es, contraction_factors, dwell_condition,
    quasi_optimal_tmax, Algorithm, HaesConfig, HaesSystem,
};
use haes::average::build_average;
use haes::costs::{builtin, Builtin, ConstraintData, CostProblem};
use haes::dither::common_period;
use haes::hybrid::{solve, HybridSystem, SolveSpec};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn cost(b: Builtin) -> (CostProblem, Option<ConstraintData>) {
    builtin(b, 0).unwrap()
}

fn flow(sys: &HaesSystem, x: &[f64]) -> Vec<f64> {
    let mut dx = vec![0.0; sys.dim()];
    sys.flow_map(x, &mut dx);
    dx
}

#[test]
fn flows_touch_only_the_zero_order_oracle() {
    let cases: Vec<(HaesConfig, Builtin)> = vec![
        (HaesConfig::new(Algorithm::Case1, 0.01, 0.02).with_timer(0.01, 2.0, 3.0), Builtin::Quartic),
        (
            {
                let mut c = HaesConfig::new(Algorithm::Case2, 0.01, 1e-3).with_timer(0.1, 3.0, 3.0);
                c.k = 0.25;
                c
            },
            Builtin::Sphere2,
        ),
        (HaesConfig::new(Algorithm::Case3, 5e-3, 1e-3), Builtin::Eqcon),
        (HaesConfig::new(Algorithm::Case4, 5e-3, 1e-3), Builtin::Ineqcon),
        (HaesConfig::new(Algorithm::GradEs, 0.01, 0.02), Builtin::Quartic),
    ];
    for (cfg, b) in cases {
        let (c, con) = cost(b);
        let (counted, counts) = c.instrumented();
        let sys = build(&cfg, &counted, con.as_ref()).unwrap();
        let x0 = sys.initial_state(&vec![0.3; c.n], None, None).unwrap();
        let arc = solve(&sys, &x0, &SolveSpec::new(1e-4, 8.0)).unwrap();
        let (phi, grad, hess) = counts.get();
        assert!(phi > 0, "{b}");
        assert_eq!((grad, hess), (0, 0), "{:?} on {b}", cfg.case);
        if cfg.case == Algorithm::Case1 || cfg.case == Algorithm::Case2 {
            assert!(arc.jump_count() > 0);
        }
    }
}

fn assert_timer_profile(sys: &HaesSystem, x0: &[f64], f_tau: f64, t_min: f64, h: f64, horizon: f64) {
    let arc = solve(sys, x0, &SolveSpec::new(h, horizon)).unwrap();
    assert!(arc.jump_count() >= 2);
    let tau = sys.layout().tau();
    for seg in &arc.segments[1..] {
        let tj = seg.first_time().unwrap();
        for (i, &t) in seg.times.iter().enumerate() {
            let expected = t_min + f_tau * (t - tj);
            assert!((seg.state(i, arc.dim)[tau] - expected).abs() <= h, "t = {t}");
        }
    }
}

#[test]
fn timer_grows_linearly_between_jumps() {
    let (q, _) = cost(Builtin::Quartic);
    let cfg = HaesConfig::new(Algorithm::Case1, 0.01, 0.02).with_timer(0.01, 1.5, 2.0);
    let sys = build_case1(&cfg, &q).unwrap();
    assert_timer_profile(&sys, &sys.initial_state(&[2.0], None, None).unwrap(), 0.5, 0.01, 1e-3, 12.0);

    let mut fast = cfg.clone();
    fast.f_tau = 1.0;
    fast.k1 = 0.2;
    let sys = build_case1(&fast, &q).unwrap();
    assert_timer_profile(&sys, &sys.initial_state(&[2.0], None, None).unwrap(), 1.0, 0.01, 1e-3, 12.0);

    let (s, _) = cost(Builtin::Sphere2);
    let mut c2 = HaesConfig::new(Algorithm::Case2, 0.01, 1e-3).with_timer(0.1, 2.0, 2.0);
    c2.k = 0.25;
    let sys = build_case2(&c2, &s).unwrap();
    assert_timer_profile(&sys, &sys.initial_state(&[1.0, 1.0], None, None).unwrap(), 0.5, 0.1, 1e-4, 15.0);
}

#[test]
fn momentum_restart_copies_position_exactly() {
    let (s, _) = cost(Builtin::Illcond2);
    let mut cfg = HaesConfig::new(Algorithm::Case2, 0.01, 1e-3).with_timer(0.1, 2.0, 2.0);
    cfg.k = 0.25;
    let sys = build_case2(&cfg, &s).unwrap();
    let l = sys.layout();
    let x0 = sys.initial_state(&[1.0, 1.0], Some(&[0.0, 3.0]), None).unwrap();
    let arc = solve(&sys, &x0, &SolveSpec::new(1e-4, 20.0)).unwrap();
    assert!(arc.jump_count() >= 4);
    for r in &arc.jumps {
        assert_eq!(r.after[l.x2()], r.after[l.x1()]);
        assert_eq!(r.after[l.x1()], r.before[l.x1()]);
        assert_eq!(r.after[l.tau()], 0.1);
    }
    for g in arc.inter_jump_times().iter().skip(1) {
        assert!((g - 2.0 * (2.0 - 0.1)).abs() <= 1e-4 + 1e-9, "{g}");
    }
}

#[test]
fn momentum_vanishes_after_restart() {
    let (s, _) = cost(Builtin::Sphere2);
    let mut cfg = HaesConfig::new(Algorithm::Case2, 0.01, 1e-3).with_timer(0.1, 27.0, 27.0);
    cfg.k = 0.25;
    let sys = build_case2(&cfg, &s).unwrap();
    let x = sys.initial_state(&[0.4, -0.2], None, Some(27.0)).unwrap();
    let mut after = vec![0.0; x.len()];
    sys.jump_map(&x, &mut after);
    let dx = flow(&sys, &after);
    assert_eq!(dx[..2], [0.0, 0.0]);
}

/// Mean of `ẋ1` over one common dither period with `x1` frozen.
fn windowed_drift(sys: &HaesSystem, x1: &[f64]) -> Vec<f64> {
    let l = sys.layout();
    let period = common_period(&sys.dither().kappas).unwrap() * sys.config().epsilon;
    let samples = 20_000 * common_period(&sys.dither().kappas).unwrap() as usize;
    let x0 = sys.initial_state(x1, None, None).unwrap();
    let mut acc = vec![0.0; l.n];
    let mut x = x0.clone();
    for i in 0..samples {
        // Periodic integrand: the rectangle rule is spectrally accurate.
        sys.dither().rotation(period * i as f64 / samples as f64).apply(&x0[l.mu()], &mut x[l.mu()]);
        let dx = flow(sys, &x);
        for (a, d) in acc.iter_mut().zip(&dx[l.x1()]) {
            *a += d / samples as f64;
        }
    }
    acc
}

#[test]
fn gradient_es_drift_averages_to_scaled_gradient() {
    for (b, x1, k) in [(Builtin::Quartic, vec![2.0], 1.0), (Builtin::Sphere2, vec![1.0, -0.5], 0.7)] {
        let (c, _) = cost(b);
        let mut cfg = HaesConfig::new(Algorithm::GradEs, 1e-3, 1e-2);
        cfg.k = k;
        let sys = build_grad_es(&cfg, &c).unwrap();
        let drift = windowed_drift(&sys, &x1);
        let grad = c.grad(&x1).unwrap();
        for (d, g) in drift.iter().zip(&grad) {
            let target = -k * g;
            assert!((d - target).abs() <= 0.05 * target.abs(), "{b}: {d} vs {target}");
        }
    }
    let flat = CostProblem::new("flat", 2, |_| 3.0);
    let sys = build_grad_es(&HaesConfig::new(Algorithm::GradEs, 1e-2, 1e-2), &flat).unwrap();
    assert!(windowed_drift(&sys, &[0.3, 0.1]).iter().all(|d| d.abs() < 1e-9));
}

#[test]
fn equality_case_is_stationary_at_the_saddle() {
    let (c, con) = cost(Builtin::Eqcon);
    let con = con.unwrap();
    let cfg = HaesConfig::new(Algorithm::Case3, 5e-3, 1e-3);
    let avg = build_average(&cfg, &c, Some(&con)).unwrap();
    // λ = 2/3 and ẋ1 = −∇φ − kAᵀx2, so the dual state rests at λ/k.
    let y = avg.initial_state(&[4.0 / 3.0, -1.0 / 3.0], Some(&[2.0 / 3.0 / cfg.k]), None);
    let mut dy = vec![0.0; y.len()];
    avg.flow_map(&y, &mut dy);
    assert!(dy.iter().all(|v| v.abs() <= 1e-8), "{dy:?}");

    let sys = build_case3(&cfg, &c, &con).unwrap();
    let x = sys.initial_state(&[0.25, 0.75], Some(&[1.0]), None).unwrap();
    assert_eq!(flow(&sys, &x)[2], 0.0);
    let arc = solve(&sys, &x, &SolveSpec::new(1e-4, 2.0)).unwrap();
    assert_eq!(arc.jump_count(), 0);
    assert_eq!(arc.segments.len(), 1);
}

#[test]
fn augmented_multiplier_flow() {
    let (c, _) = cost(Builtin::Ineqcon);
    let con = ConstraintData::new(DMatrix::from_row_slice(1, 2, &[1.0, 0.0]), DVector::from_vec(vec![1.0])).unwrap();
    let sys = build_case4(&HaesConfig::new(Algorithm::Case4, 5e-3, 1e-3), &c, &con).unwrap();
    let x2 = sys.layout().x2().start;
    // H = max(2 − 1 + 0.5, 0) = 1.5, so ẋ2 = H − x2 = 1.
    let x = sys.initial_state(&[2.0, 0.0], Some(&[0.5]), None).unwrap();
    assert!((flow(&sys, &x)[x2] - 1.0).abs() < 1e-15);
    // H = max(−1, 0) = 0.
    let x = sys.initial_state(&[0.0, 0.0], Some(&[0.0]), None).unwrap();
    assert_eq!(flow(&sys, &x)[x2], 0.0);
    // Inactive constraint: pure decay.
    let x = sys.initial_state(&[-3.0, 0.0], Some(&[0.8]), None).unwrap();
    assert!((flow(&sys, &x)[x2] + 0.8).abs() < 1e-15);
    let arc = solve(&sys, &x, &SolveSpec::new(1e-4, 1.0)).unwrap();
    assert_eq!(arc.jump_count(), 0);
}

#[test]
fn restart_tuning_arithmetic() {
    assert!((quasi_optimal_tmax(0.25, 0.5, 0.0).unwrap() - 2.0 * std::f64::consts::E).abs() < 1e-12);
    assert!((quasi_optimal_tmax(0.25, 0.02, 0.1).unwrap() - 27.184).abs() < 1e-3);
    let (k, th) = (0.3, 0.7);
    assert!((quasi_optimal_tmax(k, th, 0.0).unwrap() - std::f64::consts::E / (2.0 * k * th).sqrt()).abs() < 1e-12);
    assert!(quasi_optimal_tmax(0.0, 1.0, 0.1).is_err());
    assert!(quasi_optimal_tmax(1.0, -1.0, 0.1).is_err());

    assert!(dwell_condition(0.1, 27.0, 0.25, 0.02));
    let mut cfg = HaesConfig::new(Algorithm::Case2, 0.01, 1e-3).with_timer(0.1, 27.0, 27.0);
    cfg.k = 0.25;
    let f = contraction_factors(&cfg, 0.02).unwrap();
    assert!((f.gamma_tilde - 0.137_19).abs() < 1e-5, "{}", f.gamma_tilde);
    assert!((f.alpha0 - 72_900.0).abs() < 1e-6);
    assert!((f.gamma_tilde - (1.0 - f.gamma)).abs() < 1e-14);
    assert!(f.contracts());
    let mut zero = cfg.clone();
    zero.t_min = 0.0;
    assert!(contraction_factors(&zero, 0.02).is_err());
}

#[test]
fn invalid_configs_name_the_condition() {
    let (q, _) = cost(Builtin::Quartic);
    let err = build_case1(&HaesConfig::new(Algorithm::Case1, 0.01, 0.02).with_timer(0.5, 0.5, 25.0), &q).unwrap_err();
    assert!(err.to_string().contains("T_med − T_min > 0"), "{err}");
    let err = build_case1(&HaesConfig::new(Algorithm::Case1, -1.0, 0.02), &q).unwrap_err();
    assert!(err.to_string().contains("a > 0"), "{err}");
    let err = build_case2(&HaesConfig::new(Algorithm::Case2, 0.01, 0.02).with_timer(0.1, 1.0, 2.0), &q).unwrap_err();
    assert!(err.to_string().contains("T_med = T_max"), "{err}");
    let err = build_grad_es(&HaesConfig::new(Algorithm::Case1, 0.01, 0.02), &q).unwrap_err();
    assert!(matches!(err, haes::Error::Config(_)));
    let (e, _) = cost(Builtin::Eqcon);
    let rank1 = ConstraintData::new(DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]), DVector::zeros(2));
    assert!(rank1.is_err());
    assert!(build(&HaesConfig::new(Algorithm::Case3, 0.01, 0.02), &e, None).is_err());
}

proptest! {
    #[test]
    fn contraction_iff_dwell(
        t_min in 0.01f64..2.0,
        span in 0.01f64..40.0,
        k in 0.01f64..5.0,
        theta in 0.01f64..5.0,
    ) {
        let t_max = t_min + span;
        let mut cfg = HaesConfig::new(Algorithm::Case2, 0.01, 1e-3).with_timer(t_min, t_max, t_max);
        cfg.k = k;
        let f = contraction_factors(&cfg, theta).unwrap();
        let lhs = t_max * t_max - t_min * t_min;
        let rhs = 1.0 / (2.0 * theta * k);
        // Skip razor-thin boundary cases where rounding decides.
        prop_assume!((lhs - rhs).abs() > 1e-9 * rhs.max(1.0));
        prop_assert_eq!(f.contracts(), dwell_condition(t_min, t_max, k, theta));
        prop_assert!((f.gamma_tilde + f.gamma - 1.0).abs() < 1e-12);
    }

    #[test]
    fn restart_always_equalises_states(
        x1 in prop::collection::vec(-3.0f64..3.0, 2),
        x2 in prop::collection::vec(-3.0f64..3.0, 2),
    ) {
        let (s, _) = cost(Builtin::Sphere2);
        let mut cfg = HaesConfig::new(Algorithm::Case2, 0.01, 1e-3).with_timer(0.1, 5.0, 5.0);
        cfg.k = 0.25;
        let sys = build_case2(&cfg, &s).unwrap();
        let x = sys.initial_state(&x1, Some(&x2), Some(5.0)).unwrap();
        prop_assert!(sys.in_jump_set(&x));
        let mut out = vec![0.0; x.len()];
        sys.jump_map(&x, &mut out);
        prop_assert_eq!(&out[0..2], &x1[..]);
        prop_assert_eq!(&out[2..4], &x1[..]);
        prop_assert_eq!(out[4], 0.1);
        prop_assert_eq!(&out[5..], &x[5..]);
    }
}
