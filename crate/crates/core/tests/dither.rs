use haes::dither::{
    common_period, common_period_exact, default_kappas, dither_advance, extract_probe, verify_average, DitherParams,
    DitherState, Rational,
};
use proptest::prelude::*;

fn r(p: u64, q: u64) -> Rational {
    Rational::new(p, q).unwrap()
}

fn params(kappas: Vec<Rational>, eps: f64) -> DitherParams {
    DitherParams::new(kappas, eps).unwrap()
}

#[test]
fn closed_form_examples() {
    let p = params(vec![r(1, 1)], 1.0);
    let s = DitherState::initial(1);
    let full = dither_advance(&s, 1.0, &p);
    assert!((full.mu[0] - 1.0).abs() < 1e-15 && full.mu[1].abs() < 1e-15);
    let quarter = dither_advance(&s, 0.25, &p);
    assert!(quarter.mu[0].abs() < 1e-15 && (quarter.mu[1] + 1.0).abs() < 1e-15);
    assert_eq!(dither_advance(&s, 0.0, &p), s);
}

#[test]
fn probe_selection() {
    assert_eq!(extract_probe(&DitherState::new(vec![1.0, 0.0], 1e-12).unwrap()), vec![1.0]);
    assert_eq!(extract_probe(&DitherState::new(vec![0.0, -1.0, 1.0, 0.0], 1e-12).unwrap()), vec![0.0, 1.0]);
}

#[test]
fn appendix_periods() {
    assert_eq!(common_period_exact(&[r(1, 1)]).unwrap(), 1);
    assert_eq!(common_period_exact(&[r(1, 2), r(1, 3)]).unwrap(), 6);
    assert_eq!(common_period_exact(&["2.54".parse().unwrap()]).unwrap(), 50);
    assert!(common_period(&[]).is_err());
}

#[test]
fn averaging_identities_on_reference_sets() {
    let sets: Vec<Vec<Rational>> = vec![
        vec![r(1, 1)],
        vec![r(1, 2), r(1, 3)],
        vec![r(127, 50)],
        vec![r(1, 2), r(1, 3), r(5, 7)],
    ];
    for kappas in sets {
        let p = params(kappas.clone(), 1e-3);
        let period = common_period(&kappas).unwrap();
        // At least 1e4 points per unit period of the slowest oscillator.
        let grid = (1e4 * kappas.iter().map(Rational::to_f64).fold(1.0, f64::max)).ceil() as usize;
        for n in 1..=3 {
            let res = verify_average(&p, n, grid).unwrap();
            assert!(res.matrix_max() <= 1e-6, "{kappas:?} N={n} T={period}: {}", res.matrix_max());
            assert!(res.vector_max() <= 1e-6, "{kappas:?} N={n}: {}", res.vector_max());
        }
    }
}

#[test]
fn fine_grid_residuals() {
    let one = verify_average(&params(vec![r(1, 1)], 1.0), 1, 2000).unwrap();
    assert!(one.matrix_max() <= 1e-8 && one.vector_max() <= 1e-8);
    let pair = verify_average(&params(vec![r(1, 2), r(1, 3)], 1.0), 2, 2000).unwrap();
    assert!(pair.off_diagonal_max() <= 1e-8);
    let single = verify_average(&params(vec![r(127, 50)], 1.0), 1, 2000).unwrap();
    assert!(single.matrix_max() <= 1e-8 && single.vector_max() <= 1e-8);
}

#[test]
fn default_kappas_satisfy_assumptions() {
    for n in 1..=12 {
        let k = default_kappas(n);
        assert_eq!(k.len(), n);
        assert!(DitherParams::new(k, 1e-3).is_ok());
    }
}

fn kappa_set() -> impl Strategy<Value = Vec<Rational>> {
    prop::collection::btree_set((1u64..12, 1u64..12), 1..4).prop_filter_map("distinct", |pairs| {
        let mut ks: Vec<Rational> = pairs.into_iter().map(|(p, q)| r(p, q)).collect();
        ks.sort_by(|a, b| a.to_f64().total_cmp(&b.to_f64()));
        let before = ks.len();
        ks.dedup();
        (ks.len() == before).then_some(ks)
    })
}

fn state(angles: &[f64]) -> DitherState {
    DitherState { mu: angles.iter().flat_map(|a| [a.cos(), a.sin()]).collect() }
}

fn max_gap(a: &DitherState, b: &DitherState) -> f64 {
    a.mu.iter().zip(&b.mu).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

proptest! {
    #[test]
    fn norms_survive_many_steps(
        kappas in kappa_set(),
        eps in 1e-3f64..1.0,
        steps in prop::collection::vec(0.0f64..10.0, 1..200),
    ) {
        let p = params(kappas.clone(), eps);
        let mut s = DitherState::initial(kappas.len());
        for dt in steps {
            s = dither_advance(&s, dt, &p);
        }
        prop_assert!(s.max_norm_defect() <= 1e-12, "{}", s.max_norm_defect());
    }

    #[test]
    fn rotations_compose(
        kappas in kappa_set(),
        eps in 1e-2f64..1.0,
        a in 0.0f64..5.0,
        b in 0.0f64..5.0,
        angle in 0.0f64..6.3,
    ) {
        let p = params(kappas.clone(), eps);
        let s = state(&vec![angle; kappas.len()]);
        let joint = dither_advance(&s, a + b, &p);
        let split = dither_advance(&dither_advance(&s, a, &p), b, &p);
        prop_assert!(max_gap(&joint, &split) <= 1e-12, "{}", max_gap(&joint, &split));
    }

    #[test]
    fn common_period_returns_home(kappas in kappa_set(), eps in 1e-3f64..1.0, angle in 0.0f64..6.3) {
        let period = common_period_exact(&kappas).unwrap();
        for k in &kappas {
            // κ T̃ is an integer number of turns.
            prop_assert_eq!((k.num() as u128 * period) % k.den() as u128, 0);
        }
        let p = params(kappas.clone(), eps);
        let s = state(&vec![angle; kappas.len()]);
        let back = dither_advance(&s, eps * period as f64, &p);
        prop_assert!(max_gap(&s, &back) <= 1e-10, "{}", max_gap(&s, &back));
    }

    #[test]
    fn decimal_parsing_is_exact(p in 1u64..100_000, digits in 0u32..5) {
        let q = 10u64.pow(digits);
        let text = format!("{}", p as f64 / q as f64);
        let parsed: Rational = text.parse().unwrap();
        prop_assert_eq!(parsed, r(p, q));
    }
}
