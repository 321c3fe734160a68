use haes::costs::{active_set_inequality, builtin, kkt_equality, probe, randquad, Builtin, ConstraintData, CostProblem};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn gradients_match_central_differences() {
    for b in Builtin::ALL {
        let (cost, _) = builtin(b, 3).unwrap();
        cost.validate(11, 50).unwrap_or_else(|e| panic!("{b}: {e}"));
    }
}

#[test]
fn benchmark_values() {
    let (q, _) = builtin(Builtin::Quartic, 0).unwrap();
    assert_eq!(q.phi(&[2.0]), 0.25);
    assert_eq!(q.grad(&[2.0]).unwrap(), vec![1.0]);
    let (ill, _) = builtin(Builtin::Illcond2, 0).unwrap();
    assert_eq!(ill.phi(&[0.0, 0.0]), 10.0);
    assert_eq!(ill.phi_star, Some(10.0));
    assert!((ill.theta.unwrap() - 0.02).abs() < 1e-14 && (ill.lips.unwrap() - 1.0).abs() < 1e-14);
    let (sp, _) = builtin(Builtin::Sphere2, 0).unwrap();
    assert!((probe(&sp, &[0.0, 0.0], &[0.6, 0.8], 1.0) - 0.25).abs() < 1e-15);
    assert!((sp.theta.unwrap() - 0.5).abs() < 1e-14 && (sp.lips.unwrap() - 0.5).abs() < 1e-14);
}

#[test]
fn probe_tends_to_phi() {
    let (q, _) = builtin(Builtin::Quartic, 0).unwrap();
    assert!((probe(&q, &[1.0], &[1.0], 0.01) - 2.5e-9).abs() < 1e-20);
    let x = [1.7];
    let gaps: Vec<f64> = [1e-1, 1e-2, 1e-3, 1e-4].iter().map(|&a| (probe(&q, &x, &[1.0], a) - q.phi(&x)).abs()).collect();
    assert!(gaps.windows(2).all(|w| w[1] < w[0]));
    assert!(gaps[3] < 1e-4);
}

#[test]
fn randquad_spectrum_matches_eigen_decomposition() {
    let cost = randquad(10, 0).unwrap();
    let q = cost.hess(&[0.0; 10]).unwrap();
    let eig = nalgebra::SymmetricEigen::new(q.clone()).eigenvalues;
    assert!((cost.theta.unwrap() - eig.min()).abs() < 1e-10);
    assert!((cost.lips.unwrap() - eig.max()).abs() < 1e-10);
    assert!(cost.theta.unwrap() >= 0.5 - 1e-12);
    // Stationarity of the stored minimizer and optimal value.
    let z = cost.minimizer.clone().unwrap();
    let g = cost.grad(&z).unwrap();
    assert!(g.iter().all(|v| v.abs() < 1e-9));
    assert!((cost.phi(&z) - cost.phi_star.unwrap()).abs() < 1e-10);
    // b = (1, …, 10): the gradient at the origin.
    let g0 = cost.grad(&[0.0; 10]).unwrap();
    assert_eq!(g0, (1..=10).map(f64::from).collect::<Vec<_>>());
}

#[test]
fn randquad_is_strongly_convex_on_random_pairs() {
    let cost = randquad(10, 42).unwrap();
    let theta = cost.theta.unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..100 {
        let z1: Vec<f64> = (0..10).map(|_| rng.random_range(-5.0..5.0)).collect();
        let z2: Vec<f64> = (0..10).map(|_| rng.random_range(-5.0..5.0)).collect();
        let (g1, g2) = (cost.grad(&z1).unwrap(), cost.grad(&z2).unwrap());
        let inner: f64 = (0..10).map(|i| (g1[i] - g2[i]) * (z1[i] - z2[i])).sum();
        let d2: f64 = (0..10).map(|i| (z1[i] - z2[i]).powi(2)).sum();
        assert!(inner >= theta * d2 * (1.0 - 1e-12), "{inner} < {}", theta * d2);
    }
}

#[test]
fn equality_saddle_matches_substitution() {
    let (cost, con) = builtin(Builtin::Eqcon, 0).unwrap();
    let con = con.unwrap();
    let s = kkt_equality(&cost, &con).unwrap();
    // On z = (1 − s, s): φ = ½(1 + s)² + s², minimized at s = −1/3.
    assert!((s.primal[0] - 4.0 / 3.0).abs() < 1e-12 && (s.primal[1] + 1.0 / 3.0).abs() < 1e-12);
    assert!((s.dual[0] - 2.0 / 3.0).abs() < 1e-12);
    assert!((cost.phi_star.unwrap() - 1.0 / 3.0).abs() < 1e-12);
    let g = cost.grad(&s.primal).unwrap();
    let stat = (g[0] + s.dual[0]).abs().max((g[1] + s.dual[0]).abs());
    let feas = (s.primal[0] + s.primal[1] - 1.0).abs();
    assert!(stat <= 1e-10 && feas <= 1e-10);
}

#[test]
fn inequality_solution_matches_clipping() {
    let (cost, con) = builtin(Builtin::Ineqcon, 0).unwrap();
    let con = con.unwrap();
    let s = active_set_inequality(&cost, &con).unwrap();
    assert!((s.primal[0] - 0.5).abs() < 1e-12 && s.primal[1].abs() < 1e-12);
    assert!((s.dual[0] - 1.5).abs() < 1e-12 && s.dual[1] == 0.0);
    let g = cost.grad(&s.primal).unwrap();
    let stat = (g[0] + s.dual[0]).abs().max((g[1] + s.dual[1]).abs());
    let slack: Vec<f64> = (0..2).map(|i| s.primal[i] - 0.5).collect();
    assert!(stat <= 1e-10);
    assert!(slack.iter().all(|v| *v <= 1e-10));
    assert!((0..2).all(|i| (s.dual[i] * slack[i]).abs() <= 1e-10));
}

#[test]
fn constraint_spectrum_bounds() {
    let con = ConstraintData::new(DMatrix::from_row_slice(1, 2, &[1.0, 1.0]), DVector::from_vec(vec![1.0])).unwrap();
    let (lo, hi) = con.aat_spectrum();
    assert!((lo - 2.0).abs() < 1e-12 && (hi - 2.0).abs() < 1e-12);
    assert!(con.check_spectrum(1.0, 3.0).is_ok());
    assert!(con.check_spectrum(2.5, 3.0).is_err());
    let singular = ConstraintData::new(DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 2.0, 2.0]), DVector::zeros(2));
    assert!(singular.is_err());
}

#[test]
fn names_parse() {
    for b in Builtin::ALL {
        assert_eq!(b.name().parse::<Builtin>().unwrap(), b);
    }
    assert!("rosenbrock".parse::<Builtin>().is_err());
}

proptest! {
    #[test]
    fn box_constrained_diagonal_qp_is_a_clip(
        diag in prop::collection::vec(0.1f64..5.0, 1..5),
        centre_seed in any::<u64>(),
    ) {
        let n = diag.len();
        let mut rng = ChaCha8Rng::seed_from_u64(centre_seed);
        let centre: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let bound: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        // ½ Σ d_i (z_i − c_i)²
        let q = DMatrix::from_diagonal(&DVector::from_vec(diag.clone()));
        let b = DVector::from_fn(n, |i, _| -diag[i] * centre[i]);
        let d: f64 = (0..n).map(|i| 0.5 * diag[i] * centre[i] * centre[i]).sum();
        let cost = CostProblem::quadratic("box", q, b, d).unwrap();
        let con = ConstraintData::new(DMatrix::identity(n, n), DVector::from_vec(bound.clone())).unwrap();
        let s = active_set_inequality(&cost, &con).unwrap();
        for i in 0..n {
            prop_assert!((s.primal[i] - centre[i].min(bound[i])).abs() < 1e-9);
            prop_assert!((s.dual[i] - (diag[i] * (centre[i] - bound[i])).max(0.0)).abs() < 1e-9);
        }
    }

    #[test]
    fn equality_saddle_is_stationary_and_feasible(seed in any::<u64>(), m in 1usize..3) {
        let n = 3;
        let cost = randquad(n, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        let a = DMatrix::from_fn(m, n, |_, _| rng.random_range(-1.0..1.0));
        let b = DVector::from_fn(m, |_, _| rng.random_range(-1.0..1.0));
        let Ok(con) = ConstraintData::new(a.clone(), b.clone()) else { return Ok(()) };
        let s = kkt_equality(&cost, &con).unwrap();
        let g = DVector::from_vec(cost.grad(&s.primal).unwrap());
        let stat = (g + a.transpose() * DVector::from_vec(s.dual.clone())).amax();
        let feas = (&a * DVector::from_vec(s.primal.clone()) - b).amax();
        prop_assert!(stat <= 1e-8 && feas <= 1e-10, "{stat} {feas}");
    }
}
