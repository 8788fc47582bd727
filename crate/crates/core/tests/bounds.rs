use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tvode_core::bounds::{
    best_constant_error, best_piecewise_error, empirical_bound_check, estimate_delta,
    estimate_lipschitz, gronwall_bound, sir_bound_check, split_bound, Domain, SirBoundConfig,
};

fn linear<'a>(
    a: &'a DMatrix<f64>,
    b: &'a DVector<f64>,
) -> impl Fn(f64, &[f64], &mut [f64]) + Sync + 'a {
    move |_t, x, out| {
        let y = a * DVector::from_column_slice(x) + b;
        out.copy_from_slice(y.as_slice());
    }
}

#[test]
fn perturbed_linear_systems_stay_within_the_bound() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for case in 0..20 {
        let n = rng.random_range(1..=3);
        let a = DMatrix::from_fn(
            n,
            n,
            |i, j| if i == j { -1.0 } else { 0.0 } + rng.random_range(-0.5..0.5),
        );
        let e = DMatrix::from_fn(n, n, |_, _| rng.random_range(-0.05..0.05));
        let b = DVector::from_fn(n, |_, _| rng.random_range(-0.1..0.1));
        let zero = DVector::zeros(n);
        let a_learned = &a + &e;
        let truth = linear(&a, &zero);
        let learned = linear(&a_learned, &b);
        let domain = Domain {
            lo: vec![-6.0; n],
            hi: vec![6.0; n],
        };
        let times = [0.0];
        let l = estimate_lipschitz(&truth, &domain, 5, &times).unwrap();
        let delta = estimate_delta(&truth, &learned, &domain, 5, &times).unwrap();
        assert!(
            (l - a.clone().singular_values().max()).abs() < 1e-6,
            "case {case}"
        );
        let x0: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let check =
            empirical_bound_check(&truth, &learned, &x0, 0.0, 2.0, 400, delta, l, &domain).unwrap();
        assert!(check.holds, "case {case}: max error {}", check.max_error);
        for r in &check.rows {
            assert!(r.error <= r.bound + 1e-6);
        }
    }
}

#[test]
fn scalar_offset_matches_closed_form_error() {
    let domain = Domain {
        lo: vec![-2.0],
        hi: vec![2.0],
    };
    let check = empirical_bound_check(
        |_, x: &[f64], o: &mut [f64]| o[0] = -x[0],
        |_, x: &[f64], o: &mut [f64]| o[0] = -x[0] + 0.01,
        &[1.0],
        0.0,
        2.0,
        200,
        0.01,
        1.0,
        &domain,
    )
    .unwrap();
    assert!(check.holds);
    for r in &check.rows {
        let exact = 0.01 * (1.0 - (-r.t).exp());
        assert!((r.error - exact).abs() < 1e-9);
        assert!((r.bound - 0.01 * (r.t.exp() - 1.0)).abs() < 1e-12);
    }
}

#[test]
fn sir_library_models_stay_within_their_bounds() {
    let report = sir_bound_check(&SirBoundConfig::default()).unwrap();
    assert!(report.time_varying.holds);
    assert!(report.constant.holds);
    assert!(report.e_tv < report.e_const);
    assert!(report.time_varying.delta < report.constant.delta);
}

fn random_trajectory(rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let dim = rng.random_range(1..=3);
    let len = rng.random_range(200..600);
    let waves: Vec<(f64, f64, f64)> = (0..dim * 3)
        .map(|_| {
            (
                rng.random_range(0.1..2.0),
                rng.random_range(0.5..20.0),
                rng.random_range(0.0..6.0),
            )
        })
        .collect();
    (0..len)
        .map(|i| {
            let t = i as f64 / len as f64;
            (0..dim)
                .map(|d| {
                    waves[d * 3..d * 3 + 3]
                        .iter()
                        .map(|(a, w, p)| a * (w * t + p).sin())
                        .sum()
                })
                .collect()
        })
        .collect()
}

#[test]
fn step_functions_never_lose_to_constants() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for case in 0..100 {
        let traj = random_trajectory(&mut rng);
        let e_const = best_constant_error(&traj).unwrap();
        let mut prev = f64::INFINITY;
        for m in 1..=32 {
            let e = best_piecewise_error(&traj, m).unwrap();
            assert!(e <= e_const + 1e-12, "case {case} m {m}");
            assert!(e <= prev + 1e-12, "case {case} m {m}: {e} > {prev}");
            prev = e;
        }
    }
}

#[test]
fn identity_trajectory_errors() {
    let ramp: Vec<Vec<f64>> = (0..=1000).map(|i| vec![i as f64 / 1000.0]).collect();
    let e_const = best_constant_error(&ramp).unwrap();
    assert_eq!(e_const, 0.5);
    assert_eq!(best_piecewise_error(&ramp, 1).unwrap(), 0.5);
    assert_eq!(best_piecewise_error(&ramp, 2).unwrap(), 0.25);
    assert!(best_piecewise_error(&ramp, 64).unwrap() < 0.05 * e_const);
}

#[test]
fn bounds_grow_with_every_argument() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..200 {
        let (d, l, t) = (
            rng.random_range(0.0..1.0),
            rng.random_range(0.0..3.0),
            rng.random_range(0.0..5.0),
        );
        let base = gronwall_bound(d, l, t);
        assert!(gronwall_bound(d * 1.1, l, t) >= base);
        assert!(gronwall_bound(d, l * 1.1 + 1e-3, t) >= base);
        assert!(gronwall_bound(d, l, t + 0.1) >= base);
        assert!(split_bound(1.0, d, l, t + 0.1) >= split_bound(1.0, d, l, t));
    }
    assert!((split_bound(2.0, 0.05, 0.5, 2.0) - 0.2 * (1f64.exp() - 1.0)).abs() < 1e-12);
}
