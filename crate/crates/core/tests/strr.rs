mod common;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tvode_core::library::{build_library, evaluate_library};
use tvode_core::strr::{strr_fit, threshold};
use tvode_core::StrrConfig;

fn exact() -> StrrConfig {
    StrrConfig {
        lambda: 0.0,
        tau: 0.0,
        ..StrrConfig::default()
    }
}

fn qr_lstsq(a: &DMatrix<f64>, y: &DVector<f64>) -> DVector<f64> {
    let qr = a.clone().qr();
    let qty = qr.q().transpose() * y;
    qr.r().solve_upper_triangular(&qty).unwrap()
}

#[test]
fn matches_qr_least_squares_on_random_systems() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for case in 0..50 {
        let l = rng.random_range(1..=20);
        let a = DMatrix::from_fn(200, l, |_, _| rng.random_range(-1.0..1.0));
        let y = DVector::from_fn(200, |_, _| rng.random_range(-5.0..5.0));
        let oracle = qr_lstsq(&a, &y);
        let fit = strr_fit(&a, &y, &exact(), None).unwrap();
        assert!(fit.converged, "case {case}");
        for j in 0..l {
            assert!(
                (fit.coefficients[j] - oracle[j]).abs() < 1e-9,
                "case {case} coef {j}: {} vs {}",
                fit.coefficients[j],
                oracle[j]
            );
        }
    }
}

#[test]
fn recovers_two_state_system() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let starts: Vec<[f64; 2]> = (0..20)
        .map(|_| [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)])
        .collect();
    let (table, derivs) = common::trajectories(&starts, 1.0, 0.01, 4);
    let lib = evaluate_library(&build_library(2, 2, 2), &table).unwrap();
    assert_eq!(lib.len(), 15);
    let truth = [[(1, 0.6), (10, 0.2)], [(2, -0.4), (14, 0.1)]];
    for (lambda, tol) in [(0.01, 1e-2), (1e-8, 1e-6)] {
        let config = StrrConfig {
            lambda,
            ..StrrConfig::default()
        };
        for (k, want) in truth.iter().enumerate() {
            let y = derivs.column(k).into_owned();
            let fit = strr_fit(&lib.theta, &y, &config, None).unwrap();
            let support: Vec<usize> = want.iter().map(|p| p.0).collect();
            assert_eq!(
                fit.active_indices(),
                support,
                "state {k}, lambda {lambda}: {:?}",
                fit.coefficients
            );
            for &(j, v) in want {
                assert!(
                    (fit.coefficients[j] - v).abs() < tol,
                    "state {k} term {j}: {}",
                    fit.coefficients[j]
                );
            }
        }
    }
}

#[test]
fn fit_is_a_fixed_point_of_its_support() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let config = StrrConfig {
        tau: 0.05,
        ..StrrConfig::default()
    };
    for _ in 0..20 {
        let a = DMatrix::from_fn(120, 8, |_, _| rng.random_range(-1.0..1.0));
        let coef = DVector::from_fn(8, |j, _| {
            if j % 3 == 0 {
                rng.random_range(0.5..2.0)
            } else {
                0.0
            }
        });
        let noise = DVector::from_fn(120, |_, _| rng.random_range(-0.01..0.01));
        let y = &a * coef + noise;
        let fit = strr_fit(&a, &y, &config, None).unwrap();
        let keep = fit.active_indices();
        let again = strr_fit(&a.select_columns(&keep), &y, &config, None).unwrap();
        for (pos, &j) in keep.iter().enumerate() {
            assert!((again.coefficients[pos] - fit.coefficients[j]).abs() <= config.tolerance);
        }
        for j in 0..8 {
            if !fit.active[j] {
                assert_eq!(fit.coefficients[j], 0.0);
            } else {
                assert!(fit.coefficients[j].abs() >= config.tau);
            }
        }
    }
}

#[test]
fn orthonormal_columns_shrink_by_one_plus_lambda() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let raw = DMatrix::from_fn(60, 5, |_, _| rng.random_range(-1.0..1.0));
    let q = raw.qr().q();
    let y = DVector::from_fn(60, |_, _| rng.random_range(-3.0..3.0));
    let plain = strr_fit(&q, &y, &exact(), None).unwrap();
    let lambda = 0.7;
    let shrunk = strr_fit(
        &q,
        &y,
        &StrrConfig {
            lambda,
            tau: 0.0,
            ..StrrConfig::default()
        },
        None,
    )
    .unwrap();
    for j in 0..5 {
        let want = plain.coefficients[j].abs() / (1.0 + lambda);
        assert!((shrunk.coefficients[j].abs() - want).abs() < 1e-12);
    }
}

#[test]
fn threshold_larger_than_every_ols_coefficient_gives_empty_fit() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = DMatrix::from_fn(80, 4, |_, _| rng.random_range(-1.0..1.0));
    let y = DVector::from_fn(80, |_, _| rng.random_range(-0.2..0.2));
    let ols = qr_lstsq(&a, &y);
    let tau = ols.amax() * 2.0;
    let fit = strr_fit(
        &a,
        &y,
        &StrrConfig {
            tau,
            ..StrrConfig::default()
        },
        None,
    )
    .unwrap();
    assert!(fit.empty);
    assert!(fit.coefficients.iter().all(|&c| c == 0.0));
    assert_eq!(threshold(&[tau, -tau / 2.0], tau), vec![tau, 0.0]);
}
