use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use nalgebra::{DMatrix, DVector};

use tvode_core::library::{build_library, evaluate_library};
use tvode_core::predictor::train_forest;
use tvode_core::simulate::{ModelKind, SimulationSpec};
use tvode_core::strr::strr_fit;
use tvode_core::{ForestConfig, StrrConfig};

fn design(m: usize, l: usize) -> (DMatrix<f64>, DVector<f64>) {
    let theta = DMatrix::from_fn(m, l, |i, j| {
        ((i * 31 + j * 17) as f64 * 0.013).sin() + 0.1 * j as f64
    });
    let y = DVector::from_fn(m, |i, _| 0.6 * theta[(i, 1)] - 0.4 * theta[(i, l - 1)]);
    (theta, y)
}

fn bench_strr(c: &mut Criterion) {
    let mut g = c.benchmark_group("strr_fit");
    for l in [6, 15, 28] {
        let (theta, y) = design(1200, l);
        g.bench_with_input(BenchmarkId::from_parameter(l), &l, |b, _| {
            b.iter(|| {
                strr_fit(
                    black_box(&theta),
                    black_box(&y),
                    &StrrConfig::default(),
                    None,
                )
                .unwrap()
            })
        });
    }
    g.finish();
}

fn bench_library(c: &mut Criterion) {
    let table = SimulationSpec::new(ModelKind::Sir, 0.0).run(1).unwrap();
    let mut g = c.benchmark_group("library");
    for d in [2, 3, 4] {
        let terms = build_library(2, 0, d);
        g.bench_with_input(BenchmarkId::new("evaluate", d), &d, |b, _| {
            b.iter(|| evaluate_library(black_box(&terms), black_box(&table)).unwrap())
        });
    }
    g.finish();
}

fn bench_forest(c: &mut Criterion) {
    let x = DMatrix::from_fn(1200, 4, |i, j| ((i * (j + 3)) as f64 * 0.071).cos());
    let y: Vec<f64> = (0..1200)
        .map(|i| x[(i, 0)] * 2.0 + x[(i, 2)].abs())
        .collect();
    let config = ForestConfig {
        trees: 50,
        ..ForestConfig::default()
    };
    c.bench_function("train_forest_50", |b| {
        b.iter(|| train_forest(black_box(&x), black_box(&y), &config).unwrap())
    });
}

criterion_group!(benches, bench_strr, bench_library, bench_forest);
criterion_main!(benches);
