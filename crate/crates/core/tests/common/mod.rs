#![allow(dead_code)]

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tvode_core::TimeSeriesTable;

/// ẋ1 = 0.6 x1 + 0.2 x2 u1, ẋ2 = -0.4 x2 + 0.1 u2².
pub fn rhs(x: [f64; 2], u: [f64; 2]) -> [f64; 2] {
    [
        0.6 * x[0] + 0.2 * x[1] * u[0],
        -0.4 * x[1] + 0.1 * u[1] * u[1],
    ]
}

/// Noise-free samples every `dt` on `[0, horizon]` with random inputs held
/// between samples, integrated with 20 RK4 substeps per sample, plus the
/// exact derivatives at each sample.
pub fn two_state_system(horizon: f64, dt: f64) -> (TimeSeriesTable, DMatrix<f64>) {
    trajectories(&[[1.0, 3.0]], horizon, dt, 21)
}

/// Several trajectories from the given initial states stacked into one
/// table. Only the rows matter to a regression, so the time column simply
/// continues across trajectories.
pub fn trajectories(
    starts: &[[f64; 2]],
    horizon: f64,
    dt: f64,
    seed: u64,
) -> (TimeSeriesTable, DMatrix<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let per = (horizon / dt).round() as usize + 1;
    let m = per * starts.len();
    let sub = 20;
    let h = dt / sub as f64;
    let mut x = starts[0];
    let mut times = Vec::with_capacity(m);
    let mut states = DMatrix::zeros(m, 2);
    let mut inputs = DMatrix::zeros(m, 2);
    let mut derivs = DMatrix::zeros(m, 2);
    for i in 0..m {
        if i % per == 0 {
            x = starts[i / per];
        }
        times.push(i as f64 * dt);
        let u = [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
        let d = rhs(x, u);
        for k in 0..2 {
            states[(i, k)] = x[k];
            derivs[(i, k)] = d[k];
        }
        inputs[(i, 0)] = u[0];
        inputs[(i, 1)] = u[1];
        for _ in 0..sub {
            let k1 = rhs(x, u);
            let k2 = rhs([x[0] + h / 2.0 * k1[0], x[1] + h / 2.0 * k1[1]], u);
            let k3 = rhs([x[0] + h / 2.0 * k2[0], x[1] + h / 2.0 * k2[1]], u);
            let k4 = rhs([x[0] + h * k3[0], x[1] + h * k3[1]], u);
            for k in 0..2 {
                x[k] += h / 6.0 * (k1[k] + 2.0 * k2[k] + 2.0 * k3[k] + k4[k]);
            }
        }
    }
    let table = TimeSeriesTable::new(
        times,
        vec!["x1".into(), "x2".into()],
        states,
        vec!["u1".into(), "u2".into()],
        inputs,
    )
    .unwrap();
    (table, derivs)
}
