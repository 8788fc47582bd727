//! RK4 integration of learned library models and generic vector fields.

use crate::library::TermDescriptor;

/// Classical fourth-order Runge-Kutta step for `ẋ = f(t, x)`.
pub fn rk4_step<F>(f: &mut F, t: f64, x: &[f64], h: f64) -> Vec<f64>
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    let n = x.len();
    let mut k1 = vec![0.0; n];
    let mut k2 = vec![0.0; n];
    let mut k3 = vec![0.0; n];
    let mut k4 = vec![0.0; n];
    let mut tmp = vec![0.0; n];

    f(t, x, &mut k1);
    for i in 0..n {
        tmp[i] = x[i] + 0.5 * h * k1[i];
    }
    f(t + 0.5 * h, &tmp, &mut k2);
    for i in 0..n {
        tmp[i] = x[i] + 0.5 * h * k2[i];
    }
    f(t + 0.5 * h, &tmp, &mut k3);
    for i in 0..n {
        tmp[i] = x[i] + h * k3[i];
    }
    f(t + h, &tmp, &mut k4);
    (0..n)
        .map(|i| x[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect()
}

/// Evaluates `ẋ_k = Σ_j ξ[k, j] θ_j(x, u)` for a library model.
///
/// Coefficients are stored row-major per state: `coeffs[k * l + j]`.
#[derive(Debug, Clone)]
pub struct LibraryField<'a> {
    descriptors: &'a [TermDescriptor],
    n_states: usize,
    vars: Vec<f64>,
}

impl<'a> LibraryField<'a> {
    pub fn new(descriptors: &'a [TermDescriptor], n_states: usize, n_inputs: usize) -> Self {
        Self {
            descriptors,
            n_states,
            vars: vec![0.0; n_states + n_inputs],
        }
    }

    pub fn eval(&mut self, x: &[f64], u: &[f64], coeffs: &[f64], out: &mut [f64]) {
        let l = self.descriptors.len();
        self.vars[..self.n_states].copy_from_slice(x);
        self.vars[self.n_states..].copy_from_slice(u);
        out.iter_mut().for_each(|o| *o = 0.0);
        for (j, term) in self.descriptors.iter().enumerate() {
            let mut theta = None;
            for (k, o) in out.iter_mut().enumerate() {
                let c = coeffs[k * l + j];
                if c != 0.0 {
                    let v = *theta.get_or_insert_with(|| term.eval(&self.vars));
                    *o += c * v;
                }
            }
        }
    }
}

/// Trajectory from a held-input integration. `states[0]` is the initial
/// condition; on divergence the trajectory stops before the first
/// non-finite step.
#[derive(Debug, Clone, PartialEq)]
pub struct Integration {
    pub states: Vec<Vec<f64>>,
    pub diverged_at: Option<usize>,
}

/// Integrate a library model with RK4 over `steps` steps of size `dt`.
///
/// Step `i` advances sample `i` to sample `i + 1`, holding the inputs of
/// row `i` and the coefficients returned by `coeffs(i, buf)` constant over
/// all RK4 stages.
pub fn integrate_held<C>(
    descriptors: &[TermDescriptor],
    x0: &[f64],
    inputs: &[Vec<f64>],
    steps: usize,
    dt: f64,
    mut coeffs: C,
) -> Integration
where
    C: FnMut(usize, &mut [f64]),
{
    let n = x0.len();
    let q = inputs.first().map_or(0, Vec::len);
    let mut field = LibraryField::new(descriptors, n, q);
    let mut buf = vec![0.0; n * descriptors.len()];
    let empty: Vec<f64> = Vec::new();
    let mut states = Vec::with_capacity(steps + 1);
    states.push(x0.to_vec());
    for i in 0..steps {
        coeffs(i, &mut buf);
        let u = inputs.get(i).unwrap_or(&empty);
        let mut f = |_t: f64, x: &[f64], out: &mut [f64]| field.eval(x, u, &buf, out);
        let next = rk4_step(&mut f, i as f64 * dt, states.last().unwrap(), dt);
        if next.iter().any(|v| !v.is_finite()) {
            return Integration {
                states,
                diverged_at: Some(i + 1),
            };
        }
        states.push(next);
    }
    Integration {
        states,
        diverged_at: None,
    }
}
