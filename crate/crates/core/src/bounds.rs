//! Finite-horizon forecast error bounds and their empirical check.
//!
//! If the true field `f` is `L`-Lipschitz on a box `D` and the learned
//! field differs from it by at most `δ` on `D`, trajectories that stay in
//! `D` separate by at most `δ/L (e^{Lt} - 1)`.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::rk4_step;
use crate::error::{Error, Result};
use crate::simulate::SirParams;

/// Below this Lipschitz constant the bound uses its `L -> 0` limit `δ t`.
const L_EPS: f64 = 1e-12;
/// Slack for integrator error when comparing observed error with the bound.
pub const CHECK_TOL: f64 = 1e-6;

pub fn gronwall_bound(delta: f64, l: f64, t: f64) -> f64 {
    if l < L_EPS {
        delta * t
    } else {
        delta / l * (l * t).exp_m1()
    }
}

/// Bound when only the time-varying block is mis-forecast: the fixed block
/// cancels, leaving `δ = B_topN ε_topN`.
pub fn split_bound(b_top: f64, eps_top: f64, l: f64, t: f64) -> f64 {
    gronwall_bound(b_top * eps_top, l, t)
}

fn check_samples(samples: &[Vec<f64>]) -> Result<usize> {
    let dim = samples
        .first()
        .map(Vec::len)
        .ok_or_else(|| Error::invalid("need at least one sample"))?;
    if samples.iter().any(|s| s.len() != dim) {
        return Err(Error::mismatch("samples differ in dimension"));
    }
    Ok(dim)
}

/// Componentwise half-range of a block of samples, maximized over
/// components: the sup-norm error of the best constant on that block.
fn half_range(samples: &[Vec<f64>]) -> f64 {
    let dim = samples[0].len();
    (0..dim)
        .map(|c| {
            let (lo, hi) = samples
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), s| {
                    (a.min(s[c]), b.max(s[c]))
                });
            (hi - lo) / 2.0
        })
        .fold(0.0, f64::max)
}

/// Best uniform approximation error of a sampled trajectory by a constant.
pub fn best_constant_error(samples: &[Vec<f64>]) -> Result<f64> {
    check_samples(samples)?;
    Ok(half_range(samples))
}

/// Pieces needed so that every piece has half-range at most `eps`, and the
/// largest half-range among them.
fn greedy_pieces(samples: &[Vec<f64>], eps: f64) -> (usize, f64) {
    let dim = samples[0].len();
    let mut lo = samples[0].clone();
    let mut hi = samples[0].clone();
    let mut pieces = 1;
    let mut worst = 0.0f64;
    let mut current = 0.0f64;
    for s in &samples[1..] {
        let widened = (0..dim)
            .map(|c| (hi[c].max(s[c]) - lo[c].min(s[c])) / 2.0)
            .fold(0.0, f64::max);
        if widened <= eps {
            for c in 0..dim {
                lo[c] = lo[c].min(s[c]);
                hi[c] = hi[c].max(s[c]);
            }
            current = widened;
        } else {
            worst = worst.max(current);
            pieces += 1;
            lo.clone_from(s);
            hi.clone_from(s);
            current = 0.0;
        }
    }
    (pieces, worst.max(current))
}

/// Best uniform approximation error by a step function with at most `m`
/// pieces over contiguous runs of samples.
///
/// The optimal breakpoints are found by bisection on the error level with a
/// greedy feasibility test; the returned value is the error actually
/// attained by the final partition.
pub fn best_piecewise_error(samples: &[Vec<f64>], m: usize) -> Result<f64> {
    check_samples(samples)?;
    if m == 0 {
        return Err(Error::invalid("need at least one piece"));
    }
    let (mut lo, mut hi) = (0.0, half_range(samples));
    if greedy_pieces(samples, 0.0).0 <= m {
        return Ok(greedy_pieces(samples, 0.0).1);
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if greedy_pieces(samples, mid).0 <= m {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(greedy_pieces(samples, hi).1)
}

/// Step-function error with `m` equal-count pieces (the last piece takes
/// the remainder). Not monotone in `m` in general.
pub fn uniform_piecewise_error(samples: &[Vec<f64>], m: usize) -> Result<f64> {
    check_samples(samples)?;
    if m == 0 {
        return Err(Error::invalid("need at least one piece"));
    }
    Ok(uniform_pieces(samples.len(), m)
        .into_iter()
        .map(|(a, b)| half_range(&samples[a..b]))
        .fold(0.0, f64::max))
}

fn uniform_pieces(len: usize, m: usize) -> Vec<(usize, usize)> {
    let m = m.min(len);
    (0..m).map(|p| (p * len / m, (p + 1) * len / m)).collect()
}

/// Axis-aligned box on which the bound's hypotheses are checked.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Domain {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl Domain {
    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .all(|(v, (a, b))| *v >= *a && *v <= *b)
    }

    /// Tensor grid with `per_dim` points per axis, endpoints included.
    pub fn grid(&self, per_dim: usize) -> Vec<Vec<f64>> {
        let per_dim = per_dim.max(2);
        let dim = self.lo.len();
        let total = per_dim.pow(dim as u32);
        (0..total)
            .map(|mut idx| {
                (0..dim)
                    .map(|d| {
                        let i = idx % per_dim;
                        idx /= per_dim;
                        self.lo[d] + (self.hi[d] - self.lo[d]) * i as f64 / (per_dim - 1) as f64
                    })
                    .collect()
            })
            .collect()
    }

    fn validate(&self) -> Result<()> {
        if self.lo.len() != self.hi.len() || self.lo.is_empty() {
            return Err(Error::mismatch("domain bounds differ in dimension"));
        }
        if self.lo.iter().zip(&self.hi).any(|(a, b)| !(a < b)) {
            return Err(Error::invalid("domain needs lo < hi on every axis"));
        }
        Ok(())
    }
}

/// Largest spectral norm of a central-difference Jacobian over the grid
/// points of `domain` and the given times.
pub fn estimate_lipschitz<F>(f: F, domain: &Domain, per_dim: usize, times: &[f64]) -> Result<f64>
where
    F: Fn(f64, &[f64], &mut [f64]) + Sync,
{
    domain.validate()?;
    let n = domain.lo.len();
    let steps: Vec<f64> = (0..n)
        .map(|d| 1e-6 * (domain.hi[d] - domain.lo[d]).max(1.0))
        .collect();
    let pts = domain.grid(per_dim);
    let norms: Vec<f64> = pts
        .par_iter()
        .flat_map_iter(|x| {
            let f = &f;
            let steps = &steps;
            times.iter().map(move |&t| {
                let mut jac = DMatrix::zeros(n, n);
                let (mut fp, mut fm) = (vec![0.0; n], vec![0.0; n]);
                for d in 0..n {
                    let mut xp = x.clone();
                    let mut xm = x.clone();
                    xp[d] += steps[d];
                    xm[d] -= steps[d];
                    f(t, &xp, &mut fp);
                    f(t, &xm, &mut fm);
                    for r in 0..n {
                        jac[(r, d)] = (fp[r] - fm[r]) / (2.0 * steps[d]);
                    }
                }
                jac.singular_values().max()
            })
        })
        .collect();
    Ok(norms.into_iter().fold(0.0, f64::max))
}

/// Largest Euclidean distance between two fields over the grid points of
/// `domain` and the given times.
pub fn estimate_delta<F, G>(
    f: F,
    g: G,
    domain: &Domain,
    per_dim: usize,
    times: &[f64],
) -> Result<f64>
where
    F: Fn(f64, &[f64], &mut [f64]) + Sync,
    G: Fn(f64, &[f64], &mut [f64]) + Sync,
{
    domain.validate()?;
    let n = domain.lo.len();
    let pts = domain.grid(per_dim);
    let gaps: Vec<f64> = pts
        .par_iter()
        .map(|x| {
            let (mut a, mut b) = (vec![0.0; n], vec![0.0; n]);
            times
                .iter()
                .map(|&t| {
                    f(t, x, &mut a);
                    g(t, x, &mut b);
                    a.iter()
                        .zip(&b)
                        .map(|(p, q)| (p - q).powi(2))
                        .sum::<f64>()
                        .sqrt()
                })
                .fold(0.0, f64::max)
        })
        .collect();
    Ok(gaps.into_iter().fold(0.0, f64::max))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundRow {
    pub t: f64,
    pub error: f64,
    pub bound: f64,
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundCheck {
    pub lipschitz: f64,
    pub delta: f64,
    pub rows: Vec<BoundRow>,
    pub max_error: f64,
    pub holds: bool,
}

/// Integrate both fields from `x0` over `[t0, t0 + horizon]` with RK4 and
/// compare their Euclidean separation with the Grönwall bound at every
/// step.
#[allow(clippy::too_many_arguments)]
pub fn empirical_bound_check<F, G>(
    mut truth: F,
    mut learned: G,
    x0: &[f64],
    t0: f64,
    horizon: f64,
    steps: usize,
    delta: f64,
    lipschitz: f64,
    domain: &Domain,
) -> Result<BoundCheck>
where
    F: FnMut(f64, &[f64], &mut [f64]),
    G: FnMut(f64, &[f64], &mut [f64]),
{
    domain.validate()?;
    if steps == 0 || !(horizon > 0.0) {
        return Err(Error::invalid(
            "bound check needs steps >= 1 and horizon > 0",
        ));
    }
    if !domain.contains(x0) {
        return Err(Error::DomainViolation { t: t0 });
    }
    let h = horizon / steps as f64;
    let (mut a, mut b) = (x0.to_vec(), x0.to_vec());
    let mut rows = Vec::with_capacity(steps);
    for i in 0..steps {
        let t = t0 + i as f64 * h;
        a = rk4_step(&mut truth, t, &a, h);
        b = rk4_step(&mut learned, t, &b, h);
        let elapsed = (i + 1) as f64 * h;
        if !domain.contains(&a) || !domain.contains(&b) {
            return Err(Error::DomainViolation { t: t0 + elapsed });
        }
        let error = a
            .iter()
            .zip(&b)
            .map(|(p, q)| (p - q).powi(2))
            .sum::<f64>()
            .sqrt();
        let bound = gronwall_bound(delta, lipschitz, elapsed);
        rows.push(BoundRow {
            t: t0 + elapsed,
            error,
            bound,
            margin: bound - error,
        });
    }
    let max_error = rows.iter().map(|r| r.error).fold(0.0, f64::max);
    let holds = rows.iter().all(|r| r.error <= r.bound + CHECK_TOL);
    Ok(BoundCheck {
        lipschitz,
        delta,
        rows,
        max_error,
        holds,
    })
}

/// Settings for comparing the deterministic SIR model with library models
/// whose transmission coefficient is a step function (time-varying) or a
/// single constant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SirBoundConfig {
    pub sir: SirParams,
    pub start: f64,
    pub horizon: f64,
    pub steps: usize,
    /// Length of each constant piece of the time-varying coefficient.
    pub window: f64,
    pub domain: Domain,
    pub grid_points: usize,
    pub time_samples: usize,
}

impl Default for SirBoundConfig {
    fn default() -> Self {
        Self {
            sir: SirParams {
                beta_noise: 0.0,
                ..SirParams::default()
            },
            start: 300.0,
            horizon: 30.0,
            steps: 3000,
            window: 7.0,
            domain: Domain {
                lo: vec![0.0, 0.0],
                hi: vec![2000.0, 1000.0],
            },
            grid_points: 41,
            time_samples: 301,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SirBoundReport {
    pub x0: Vec<f64>,
    pub e_const: f64,
    pub e_tv: f64,
    pub pieces: usize,
    pub time_varying: BoundCheck,
    pub constant: BoundCheck,
}

type Field<'a> = &'a dyn Fn(f64, &[f64], &mut [f64]);

/// Step-function coefficient: the midrange of `beta` on each piece.
struct StepBeta {
    start: f64,
    window: f64,
    levels: Vec<f64>,
}

impl StepBeta {
    fn at(&self, t: f64) -> f64 {
        let i = ((t - self.start) / self.window).floor().max(0.0) as usize;
        self.levels[i.min(self.levels.len() - 1)]
    }
}

fn midrange(v: &[f64]) -> f64 {
    let (lo, hi) = v
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| {
            (a.min(x), b.max(x))
        });
    0.5 * (lo + hi)
}

pub fn sir_bound_check(cfg: &SirBoundConfig) -> Result<SirBoundReport> {
    if !(cfg.window > 0.0 && cfg.horizon > 0.0) || cfg.time_samples < 2 || cfg.steps == 0 {
        return Err(Error::Config(
            "SIR bound needs window > 0, horizon > 0, time_samples >= 2, steps >= 1".into(),
        ));
    }
    let p = cfg.sir;
    let times: Vec<f64> = (0..cfg.time_samples)
        .map(|i| cfg.start + cfg.horizon * i as f64 / (cfg.time_samples - 1) as f64)
        .collect();
    let beta: Vec<f64> = times.iter().map(|&t| p.beta(t)).collect();
    let pieces = (cfg.horizon / cfg.window).ceil() as usize;
    let levels: Vec<f64> = (0..pieces)
        .map(|k| {
            let (a, b) = (
                cfg.start + k as f64 * cfg.window,
                cfg.start + (k + 1) as f64 * cfg.window,
            );
            let inside: Vec<f64> = times
                .iter()
                .zip(&beta)
                .filter(|(t, _)| **t >= a && (**t < b || (k + 1 == pieces && **t <= b)))
                .map(|(_, v)| *v)
                .collect();
            midrange(&inside)
        })
        .collect();
    let step = StepBeta {
        start: cfg.start,
        window: cfg.window,
        levels,
    };
    let constant = midrange(&beta);
    let samples: Vec<Vec<f64>> = beta.iter().map(|&b| vec![b]).collect();
    let e_const = best_constant_error(&samples)?;
    let e_tv = times
        .iter()
        .zip(&beta)
        .map(|(&t, &b)| (b - step.at(t)).abs())
        .fold(0.0, f64::max);

    let truth = |t: f64, x: &[f64], out: &mut [f64]| {
        out.copy_from_slice(&p.rhs(p.beta(t), x[0], x[1]));
    };
    let tv = |t: f64, x: &[f64], out: &mut [f64]| {
        out.copy_from_slice(&p.rhs(step.at(t), x[0], x[1]));
    };
    let fixed = |_: f64, x: &[f64], out: &mut [f64]| {
        out.copy_from_slice(&p.rhs(constant, x[0], x[1]));
    };

    let x0 = deterministic_state(&p, cfg.start);
    let l = estimate_lipschitz(truth, &cfg.domain, cfg.grid_points, &times)?;
    let d_tv = estimate_delta(truth, tv, &cfg.domain, cfg.grid_points, &times)?;
    let d_const = estimate_delta(truth, fixed, &cfg.domain, cfg.grid_points, &times)?;
    let run = |g: Field<'_>, delta: f64| {
        empirical_bound_check(
            truth,
            |t, x, o| g(t, x, o),
            &x0,
            cfg.start,
            cfg.horizon,
            cfg.steps,
            delta,
            l,
            &cfg.domain,
        )
    };
    Ok(SirBoundReport {
        x0: x0.clone(),
        e_const,
        e_tv,
        pieces,
        time_varying: run(&tv, d_tv)?,
        constant: run(&fixed, d_const)?,
    })
}

/// Deterministic SIR state at time `t`, RK4 with step 0.01 from `(S0, I0)`.
fn deterministic_state(p: &SirParams, t: f64) -> Vec<f64> {
    let h = 0.01;
    let steps = (t / h).round() as usize;
    let mut f =
        |s: f64, x: &[f64], out: &mut [f64]| out.copy_from_slice(&p.rhs(p.beta(s), x[0], x[1]));
    let mut x = vec![p.s0, p.i0];
    for i in 0..steps {
        x = rk4_step(&mut f, i as f64 * h, &x, h);
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gronwall_examples() {
        assert_eq!(gronwall_bound(0.0, 2.0, 5.0), 0.0);
        assert!((gronwall_bound(0.1, 1.0, 1.0) - 0.171828).abs() < 1e-6);
        assert!((gronwall_bound(0.3, 1e-14, 2.0) - 0.6).abs() < 1e-12);
        assert!((split_bound(2.0, 0.05, 0.5, 2.0) - 0.343656).abs() < 1e-6);
        assert_eq!(split_bound(3.0, 0.0, 0.5, 2.0), 0.0);
    }

    fn ramp(n: usize) -> Vec<Vec<f64>> {
        (0..n).map(|i| vec![i as f64 / (n - 1) as f64]).collect()
    }

    #[test]
    fn ramp_errors_are_exact() {
        let s = ramp(1001);
        assert_eq!(best_constant_error(&s).unwrap(), 0.5);
        assert_eq!(best_piecewise_error(&s, 1).unwrap(), 0.5);
        assert_eq!(best_piecewise_error(&s, 2).unwrap(), 0.25);
        assert_eq!(uniform_piecewise_error(&s, 1).unwrap(), 0.5);
        assert!(best_piecewise_error(&s, 64).unwrap() < 0.05 * 0.5);
        assert_eq!(best_constant_error(&vec![vec![2.0, 3.0]; 5]).unwrap(), 0.0);
    }

    #[test]
    fn piecewise_is_monotone_and_below_constant() {
        let s: Vec<Vec<f64>> = (0..400)
            .map(|i| {
                let t = i as f64 * 0.05;
                vec![t.sin() + 0.3 * (3.1 * t).cos(), (0.4 * t).cos()]
            })
            .collect();
        let c = best_constant_error(&s).unwrap();
        let mut prev = f64::INFINITY;
        for m in 1..=80 {
            let e = best_piecewise_error(&s, m).unwrap();
            assert!(e <= c && e <= prev, "m={m}");
            prev = e;
        }
    }

    #[test]
    fn grid_includes_corners() {
        let d = Domain {
            lo: vec![0.0, -1.0],
            hi: vec![1.0, 1.0],
        };
        let g = d.grid(3);
        assert_eq!(g.len(), 9);
        assert!(g.contains(&vec![1.0, -1.0]));
        assert!(g.contains(&vec![0.5, 0.0]));
    }

    #[test]
    fn linear_offset_check() {
        let d = Domain {
            lo: vec![-2.0],
            hi: vec![2.0],
        };
        let f = |_: f64, x: &[f64], o: &mut [f64]| o[0] = -x[0];
        let g = |_: f64, x: &[f64], o: &mut [f64]| o[0] = -x[0] + 0.01;
        let l = estimate_lipschitz(f, &d, 5, &[0.0]).unwrap();
        let delta = estimate_delta(f, g, &d, 5, &[0.0]).unwrap();
        assert!((l - 1.0).abs() < 1e-6);
        assert!((delta - 0.01).abs() < 1e-12);
        let c = empirical_bound_check(f, g, &[1.0], 0.0, 2.0, 200, delta, l, &d).unwrap();
        assert!(c.holds);
        for r in &c.rows {
            assert!((r.error - 0.01 * (1.0 - (-r.t).exp())).abs() < 1e-8);
        }
        let same = empirical_bound_check(f, f, &[1.0], 0.0, 2.0, 10, 0.0, l, &d).unwrap();
        assert_eq!(same.max_error, 0.0);
        assert!(same.holds);
    }

    #[test]
    fn leaving_the_domain_is_reported() {
        let d = Domain {
            lo: vec![0.0],
            hi: vec![1.5],
        };
        let f = |_: f64, x: &[f64], o: &mut [f64]| o[0] = x[0];
        assert!(matches!(
            empirical_bound_check(f, f, &[1.0], 0.0, 2.0, 100, 0.0, 1.0, &d),
            Err(Error::DomainViolation { .. })
        ));
    }
}
