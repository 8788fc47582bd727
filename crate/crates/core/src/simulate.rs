//! Synthetic datasets: SIR and consumer-resource SDEs integrated by
//! Euler-Maruyama, and Ornstein-Uhlenbeck weather covariates.
//!
//! Every noise source draws from its own seeded stream, so adding or
//! removing one source never shifts the others.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::preprocess::TimeSeriesTable;
use crate::rng;

const TAG_SIR: u64 = 0x5149;
const TAG_CR: u64 = 0xC4;
const TAG_WEATHER: u64 = 0x77;

/// Floor applied to consumer-resource states after every step.
pub const CR_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SirParams {
    pub lambda: f64,
    pub mu: f64,
    pub alpha: f64,
    pub a: f64,
    pub a1: f64,
    pub a2: f64,
    pub a3: f64,
    pub omega1: f64,
    pub omega2: f64,
    pub omega3: f64,
    /// Standard deviation of the per-step Gaussian fluctuation of β.
    pub beta_noise: f64,
    pub sigma1: f64,
    pub sigma2: f64,
    pub s0: f64,
    pub i0: f64,
}

impl Default for SirParams {
    fn default() -> Self {
        Self {
            lambda: 100.0,
            mu: 0.1,
            alpha: 0.1,
            a: 0.0003,
            a1: 0.00015,
            a2: 0.00012,
            a3: 0.0001,
            omega1: 2.0 * PI / (365.0 / 2.0),
            omega2: 2.0 * PI / 365.0,
            omega3: 2.0 * PI / (365.0 / 2.0),
            beta_noise: 1e-5,
            sigma1: 0.0,
            sigma2: 0.0,
            s0: 500.0,
            i0: 7.0,
        }
    }
}

impl SirParams {
    pub fn with_sigma(sigma: f64) -> Self {
        Self {
            sigma1: sigma,
            sigma2: sigma,
            ..Self::default()
        }
    }

    /// Deterministic part of the transmission rate, clipped at zero.
    pub fn beta(&self, t: f64) -> f64 {
        let b = self.a
            + self.a1 * (self.omega1 * t).sin()
            + self.a2 * (self.omega2 * t + PI / 4.0).sin()
            + self.a3 * (self.omega3 * t + PI / 6.0).sin() * (0.005 * t).sin();
        b.max(0.0)
    }

    pub fn rhs(&self, beta: f64, s: f64, i: f64) -> [f64; 2] {
        let inf = beta * s * i;
        [
            self.lambda - inf - self.mu * s,
            inf - self.alpha * i - self.mu * i,
        ]
    }

    fn validate(&self) -> Result<()> {
        let rates = [
            self.lambda,
            self.mu,
            self.alpha,
            self.beta_noise,
            self.sigma1,
            self.sigma2,
        ];
        if rates.iter().any(|v| !(*v >= 0.0)) || !(self.s0 >= 0.0 && self.i0 >= 0.0) {
            return Err(Error::Config(
                "SIR rates and initial values must be >= 0".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CrParams {
    pub r: f64,
    pub a: f64,
    pub b: f64,
    pub m: f64,
    pub sigma1: f64,
    pub sigma2: f64,
    pub r0: f64,
    pub c0: f64,
}

impl Default for CrParams {
    fn default() -> Self {
        Self {
            r: 0.1,
            a: 0.005,
            b: 0.001,
            m: 0.025,
            sigma1: 0.0,
            sigma2: 0.0,
            r0: 20.0,
            c0: 10.0,
        }
    }
}

impl CrParams {
    pub fn with_sigma(sigma: f64) -> Self {
        Self {
            sigma1: sigma,
            sigma2: sigma,
            ..Self::default()
        }
    }

    pub fn rhs(&self, r: f64, c: f64) -> [f64; 2] {
        let uptake = self.a * r * c / (1.0 + self.b * r);
        [self.r * r - uptake, uptake - self.m * c]
    }

    fn validate(&self) -> Result<()> {
        let all = [
            self.r,
            self.a,
            self.b,
            self.m,
            self.sigma1,
            self.sigma2,
            self.r0,
            self.c0,
        ];
        if all.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::Config("CR parameters must be >= 0".into()));
        }
        Ok(())
    }
}

/// One Ornstein-Uhlenbeck variable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OuVariable {
    pub name: String,
    pub initial: f64,
    pub mean: f64,
    pub theta: f64,
    pub sigma: f64,
    pub low: f64,
    pub high: f64,
}

impl OuVariable {
    fn new(
        name: &str,
        initial: f64,
        mean: f64,
        theta: f64,
        sigma: f64,
        bounds: (f64, f64),
    ) -> Self {
        Self {
            name: name.into(),
            initial,
            mean,
            theta,
            sigma,
            low: bounds.0,
            high: bounds.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OuParams {
    pub variables: Vec<OuVariable>,
}

impl Default for OuParams {
    /// Air temperature, relative humidity, wind speed and precipitation.
    fn default() -> Self {
        Self {
            variables: vec![
                OuVariable::new("AT", 20.0, 0.0, 0.1, 10.0, (-20.0, 35.0)),
                OuVariable::new("RH", 60.0, 50.0, 0.05, 5.0, (0.0, 100.0)),
                OuVariable::new("WS", 10.0, 5.0, 0.2, 1.0, (0.0, 30.0)),
                OuVariable::new("PC", 0.2, 0.1, 0.1, 0.05, (0.0, 100.0)),
            ],
        }
    }
}

impl OuParams {
    fn validate(&self) -> Result<()> {
        for v in &self.variables {
            if !(v.theta >= 0.0 && v.sigma >= 0.0 && v.low < v.high) {
                return Err(Error::Config(format!(
                    "OU variable `{}` needs theta >= 0, sigma >= 0, low < high",
                    v.name
                )));
            }
        }
        Ok(())
    }
}

/// Integration grid: `horizon / dt` Euler-Maruyama steps, every `stride`-th
/// state recorded starting with the initial condition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Grid {
    pub horizon: f64,
    pub dt: f64,
    pub stride: usize,
}

impl Default for Grid {
    fn default() -> Self {
        Self {
            horizon: 1500.0,
            dt: 0.01,
            stride: 100,
        }
    }
}

impl Grid {
    pub fn steps(&self) -> usize {
        (self.horizon / self.dt).round() as usize
    }

    fn validate(&self) -> Result<()> {
        if !(self.horizon > 0.0 && self.dt > 0.0) || self.stride == 0 {
            return Err(Error::Config(
                "grid needs horizon > 0, dt > 0, stride >= 1".into(),
            ));
        }
        if self.steps() < 2 * self.stride {
            return Err(Error::Config("grid records fewer than 2 samples".into()));
        }
        Ok(())
    }

    fn recorded_times(&self) -> Vec<f64> {
        (0..self.steps())
            .step_by(self.stride)
            .map(|k| k as f64 * self.dt)
            .collect()
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Euler-Maruyama driver for a two-state system with additive noise.
fn em2<F>(
    grid: &Grid,
    x0: [f64; 2],
    sigma: [f64; 2],
    floor: f64,
    seed: u64,
    tag: u64,
    mut drift: F,
) -> DMatrix<f64>
where
    F: FnMut(usize, f64, [f64; 2]) -> [f64; 2],
{
    let mut w1 = rng::stream(seed, &[tag, 1]);
    let mut w2 = rng::stream(seed, &[tag, 2]);
    let sq = grid.dt.sqrt();
    let steps = grid.steps();
    let rows = steps.div_ceil(grid.stride);
    let mut out = DMatrix::zeros(rows, 2);
    let mut x = x0;
    for k in 0..steps {
        if k % grid.stride == 0 {
            out[(k / grid.stride, 0)] = x[0];
            out[(k / grid.stride, 1)] = x[1];
        }
        let f = drift(k, k as f64 * grid.dt, x);
        let dw = [normal(&mut w1) * sq, normal(&mut w2) * sq];
        for j in 0..2 {
            x[j] = (x[j] + f[j] * grid.dt + sigma[j] * dw[j]).max(floor);
        }
    }
    out
}

/// SIR states `S`, `I` at the recorded instants.
pub fn simulate_sir(params: &SirParams, grid: &Grid, seed: u64) -> Result<TimeSeriesTable> {
    params.validate()?;
    grid.validate()?;
    let mut beta_rng = rng::stream(seed, &[TAG_SIR, 0]);
    let states = em2(
        grid,
        [params.s0, params.i0],
        [params.sigma1, params.sigma2],
        0.0,
        seed,
        TAG_SIR,
        |_, t, [s, i]| {
            let noise = if params.beta_noise > 0.0 {
                params.beta_noise * normal(&mut beta_rng)
            } else {
                0.0
            };
            let beta = (params.beta(t) + noise).max(0.0);
            params.rhs(beta, s, i)
        },
    );
    table(grid, &["S", "I"], states)
}

/// Consumer-resource states `R`, `C` at the recorded instants.
pub fn simulate_cr(params: &CrParams, grid: &Grid, seed: u64) -> Result<TimeSeriesTable> {
    params.validate()?;
    grid.validate()?;
    let states = em2(
        grid,
        [params.r0, params.c0],
        [params.sigma1, params.sigma2],
        CR_FLOOR,
        seed,
        TAG_CR,
        |_, _, [r, c]| params.rhs(r, c),
    );
    table(grid, &["R", "C"], states)
}

/// Weather series as covariate columns of a state-less table.
pub fn simulate_weather(params: &OuParams, grid: &Grid, seed: u64) -> Result<TimeSeriesTable> {
    params.validate()?;
    grid.validate()?;
    let steps = grid.steps();
    let rows = steps.div_ceil(grid.stride);
    let sq = grid.dt.sqrt();
    let mut values = DMatrix::zeros(rows, params.variables.len());
    for (j, v) in params.variables.iter().enumerate() {
        let mut noise = rng::stream(seed, &[TAG_WEATHER, j as u64]);
        let mut x = v.initial.clamp(v.low, v.high);
        for k in 0..steps {
            if k % grid.stride == 0 {
                values[(k / grid.stride, j)] = x;
            }
            x -= v.theta * (x - v.mean) * grid.dt;
            x += v.sigma * sq * normal(&mut noise);
            x = x.clamp(v.low, v.high);
        }
    }
    TimeSeriesTable::with_covariates(
        grid.recorded_times(),
        Vec::new(),
        DMatrix::zeros(rows, 0),
        Vec::new(),
        DMatrix::zeros(rows, 0),
        params.variables.iter().map(|v| v.name.clone()).collect(),
        values,
    )
}

fn table(grid: &Grid, names: &[&str], states: DMatrix<f64>) -> Result<TimeSeriesTable> {
    let m = states.nrows();
    TimeSeriesTable::new(
        grid.recorded_times(),
        names.iter().map(|s| s.to_string()).collect(),
        states,
        Vec::new(),
        DMatrix::zeros(m, 0),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Sir,
    Cr,
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sir" => Ok(Self::Sir),
            "cr" => Ok(Self::Cr),
            other => Err(Error::Config(format!("unknown model `{other}` (sir|cr)"))),
        }
    }
}

/// A synthetic dataset: model states plus weather covariates on one grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSpec {
    pub model: ModelKind,
    #[serde(default)]
    pub sigma: f64,
    #[serde(default)]
    pub grid: Grid,
    #[serde(default = "yes")]
    pub weather: bool,
    #[serde(default)]
    pub sir: Option<SirParams>,
    #[serde(default)]
    pub cr: Option<CrParams>,
    #[serde(default)]
    pub ou: Option<OuParams>,
}

fn yes() -> bool {
    true
}

impl SimulationSpec {
    pub fn new(model: ModelKind, sigma: f64) -> Self {
        Self {
            model,
            sigma,
            grid: Grid::default(),
            weather: true,
            sir: None,
            cr: None,
            ou: None,
        }
    }

    pub fn sir_params(&self) -> SirParams {
        let base = self.sir.unwrap_or_default();
        SirParams {
            sigma1: self.sigma,
            sigma2: self.sigma,
            ..base
        }
    }

    pub fn cr_params(&self) -> CrParams {
        let base = self.cr.unwrap_or_default();
        CrParams {
            sigma1: self.sigma,
            sigma2: self.sigma,
            ..base
        }
    }

    pub fn run(&self, seed: u64) -> Result<TimeSeriesTable> {
        let states = match self.model {
            ModelKind::Sir => simulate_sir(&self.sir_params(), &self.grid, seed)?,
            ModelKind::Cr => simulate_cr(&self.cr_params(), &self.grid, seed)?,
        };
        if !self.weather {
            return Ok(states);
        }
        let weather = simulate_weather(&self.ou.clone().unwrap_or_default(), &self.grid, seed)?;
        TimeSeriesTable::with_covariates(
            states.times,
            states.state_names,
            states.states,
            states.input_names,
            states.inputs,
            weather.covariate_names,
            weather.covariates,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn beta_at_zero() {
        let p = SirParams::default();
        assert!((p.beta(0.0) - 0.000384853).abs() < 1e-9);
        let flat = SirParams {
            a1: 0.0,
            a2: 0.0,
            a3: 0.0,
            ..p
        };
        for t in [0.0, 13.7, 400.0] {
            assert_eq!(flat.beta(t), 0.0003);
        }
        for k in 0..5000 {
            assert!(p.beta(k as f64 * 0.3) >= 0.0);
        }
    }

    #[test]
    fn initial_rates() {
        let p = SirParams::default();
        let [ds, _] = p.rhs(p.beta(0.0), 500.0, 7.0);
        assert!((ds - 48.653).abs() < 1e-3);

        let c = CrParams::default();
        let [dr, dc] = c.rhs(20.0, 10.0);
        assert!((dr - 1.01961).abs() < 1e-5);
        assert!((dc - 0.73039).abs() < 1e-5);
    }

    fn short(horizon: f64) -> Grid {
        Grid {
            horizon,
            dt: 0.01,
            stride: 100,
        }
    }

    #[test]
    fn default_grid_records_1500_days() {
        let t = simulate_sir(&SirParams::default(), &Grid::default(), 7).unwrap();
        assert_eq!(t.rows(), 1500);
        assert_eq!(t.times[1499], 1499.0);
        assert!(t.states.iter().all(|v| *v >= 0.0 && v.is_finite()));
    }

    #[test]
    fn pure_decay_matches_euler() {
        let p = SirParams {
            lambda: 0.0,
            a: 0.0,
            a1: 0.0,
            a2: 0.0,
            a3: 0.0,
            beta_noise: 0.0,
            i0: 0.0,
            ..SirParams::default()
        };
        let t = simulate_sir(&p, &short(10.0), 1).unwrap();
        for (i, &time) in t.times.iter().enumerate() {
            let exact = 500.0 * (-0.1 * time).exp();
            assert!((t.states[(i, 0)] - exact).abs() < 1e-3 * 500.0);
            let euler = 500.0 * (1.0f64 - 0.001).powi((i * 100) as i32);
            assert!((t.states[(i, 0)] - euler).abs() < 1e-9);
        }
    }

    #[test]
    fn sir_is_deterministic_under_seed() {
        let p = SirParams::with_sigma(0.3);
        let a = simulate_sir(&p, &short(50.0), 11).unwrap();
        let b = simulate_sir(&p, &short(50.0), 11).unwrap();
        let c = simulate_sir(&p, &short(50.0), 12).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn cr_decoupled_limit_and_floor() {
        let p = CrParams {
            a: 0.0,
            ..CrParams::default()
        };
        let t = simulate_cr(&p, &short(5.0), 0).unwrap();
        let last = t.rows() - 1;
        let steps = (last * 100) as i32;
        assert!((t.states[(last, 0)] - 20.0 * 1.001f64.powi(steps)).abs() < 1e-9);
        assert!((t.states[(last, 1)] - 10.0 * 0.99975f64.powi(steps)).abs() < 1e-9);

        for sigma in [0.0, 0.5, 1.0, 1.5, 2.0] {
            let t = simulate_cr(&CrParams::with_sigma(sigma), &short(300.0), 3).unwrap();
            assert!(t.states.iter().all(|v| v.is_finite() && *v >= CR_FLOOR));
        }
    }

    #[test]
    fn ou_decay_and_bounds() {
        let mut p = OuParams::default();
        for v in &mut p.variables {
            v.sigma = 0.0;
        }
        let t = simulate_weather(&p, &short(3.0), 0).unwrap();
        assert!((t.covariates[(1, 0)] - 20.0 * 0.999f64.powi(100)).abs() < 1e-9);
        assert!((t.covariates[(1, 0)] - 18.0958).abs() < 1e-4);

        let frozen = OuParams {
            variables: vec![OuVariable::new("X", 3.0, 0.0, 0.0, 0.0, (-1.0, 5.0))],
        };
        let t = simulate_weather(&frozen, &short(3.0), 0).unwrap();
        assert!(t.covariates.iter().all(|v| *v == 3.0));

        let t = simulate_weather(&OuParams::default(), &Grid::default(), 5).unwrap();
        for (j, v) in OuParams::default().variables.iter().enumerate() {
            assert!(t
                .covariates
                .column(j)
                .iter()
                .all(|x| *x >= v.low && *x <= v.high));
        }
    }

    #[test]
    fn ou_stationary_mean() {
        let p = OuParams {
            variables: vec![OuVariable::new("AT", 20.0, 0.0, 0.1, 10.0, (-1e9, 1e9))],
        };
        let grid = Grid {
            horizon: 1000.0,
            dt: 0.01,
            stride: 1,
        };
        let t = simulate_weather(&p, &grid, 9).unwrap();
        let xs: Vec<f64> = t.covariates.column(0).iter().skip(5000).copied().collect();
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        // Stationary variance σ²/(2θ); autocorrelation time 1/θ sets the
        // effective sample count.
        let var = 100.0 / 0.2;
        let n_eff = n * 0.01 * 0.1 / 2.0;
        let se = (var / n_eff).sqrt();
        assert!(mean.abs() < 3.0 * se, "mean {mean}, se {se}");
    }

    #[test]
    fn spec_joins_weather() {
        let mut spec = SimulationSpec::new(ModelKind::Cr, 0.5);
        spec.grid = short(20.0);
        let t = spec.run(4).unwrap();
        assert_eq!(t.state_names, vec!["R", "C"]);
        assert_eq!(t.covariate_names, vec!["AT", "RH", "WS", "PC"]);
        assert_eq!(t.rows(), 20);
    }
}
