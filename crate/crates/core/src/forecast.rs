//! Forward integration of a split model with forecasted coefficients.

use serde::{Deserialize, Serialize};

use crate::discovery::{CoefficientTrack, SplitModel};
use crate::dynamics::integrate_held;
use crate::error::{Error, Result};
use crate::preprocess::ScalingSpec;

/// Per-sample values of each state's varying coefficients:
/// `values[k][i][pos]` for state `k`, sample `i` of the forecast span.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastTrack {
    pub terms: Vec<Vec<usize>>,
    pub values: Vec<Vec<Vec<f64>>>,
}

impl ForecastTrack {
    pub fn len(&self) -> usize {
        self.values.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Fitted window values over `start..end`, held per sample.
    pub fn from_fitted(track: &CoefficientTrack, start: usize, end: usize) -> Result<Self> {
        let values = (0..track.states.len())
            .map(|k| {
                (start..end)
                    .map(|i| track.values_at(k, i).map(<[f64]>::to_vec))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            terms: track.states.iter().map(|s| s.terms.clone()).collect(),
            values,
        })
    }

    /// The same coefficient values at every sample.
    pub fn constant(terms: Vec<Vec<usize>>, values: Vec<Vec<f64>>, len: usize) -> Self {
        Self {
            terms,
            values: values.into_iter().map(|v| vec![v; len]).collect(),
        }
    }

    /// Samples `start..end` of this track.
    pub fn slice(&self, start: usize, end: usize) -> Self {
        Self {
            terms: self.terms.clone(),
            values: self.values.iter().map(|v| v[start..end].to_vec()).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastRun {
    pub x0: Vec<f64>,
    pub horizon: usize,
    /// Predicted states after steps `1..=horizon`; shorter when diverged.
    pub states: Vec<Vec<f64>>,
    /// Step at which the first non-finite state appeared.
    pub diverged_at: Option<usize>,
    pub track: ForecastTrack,
}

impl ForecastRun {
    pub fn diverged(&self) -> bool {
        self.diverged_at.is_some()
    }

    /// Predicted states mapped back to original units.
    pub fn denormalized(&self, scaling: &ScalingSpec) -> Vec<Vec<f64>> {
        self.states
            .iter()
            .map(|x| {
                x.iter()
                    .enumerate()
                    .map(|(k, &v)| scaling.denormalize_state(k, v))
                    .collect()
            })
            .collect()
    }
}

/// Integrate `horizon` RK4 steps of size `dt` from `x0`. Step `i` holds the
/// inputs `inputs[i]` and the coefficients `track[.][i]`, so both must
/// cover at least `horizon` samples.
pub fn forecast_states(
    model: &SplitModel,
    track: &ForecastTrack,
    inputs: &[Vec<f64>],
    x0: &[f64],
    horizon: usize,
    dt: f64,
) -> Result<ForecastRun> {
    if horizon == 0 {
        return Err(Error::invalid("forecast horizon must be >= 1"));
    }
    if x0.len() != model.n_states() || x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid(
            "initial state must be finite with one value per state",
        ));
    }
    if track.values.len() != model.n_states() || track.len() < horizon {
        return Err(Error::TrackGap(track.len()));
    }
    if !model.input_names.is_empty() && inputs.len() < horizon {
        return Err(Error::TrackGap(inputs.len()));
    }
    for (k, state) in model.states.iter().enumerate() {
        if track.terms[k] != state.varying {
            return Err(Error::mismatch(format!(
                "track terms for state `{}` differ from the model",
                state.name
            )));
        }
    }
    let n = model.n_states();
    let run = integrate_held(&model.descriptors, x0, inputs, horizon, dt, |i, buf| {
        let values: Vec<&[f64]> = (0..n).map(|k| track.values[k][i].as_slice()).collect();
        model.fill_split(&values, buf);
    });
    let mut states = run.states;
    states.remove(0);
    Ok(ForecastRun {
        x0: x0.to_vec(),
        horizon,
        states,
        diverged_at: run.diverged_at,
        track: track.slice(0, horizon),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discovery::StateModel;
    use crate::library::build_library;
    use crate::preprocess::ColumnScale;
    use crate::strr::SparseFit;

    /// ẋ = c·x with `c` the varying coefficient of the linear term.
    fn scalar_model() -> SplitModel {
        SplitModel {
            descriptors: build_library(1, 0, 1),
            state_names: vec!["x".into()],
            input_names: vec![],
            states: vec![StateModel {
                name: "x".into(),
                global: SparseFit {
                    coefficients: vec![0.0, -1.0],
                    active: vec![false, true],
                    iterations: 1,
                    converged: true,
                    empty: false,
                },
                varying: vec![0, 1],
                fixed: vec![],
                fixed_coefficients: vec![0.0, 0.0],
            }],
        }
    }

    fn run(c: f64, steps: usize, dt: f64) -> ForecastRun {
        let track = ForecastTrack::constant(vec![vec![0, 1]], vec![vec![0.0, c]], steps);
        forecast_states(&scalar_model(), &track, &[], &[1.0], steps, dt).unwrap()
    }

    #[test]
    fn exponential_decay() {
        let r = run(-1.0, 100, 0.01);
        assert_eq!(r.states.len(), 100);
        assert!((r.states[99][0] - (-1.0f64).exp()).abs() < 1e-6);
    }

    #[test]
    fn zero_coefficients_hold_state() {
        let r = run(0.0, 20, 0.1);
        assert!(r.states.iter().all(|s| s[0] == 1.0));
    }

    #[test]
    fn observed_order_is_four() {
        let exact = (-1.0f64).exp();
        let e1 = (run(-1.0, 10, 0.1).states[9][0] - exact).abs();
        let e2 = (run(-1.0, 20, 0.05).states[19][0] - exact).abs();
        assert!((e1 / e2).log2() >= 3.5);
    }

    #[test]
    fn divergence_truncates() {
        let r = run(400.0, 100, 1.0);
        assert!(r.diverged());
        assert!(r.states.len() < 100);
        assert!(r.states.iter().flatten().all(|v| v.is_finite()));
    }

    #[test]
    fn short_track_is_rejected() {
        let track = ForecastTrack::constant(vec![vec![0, 1]], vec![vec![0.0, 1.0]], 3);
        assert!(forecast_states(&scalar_model(), &track, &[], &[1.0], 5, 0.1).is_err());
    }

    #[test]
    fn denormalization() {
        let r = run(-0.5, 10, 0.1);
        let spec = ScalingSpec {
            states: vec![ColumnScale {
                min: 10.0,
                max: 30.0,
                degenerate: false,
            }],
            inputs: vec![],
            covariates: vec![],
        };
        for (raw, norm) in r.denormalized(&spec).iter().zip(&r.states) {
            let back = spec.states[0].apply(raw[0]);
            assert!((back - norm[0]).abs() <= 1e-12 * norm[0].abs().max(1.0));
        }
    }
}
