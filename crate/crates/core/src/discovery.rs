//! Two-stage discovery of split models.
//!
//! Stage one fits constant coefficients over the whole training series
//! with STRR; the result doubles as the fixed-parameter baseline. Stage
//! two picks, per state, the bias plus the `N` active terms most
//! correlated with the state derivative and refits only those
//! coefficients on consecutive windows of `w` samples, holding the
//! remaining active coefficients at their global values:
//!
//! ```text
//! ẋ_k(t) = ξ_k0(t) + Σ_{i ∈ topN} ξ_ki(t) z_i(t) + Σ_{j ∈ active \ topN} ξ̄_kj z_j(t)
//! ```

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{integrate_held, Integration, LibraryField};
use crate::error::{Error, Result};
use crate::library::TermDescriptor;
use crate::preprocess::{DerivativeTable, ScalingSpec, TimeSeriesTable};
use crate::strr::{strr_fit, NormalSystem, SparseFit, StrrConfig};

/// Correlations closer than this are ties, resolved by library index.
const CORRELATION_TIE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscoveryConfig {
    /// Window length in samples.
    pub window: usize,
    /// Number of non-bias time-varying terms per state.
    pub n_varying: usize,
    #[serde(default)]
    pub strr: StrrConfig,
}

impl DiscoveryConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window < 2 {
            return Err(Error::Config(format!(
                "window must be >= 2 samples, got {}",
                self.window
            )));
        }
        self.strr.validate()
    }
}

/// Coefficient structure of one state equation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateModel {
    pub name: String,
    /// The constant-coefficient STRR fit over the training series.
    pub global: SparseFit,
    /// Time-varying term indices: the bias first, then the selected terms in
    /// order of decreasing correlation.
    pub varying: Vec<usize>,
    /// Active terms whose coefficients stay at their global value.
    pub fixed: Vec<usize>,
    /// Length-`l` vector, non-zero only at `fixed` indices.
    pub fixed_coefficients: Vec<f64>,
}

impl StateModel {
    fn check(&self, l: usize) -> Result<()> {
        if self.varying.first() != Some(&0) {
            return Err(Error::invalid(format!(
                "state `{}`: bias must be time-varying",
                self.name
            )));
        }
        for &i in self.varying.iter().skip(1) {
            if i >= l || !self.global.active[i] {
                return Err(Error::invalid(format!(
                    "state `{}`: varying term {i} is not active",
                    self.name
                )));
            }
        }
        for &j in &self.fixed {
            if self.varying.contains(&j) || j >= l || !self.global.active[j] {
                return Err(Error::invalid(format!(
                    "state `{}`: fixed term {j} overlaps varying set or is inactive",
                    self.name
                )));
            }
        }
        let covered = self.fixed.len() + self.varying.len() - usize::from(!self.global.active[0]);
        if covered != self.global.active.iter().filter(|a| **a).count() {
            return Err(Error::invalid(format!(
                "state `{}`: fixed and varying sets do not partition the active set",
                self.name
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitModel {
    pub descriptors: Vec<TermDescriptor>,
    pub state_names: Vec<String>,
    pub input_names: Vec<String>,
    pub states: Vec<StateModel>,
}

impl SplitModel {
    pub fn n_states(&self) -> usize {
        self.states.len()
    }

    pub fn n_terms(&self) -> usize {
        self.descriptors.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.states.len() != self.state_names.len() {
            return Err(Error::mismatch("one state model per state required"));
        }
        let nv = self.state_names.len() + self.input_names.len();
        if self.descriptors.iter().any(|d| d.exponents.len() != nv) {
            return Err(Error::mismatch("descriptors do not match the variables"));
        }
        self.states.iter().try_for_each(|s| s.check(self.n_terms()))
    }

    /// Coefficients with every varying term held at `values[k][pos]`.
    pub fn fill_split(&self, values: &[&[f64]], buf: &mut [f64]) {
        let l = self.n_terms();
        for (k, state) in self.states.iter().enumerate() {
            let row = &mut buf[k * l..(k + 1) * l];
            row.copy_from_slice(&state.fixed_coefficients);
            for (pos, &i) in state.varying.iter().enumerate() {
                row[i] = values[k][pos];
            }
        }
    }

    /// Coefficients of the constant-coefficient baseline.
    pub fn fill_global(&self, buf: &mut [f64]) {
        let l = self.n_terms();
        for (k, state) in self.states.iter().enumerate() {
            buf[k * l..(k + 1) * l].copy_from_slice(&state.global.coefficients);
        }
    }

    /// Split model whose fixed block is the whole global fit and whose only
    /// varying term is an all-zero bias; used to express the baseline.
    pub fn global_only(&self) -> Self {
        let mut out = self.clone();
        for s in &mut out.states {
            s.varying = vec![0];
            s.fixed = s
                .global
                .active_indices()
                .into_iter()
                .filter(|&j| j != 0)
                .collect();
            s.fixed_coefficients = s.global.coefficients.clone();
            s.fixed_coefficients[0] = 0.0;
        }
        out
    }
}

/// One window `[start, end)` of sample indices with the fitted values of
/// the state's varying coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub start: usize,
    pub end: usize,
    pub values: Vec<f64>,
    /// Fewer rows than free coefficients; solvable only through the ridge
    /// penalty.
    pub underdetermined: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateTrack {
    pub terms: Vec<usize>,
    pub windows: Vec<Window>,
}

/// Piecewise-constant trajectories of the varying coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientTrack {
    pub window: usize,
    pub rows: usize,
    pub states: Vec<StateTrack>,
}

impl CoefficientTrack {
    pub fn window_index(&self, sample: usize) -> Result<usize> {
        if sample >= self.rows || self.window == 0 {
            return Err(Error::TrackGap(sample));
        }
        Ok(sample / self.window)
    }

    /// Values of state `k`'s varying coefficients at `sample` (zero-order hold).
    pub fn values_at(&self, k: usize, sample: usize) -> Result<&[f64]> {
        let w = self.window_index(sample)?;
        self.states[k]
            .windows
            .get(w)
            .filter(|win| win.start <= sample && sample < win.end)
            .map(|win| win.values.as_slice())
            .ok_or(Error::TrackGap(sample))
    }

    /// Per-sample series of the coefficient at position `pos` of state `k`.
    pub fn series(&self, k: usize, pos: usize) -> Vec<f64> {
        self.states[k]
            .windows
            .iter()
            .flat_map(|w| std::iter::repeat_n(w.values[pos], w.end - w.start))
            .collect()
    }

    fn check_tiling(&self) -> Result<()> {
        for st in &self.states {
            let mut next = 0;
            for w in &st.windows {
                if w.start != next || w.end <= w.start {
                    return Err(Error::TrackGap(next));
                }
                if w.values.len() != st.terms.len() || w.values.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Numerical(format!(
                        "window [{}, {}) has invalid values",
                        w.start, w.end
                    )));
                }
                next = w.end;
            }
            if next != self.rows {
                return Err(Error::TrackGap(next));
            }
        }
        Ok(())
    }
}

/// Constant-coefficient STRR fit per state over all rows.
pub fn fit_global(
    theta: &DMatrix<f64>,
    derivatives: &DMatrix<f64>,
    config: &StrrConfig,
) -> Result<Vec<SparseFit>> {
    if theta.nrows() != derivatives.nrows() {
        return Err(Error::mismatch(format!(
            "library has {} rows, derivatives have {}",
            theta.nrows(),
            derivatives.nrows()
        )));
    }
    (0..derivatives.ncols())
        .into_par_iter()
        .map(|k| strr_fit(theta, &derivatives.column(k).into_owned(), config, None))
        .collect()
}

/// Pearson correlation; zero when either side has no variance.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    if n == 0 {
        return 0.0;
    }
    let ma = a[..n].iter().sum::<f64>() / n as f64;
    let mb = b[..n].iter().sum::<f64>() / n as f64;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for i in 0..n {
        let (da, db) = (a[i] - ma, b[i] - mb);
        sab += da * db;
        saa += da * da;
        sbb += db * db;
    }
    if saa <= 0.0 || sbb <= 0.0 {
        return 0.0;
    }
    (sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0)
}

/// Bias index followed by the `n` active non-bias columns with the largest
/// absolute correlation against `target`.
pub fn select_top_n(
    theta: &DMatrix<f64>,
    active: &[bool],
    target: &DVector<f64>,
    n: usize,
) -> Result<Vec<usize>> {
    let candidates: Vec<usize> = (1..theta.ncols()).filter(|&j| active[j]).collect();
    if n > candidates.len() {
        return Err(Error::Config(format!(
            "requested {n} time-varying terms but only {} active non-bias terms",
            candidates.len()
        )));
    }
    let y: Vec<f64> = target.iter().copied().collect();
    let mut scored: Vec<(usize, f64)> = candidates
        .iter()
        .map(|&j| {
            let col: Vec<f64> = theta.column(j).iter().copied().collect();
            (j, pearson(&col, &y).abs())
        })
        .collect();
    let mut out = vec![0];
    for _ in 0..n {
        let best = scored.iter().map(|s| s.1).fold(f64::NEG_INFINITY, f64::max);
        let pos = scored
            .iter()
            .position(|s| s.1 >= best - CORRELATION_TIE)
            .expect("non-empty candidates");
        out.push(scored.remove(pos).0);
    }
    Ok(out)
}

/// Build the split structure from global fits, clamping `n_varying` to the
/// number of active non-bias terms of each state.
pub fn build_split_model(
    descriptors: &[TermDescriptor],
    state_names: &[String],
    input_names: &[String],
    theta: &DMatrix<f64>,
    derivatives: &DMatrix<f64>,
    global: Vec<SparseFit>,
    n_varying: usize,
) -> Result<SplitModel> {
    let states = global
        .into_iter()
        .enumerate()
        .map(|(k, fit)| {
            let available = fit.active.iter().skip(1).filter(|a| **a).count();
            let varying = select_top_n(
                theta,
                &fit.active,
                &derivatives.column(k).into_owned(),
                n_varying.min(available),
            )?;
            let fixed: Vec<usize> = fit
                .active_indices()
                .into_iter()
                .filter(|j| !varying.contains(j))
                .collect();
            let mut fixed_coefficients = vec![0.0; fit.coefficients.len()];
            for &j in &fixed {
                fixed_coefficients[j] = fit.coefficients[j];
            }
            Ok(StateModel {
                name: state_names[k].clone(),
                global: fit,
                varying,
                fixed,
                fixed_coefficients,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let model = SplitModel {
        descriptors: descriptors.to_vec(),
        state_names: state_names.to_vec(),
        input_names: input_names.to_vec(),
        states,
    };
    model.validate()?;
    Ok(model)
}

/// Consecutive windows `[s, s + w)` over `rows` samples; the last may be
/// shorter.
pub fn window_bounds(rows: usize, window: usize) -> Vec<(usize, usize)> {
    (0..rows)
        .step_by(window.max(1))
        .map(|s| (s, (s + window).min(rows)))
        .collect()
}

/// Ridge refits of the varying coefficients on each window, with the fixed
/// block subtracted from the target. The support is not re-thresholded.
pub fn fit_windows(
    theta: &DMatrix<f64>,
    derivatives: &DMatrix<f64>,
    model: &SplitModel,
    window: usize,
    lambda: f64,
) -> Result<CoefficientTrack> {
    if window < 2 {
        return Err(Error::Config(format!("window must be >= 2, got {window}")));
    }
    let rows = theta.nrows();
    if derivatives.nrows() != rows || derivatives.ncols() != model.n_states() {
        return Err(Error::mismatch(
            "derivatives do not match library rows or states",
        ));
    }
    if theta.ncols() != model.n_terms() {
        return Err(Error::mismatch("library width differs from the model"));
    }
    let bounds = window_bounds(rows, window);
    let states = model
        .states
        .par_iter()
        .enumerate()
        .map(|(k, state)| {
            let fixed = DVector::from_column_slice(&state.fixed_coefficients);
            let residual = derivatives.column(k) - theta * fixed;
            let design = theta.select_columns(&state.varying);
            let p = state.varying.len();
            let windows = bounds
                .iter()
                .map(|&(start, end)| {
                    let len = end - start;
                    let sys = NormalSystem::new(
                        &design.rows(start, len).into_owned(),
                        &residual.rows(start, len).into_owned(),
                    );
                    let all: Vec<usize> = (0..p).collect();
                    Ok(Window {
                        start,
                        end,
                        values: sys.solve_subset(&all, lambda)?,
                        underdetermined: len < p,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(StateTrack {
                terms: state.varying.clone(),
                windows,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let track = CoefficientTrack {
        window,
        rows,
        states,
    };
    track.check_tiling()?;
    Ok(track)
}

/// Learned right-hand side at the observed samples and the trajectory
/// integrated from the first sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Reconstruction {
    pub derivatives: DerivativeTable,
    pub trajectory: Integration,
}

pub fn reconstruct(
    model: &SplitModel,
    track: &CoefficientTrack,
    table: &TimeSeriesTable,
) -> Result<Reconstruction> {
    let m = table.rows();
    if track.rows < m {
        return Err(Error::TrackGap(track.rows));
    }
    if track.states.len() != model.n_states() || table.n_states() != model.n_states() {
        return Err(Error::mismatch("track, table and model disagree on states"));
    }
    let n = model.n_states();
    let l = model.n_terms();
    let coeffs: Vec<Vec<f64>> = (0..m)
        .map(|i| {
            let values = (0..n)
                .map(|k| track.values_at(k, i))
                .collect::<Result<Vec<_>>>()?;
            let mut buf = vec![0.0; n * l];
            model.fill_split(&values, &mut buf);
            Ok(buf)
        })
        .collect::<Result<_>>()?;
    Ok(reconstruct_with(model, table, |i, buf| {
        buf.copy_from_slice(&coeffs[i])
    }))
}

/// Reconstruction of the constant-coefficient baseline.
pub fn reconstruct_global(model: &SplitModel, table: &TimeSeriesTable) -> Reconstruction {
    let mut global = vec![0.0; model.n_states() * model.n_terms()];
    model.fill_global(&mut global);
    reconstruct_with(model, table, |_, buf| buf.copy_from_slice(&global))
}

fn reconstruct_with<C>(model: &SplitModel, table: &TimeSeriesTable, mut coeffs: C) -> Reconstruction
where
    C: FnMut(usize, &mut [f64]),
{
    let (m, n) = (table.rows(), model.n_states());
    let inputs = input_rows(table);
    let mut field = LibraryField::new(&model.descriptors, n, table.n_inputs());
    let mut buf = vec![0.0; n * model.n_terms()];
    let mut out = vec![0.0; n];
    let mut values = DMatrix::zeros(m, n);
    for i in 0..m {
        coeffs(i, &mut buf);
        let x: Vec<f64> = table.states.row(i).iter().copied().collect();
        field.eval(&x, &inputs[i], &buf, &mut out);
        for k in 0..n {
            values[(i, k)] = out[k];
        }
    }
    let x0: Vec<f64> = table.states.row(0).iter().copied().collect();
    let trajectory = integrate_held(
        &model.descriptors,
        &x0,
        &inputs,
        m.saturating_sub(1),
        table.dt(),
        coeffs,
    );
    Reconstruction {
        derivatives: DerivativeTable {
            names: model.state_names.clone(),
            values,
        },
        trajectory,
    }
}

pub(crate) fn input_rows(table: &TimeSeriesTable) -> Vec<Vec<f64>> {
    (0..table.rows())
        .map(|i| table.inputs.row(i).iter().copied().collect())
        .collect()
}

/// Serialized form of a fitted model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub config: DiscoveryConfig,
    pub library_degree: u32,
    pub dt: f64,
    pub train_rows: usize,
    pub model: SplitModel,
    pub track: CoefficientTrack,
    pub scaling: Option<ScalingSpec>,
}

impl ModelFile {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let file: Self = serde_json::from_str(s)?;
        file.model.validate()?;
        file.track.check_tiling()?;
        Ok(file)
    }
}
