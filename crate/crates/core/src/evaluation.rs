//! Fold construction, expanding-window cross-validation, the optimal
//! configuration sweep and the fixed-parameter baseline.
//!
//! The series tail is cut into equal blocks: the first
//! `initial_validation` blocks are validation-only, the remaining ones are
//! test folds. Test fold `j` (0-based) is validated on every block before
//! it, so the validation set expands by one block per fold while the
//! training range stays fixed. All MAEs are percentages of the normalized
//! scale.

use std::io::Write;
use std::ops::Range;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::discovery::{
    build_split_model, fit_global, fit_windows, reconstruct, reconstruct_global, CoefficientTrack,
    SplitModel,
};
use crate::error::{Error, Result};
use crate::forecast::{forecast_states, ForecastRun, ForecastTrack};
use crate::library::{build_library_named, evaluate_library, TermDescriptor};
use crate::predictor::{ForestConfig, ParameterPredictor};
use crate::preprocess::{
    estimate_derivatives, minmax_apply, minmax_fit, rolling_smooth, ScalingSpec, TimeSeriesTable,
};
use crate::rng;
use crate::strr::{SparseFit, StrrConfig};

/// Mean absolute error.
pub fn mae(y: &[f64], yhat: &[f64]) -> Result<f64> {
    if y.len() != yhat.len() || y.is_empty() {
        return Err(Error::mismatch(format!(
            "mae needs equal non-empty lengths, got {} and {}",
            y.len(),
            yhat.len()
        )));
    }
    Ok(y.iter().zip(yhat).map(|(a, b)| (a - b).abs()).sum::<f64>() / y.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FoldConfig {
    pub block_len: usize,
    pub test_folds: usize,
    pub initial_validation: usize,
}

impl Default for FoldConfig {
    fn default() -> Self {
        Self {
            block_len: 30,
            test_folds: 5,
            initial_validation: 5,
        }
    }
}

/// Training range plus the validation/test blocks at the end of the series.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub train: Range<usize>,
    pub blocks: Vec<Range<usize>>,
    pub initial_validation: usize,
}

/// Validation blocks and test block of one test fold.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub index: usize,
    pub validation: Vec<usize>,
    pub test: usize,
}

impl SplitPlan {
    pub fn tail(rows: usize, config: &FoldConfig) -> Result<Self> {
        if config.block_len == 0 || config.test_folds == 0 || config.initial_validation == 0 {
            return Err(Error::Config(
                "folds need block_len, test_folds and initial_validation >= 1".into(),
            ));
        }
        let n_blocks = config.test_folds + config.initial_validation;
        let held = n_blocks * config.block_len;
        if held + 3 > rows {
            return Err(Error::Config(format!(
                "{rows} rows cannot hold {n_blocks} blocks of {} plus a training range",
                config.block_len
            )));
        }
        let start = rows - held;
        let plan = Self {
            train: 0..start,
            blocks: (0..n_blocks)
                .map(|b| start + b * config.block_len..start + (b + 1) * config.block_len)
                .collect(),
            initial_validation: config.initial_validation,
        };
        plan.validate()?;
        Ok(plan)
    }

    pub fn validate(&self) -> Result<()> {
        let mut end = self.train.end;
        if self.train.start != 0 || self.train.is_empty() {
            return Err(Error::invalid("training range must start at row 0"));
        }
        for b in &self.blocks {
            if b.start != end || b.is_empty() {
                return Err(Error::invalid(format!(
                    "block {b:?} is empty or out of order"
                )));
            }
            end = b.end;
        }
        if self.initial_validation >= self.blocks.len() {
            return Err(Error::invalid("no test folds"));
        }
        Ok(())
    }

    pub fn folds(&self) -> Vec<FoldPlan> {
        (self.initial_validation..self.blocks.len())
            .enumerate()
            .map(|(index, test)| FoldPlan {
                index,
                validation: (0..test).collect(),
                test,
            })
            .collect()
    }

    pub fn rows(&self) -> usize {
        self.blocks.last().map_or(self.train.end, |b| b.end)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PrepareOptions {
    /// Centered rolling-mean width; 1 disables smoothing.
    pub smooth_window: usize,
    pub normalize: bool,
    pub library_degree: u32,
}

impl Default for PrepareOptions {
    fn default() -> Self {
        Self {
            smooth_window: 30,
            normalize: true,
            library_degree: 2,
        }
    }
}

/// Smoothed, normalized series with the training-range library and
/// derivatives.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub table: TimeSeriesTable,
    pub scaling: Option<ScalingSpec>,
    pub train_rows: usize,
    pub descriptors: Vec<TermDescriptor>,
    pub theta: DMatrix<f64>,
    pub derivatives: DMatrix<f64>,
    pub options: PrepareOptions,
}

pub fn prepare(
    raw: &TimeSeriesTable,
    options: &PrepareOptions,
    train_rows: usize,
) -> Result<PreparedData> {
    if train_rows < 3 || train_rows > raw.rows() {
        return Err(Error::Config(format!(
            "training range of {train_rows} rows is invalid for {} rows",
            raw.rows()
        )));
    }
    if raw.n_states() == 0 {
        return Err(Error::Config("dataset has no state columns".into()));
    }
    let smooth = rolling_smooth(raw, options.smooth_window.min(raw.rows()))?;
    let (table, scaling) = if options.normalize {
        let spec = minmax_fit(&smooth, 0..train_rows)?;
        (minmax_apply(&smooth, &spec)?, Some(spec))
    } else {
        (smooth, None)
    };
    let train = table.slice_rows(0..train_rows)?;
    let derivatives = estimate_derivatives(&train)?.values;
    let names: Vec<String> = table
        .state_names
        .iter()
        .chain(&table.input_names)
        .cloned()
        .collect();
    let descriptors = build_library_named(&names, options.library_degree);
    let theta = evaluate_library(&descriptors, &train)?.theta;
    Ok(PreparedData {
        table,
        scaling,
        train_rows,
        descriptors,
        theta,
        derivatives,
        options: *options,
    })
}

impl PreparedData {
    pub fn train_table(&self) -> TimeSeriesTable {
        self.table
            .slice_rows(0..self.train_rows)
            .expect("validated training range")
    }

    pub fn global_fits(&self, strr: &StrrConfig) -> Result<Vec<SparseFit>> {
        fit_global(&self.theta, &self.derivatives, strr)
    }

    /// Largest number of active non-bias terms over the states.
    pub fn max_varying(global: &[SparseFit]) -> usize {
        global
            .iter()
            .map(|f| f.active.iter().skip(1).filter(|a| **a).count())
            .max()
            .unwrap_or(0)
    }

    pub fn split_model(&self, global: &[SparseFit], n_varying: usize) -> Result<SplitModel> {
        build_split_model(
            &self.descriptors,
            &self.table.state_names,
            &self.table.input_names,
            &self.theta,
            &self.derivatives,
            global.to_vec(),
            n_varying,
        )
    }

    pub fn fit_track(
        &self,
        model: &SplitModel,
        window: usize,
        lambda: f64,
    ) -> Result<CoefficientTrack> {
        fit_windows(&self.theta, &self.derivatives, model, window, lambda)
    }

    fn observed(&self, row: usize) -> Vec<f64> {
        self.table.states.row(row).iter().copied().collect()
    }

    /// Forecast block `rows` from the observed state just before it.
    /// `track` and `inputs` start at row `rows.start - 1`.
    pub fn forecast_block(
        &self,
        model: &SplitModel,
        track: &ForecastTrack,
        rows: &Range<usize>,
    ) -> Result<(ForecastRun, BlockScore)> {
        if rows.start == 0 || rows.end > self.table.rows() {
            return Err(Error::invalid(format!("block {rows:?} outside the series")));
        }
        let x0 = self.observed(rows.start - 1);
        let inputs: Vec<Vec<f64>> = (rows.start - 1..rows.end - 1)
            .map(|i| self.table.inputs.row(i).iter().copied().collect())
            .collect();
        let run = forecast_states(model, track, &inputs, &x0, rows.len(), self.table.dt())?;
        let score = self.score(&run, rows);
        Ok((run, score))
    }

    fn score(&self, run: &ForecastRun, rows: &Range<usize>) -> BlockScore {
        let n = self.table.n_states();
        let mae_pct = (0..n)
            .map(|k| {
                let obs: Vec<f64> = rows.clone().map(|i| self.table.states[(i, k)]).collect();
                let pred: Vec<f64> = if run.states.is_empty() {
                    vec![run.x0[k]; obs.len()]
                } else {
                    run.states.iter().map(|s| s[k]).collect()
                };
                100.0 * mae(&obs[..pred.len()], &pred).expect("aligned lengths")
            })
            .collect();
        BlockScore {
            mae: mae_pct,
            diverged: run.diverged(),
        }
    }

    /// Training MAE (percent) of a reconstructed trajectory per state.
    fn trajectory_mae(&self, states: &[Vec<f64>]) -> Vec<f64> {
        (0..self.table.n_states())
            .map(|k| {
                let obs: Vec<f64> = (0..states.len())
                    .map(|i| self.table.states[(i, k)])
                    .collect();
                let pred: Vec<f64> = states.iter().map(|s| s[k]).collect();
                100.0 * mae(&obs, &pred).expect("non-empty trajectory")
            })
            .collect()
    }
}

/// Per-state MAE of one block forecast.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockScore {
    pub mae: Vec<f64>,
    pub diverged: bool,
}

/// Everything the selection rules need about one model on every block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigScore {
    /// `None` for the fixed-parameter baseline.
    pub window: Option<usize>,
    pub n_varying: Option<usize>,
    pub blocks: Vec<BlockScore>,
    pub training_mae: Vec<f64>,
    pub training_diverged: bool,
}

/// A fitted time-varying model with its coefficient predictor.
#[derive(Debug, Clone)]
pub struct FittedPipeline {
    pub window: usize,
    pub n_varying: usize,
    pub model: SplitModel,
    pub track: CoefficientTrack,
    pub predictor: Option<ParameterPredictor>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineSettings {
    pub strr: StrrConfig,
    pub forest: ForestConfig,
}

/// Fit a split model and track on the training rows and, when covariates
/// exist, train the coefficient predictor.
pub fn fit_pipeline(
    data: &PreparedData,
    global: &[SparseFit],
    window: usize,
    n_varying: usize,
    settings: &PipelineSettings,
) -> Result<FittedPipeline> {
    let model = data.split_model(global, n_varying)?;
    let track = data.fit_track(&model, window, settings.strr.lambda)?;
    let predictor = if data.table.covariate_names.is_empty() {
        None
    } else {
        let forest = ForestConfig {
            seed: rng::derive(settings.forest.seed, &[window as u64, n_varying as u64]),
            ..settings.forest
        };
        Some(ParameterPredictor::train(
            &track,
            &data.table.covariates,
            &data.table.covariate_names,
            &forest,
        )?)
    };
    Ok(FittedPipeline {
        window,
        n_varying,
        model,
        track,
        predictor,
    })
}

impl FittedPipeline {
    /// Forecasted coefficients for rows `from..end` of the series.
    pub fn predicted_track(&self, data: &PreparedData, from: usize) -> Result<ForecastTrack> {
        let predictor = self
            .predictor
            .as_ref()
            .ok_or_else(|| Error::Config("forecasting needs covariate columns".into()))?;
        let cov = data
            .table
            .covariates
            .rows(from, data.table.rows() - from)
            .into_owned();
        Ok(ForecastTrack {
            terms: predictor.terms.clone(),
            values: predictor.predict_rows(&cov)?,
        })
    }

    pub fn training_mae(&self, data: &PreparedData) -> Result<(Vec<f64>, bool)> {
        let rec = reconstruct(&self.model, &self.track, &data.train_table())?;
        Ok((
            data.trajectory_mae(&rec.trajectory.states),
            rec.trajectory.diverged_at.is_some(),
        ))
    }

    pub fn score(&self, data: &PreparedData, plan: &SplitPlan) -> Result<ConfigScore> {
        let from = plan.train.end - 1;
        let predicted = self.predicted_track(data, from)?;
        let blocks = plan
            .blocks
            .iter()
            .map(|rows| {
                let off = rows.start - 1 - from;
                let track = predicted.slice(off, off + rows.len());
                Ok(data.forecast_block(&self.model, &track, rows)?.1)
            })
            .collect::<Result<_>>()?;
        let (training_mae, training_diverged) = self.training_mae(data)?;
        Ok(ConfigScore {
            window: Some(self.window),
            n_varying: Some(self.n_varying),
            blocks,
            training_mae,
            training_diverged,
        })
    }
}

/// Fixed-parameter baseline scored on every block.
pub fn score_baseline(
    data: &PreparedData,
    global: &[SparseFit],
    plan: &SplitPlan,
) -> Result<ConfigScore> {
    let model = data.split_model(global, 0)?.global_only();
    let biases: Vec<Vec<f64>> = global.iter().map(|g| vec![g.coefficients[0]]).collect();
    let terms = vec![vec![0]; global.len()];
    let blocks = plan
        .blocks
        .iter()
        .map(|rows| {
            let track = ForecastTrack::constant(terms.clone(), biases.clone(), rows.len());
            Ok(data.forecast_block(&model, &track, rows)?.1)
        })
        .collect::<Result<_>>()?;
    let rec = reconstruct_global(&model, &data.train_table());
    Ok(ConfigScore {
        window: None,
        n_varying: None,
        blocks,
        training_mae: data.trajectory_mae(&rec.trajectory.states),
        training_diverged: rec.trajectory.diverged_at.is_some(),
    })
}

/// Sweep grid: every window paired with every N.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid {
    pub windows: Vec<usize>,
    /// `None` means 0 up to the largest active non-bias count.
    #[serde(default)]
    pub n_varying: Option<Vec<usize>>,
}

impl Default for Grid {
    fn default() -> Self {
        Self {
            windows: vec![7, 14, 21, 28],
            n_varying: None,
        }
    }
}

impl Grid {
    pub fn points(&self, max_varying: usize) -> Vec<(usize, usize)> {
        let ns: Vec<usize> = self
            .n_varying
            .clone()
            .unwrap_or_else(|| (0..=max_varying).collect());
        self.windows
            .iter()
            .flat_map(|&w| ns.iter().map(move |&n| (w, n)))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.windows.is_empty() || self.n_varying.as_ref().is_some_and(Vec::is_empty) {
            return Err(Error::Config("sweep grid is empty".into()));
        }
        if self.windows.iter().any(|&w| w < 2) {
            return Err(Error::Config("grid windows must be >= 2".into()));
        }
        Ok(())
    }
}

/// Scores of every grid point (in grid order) and of the baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepScores {
    pub state_names: Vec<String>,
    pub configs: Vec<ConfigScore>,
    pub baseline: ConfigScore,
    pub plan: SplitPlan,
}

pub fn score_grid(
    data: &PreparedData,
    grid: &Grid,
    plan: &SplitPlan,
    settings: &PipelineSettings,
) -> Result<SweepScores> {
    grid.validate()?;
    if plan.train.end != data.train_rows || plan.rows() > data.table.rows() {
        return Err(Error::mismatch(
            "fold plan does not match the prepared data",
        ));
    }
    let global = data.global_fits(&settings.strr)?;
    let points = grid.points(PreparedData::max_varying(&global));
    let configs = points
        .par_iter()
        .map(|&(w, n)| fit_pipeline(data, &global, w, n, settings)?.score(data, plan))
        .collect::<Result<Vec<_>>>()?;
    if configs.iter().all(|c| c.blocks.iter().all(|b| b.diverged)) {
        return Err(Error::Numerical("every grid configuration diverged".into()));
    }
    Ok(SweepScores {
        state_names: data.table.state_names.clone(),
        configs,
        baseline: score_baseline(data, &global, plan)?,
        plan: plan.clone(),
    })
}

/// Chosen configuration for one (fold, variable).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub config: usize,
    pub mae_valid: f64,
    pub mae_test: f64,
    pub diverged: bool,
}

fn mean_over(c: &ConfigScore, blocks: &[usize], var: usize) -> (f64, bool) {
    let sum: f64 = blocks.iter().map(|&b| c.blocks[b].mae[var]).sum();
    let diverged = blocks.iter().any(|&b| c.blocks[b].diverged);
    (sum / blocks.len() as f64, diverged)
}

/// Index minimizing `(diverged, score, N, w)` lexicographically.
fn argmin_by(configs: &[ConfigScore], score: impl Fn(&ConfigScore) -> (f64, bool)) -> usize {
    let key = |c: &ConfigScore| {
        let (s, d) = score(c);
        (d, s, c.n_varying.unwrap_or(0), c.window.unwrap_or(0))
    };
    (0..configs.len())
        .min_by(|&a, &b| {
            let (ka, kb) = (key(&configs[a]), key(&configs[b]));
            ka.0.cmp(&kb.0)
                .then(ka.1.total_cmp(&kb.1))
                .then(ka.2.cmp(&kb.2))
                .then(ka.3.cmp(&kb.3))
        })
        .expect("non-empty grid")
}

fn selection(c: &ConfigScore, idx: usize, fold: &FoldPlan, var: usize) -> Selection {
    let (mae_valid, dv) = mean_over(c, &fold.validation, var);
    Selection {
        config: idx,
        mae_valid,
        mae_test: c.blocks[fold.test].mae[var],
        diverged: dv || c.blocks[fold.test].diverged,
    }
}

/// Per fold and variable, the configuration with the lowest mean MAE over
/// the fold's validation blocks. Configurations that diverge on a
/// validation block or when reconstructing the training range rank last. Returned as `[fold][variable]`.
pub fn cv_select(scores: &SweepScores) -> Vec<Vec<Selection>> {
    let vars = scores.state_names.len();
    scores
        .plan
        .folds()
        .iter()
        .map(|fold| {
            (0..vars)
                .map(|v| {
                    let i = argmin_by(&scores.configs, |c| {
                        let (s, d) = mean_over(c, &fold.validation, v);
                        (s, d || c.training_diverged)
                    });
                    selection(&scores.configs[i], i, fold, v)
                })
                .collect()
        })
        .collect()
}

/// Per fold and variable, the configuration with the lowest test MAE,
/// diverged or not, so it never exceeds the cross-validated choice.
pub fn optimal_sweep(scores: &SweepScores) -> Vec<Vec<Selection>> {
    let vars = scores.state_names.len();
    scores
        .plan
        .folds()
        .iter()
        .map(|fold| {
            (0..vars)
                .map(|v| {
                    let i = argmin_by(&scores.configs, |c| (c.blocks[fold.test].mae[v], false));
                    selection(&scores.configs[i], i, fold, v)
                })
                .collect()
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    #[serde(rename = "CV")]
    Cv,
    #[serde(rename = "OC")]
    Oc,
    #[serde(rename = "fixed")]
    Fixed,
    #[serde(rename = "tv")]
    Tv,
}

impl Mode {
    pub fn label(self) -> &'static str {
        match self {
            Mode::Cv => "CV",
            Mode::Oc => "OC",
            Mode::Fixed => "fixed",
            Mode::Tv => "tv",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub dataset: String,
    pub noise: String,
    pub variable: String,
    /// 1-based test fold.
    pub fold: usize,
    pub mode: Mode,
    pub w: Option<usize>,
    pub n: Option<usize>,
    pub mae_valid: Option<f64>,
    pub mae_test: f64,
    pub diverged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingRow {
    pub dataset: String,
    pub noise: String,
    pub variable: String,
    pub model: Mode,
    pub w: Option<usize>,
    pub n: Option<usize>,
    pub mae: f64,
    pub diverged: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub rows: Vec<ReportRow>,
    pub training: Vec<TrainingRow>,
}

/// Labels attached to every report row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Labels {
    pub dataset: String,
    pub noise: String,
}

fn rows_for(
    scores: &SweepScores,
    sel: &[Vec<Selection>],
    mode: Mode,
    labels: &Labels,
) -> Vec<ReportRow> {
    let mut out = Vec::new();
    for (f, per_var) in sel.iter().enumerate() {
        for (v, s) in per_var.iter().enumerate() {
            let c = &scores.configs[s.config];
            out.push(ReportRow {
                dataset: labels.dataset.clone(),
                noise: labels.noise.clone(),
                variable: scores.state_names[v].clone(),
                fold: f + 1,
                mode,
                w: c.window,
                n: c.n_varying,
                mae_valid: Some(s.mae_valid),
                mae_test: s.mae_test,
                diverged: s.diverged,
            });
        }
    }
    out
}

fn baseline_rows(scores: &SweepScores, labels: &Labels) -> Vec<ReportRow> {
    let base = &scores.baseline;
    let mut out = Vec::new();
    for fold in scores.plan.folds() {
        for (v, name) in scores.state_names.iter().enumerate() {
            let (valid, dv) = mean_over(base, &fold.validation, v);
            out.push(ReportRow {
                dataset: labels.dataset.clone(),
                noise: labels.noise.clone(),
                variable: name.clone(),
                fold: fold.index + 1,
                mode: Mode::Fixed,
                w: None,
                n: None,
                mae_valid: Some(valid),
                mae_test: base.blocks[fold.test].mae[v],
                diverged: dv || base.blocks[fold.test].diverged,
            });
        }
    }
    out
}

/// Per variable, the grid configuration that reproduces the training range
/// best: lowest training MAE among those that do not diverge.
pub fn learning_select(scores: &SweepScores) -> Vec<usize> {
    (0..scores.state_names.len())
        .map(|v| {
            argmin_by(&scores.configs, |c| {
                (c.training_mae[v], c.training_diverged)
            })
        })
        .collect()
}

fn training_rows(scores: &SweepScores, labels: &Labels) -> Vec<TrainingRow> {
    let best = learning_select(scores);
    let mut out = Vec::new();
    for (v, name) in scores.state_names.iter().enumerate() {
        let c = &scores.configs[best[v]];
        for (model, src) in [(Mode::Tv, c), (Mode::Fixed, &scores.baseline)] {
            out.push(TrainingRow {
                dataset: labels.dataset.clone(),
                noise: labels.noise.clone(),
                variable: name.clone(),
                model,
                w: src.window,
                n: src.n_varying,
                mae: src.training_mae[v],
                diverged: src.training_diverged,
            });
        }
    }
    out
}

impl EvaluationReport {
    /// Cross-validated rows plus the fixed baseline.
    pub fn evaluate(scores: &SweepScores, labels: &Labels) -> Self {
        let cv = cv_select(scores);
        let mut rows = rows_for(scores, &cv, Mode::Cv, labels);
        rows.extend(baseline_rows(scores, labels));
        Self {
            rows,
            training: training_rows(scores, labels),
        }
    }

    /// Cross-validated and optimal-configuration rows plus the baseline.
    pub fn sweep(scores: &SweepScores, labels: &Labels) -> Self {
        let cv = cv_select(scores);
        let mut rows = rows_for(scores, &cv, Mode::Cv, labels);
        rows.extend(rows_for(scores, &optimal_sweep(scores), Mode::Oc, labels));
        rows.extend(baseline_rows(scores, labels));
        Self {
            rows,
            training: training_rows(scores, labels),
        }
    }

    /// Rows of one mode and variable, ordered by fold.
    pub fn select(&self, mode: Mode, variable: &str) -> Vec<&ReportRow> {
        self.rows
            .iter()
            .filter(|r| r.mode == mode && r.variable == variable)
            .collect()
    }

    pub fn mean_test(&self, mode: Mode, variable: &str) -> f64 {
        let rows = self.select(mode, variable);
        rows.iter().map(|r| r.mae_test).sum::<f64>() / rows.len().max(1) as f64
    }

    pub fn training_mae(&self, model: Mode, variable: &str) -> Option<f64> {
        self.training
            .iter()
            .find(|r| r.model == model && r.variable == variable)
            .map(|r| r.mae)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record([
            "dataset",
            "noise",
            "variable",
            "fold",
            "mode",
            "w",
            "N",
            "MAE_valid",
            "MAE_test",
            "diverged",
        ])?;
        let opt = |v: Option<usize>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.rows {
            w.write_record([
                r.dataset.clone(),
                r.noise.clone(),
                r.variable.clone(),
                r.fold.to_string(),
                r.mode.label().to_string(),
                opt(r.w),
                opt(r.n),
                r.mae_valid.map(|v| v.to_string()).unwrap_or_default(),
                r.mae_test.to_string(),
                r.diverged.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Paired test MAEs of one time-varying configuration and the baseline.
pub fn compare_baseline(
    data: &PreparedData,
    plan: &SplitPlan,
    window: usize,
    n_varying: usize,
    settings: &PipelineSettings,
    labels: &Labels,
) -> Result<Vec<ReportRow>> {
    let global = data.global_fits(&settings.strr)?;
    let tv = fit_pipeline(data, &global, window, n_varying, settings)?.score(data, plan)?;
    let base = score_baseline(data, &global, plan)?;
    let mut out = Vec::new();
    for fold in plan.folds() {
        for (v, name) in data.table.state_names.iter().enumerate() {
            for (mode, c) in [(Mode::Tv, &tv), (Mode::Fixed, &base)] {
                out.push(ReportRow {
                    dataset: labels.dataset.clone(),
                    noise: labels.noise.clone(),
                    variable: name.clone(),
                    fold: fold.index + 1,
                    mode,
                    w: c.window,
                    n: c.n_varying,
                    mae_valid: None,
                    mae_test: c.blocks[fold.test].mae[v],
                    diverged: c.blocks[fold.test].diverged,
                });
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mae_examples() {
        assert_eq!(mae(&[0.3, 0.1], &[0.3, 0.1]).unwrap(), 0.0);
        assert_eq!(mae(&[0.0, 1.0], &[1.0, 0.0]).unwrap(), 1.0);
        let v = mae(&[0.2, 0.4, 0.9], &[0.1, 0.5, 0.9]).unwrap();
        assert!((v - 0.2 / 3.0).abs() < 1e-15);
        assert!(mae(&[1.0], &[1.0, 2.0]).is_err());
        assert!(mae(&[], &[]).is_err());
        let shifted = mae(&[5.2, 5.4, 5.9], &[5.1, 5.5, 5.9]).unwrap();
        assert!((shifted - v).abs() < 1e-12);
    }

    #[test]
    fn tail_plan_layout() {
        let plan = SplitPlan::tail(1500, &FoldConfig::default()).unwrap();
        assert_eq!(plan.train, 0..1200);
        assert_eq!(plan.blocks.len(), 10);
        assert_eq!(plan.blocks[0], 1200..1230);
        assert_eq!(plan.blocks[9], 1470..1500);
        let folds = plan.folds();
        assert_eq!(folds.len(), 5);
        assert_eq!(folds[0].validation, (0..5).collect::<Vec<_>>());
        assert_eq!(folds[0].test, 5);
        assert_eq!(folds[4].validation, (0..9).collect::<Vec<_>>());
        assert_eq!(folds[4].test, 9);
        for f in &folds {
            assert!(f
                .validation
                .iter()
                .all(|&v| plan.blocks[v].end <= plan.blocks[f.test].start));
        }
        assert!(SplitPlan::tail(100, &FoldConfig::default()).is_err());
    }

    fn score(w: usize, n: usize, mae: &[f64]) -> ConfigScore {
        ConfigScore {
            window: Some(w),
            n_varying: Some(n),
            blocks: mae
                .iter()
                .map(|&m| BlockScore {
                    mae: vec![m],
                    diverged: false,
                })
                .collect(),
            training_mae: vec![0.0],
            training_diverged: false,
        }
    }

    fn scores(configs: Vec<ConfigScore>) -> SweepScores {
        SweepScores {
            state_names: vec!["x".into()],
            baseline: configs[0].clone(),
            configs,
            plan: SplitPlan {
                train: 0..10,
                blocks: vec![10..12, 12..14, 14..16],
                initial_validation: 1,
            },
        }
    }

    #[test]
    fn single_candidate_is_returned() {
        let s = scores(vec![score(7, 1, &[3.0, 2.0, 1.0])]);
        let cv = cv_select(&s);
        assert_eq!(cv.len(), 2);
        assert!(cv.iter().all(|f| f[0].config == 0));
        assert_eq!(optimal_sweep(&s), cv);
    }

    #[test]
    fn lower_validation_mae_wins_and_ties_prefer_small_n_then_w() {
        let s = scores(vec![
            score(7, 1, &[3.0, 2.0, 1.0]),
            score(7, 2, &[2.0, 2.0, 5.0]),
        ]);
        let cv = cv_select(&s);
        assert_eq!(cv[0][0].config, 1);
        assert_eq!(cv[1][0].config, 1);
        assert_eq!(optimal_sweep(&s)[1][0].config, 0);

        let s = scores(vec![
            score(14, 2, &[1.0; 3]),
            score(14, 1, &[1.0; 3]),
            score(7, 2, &[1.0; 3]),
            score(21, 1, &[1.0; 3]),
        ]);
        assert!(cv_select(&s).iter().all(|f| f[0].config == 1));
    }

    #[test]
    fn diverged_configs_rank_last() {
        let mut bad = score(7, 0, &[0.1, 0.1, 0.1]);
        bad.blocks[0].diverged = true;
        let s = scores(vec![bad, score(7, 3, &[9.0, 9.0, 9.0])]);
        assert_eq!(cv_select(&s)[0][0].config, 1);
    }

    #[test]
    fn optimal_never_worse_than_cv() {
        let s = scores(vec![
            score(7, 0, &[1.0, 4.0, 2.0]),
            score(14, 1, &[2.0, 1.0, 3.0]),
            score(21, 2, &[0.5, 3.0, 0.1]),
        ]);
        for (c, o) in cv_select(&s).iter().zip(optimal_sweep(&s)) {
            assert!(o[0].mae_test <= c[0].mae_test);
        }
    }

    #[test]
    fn grid_points_cover_product() {
        let g = Grid::default();
        let p = g.points(3);
        assert_eq!(p.len(), 16);
        assert_eq!(p[0], (7, 0));
        assert_eq!(p[15], (28, 3));
        assert!(Grid {
            windows: vec![],
            n_varying: None
        }
        .validate()
        .is_err());
    }
}
