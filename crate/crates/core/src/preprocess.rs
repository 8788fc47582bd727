//! Ingestion, smoothing, min-max scaling and derivative estimation.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::ops::Range;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const SPACING_RTOL: f64 = 1e-9;

/// Samples on a time grid: states (library variables with derivatives),
/// inputs (library variables without derivatives) and covariates
/// (exogenous drivers used only by the coefficient predictor).
///
/// Matrices are `rows × columns`, one row per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeriesTable {
    pub times: Vec<f64>,
    pub state_names: Vec<String>,
    pub states: DMatrix<f64>,
    pub input_names: Vec<String>,
    pub inputs: DMatrix<f64>,
    pub covariate_names: Vec<String>,
    pub covariates: DMatrix<f64>,
}

impl TimeSeriesTable {
    pub fn new(
        times: Vec<f64>,
        state_names: Vec<String>,
        states: DMatrix<f64>,
        input_names: Vec<String>,
        inputs: DMatrix<f64>,
    ) -> Result<Self> {
        let m = times.len();
        Self::with_covariates(
            times,
            state_names,
            states,
            input_names,
            inputs,
            Vec::new(),
            DMatrix::zeros(m, 0),
        )
    }

    pub fn with_covariates(
        times: Vec<f64>,
        state_names: Vec<String>,
        states: DMatrix<f64>,
        input_names: Vec<String>,
        inputs: DMatrix<f64>,
        covariate_names: Vec<String>,
        covariates: DMatrix<f64>,
    ) -> Result<Self> {
        let m = times.len();
        for (what, mat, names) in [
            ("states", &states, &state_names),
            ("inputs", &inputs, &input_names),
            ("covariates", &covariates, &covariate_names),
        ] {
            if mat.nrows() != m {
                return Err(Error::mismatch(format!(
                    "{what} have {} rows, expected {m}",
                    mat.nrows()
                )));
            }
            if mat.ncols() != names.len() {
                return Err(Error::mismatch(format!(
                    "{what} have {} columns but {} names",
                    mat.ncols(),
                    names.len()
                )));
            }
            if mat.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!("{what} contain non-finite values")));
            }
        }
        if let Some(row) = times.windows(2).position(|w| !(w[1] > w[0])) {
            return Err(Error::NonMonotoneTime { row: row + 1 });
        }
        Ok(Self {
            times,
            state_names,
            states,
            input_names,
            inputs,
            covariate_names,
            covariates,
        })
    }

    pub fn rows(&self) -> usize {
        self.times.len()
    }

    pub fn n_states(&self) -> usize {
        self.states.ncols()
    }

    pub fn n_inputs(&self) -> usize {
        self.inputs.ncols()
    }

    /// Nominal sample spacing: the median gap between consecutive samples.
    pub fn dt(&self) -> f64 {
        let mut gaps: Vec<f64> = self.times.windows(2).map(|w| w[1] - w[0]).collect();
        if gaps.is_empty() {
            return 1.0;
        }
        gaps.sort_by(f64::total_cmp);
        gaps[gaps.len() / 2]
    }

    /// Whether all gaps equal the nominal spacing within a relative 1e-9.
    pub fn is_uniform(&self) -> bool {
        let dt = self.dt();
        self.times
            .windows(2)
            .all(|w| ((w[1] - w[0]) - dt).abs() <= SPACING_RTOL * dt.abs().max(1.0))
    }

    pub fn slice_rows(&self, range: Range<usize>) -> Result<Self> {
        if range.start >= range.end || range.end > self.rows() {
            return Err(Error::invalid(format!(
                "row range {range:?} outside table with {} rows",
                self.rows()
            )));
        }
        let len = range.end - range.start;
        Ok(Self {
            times: self.times[range.clone()].to_vec(),
            state_names: self.state_names.clone(),
            states: self.states.rows(range.start, len).into_owned(),
            input_names: self.input_names.clone(),
            inputs: self.inputs.rows(range.start, len).into_owned(),
            covariate_names: self.covariate_names.clone(),
            covariates: self.covariates.rows(range.start, len).into_owned(),
        })
    }

    pub fn state_index(&self, name: &str) -> Option<usize> {
        self.state_names.iter().position(|n| n == name)
    }

    /// Write the table as CSV with a leading `time` column.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["time".to_string()];
        header.extend(self.state_names.iter().cloned());
        header.extend(self.input_names.iter().cloned());
        header.extend(self.covariate_names.iter().cloned());
        w.write_record(&header)?;
        for i in 0..self.rows() {
            let mut rec = vec![self.times[i].to_string()];
            for mat in [&self.states, &self.inputs, &self.covariates] {
                rec.extend(mat.row(i).iter().map(|v| v.to_string()));
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    fn map_columns(&self, f: impl Fn(&[f64]) -> Vec<f64>) -> Self {
        let apply = |mat: &DMatrix<f64>| {
            let mut out = mat.clone();
            for j in 0..mat.ncols() {
                let col: Vec<f64> = mat.column(j).iter().copied().collect();
                for (i, v) in f(&col).into_iter().enumerate() {
                    out[(i, j)] = v;
                }
            }
            out
        };
        Self {
            times: self.times.clone(),
            state_names: self.state_names.clone(),
            states: apply(&self.states),
            input_names: self.input_names.clone(),
            inputs: apply(&self.inputs),
            covariate_names: self.covariate_names.clone(),
            covariates: apply(&self.covariates),
        }
    }
}

/// Time derivatives of the state columns, aligned with the table rows.
#[derive(Debug, Clone, PartialEq)]
pub struct DerivativeTable {
    pub names: Vec<String>,
    pub values: DMatrix<f64>,
}

/// Which CSV columns play which role.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColumnRoles {
    pub time: String,
    pub states: Vec<String>,
    #[serde(default)]
    pub inputs: Vec<String>,
    #[serde(default)]
    pub covariates: Vec<String>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IngestOptions {
    /// Average sub-daily rows into one row per whole time unit.
    #[serde(default)]
    pub daily_average: bool,
}

pub fn ingest_csv(
    path: impl AsRef<Path>,
    roles: &ColumnRoles,
    opts: IngestOptions,
) -> Result<TimeSeriesTable> {
    let file = std::fs::File::open(path)?;
    ingest_reader(file, roles, opts)
}

pub fn ingest_reader<R: Read>(
    reader: R,
    roles: &ColumnRoles,
    opts: IngestOptions,
) -> Result<TimeSeriesTable> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::UnknownColumn(name.to_string()))
    };
    let time_col = find(&roles.time)?;
    let value_cols: Vec<usize> = roles
        .states
        .iter()
        .chain(&roles.inputs)
        .chain(&roles.covariates)
        .map(|n| find(n))
        .collect::<Result<_>>()?;

    let mut times = Vec::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let Some(t) = record.get(time_col).and_then(parse_time) else {
            continue;
        };
        let values: Option<Vec<f64>> = value_cols
            .iter()
            .map(|&c| record.get(c).and_then(parse_value))
            .collect();
        if let Some(values) = values {
            times.push(t);
            rows.push(values);
        }
    }

    if opts.daily_average {
        (times, rows) = daily_average(&times, &rows)?;
    }
    if times.len() < 2 {
        return Err(Error::invalid(format!(
            "need at least 2 complete rows, found {}",
            times.len()
        )));
    }

    let m = times.len();
    let (ns, nu, nc) = (
        roles.states.len(),
        roles.inputs.len(),
        roles.covariates.len(),
    );
    let block =
        |offset: usize, width: usize| DMatrix::from_fn(m, width, |i, j| rows[i][offset + j]);
    TimeSeriesTable::with_covariates(
        times,
        roles.states.clone(),
        block(0, ns),
        roles.inputs.clone(),
        block(ns, nu),
        roles.covariates.clone(),
        block(ns + nu, nc),
    )
}

fn parse_value(s: &str) -> Option<f64> {
    let v: f64 = s.parse().ok()?;
    v.is_finite().then_some(v)
}

/// Numeric time, or a date / datetime converted to days since the Unix epoch.
fn parse_time(s: &str) -> Option<f64> {
    if let Some(v) = parse_value(s) {
        return Some(v);
    }
    const FORMATS: [&str; 3] = ["%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M"];
    let dt = FORMATS
        .iter()
        .find_map(|f| chrono::NaiveDateTime::parse_from_str(s, f).ok())
        .or_else(|| {
            chrono::NaiveDate::parse_from_str(s, "%Y-%m-%d")
                .ok()
                .and_then(|d| d.and_hms_opt(0, 0, 0))
        })?;
    Some(dt.and_utc().timestamp() as f64 / 86_400.0)
}

fn daily_average(times: &[f64], rows: &[Vec<f64>]) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    if let Some(row) = times.windows(2).position(|w| w[1] < w[0]) {
        return Err(Error::NonMonotoneTime { row: row + 1 });
    }
    let mut bins: BTreeMap<i64, (usize, Vec<f64>)> = BTreeMap::new();
    for (t, row) in times.iter().zip(rows) {
        let entry = bins
            .entry(t.floor() as i64)
            .or_insert_with(|| (0, vec![0.0; row.len()]));
        entry.0 += 1;
        for (acc, v) in entry.1.iter_mut().zip(row) {
            *acc += v;
        }
    }
    Ok(bins
        .into_iter()
        .map(|(day, (count, sums))| {
            (
                day as f64,
                sums.into_iter().map(|s| s / count as f64).collect(),
            )
        })
        .unzip())
}

/// Centered moving average; near the edges the window is clipped to the
/// available samples.
pub fn rolling_smooth(table: &TimeSeriesTable, window_points: usize) -> Result<TimeSeriesTable> {
    if window_points == 0 {
        return Err(Error::invalid("smoothing window must be at least 1"));
    }
    if window_points > table.rows() {
        return Err(Error::invalid(format!(
            "smoothing window {window_points} exceeds {} rows",
            table.rows()
        )));
    }
    if window_points == 1 {
        return Ok(table.clone());
    }
    let left = (window_points - 1) / 2;
    let right = window_points - 1 - left;
    Ok(table.map_columns(|col| centered_mean(col, left, right)))
}

fn centered_mean(col: &[f64], left: usize, right: usize) -> Vec<f64> {
    let m = col.len();
    (0..m)
        .map(|i| {
            let lo = i.saturating_sub(left);
            let hi = (i + right + 1).min(m);
            col[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
        })
        .collect()
}

/// Min and max of one column over the training segment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColumnScale {
    pub min: f64,
    pub max: f64,
    pub degenerate: bool,
}

impl ColumnScale {
    pub fn from_values(values: impl IntoIterator<Item = f64>) -> Option<Self> {
        let (mut min, mut max) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in values {
            min = min.min(v);
            max = max.max(v);
        }
        (min <= max).then_some(Self {
            min,
            max,
            degenerate: max == min,
        })
    }

    pub fn apply(&self, v: f64) -> f64 {
        if self.degenerate {
            0.5
        } else {
            (v - self.min) / (self.max - self.min)
        }
    }

    pub fn invert(&self, v: f64) -> f64 {
        if self.degenerate {
            self.min
        } else {
            self.min + v * (self.max - self.min)
        }
    }

    pub fn range(&self) -> f64 {
        self.max - self.min
    }
}

/// Per-column scaling fitted on the training rows only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingSpec {
    pub states: Vec<ColumnScale>,
    pub inputs: Vec<ColumnScale>,
    pub covariates: Vec<ColumnScale>,
}

impl ScalingSpec {
    pub fn denormalize_state(&self, k: usize, v: f64) -> f64 {
        self.states[k].invert(v)
    }
}

pub fn minmax_fit(table: &TimeSeriesTable, train_range: Range<usize>) -> Result<ScalingSpec> {
    if train_range.start >= train_range.end || train_range.end > table.rows() {
        return Err(Error::invalid(format!(
            "empty or out-of-range training segment {train_range:?}"
        )));
    }
    let fit = |mat: &DMatrix<f64>| -> Vec<ColumnScale> {
        (0..mat.ncols())
            .map(|j| {
                ColumnScale::from_values(train_range.clone().map(|i| mat[(i, j)]))
                    .expect("non-empty training range")
            })
            .collect()
    };
    Ok(ScalingSpec {
        states: fit(&table.states),
        inputs: fit(&table.inputs),
        covariates: fit(&table.covariates),
    })
}

pub fn minmax_apply(table: &TimeSeriesTable, spec: &ScalingSpec) -> Result<TimeSeriesTable> {
    transform(table, spec, ColumnScale::apply)
}

pub fn minmax_invert(table: &TimeSeriesTable, spec: &ScalingSpec) -> Result<TimeSeriesTable> {
    transform(table, spec, ColumnScale::invert)
}

fn transform(
    table: &TimeSeriesTable,
    spec: &ScalingSpec,
    f: fn(&ColumnScale, f64) -> f64,
) -> Result<TimeSeriesTable> {
    let apply = |mat: &DMatrix<f64>, scales: &[ColumnScale], what: &str| {
        if scales.len() != mat.ncols() {
            return Err(Error::mismatch(format!(
                "scaling has {} {what} columns, table has {}",
                scales.len(),
                mat.ncols()
            )));
        }
        Ok(DMatrix::from_fn(mat.nrows(), mat.ncols(), |i, j| {
            f(&scales[j], mat[(i, j)])
        }))
    };
    Ok(TimeSeriesTable {
        times: table.times.clone(),
        state_names: table.state_names.clone(),
        states: apply(&table.states, &spec.states, "state")?,
        input_names: table.input_names.clone(),
        inputs: apply(&table.inputs, &spec.inputs, "input")?,
        covariate_names: table.covariate_names.clone(),
        covariates: apply(&table.covariates, &spec.covariates, "covariate")?,
    })
}

/// Second-order finite differences: central in the interior, one-sided
/// three-point stencils at both ends.
pub fn estimate_derivatives(table: &TimeSeriesTable) -> Result<DerivativeTable> {
    let m = table.rows();
    if m < 3 {
        return Err(Error::invalid(format!(
            "derivative estimation needs at least 3 rows, found {m}"
        )));
    }
    let h = table.dt();
    let x = &table.states;
    let values = DMatrix::from_fn(m, x.ncols(), |i, j| {
        if i == 0 {
            (-3.0 * x[(0, j)] + 4.0 * x[(1, j)] - x[(2, j)]) / (2.0 * h)
        } else if i == m - 1 {
            (3.0 * x[(m - 1, j)] - 4.0 * x[(m - 2, j)] + x[(m - 3, j)]) / (2.0 * h)
        } else {
            (x[(i + 1, j)] - x[(i - 1, j)]) / (2.0 * h)
        }
    });
    Ok(DerivativeTable {
        names: table.state_names.clone(),
        values,
    })
}
