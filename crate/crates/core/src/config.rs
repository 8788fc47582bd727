//! Declarative run configuration shared by every CLI subcommand.
//!
//! Unknown keys are rejected and every section has defaults, so `{}` is a
//! valid configuration: the noise-free SIR dataset with the default grids.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::bounds::SirBoundConfig;
use crate::error::{Error, Result};
use crate::evaluation::{FoldConfig, Grid, Labels, PipelineSettings, PrepareOptions};
use crate::predictor::ForestConfig;
use crate::preprocess::{ingest_csv, ColumnRoles, IngestOptions, TimeSeriesTable};
use crate::rng;
use crate::simulate::{ModelKind, SimulationSpec};
use crate::strr::StrrConfig;

const TAG_SIMULATE: u64 = 1;
const TAG_FOREST: u64 = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "lowercase")]
pub enum DataSource {
    Simulate(SimulationSpec),
    Csv(CsvSource),
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Simulate(SimulationSpec::new(ModelKind::Sir, 0.0))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvSource {
    pub path: PathBuf,
    pub roles: ColumnRoles,
    #[serde(default)]
    pub ingest: IngestOptions,
}

/// The single configuration fitted by `fit` and used by `forecast`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelChoice {
    pub window: usize,
    pub n_varying: usize,
}

impl Default for ModelChoice {
    fn default() -> Self {
        Self {
            window: 14,
            n_varying: 1,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Dataset label in reports; derived from the source when absent.
    pub dataset: Option<String>,
    /// Noise or station label in reports; derived from the source when absent.
    pub noise: Option<String>,
    pub data: DataSource,
    pub preprocess: PrepareOptions,
    pub strr: StrrConfig,
    pub grid: Grid,
    pub model: ModelChoice,
    /// The forest seed is combined with the global seed.
    pub forest: ForestConfig,
    /// Covariate columns fed to the predictor; all covariates when absent.
    pub covariates: Option<Vec<String>>,
    pub folds: FoldConfig,
    pub bound: SirBoundConfig,
    pub seed: u64,
}

impl RunConfig {
    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.strr.validate()?;
        self.forest.validate()?;
        self.grid.validate()?;
        if self.preprocess.smooth_window == 0 {
            return Err(Error::Config("smooth_window must be >= 1".into()));
        }
        if self.preprocess.library_degree > 6 {
            return Err(Error::Config(
                "library_degree above 6 is not supported".into(),
            ));
        }
        if self.model.window < 2 {
            return Err(Error::Config("model window must be >= 2".into()));
        }
        if let DataSource::Simulate(spec) = &self.data {
            if !(spec.sigma >= 0.0) {
                return Err(Error::Config("sigma must be >= 0".into()));
            }
        }
        Ok(())
    }

    pub fn labels(&self) -> Labels {
        let (dataset, noise) = match &self.data {
            DataSource::Simulate(s) => (
                match s.model {
                    ModelKind::Sir => "SIR",
                    ModelKind::Cr => "CR",
                }
                .to_string(),
                s.sigma.to_string(),
            ),
            DataSource::Csv(c) => (
                c.path
                    .file_stem()
                    .map_or_else(|| "csv".into(), |s| s.to_string_lossy().into_owned()),
                String::new(),
            ),
        };
        Labels {
            dataset: self.dataset.clone().unwrap_or(dataset),
            noise: self.noise.clone().unwrap_or(noise),
        }
    }

    pub fn settings(&self) -> PipelineSettings {
        PipelineSettings {
            strr: self.strr,
            forest: ForestConfig {
                seed: rng::derive(self.seed, &[TAG_FOREST, self.forest.seed]),
                ..self.forest
            },
        }
    }

    /// Load or simulate the raw dataset and keep the selected covariates.
    pub fn load(&self) -> Result<TimeSeriesTable> {
        let table = match &self.data {
            DataSource::Simulate(spec) => spec.run(rng::derive(self.seed, &[TAG_SIMULATE]))?,
            DataSource::Csv(c) => ingest_csv(&c.path, &c.roles, c.ingest)?,
        };
        let Some(wanted) = &self.covariates else {
            return Ok(table);
        };
        let idx = wanted
            .iter()
            .map(|w| {
                table
                    .covariate_names
                    .iter()
                    .position(|n| n == w)
                    .ok_or_else(|| Error::UnknownColumn(w.clone()))
            })
            .collect::<Result<Vec<_>>>()?;
        let covariates = table.covariates.select_columns(&idx);
        TimeSeriesTable::with_covariates(
            table.times,
            table.state_names,
            table.states,
            table.input_names,
            table.inputs,
            wanted.clone(),
            covariates,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_valid_and_round_trips() {
        let c = RunConfig::from_json("{}").unwrap();
        assert_eq!(c, RunConfig::default());
        c.validate().unwrap();
        let back = RunConfig::from_json(&c.to_json().unwrap()).unwrap();
        assert_eq!(back, c);
        assert_eq!(c.labels().dataset, "SIR");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::from_json(r#"{"bogus": 1}"#).is_err());
        assert!(RunConfig::from_json(r#"{"strr": {"lamda": 0.1}}"#).is_err());
        let e = RunConfig::from_json(r#"{"forest": {"trees": "many"}}"#).unwrap_err();
        assert!(e.is_config_error());
    }

    #[test]
    fn partial_sections_fill_defaults() {
        let c = RunConfig::from_json(
            r#"{"data": {"simulate": {"model": "cr", "sigma": 0.5}}, "forest": {"trees": 200}}"#,
        )
        .unwrap();
        assert_eq!(c.forest.trees, 200);
        assert_eq!(c.forest.max_depth, 5);
        assert_eq!(c.labels().noise, "0.5");
        let bad = RunConfig::from_json(r#"{"forest": {"min_samples_split": 3}}"#).unwrap();
        assert!(bad.validate().is_err());
    }
}
