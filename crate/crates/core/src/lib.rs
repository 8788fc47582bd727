//! Data-driven discovery of ordinary differential equations whose
//! coefficients are partly constant and partly time-varying.
//!
//! The pipeline runs in stages:
//!
//! 1. [`preprocess`]: ingest, smooth, min-max normalize and differentiate
//!    the raw series.
//! 2. [`library`]: evaluate a polynomial candidate library over states and
//!    inputs.
//! 3. [`strr`]: sequential threshold ridge regression, the sparse solver.
//! 4. [`discovery`]: global constant fit, top-N time-varying term
//!    selection and windowed refits of the time-varying coefficients.
//! 5. [`predictor`]: random forests that forecast each time-varying
//!    coefficient from exogenous covariates.
//! 6. [`forecast`]: integrate the split model with forecasted coefficients.
//! 7. [`evaluation`]: expanding-window cross-validation, optimal
//!    configuration sweep and fixed-parameter baseline.
//!
//! [`simulate`] generates the synthetic SIR, consumer-resource and weather
//! datasets, and [`bounds`] computes and checks the finite-horizon
//! Grönwall forecast error bounds.

// `!(x > 0.0)` style checks are meant to reject NaN too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bounds;
pub mod config;
pub mod discovery;
pub mod dynamics;
pub mod error;
pub mod evaluation;
pub mod forecast;
pub mod library;
pub mod predictor;
pub mod preprocess;
pub mod rng;
pub mod simulate;
pub mod strr;

pub use discovery::{CoefficientTrack, DiscoveryConfig, ModelFile, SplitModel, StateModel};
pub use error::{Error, Result};
pub use evaluation::{EvaluationReport, FoldPlan, ReportRow, SplitPlan};
pub use forecast::{ForecastRun, ForecastTrack};
pub use library::{CandidateLibrary, TermDescriptor};
pub use predictor::{Forest, ForestConfig, ParameterPredictor};
pub use preprocess::{DerivativeTable, ScalingSpec, TimeSeriesTable};
pub use strr::{SparseFit, StrrConfig};
