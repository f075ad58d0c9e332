//! Experiment harness: runs a method over an image set against one victim,
//! measures the efficiency metrics on the saved 8-bit outputs and writes a
//! per-image JSONL report plus a one-row aggregate CSV.

mod config;
mod experiment;
pub mod metrics;

pub use config::{Defense, EndpointConfig, ExperimentConfig, InputSource, Method, VictimSource};
pub use experiment::{
    evaluate_pair, measure, run_experiment, write_report, Aggregate, EfficiencyReport,
    FailedRecord, ImageOutcome, ImageRecord, Measurement, PairRecord,
};

use crate::baselines::BaselineError;
use crate::imageio::ImageIoError;
use crate::nes::AttackError;
use crate::synthetic::SpecError;
use crate::tensor::TensorError;
use crate::victim::QueryError;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Spec(#[from] SpecError),
    #[error(transparent)]
    Image(#[from] ImageIoError),
    #[error(transparent)]
    Query(#[from] QueryError),
    #[error(transparent)]
    Attack(#[from] AttackError),
    #[error(transparent)]
    Baseline(#[from] BaselineError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl HarnessError {
    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        HarnessError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}
