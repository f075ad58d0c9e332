//! Deterministic in-process victims with known structure, and a mock server
//! exposing them over the wire protocol.
//!
//! * [`AnalyticVictim`] has a closed-form gradient and validates the
//!   gradient estimator.
//! * [`RuleVictim`] has a known length mechanism (brighter is longer) and
//!   validates the attack end to end.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::objectives::GenerationResponse;
use crate::tensor::ImageTensor;
use crate::victim::{DecodeOptions, QueryError, Victim};

mod analytic;
mod mock;
mod rule;

pub use analytic::{AnalyticObjective, AnalyticVictim, LinearObjective, QuadraticObjective};
pub use mock::{serve_mock, MockError, MockServer};
pub use rule::RuleVictim;

#[derive(Debug, Error)]
pub enum SpecError {
    #[error("cannot read victim spec {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid victim spec: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid victim spec: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VictimKind {
    Rule,
    Analytic,
}

/// Victim spec file: which synthetic victim to build and with what parameters.
///
/// ```json
/// {"kind": "rule", "seed": 0, "l_max": 1000, "k": 20, "delay_per_token_ms": 0.0}
/// {"kind": "analytic", "seed": 7, "l_max": 8, "k": 10, "dim": 12}
/// ```
///
/// For the analytic victim `l_max` is the fixed output length and `dim` the
/// flattened input size (`height * width * 3`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VictimSpec {
    pub kind: VictimKind,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_l_max")]
    pub l_max: usize,
    #[serde(default = "default_k")]
    pub k: usize,
    /// Artificial server-side decode time per generated token.
    #[serde(default)]
    pub delay_per_token_ms: f64,
    #[serde(default = "default_tau0")]
    pub tau0: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
}

fn default_l_max() -> usize {
    1000
}
fn default_k() -> usize {
    20
}
fn default_tau0() -> f64 {
    8.0
}

impl VictimSpec {
    pub fn rule(l_max: usize, k: usize) -> Self {
        VictimSpec {
            kind: VictimKind::Rule,
            seed: 0,
            l_max,
            k,
            delay_per_token_ms: 0.0,
            tau0: default_tau0(),
            dim: None,
        }
    }

    pub fn analytic(seed: u64, dim: usize, length: usize, k: usize) -> Self {
        VictimSpec {
            kind: VictimKind::Analytic,
            seed,
            l_max: length,
            k,
            delay_per_token_ms: 0.0,
            tau0: default_tau0(),
            dim: Some(dim),
        }
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, SpecError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| SpecError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn build(&self) -> Result<SyntheticVictim, SpecError> {
        if self.k < 2 {
            return Err(SpecError::Invalid(format!("k must be >= 2, got {}", self.k)));
        }
        if self.l_max == 0 {
            return Err(SpecError::Invalid("l_max must be >= 1".into()));
        }
        if !(self.delay_per_token_ms >= 0.0 && self.delay_per_token_ms.is_finite()) {
            return Err(SpecError::Invalid("delay_per_token_ms must be >= 0".into()));
        }
        match self.kind {
            VictimKind::Rule => {
                if !(self.tau0 >= 0.0 && self.tau0.is_finite()) {
                    return Err(SpecError::Invalid("tau0 must be >= 0".into()));
                }
                Ok(SyntheticVictim::Rule(RuleVictim {
                    l_max: self.l_max,
                    k: self.k,
                    tau0: self.tau0,
                }))
            }
            VictimKind::Analytic => {
                let dim = self
                    .dim
                    .filter(|&d| d > 0)
                    .ok_or_else(|| SpecError::Invalid("analytic victim needs a positive dim".into()))?;
                Ok(SyntheticVictim::Analytic(AnalyticVictim::from_seed(
                    self.seed, dim, self.l_max, self.k,
                )))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SyntheticVictim {
    Rule(RuleVictim),
    Analytic(AnalyticVictim),
}

impl Victim for SyntheticVictim {
    fn name(&self) -> &str {
        match self {
            SyntheticVictim::Rule(v) => v.name(),
            SyntheticVictim::Analytic(v) => v.name(),
        }
    }

    fn topk(&self) -> usize {
        match self {
            SyntheticVictim::Rule(v) => v.topk(),
            SyntheticVictim::Analytic(v) => v.topk(),
        }
    }

    fn query(&self, image: &ImageTensor, decode: &DecodeOptions) -> Result<GenerationResponse, QueryError> {
        match self {
            SyntheticVictim::Rule(v) => v.query(image, decode),
            SyntheticVictim::Analytic(v) => v.query(image, decode),
        }
    }
}
