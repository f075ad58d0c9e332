//! Efficiency objectives computed from a single victim response.
//!
//! The attack maximises
//!
//! ```text
//! L = L_len + alpha * L_eos + beta * L_var
//! ```
//!
//! where `L_len` is the number of generated tokens, `L_eos` penalises
//! end-of-sequence probability with weights that decay geometrically away from
//! the last position, and `L_var` is the negative mean KL divergence between
//! each position's renormalised top-k distribution and the uniform
//! distribution over k entries. All three only read the response; nothing here
//! is differentiated.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Slack on `Σ topk ≤ 1`.
const MASS_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ObjectiveError {
    #[error("top-k probabilities at position {position} sum to zero")]
    DegenerateDistribution { position: usize },
    #[error("invalid objective parameters: {0}")]
    InvalidParams(String),
}

/// Probability information the victim reports for one generated token.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositionInfo {
    pub eos_prob: f64,
    /// The k largest full-vocabulary probabilities, sorted descending.
    pub topk_probs: Vec<f64>,
}

/// What the victim returned for one image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationResponse {
    /// Number of generated tokens, i.e. decoder calls.
    pub length: usize,
    pub positions: Vec<PositionInfo>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub server_decode_ms: Option<f64>,
    /// Client-side wall clock for the call that produced this response.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub client_latency_ms: Option<f64>,
}

/// A violated [`GenerationResponse`] invariant, naming the offending field.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("{field}: {reason}")]
pub struct ResponseViolation {
    pub field: String,
    pub reason: String,
}

impl GenerationResponse {
    pub fn empty() -> Self {
        GenerationResponse {
            length: 0,
            positions: Vec::new(),
            text: None,
            server_decode_ms: None,
            client_latency_ms: None,
        }
    }

    /// Checks every structural and probabilistic invariant.
    pub fn validate(&self) -> Result<(), ResponseViolation> {
        let bad = |field: String, reason: String| Err(ResponseViolation { field, reason });
        if self.positions.len() != self.length {
            return bad(
                "positions".into(),
                format!(
                    "has {} entries but length is {}",
                    self.positions.len(),
                    self.length
                ),
            );
        }
        for (i, pos) in self.positions.iter().enumerate() {
            if !is_probability(pos.eos_prob) {
                return bad(
                    format!("positions[{i}].eos_prob"),
                    format!("{} is not a probability", pos.eos_prob),
                );
            }
            let mut prev = f64::INFINITY;
            for (j, &p) in pos.topk_probs.iter().enumerate() {
                if !is_probability(p) {
                    return bad(
                        format!("positions[{i}].topk_probs[{j}]"),
                        format!("{p} is not a probability"),
                    );
                }
                if p > prev {
                    return bad(
                        format!("positions[{i}].topk_probs"),
                        "not sorted descending".into(),
                    );
                }
                prev = p;
            }
            let mass: f64 = pos.topk_probs.iter().sum();
            if mass > 1.0 + MASS_TOLERANCE {
                return bad(
                    format!("positions[{i}].topk_probs"),
                    format!("sums to {mass} > 1"),
                );
            }
        }
        if let Some(ms) = self.server_decode_ms {
            if !ms.is_finite() || ms < 0.0 {
                return bad("server_decode_ms".into(), format!("{ms} is not a duration"));
            }
        }
        Ok(())
    }

    /// Same response with timing metadata dropped, for transport comparisons.
    pub fn without_timing(&self) -> Self {
        GenerationResponse {
            server_decode_ms: None,
            client_latency_ms: None,
            ..self.clone()
        }
    }
}

fn is_probability(p: f64) -> bool {
    p.is_finite() && (0.0..=1.0).contains(&p)
}

/// Weights of the three objective terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ObjectiveParams {
    /// Geometric decay base for the EOS weights, in `(0, 1]`.
    pub omega: f64,
    pub alpha: f64,
    pub beta: f64,
    /// Size of the top-k distribution compared against uniform.
    pub k: usize,
}

impl Default for ObjectiveParams {
    fn default() -> Self {
        ObjectiveParams {
            omega: 0.1,
            alpha: 0.5,
            beta: 0.1,
            k: 100,
        }
    }
}

impl ObjectiveParams {
    pub fn validate(&self) -> Result<(), ObjectiveError> {
        if !(self.omega > 0.0 && self.omega <= 1.0) {
            return Err(ObjectiveError::InvalidParams(format!(
                "omega must be in (0, 1], got {}",
                self.omega
            )));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(ObjectiveError::InvalidParams(format!(
                "alpha must be >= 0, got {}",
                self.alpha
            )));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(ObjectiveError::InvalidParams(format!(
                "beta must be >= 0, got {}",
                self.beta
            )));
        }
        if self.k < 2 {
            return Err(ObjectiveError::InvalidParams(format!(
                "k must be >= 2, got {}",
                self.k
            )));
        }
        Ok(())
    }
}

/// Output length as a float.
pub fn len_objective(r: &GenerationResponse) -> f64 {
    r.length as f64
}

/// `-Σ_i ω^(N-i) · eos_i`; the last position carries weight 1.
pub fn eos_objective(r: &GenerationResponse, omega: f64) -> f64 {
    let mut weight = 1.0;
    let mut acc = 0.0;
    for pos in r.positions.iter().rev() {
        acc += weight * pos.eos_prob;
        weight *= omega;
    }
    -acc
}

/// Divides each entry by the total mass.
pub fn normalize_topk(topk_probs: &[f64]) -> Result<Vec<f64>, ObjectiveError> {
    let sum: f64 = topk_probs.iter().sum();
    if sum.is_nan() || sum <= 0.0 {
        return Err(ObjectiveError::DegenerateDistribution { position: 0 });
    }
    Ok(topk_probs.iter().map(|p| p / sum).collect())
}

/// KL divergence (natural log) between the renormalised top-k entries and the
/// uniform distribution over `k` outcomes. Missing entries count as zeros.
fn kl_to_uniform(topk_probs: &[f64], k: usize) -> Option<f64> {
    let entries = &topk_probs[..topk_probs.len().min(k)];
    let sum: f64 = entries.iter().sum();
    if sum.is_nan() || sum <= 0.0 {
        return None;
    }
    let kf = k as f64;
    Some(
        entries
            .iter()
            .map(|&p| {
                let p = p / sum;
                if p > 0.0 {
                    p * (p * kf).ln()
                } else {
                    0.0
                }
            })
            .sum(),
    )
}

/// `-(1/N) Σ_i KL(P̃_i ‖ U_k)`; zero for an empty response.
pub fn var_objective(r: &GenerationResponse, k: usize) -> Result<f64, ObjectiveError> {
    if r.positions.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for (position, pos) in r.positions.iter().enumerate() {
        total += kl_to_uniform(&pos.topk_probs, k)
            .ok_or(ObjectiveError::DegenerateDistribution { position })?;
    }
    Ok(-total / r.positions.len() as f64)
}

/// `L_len + α·L_eos + β·L_var`.
pub fn total_objective(r: &GenerationResponse, p: &ObjectiveParams) -> Result<f64, ObjectiveError> {
    let var = if p.beta == 0.0 { 0.0 } else { var_objective(r, p.k)? };
    Ok(len_objective(r) + p.alpha * eos_objective(r, p.omega) + p.beta * var)
}
