//! Zeroth-order attack loop.
//!
//! Each iteration draws `q` Gaussian directions `μ_j`, queries the victim at
//! `apply(image, δ ± η μ_j)`, forms the paired-difference NES estimate
//!
//! ```text
//! ĝ = (1/q) Σ_j [L(δ + ημ_j) − L(δ − ημ_j)] / (2η) · μ_j
//! ```
//!
//! and takes a projected ascent step `δ ← clip_l2(δ + γ ĝ, ε)`. The loop
//! starts from `δ = 0` and uses a constant step size.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::objectives::{self, GenerationResponse, ObjectiveError, ObjectiveParams};
use crate::tensor::{ImageTensor, Perturbation, TensorError, BUDGET_TOLERANCE};
use crate::victim::{DecodeOptions, QueryError, Victim};

mod diagnostics;
mod estimator;
mod trace;

pub use diagnostics::{cosine, estimate_flat, estimator_check, DifferentiableObjective, EstimatorCheckReport};
pub use estimator::{
    combine_pairs, estimate_gradient, estimate_gradient_with_noise, sample_noise, sample_noise_flat,
    GradientEstimate,
};
pub use trace::{read_trace, write_trace, IterationRecord};

/// Why a single objective evaluation failed.
#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Query(#[from] QueryError),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("objective at sample {sample} is not finite ({value})")]
    NonFinite { sample: usize, value: f64 },
}

#[derive(Debug, Error)]
pub enum AttackError {
    #[error("invalid attack configuration: {0}")]
    Config(String),
    /// Evaluation failed during `iteration` (0 = baseline, T + 1 = final).
    /// `partial_trace` holds the records of completed iterations.
    #[error("iteration {iteration}: {source}")]
    Evaluation {
        iteration: usize,
        #[source]
        source: EvalError,
        partial_trace: Vec<IterationRecord>,
    },
    #[error("iteration {iteration}: objective at sample {sample} is {value}; aborting")]
    NonFinite {
        iteration: usize,
        sample: usize,
        value: f64,
        partial_trace: Vec<IterationRecord>,
    },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Hyperparameters of the attack.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AttackConfig {
    /// Number of update steps `T`.
    pub iterations: usize,
    /// Antithetic noise pairs per step `q`; each step costs `2q` queries.
    pub noise_pairs: usize,
    /// Standard deviation of the search distribution, in pixel units.
    pub search_sigma: f64,
    pub step_size: f64,
    /// L2 budget `ε` on the perturbation, in pixel units.
    pub budget: f64,
    pub objective: ObjectiveParams,
    pub seed: u64,
    pub decode: DecodeOptions,
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig {
            iterations: 500,
            noise_pairs: 5,
            search_sigma: 0.1,
            step_size: 5.0,
            budget: 64.0,
            objective: ObjectiveParams::default(),
            seed: 0,
            decode: DecodeOptions::default(),
        }
    }
}

impl AttackConfig {
    pub fn validate(&self) -> Result<(), AttackError> {
        let fail = |m: String| Err(AttackError::Config(m));
        if self.iterations < 1 {
            return fail("iterations must be >= 1".into());
        }
        if self.noise_pairs < 1 {
            return fail("noise_pairs must be >= 1".into());
        }
        if !(self.search_sigma > 0.0 && self.search_sigma.is_finite()) {
            return fail(format!("search_sigma must be > 0, got {}", self.search_sigma));
        }
        // γ = 0 is accepted: it is the degenerate "no step" run
        if !(self.step_size >= 0.0 && self.step_size.is_finite()) {
            return fail(format!("step_size must be >= 0, got {}", self.step_size));
        }
        if !(self.budget > 0.0 && self.budget.is_finite()) {
            return fail(format!("budget must be > 0, got {}", self.budget));
        }
        self.objective
            .validate()
            .map_err(|e| AttackError::Config(e.to_string()))
    }

    /// Total victim calls a completed run makes: `2qT + 2`.
    pub fn query_budget(&self) -> usize {
        2 * self.noise_pairs * self.iterations + 2
    }
}

/// Anything that scores a (realistic) image; larger is better for the attacker.
pub trait Objective: Sync {
    fn score(&self, image: &ImageTensor) -> Result<f64, EvalError>;
}

impl<F> Objective for F
where
    F: Fn(&ImageTensor) -> f64 + Sync,
{
    fn score(&self, image: &ImageTensor) -> Result<f64, EvalError> {
        Ok(self(image))
    }
}

/// Queries a victim and scores its response with the total objective.
pub struct VictimObjective<'a> {
    pub victim: &'a dyn Victim,
    pub params: ObjectiveParams,
    pub decode: DecodeOptions,
}

impl VictimObjective<'_> {
    pub fn respond(&self, image: &ImageTensor) -> Result<GenerationResponse, QueryError> {
        self.victim.query(image, &self.decode)
    }
}

impl Objective for VictimObjective<'_> {
    fn score(&self, image: &ImageTensor) -> Result<f64, EvalError> {
        let response = self.respond(image)?;
        Ok(objectives::total_objective(&response, &self.params)?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackResult {
    pub delta: Perturbation,
    /// `apply(image, delta)`, the image the final response was produced for.
    pub adversarial: ImageTensor,
    /// Per-iteration estimate of `J(δ)` (mean objective over the `2q` samples).
    pub objective_trace: Vec<f64>,
    pub trace: Vec<IterationRecord>,
    pub query_count: usize,
    pub baseline_response: GenerationResponse,
    pub final_response: GenerationResponse,
}

fn timed_query(
    victim: &dyn Victim,
    image: &ImageTensor,
    decode: &DecodeOptions,
) -> Result<GenerationResponse, QueryError> {
    let start = Instant::now();
    let mut r = victim.query(image, decode)?;
    if r.client_latency_ms.is_none() {
        r.client_latency_ms = Some(start.elapsed().as_secs_f64() * 1e3);
    }
    Ok(r)
}

/// Runs the full attack against `victim`, seeded by `cfg.seed`.
///
/// Queries to a remote victim are I/O bound, so they run on a dedicated pool
/// with one thread per sample instead of the CPU-sized global pool. The
/// result is the same either way.
pub fn attack(image: &ImageTensor, victim: &dyn Victim, cfg: &AttackConfig) -> Result<AttackResult, AttackError> {
    cfg.validate()?;
    if victim.is_remote() {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(2 * cfg.noise_pairs)
            .build()
            .map_err(|e| AttackError::Config(format!("cannot start query pool: {e}")))?;
        pool.install(|| run_attack(image, victim, cfg))
    } else {
        run_attack(image, victim, cfg)
    }
}

fn run_attack(image: &ImageTensor, victim: &dyn Victim, cfg: &AttackConfig) -> Result<AttackResult, AttackError> {
    if victim.is_remote() && cfg.search_sigma < 0.5 {
        log::warn!(
            "search_sigma {} is below half a gray level; the wire rounds pixels to 8 bits, \
             so most search noise will not reach the victim",
            cfg.search_sigma
        );
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let objective = VictimObjective {
        victim,
        params: cfg.objective,
        decode: cfg.decode.clone(),
    };

    let baseline_response =
        timed_query(victim, image, &cfg.decode).map_err(|e| AttackError::Evaluation {
            iteration: 0,
            source: e.into(),
            partial_trace: Vec::new(),
        })?;
    let mut query_count = 1;

    let mut delta = Perturbation::zeros(image.shape());
    let mut trace = Vec::with_capacity(cfg.iterations);
    let mut objective_trace = Vec::with_capacity(cfg.iterations);

    for iteration in 1..=cfg.iterations {
        let estimate = match estimate_gradient(
            &delta,
            image,
            &objective,
            cfg.noise_pairs,
            cfg.search_sigma,
            &mut rng,
        ) {
            Ok(e) => e,
            Err(EvalError::NonFinite { sample, value }) => {
                return Err(AttackError::NonFinite {
                    iteration,
                    sample,
                    value,
                    partial_trace: trace,
                })
            }
            Err(source) => {
                return Err(AttackError::Evaluation {
                    iteration,
                    source,
                    partial_trace: trace,
                })
            }
        };
        query_count += estimate.values.len();

        delta = delta
            .add_scaled(cfg.step_size, &estimate.gradient)?
            .clip_l2(cfg.budget)?;
        let delta_norm = delta.l2_norm();
        debug_assert!(delta_norm <= cfg.budget + BUDGET_TOLERANCE);

        let value = estimate.mean_value();
        objective_trace.push(value);
        trace.push(IterationRecord {
            iteration,
            objective: value,
            delta_norm,
            latencies_ms: estimate.latencies_ms,
        });
    }

    let adversarial = image.apply(&delta)?;
    let final_response =
        timed_query(victim, &adversarial, &cfg.decode).map_err(|e| AttackError::Evaluation {
            iteration: cfg.iterations + 1,
            source: e.into(),
            partial_trace: trace.clone(),
        })?;
    query_count += 1;

    Ok(AttackResult {
        delta,
        adversarial,
        objective_trace,
        trace,
        query_count,
        baseline_response,
        final_response,
    })
}
