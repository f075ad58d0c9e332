//! Empirical check of the estimator's concentration: with small search
//! variance and enough noise pairs, `‖ĝ‖²` lands within `(1 ± ζ)‖∇‖²` with
//! high probability.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::estimator::{combine_pairs, sample_noise_flat};

/// A scalar objective over flat pixel-valued inputs with a known gradient.
pub trait DifferentiableObjective: Sync {
    fn dim(&self) -> usize;
    fn value(&self, x: &[f64]) -> f64;
    fn gradient(&self, x: &[f64]) -> Vec<f64>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorCheckReport {
    pub dim: usize,
    pub q: usize,
    pub eta: f64,
    pub zeta: f64,
    pub trials: usize,
    /// Fraction of trials with `(1-ζ)‖∇‖² ≤ ‖ĝ‖² ≤ (1+ζ)‖∇‖²`.
    pub success_fraction: f64,
    pub mean_cosine: f64,
    pub mean_norm_ratio: f64,
}

/// Lower and upper bounds of the random evaluation points, in pixel units.
const POINT_RANGE: (f64, f64) = (16.0, 239.0);

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot / (na * nb)).clamp(-1.0, 1.0)
}

/// One NES estimate at `x` from fresh antithetic noise.
pub fn estimate_flat<R: Rng + ?Sized>(
    target: &dyn DifferentiableObjective,
    x: &[f64],
    q: usize,
    eta: f64,
    rng: &mut R,
) -> Vec<f64> {
    let noise = sample_noise_flat(q, x.len(), rng);
    let values: Vec<f64> = noise
        .par_iter()
        .map(|mu| {
            let z: Vec<f64> = x.iter().zip(mu).map(|(v, m)| v + eta * m).collect();
            target.value(&z)
        })
        .collect();
    let slices: Vec<&[f64]> = noise.iter().map(Vec::as_slice).collect();
    combine_pairs(&slices, &values, eta)
}

/// Runs `trials` independent estimates at random points and compares each
/// against the exact gradient.
pub fn estimator_check<R: Rng + ?Sized>(
    target: &dyn DifferentiableObjective,
    q: usize,
    eta: f64,
    zeta: f64,
    trials: usize,
    rng: &mut R,
) -> EstimatorCheckReport {
    assert!(q >= 1 && trials >= 1, "need at least one pair and one trial");
    assert!(zeta > 0.0 && zeta < 1.0, "zeta must lie in (0, 1)");
    let dim = target.dim();
    let mut successes = 0usize;
    let mut cos_sum = 0.0;
    let mut ratio_sum = 0.0;
    for _ in 0..trials {
        let x: Vec<f64> = (0..dim)
            .map(|_| rng.gen_range(POINT_RANGE.0..POINT_RANGE.1))
            .collect();
        let estimate = estimate_flat(target, &x, q, eta, rng);
        let truth = target.gradient(&x);
        let est_sq: f64 = estimate.iter().map(|v| v * v).sum();
        let true_sq: f64 = truth.iter().map(|v| v * v).sum();
        if (1.0 - zeta) * true_sq <= est_sq && est_sq <= (1.0 + zeta) * true_sq {
            successes += 1;
        }
        ratio_sum += est_sq / true_sq;
        cos_sum += cosine(&estimate, &truth);
    }
    EstimatorCheckReport {
        dim,
        q,
        eta,
        zeta,
        trials,
        success_fraction: successes as f64 / trials as f64,
        mean_cosine: cos_sum / trials as f64,
        mean_norm_ratio: ratio_sum / trials as f64,
    }
}
