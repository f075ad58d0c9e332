//! Smooth victims with closed-form gradients, used to validate the NES
//! estimator against ground truth.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::nes::DifferentiableObjective;
use crate::objectives::{self, GenerationResponse, ObjectiveError, ObjectiveParams, PositionInfo};
use crate::tensor::{ImageTensor, PIXEL_MAX};
use crate::victim::{DecodeOptions, QueryError, Victim};

fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Fixed-length victim with logistic EOS probabilities and softmax top-k
/// distributions that are affine in the rescaled input `x = pixels / 255`.
///
/// Position `i` reports `eos_i = logistic(w_i · x + b_i)` and
/// `topk_i = sort_desc(softmax(A_i x + c_i))`. Sorting does not change the KL
/// term, so the total objective is smooth in `x`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalyticVictim {
    pub dim: usize,
    pub length: usize,
    pub k: usize,
    /// `length × dim`, row-major.
    pub eos_weights: Vec<f64>,
    pub eos_bias: Vec<f64>,
    /// `length × k × dim`, row-major.
    pub topk_weights: Vec<f64>,
    /// `length × k`.
    pub topk_bias: Vec<f64>,
}

impl AnalyticVictim {
    /// All weights and biases zero: every EOS probability is 0.5 and every
    /// top-k distribution is uniform.
    pub fn zeros(dim: usize, length: usize, k: usize) -> Self {
        AnalyticVictim {
            dim,
            length,
            k,
            eos_weights: vec![0.0; length * dim],
            eos_bias: vec![0.0; length],
            topk_weights: vec![0.0; length * k * dim],
            topk_bias: vec![0.0; length * k],
        }
    }

    /// Random parameters; weights scale as `2 / sqrt(dim)` so the logits stay O(1).
    pub fn from_seed(seed: u64, dim: usize, length: usize, k: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = Normal::new(0.0, 2.0 / (dim as f64).sqrt()).unwrap();
        let b = Normal::new(0.0, 1.0).unwrap();
        let mut v = Self::zeros(dim, length, k);
        v.eos_weights.iter_mut().for_each(|x| *x = w.sample(&mut rng));
        v.eos_bias.iter_mut().for_each(|x| *x = b.sample(&mut rng) - 1.0);
        v.topk_weights.iter_mut().for_each(|x| *x = w.sample(&mut rng));
        v.topk_bias.iter_mut().for_each(|x| *x = b.sample(&mut rng));
        v
    }

    fn eos_logit(&self, i: usize, x: &[f64]) -> f64 {
        let row = &self.eos_weights[i * self.dim..(i + 1) * self.dim];
        row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.eos_bias[i]
    }

    fn topk_logits(&self, i: usize, x: &[f64]) -> Vec<f64> {
        (0..self.k)
            .map(|j| {
                let r = (i * self.k + j) * self.dim;
                let row = &self.topk_weights[r..r + self.dim];
                row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.topk_bias[i * self.k + j]
            })
            .collect()
    }

    fn rescale(&self, pixels: &[f64]) -> Vec<f64> {
        assert_eq!(pixels.len(), self.dim, "input dimension mismatch");
        pixels.iter().map(|p| p / PIXEL_MAX).collect()
    }

    /// Response for a flat pixel-valued input of length `dim`.
    pub fn respond(&self, pixels: &[f64]) -> GenerationResponse {
        let x = self.rescale(pixels);
        let positions = (0..self.length)
            .map(|i| {
                let mut topk = softmax(&self.topk_logits(i, &x));
                topk.sort_by(|a, b| b.total_cmp(a));
                PositionInfo {
                    eos_prob: logistic(self.eos_logit(i, &x)),
                    topk_probs: topk,
                }
            })
            .collect();
        GenerationResponse {
            length: self.length,
            positions,
            text: None,
            server_decode_ms: None,
            client_latency_ms: None,
        }
    }

    /// Exact gradient, in pixel units, of `total_objective ∘ respond` at `pixels`.
    ///
    /// The length term is constant and contributes nothing. Requires
    /// `params.k >= self.k` so that no reported entry is truncated.
    pub fn grad_total(&self, pixels: &[f64], params: &ObjectiveParams) -> Result<Vec<f64>, ObjectiveError> {
        if params.k < self.k {
            return Err(ObjectiveError::InvalidParams(format!(
                "objective k = {} is smaller than the victim's k = {}",
                params.k, self.k
            )));
        }
        let x = self.rescale(pixels);
        let mut grad = vec![0.0; self.dim];
        let n = self.length;
        let mut weight = 1.0;
        for i in (0..n).rev() {
            // d/dx of -alpha * omega^(N-i) * logistic(w_i·x + b_i)
            let s = logistic(self.eos_logit(i, &x));
            let coef = -params.alpha * weight * s * (1.0 - s);
            weight *= params.omega;
            let row = &self.eos_weights[i * self.dim..(i + 1) * self.dim];
            grad.iter_mut().zip(row).for_each(|(g, w)| *g += coef * w);

            // d/dz_j KL(softmax(z) ‖ U) = p_j (ln p_j - Σ p ln p)
            let p = softmax(&self.topk_logits(i, &x));
            let neg_entropy: f64 = p.iter().filter(|&&v| v > 0.0).map(|v| v * v.ln()).sum();
            for (j, &pj) in p.iter().enumerate() {
                if pj == 0.0 {
                    continue;
                }
                let coef = -params.beta / n as f64 * pj * (pj.ln() - neg_entropy);
                let r = (i * self.k + j) * self.dim;
                let row = &self.topk_weights[r..r + self.dim];
                grad.iter_mut().zip(row).for_each(|(g, w)| *g += coef * w);
            }
        }
        grad.iter_mut().for_each(|g| *g /= PIXEL_MAX);
        Ok(grad)
    }

    /// Binds objective weights, yielding a differentiable scalar target.
    pub fn with_params(&self, params: ObjectiveParams) -> AnalyticObjective<'_> {
        AnalyticObjective { victim: self, params }
    }
}

impl Victim for AnalyticVictim {
    fn name(&self) -> &str {
        "analytic"
    }

    fn topk(&self) -> usize {
        self.k
    }

    fn query(&self, image: &ImageTensor, decode: &DecodeOptions) -> Result<GenerationResponse, QueryError> {
        if image.as_slice().len() != self.dim {
            return Err(QueryError::Unsupported(format!(
                "analytic victim expects {} input values, image has {}",
                self.dim,
                image.as_slice().len()
            )));
        }
        let mut r = self.respond(image.as_slice());
        if decode.max_new_tokens < r.length {
            r.length = decode.max_new_tokens;
            r.positions.truncate(decode.max_new_tokens);
        }
        Ok(r)
    }
}

/// [`AnalyticVictim`] composed with the total objective. The value goes
/// through the response and the objectives module; the gradient comes from
/// the closed form.
#[derive(Debug, Clone, Copy)]
pub struct AnalyticObjective<'a> {
    victim: &'a AnalyticVictim,
    params: ObjectiveParams,
}

impl DifferentiableObjective for AnalyticObjective<'_> {
    fn dim(&self) -> usize {
        self.victim.dim
    }

    fn value(&self, x: &[f64]) -> f64 {
        objectives::total_objective(&self.victim.respond(x), &self.params)
            .expect("analytic responses are never degenerate")
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        self.victim
            .grad_total(x, &self.params)
            .expect("objective k checked at construction")
    }
}

/// `f(x) = a · x`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearObjective {
    pub weights: Vec<f64>,
}

impl LinearObjective {
    pub fn from_seed(seed: u64, dim: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = Normal::new(0.0, 1.0).unwrap();
        LinearObjective {
            weights: (0..dim).map(|_| n.sample(&mut rng)).collect(),
        }
    }
}

impl DifferentiableObjective for LinearObjective {
    fn dim(&self) -> usize {
        self.weights.len()
    }

    fn value(&self, x: &[f64]) -> f64 {
        self.weights.iter().zip(x).map(|(a, v)| a * v).sum()
    }

    fn gradient(&self, _x: &[f64]) -> Vec<f64> {
        self.weights.clone()
    }
}

/// `f(x) = b · u - ½ Σ h_j u_j²` with `u = x / 255`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticObjective {
    pub linear: Vec<f64>,
    pub curvature: Vec<f64>,
}

impl QuadraticObjective {
    pub fn from_seed(seed: u64, dim: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = Normal::new(0.0, 1.0).unwrap();
        QuadraticObjective {
            linear: (0..dim).map(|_| n.sample(&mut rng)).collect(),
            curvature: (0..dim).map(|_| n.sample(&mut rng).abs() + 0.5).collect(),
        }
    }
}

impl DifferentiableObjective for QuadraticObjective {
    fn dim(&self) -> usize {
        self.linear.len()
    }

    fn value(&self, x: &[f64]) -> f64 {
        x.iter()
            .zip(self.linear.iter().zip(&self.curvature))
            .map(|(v, (b, h))| {
                let u = v / PIXEL_MAX;
                b * u - 0.5 * h * u * u
            })
            .sum()
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.linear.iter().zip(&self.curvature))
            .map(|(v, (b, h))| (b - h * v / PIXEL_MAX) / PIXEL_MAX)
            .collect()
    }
}
