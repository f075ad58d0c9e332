use serde::{Deserialize, Serialize};

use crate::objectives::{GenerationResponse, PositionInfo};
use crate::tensor::{ImageTensor, PIXEL_MAX};
use crate::victim::{DecodeOptions, QueryError, Victim};

/// A victim whose output length is driven by mean brightness.
///
/// With `m = mean pixel / 255`:
///
/// * `N = clamp(round(l_max * m), 1, l_max)`, further capped by `max_new_tokens`
/// * `eos_i = (1 - m) * i / N` for `i = 1..=N`
/// * every position's top-k is `softmax(tau * s)` with the fixed descending
///   pattern `s_j = -j / k` and sharpness `tau = tau0 * (1 - m)`
///
/// Brighter images therefore produce longer outputs, lower EOS mass and
/// flatter top-k distributions, so all three objective terms point the same way.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleVictim {
    pub l_max: usize,
    pub k: usize,
    pub tau0: f64,
}

impl RuleVictim {
    pub fn new(l_max: usize, k: usize) -> Self {
        RuleVictim { l_max, k, tau0: 8.0 }
    }

    /// Length the rule assigns to an image, before any decode cap.
    pub fn length_for(&self, image: &ImageTensor) -> usize {
        let m = image.mean() / PIXEL_MAX;
        ((self.l_max as f64 * m).round() as usize).clamp(1, self.l_max.max(1))
    }

    fn topk_pattern(&self, m: f64) -> Vec<f64> {
        let tau = self.tau0 * (1.0 - m);
        let k = self.k as f64;
        let weights: Vec<f64> = (0..self.k).map(|j| (-tau * j as f64 / k).exp()).collect();
        let z: f64 = weights.iter().sum();
        weights.into_iter().map(|w| w / z).collect()
    }

    pub fn respond(&self, image: &ImageTensor, max_new_tokens: usize) -> GenerationResponse {
        let m = image.mean() / PIXEL_MAX;
        let n = self.length_for(image).min(max_new_tokens);
        let topk = self.topk_pattern(m);
        let positions = (1..=n)
            .map(|i| PositionInfo {
                eos_prob: (1.0 - m) * i as f64 / n as f64,
                topk_probs: topk.clone(),
            })
            .collect();
        GenerationResponse {
            length: n,
            positions,
            text: None,
            server_decode_ms: None,
            client_latency_ms: None,
        }
    }
}

impl Victim for RuleVictim {
    fn name(&self) -> &str {
        "rule"
    }

    fn topk(&self) -> usize {
        self.k
    }

    fn query(&self, image: &ImageTensor, decode: &DecodeOptions) -> Result<GenerationResponse, QueryError> {
        Ok(self.respond(image, decode.max_new_tokens))
    }
}
