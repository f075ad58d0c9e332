//! Efficiency metrics: relative increases in length, latency and an energy
//! proxy between the original and adversarial inputs.
//!
//! Energy is proxied by decoder calls (the number of generated tokens), so on
//! a deterministic victim `i_energy_proxy == i_length`.

use crate::objectives::GenerationResponse;
use crate::tensor::{ImageTensor, TensorError};

/// `(adv − orig) / orig · 100`, undefined when `orig` is not positive.
pub fn relative_increase_pct(orig: f64, adv: f64) -> Option<f64> {
    (orig > 0.0).then(|| (adv - orig) / orig * 100.0)
}

pub fn i_length(orig: &GenerationResponse, adv: &GenerationResponse) -> Option<f64> {
    relative_increase_pct(orig.length as f64, adv.length as f64)
}

pub fn i_latency(orig_ms: f64, adv_ms: f64) -> Option<f64> {
    relative_increase_pct(orig_ms, adv_ms)
}

/// Decoder calls spent on a response.
pub fn energy_proxy(r: &GenerationResponse) -> f64 {
    r.length as f64
}

pub fn i_energy_proxy(orig: &GenerationResponse, adv: &GenerationResponse) -> Option<f64> {
    relative_increase_pct(energy_proxy(orig), energy_proxy(adv))
}

/// Euclidean distance in 0–255 pixel units.
pub fn l2_distance(orig: &ImageTensor, adv: &ImageTensor) -> Result<f64, TensorError> {
    orig.l2_distance(adv)
}

pub fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    })
}
