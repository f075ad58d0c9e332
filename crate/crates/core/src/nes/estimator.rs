use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use super::{EvalError, Objective};
use crate::tensor::{ImageTensor, Perturbation, Shape};

/// Draws `q` standard-normal vectors of length `dim` followed by their
/// negations, so entry `q + j` is exactly `-entry[j]`.
pub fn sample_noise_flat<R: Rng + ?Sized>(q: usize, dim: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let mut noise: Vec<Vec<f64>> = (0..q)
        .map(|_| (0..dim).map(|_| rng.sample(StandardNormal)).collect())
        .collect();
    let mirrored: Vec<Vec<f64>> = noise
        .iter()
        .map(|mu| mu.iter().map(|v| -v).collect())
        .collect();
    noise.extend(mirrored);
    noise
}

/// Antithetic Gaussian noise shaped like an image perturbation: `2q`
/// tensors, the second half the negation of the first.
pub fn sample_noise<R: Rng + ?Sized>(q: usize, shape: Shape, rng: &mut R) -> Vec<Perturbation> {
    sample_noise_flat(q, shape.len(), rng)
        .into_iter()
        .map(|data| Perturbation::new(shape, data).expect("normal samples are finite"))
        .collect()
}

/// Combines objective values at `δ ± η μ_j` into the paired-difference
/// estimate `(1/q) Σ_j (L⁺_j − L⁻_j) / (2η) · μ_j`.
///
/// `values[j]` must be the value at `+μ_j` and `values[q + j]` the value at
/// `−μ_j`. Only the first `q` noise vectors are read.
pub fn combine_pairs(noise: &[&[f64]], values: &[f64], eta: f64) -> Vec<f64> {
    let q = values.len() / 2;
    let dim = noise.first().map_or(0, |n| n.len());
    let mut grad = vec![0.0; dim];
    for j in 0..q {
        let coef = (values[j] - values[q + j]) / (2.0 * eta);
        for (g, m) in grad.iter_mut().zip(noise[j]) {
            *g += coef * m;
        }
    }
    let inv_q = 1.0 / q as f64;
    grad.iter_mut().for_each(|g| *g *= inv_q);
    grad
}

/// Estimated ascent direction plus the raw samples behind it.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientEstimate {
    pub gradient: Perturbation,
    /// Objective at each of the `2q` sample points, `+` half first.
    pub values: Vec<f64>,
    /// Wall clock of each objective evaluation, in milliseconds.
    pub latencies_ms: Vec<f64>,
}

impl GradientEstimate {
    /// Monte-Carlo estimate of the smoothed objective `J(δ)`.
    pub fn mean_value(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }
}

/// NES gradient of `J(δ) = E[L(apply(image, δ + ημ))]` from fresh antithetic noise.
pub fn estimate_gradient<R: Rng + ?Sized>(
    delta: &Perturbation,
    image: &ImageTensor,
    objective: &dyn Objective,
    q: usize,
    eta: f64,
    rng: &mut R,
) -> Result<GradientEstimate, EvalError> {
    let noise = sample_noise(q, delta.shape(), rng);
    estimate_gradient_with_noise(delta, image, objective, &noise, eta)
}

/// Same as [`estimate_gradient`] with caller-supplied noise (`2q` tensors,
/// antithetic halves). All sample points are evaluated concurrently; the
/// result does not depend on scheduling.
pub fn estimate_gradient_with_noise(
    delta: &Perturbation,
    image: &ImageTensor,
    objective: &dyn Objective,
    noise: &[Perturbation],
    eta: f64,
) -> Result<GradientEstimate, EvalError> {
    assert!(
        !noise.is_empty() && noise.len().is_multiple_of(2),
        "noise must hold 2q antithetic tensors"
    );
    let evaluated: Vec<Result<(f64, f64), EvalError>> = noise
        .par_iter()
        .map(|mu| {
            let point = delta.add_scaled(eta, mu)?;
            let queried = image.apply(&point)?;
            let start = std::time::Instant::now();
            let value = objective.score(&queried)?;
            Ok((value, start.elapsed().as_secs_f64() * 1e3))
        })
        .collect();
    let mut values = Vec::with_capacity(noise.len());
    let mut latencies_ms = Vec::with_capacity(noise.len());
    for (sample, r) in evaluated.into_iter().enumerate() {
        let (value, ms) = r?;
        if !value.is_finite() {
            return Err(EvalError::NonFinite { sample, value });
        }
        values.push(value);
        latencies_ms.push(ms);
    }
    let slices: Vec<&[f64]> = noise.iter().map(|n| n.as_slice()).collect();
    let gradient = Perturbation::new(delta.shape(), combine_pairs(&slices, &values, eta))
        .map_err(EvalError::from)?;
    Ok(GradientEstimate {
        gradient,
        values,
        latencies_ms,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn shape() -> Shape {
        Shape::new(1, 1).unwrap()
    }

    #[test]
    fn antithetic_pairs_cancel() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let one = sample_noise(1, shape(), &mut rng);
        assert_eq!(one.len(), 2);
        assert!(one[0].add_scaled(1.0, &one[1]).unwrap().is_zero());

        let three = sample_noise(3, Shape::new(2, 3).unwrap(), &mut rng);
        assert_eq!(three.len(), 6);
        let mut total = Perturbation::zeros(Shape::new(2, 3).unwrap());
        for j in 0..3 {
            assert_eq!(three[j + 3], three[j].negated());
            let pair = three[j].add_scaled(1.0, &three[j + 3]).unwrap();
            total = total.add_scaled(1.0, &pair).unwrap();
        }
        assert!(total.is_zero());
    }

    #[test]
    fn noise_is_seed_deterministic() {
        let a = sample_noise(4, shape(), &mut ChaCha8Rng::seed_from_u64(11));
        let b = sample_noise(4, shape(), &mut ChaCha8Rng::seed_from_u64(11));
        assert_eq!(a, b);
    }

    #[test]
    fn constant_objective_gives_exact_zero() {
        let img = ImageTensor::filled(2, 2, 128.0).unwrap();
        let delta = Perturbation::zeros(img.shape());
        let constant = |_: &ImageTensor| 3.25;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let est = estimate_gradient(&delta, &img, &constant, 4, 0.1, &mut rng).unwrap();
        assert!(est.gradient.is_zero());
        assert_eq!(est.values.len(), 8);
        assert_eq!(est.mean_value(), 3.25);
    }

    #[test]
    fn non_finite_value_reported_with_sample_index() {
        let img = ImageTensor::filled(1, 1, 128.0).unwrap();
        let delta = Perturbation::zeros(img.shape());
        let bad = |_: &ImageTensor| f64::NAN;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        assert!(matches!(
            estimate_gradient(&delta, &img, &bad, 2, 0.1, &mut rng),
            Err(EvalError::NonFinite { sample: 0, .. })
        ));
    }
}
