//! Comparison corruption and input-preprocessing defense.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::tensor::{ImageTensor, Perturbation, TensorError, PIXEL_MAX};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BaselineError {
    #[error("quantization bits must be in 1..=8, got {0}")]
    Bits(u32),
    #[error("noise standard deviation must be finite and >= 0, got {0}")]
    Sigma(f64),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Gaussian corruption with the same L2 budget as the attack: draw
/// `N(0, σ²)` noise per element, project onto the `eps` ball, then apply with
/// box clamping.
pub fn gaussian_baseline<R: Rng + ?Sized>(
    image: &ImageTensor,
    sigma: f64,
    eps: f64,
    rng: &mut R,
) -> Result<ImageTensor, BaselineError> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(BaselineError::Sigma(sigma));
    }
    if sigma == 0.0 {
        // still validate the budget so callers see the same errors either way
        Perturbation::zeros(image.shape()).clip_l2(eps)?;
        return Ok(image.clone());
    }
    let normal = Normal::new(0.0, sigma).expect("sigma checked");
    let data = (0..image.shape().len()).map(|_| normal.sample(rng)).collect();
    let noise = Perturbation::new(image.shape(), data)?.clip_l2(eps)?;
    Ok(image.apply(&noise)?)
}

/// Bit-depth reduction: `round(x / 255 · L) / L · 255` with `L = 2^bits − 1`.
pub fn quantize_defense(image: &ImageTensor, bits: u32) -> Result<ImageTensor, BaselineError> {
    if !(1..=8).contains(&bits) {
        return Err(BaselineError::Bits(bits));
    }
    let levels = f64::from((1u32 << bits) - 1);
    // multiply before dividing so that integer inputs stay exact at 8 bits
    let data = image
        .as_slice()
        .iter()
        .map(|&x| (x * levels / PIXEL_MAX).round() * PIXEL_MAX / levels)
        .collect();
    Ok(ImageTensor::from_clamped(image.shape(), data)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::collections::BTreeSet;

    fn px(v: f64) -> ImageTensor {
        ImageTensor::filled(1, 1, v).unwrap()
    }

    #[test]
    fn quantize_examples() {
        assert_eq!(quantize_defense(&px(128.0), 8).unwrap().as_slice()[0], 128.0);
        assert_eq!(quantize_defense(&px(153.0), 1).unwrap().as_slice()[0], 255.0);
        assert_eq!(quantize_defense(&px(100.0), 1).unwrap().as_slice()[0], 0.0);
        assert!(matches!(quantize_defense(&px(1.0), 0), Err(BaselineError::Bits(0))));
        assert!(matches!(quantize_defense(&px(1.0), 9), Err(BaselineError::Bits(9))));
    }

    #[test]
    fn eight_bit_lattice_is_fixed() {
        let data: Vec<f64> = (0..=255).flat_map(|v| [f64::from(v); 3]).collect();
        let img = ImageTensor::new(1, 256, data).unwrap();
        assert_eq!(quantize_defense(&img, 8).unwrap(), img);
    }

    #[test]
    fn gaussian_zero_sigma_is_identity() {
        let img = ImageTensor::filled(3, 3, 77.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(gaussian_baseline(&img, 0.0, 64.0, &mut rng).unwrap(), img);
        assert!(gaussian_baseline(&img, -1.0, 64.0, &mut rng).is_err());
        assert!(gaussian_baseline(&img, 1.0, 0.0, &mut rng).is_err());
    }

    #[test]
    fn gaussian_is_seeded() {
        let img = ImageTensor::filled(4, 4, 128.0).unwrap();
        let a = gaussian_baseline(&img, 20.0, 64.0, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let b = gaussian_baseline(&img, 20.0, 64.0, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, img);
    }

    proptest! {
        #[test]
        fn gaussian_respects_budget(sigma in 0.0f64..200.0, seed in any::<u64>(), level in 0.0f64..=255.0) {
            let img = ImageTensor::filled(4, 4, level).unwrap();
            let out = gaussian_baseline(&img, sigma, 64.0, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            prop_assert!(img.l2_distance(&out).unwrap() <= 64.0 + 1e-6);
        }

        #[test]
        fn quantize_idempotent_with_few_levels(bits in 1u32..=8, values in prop::collection::vec(0.0f64..=255.0, 48)) {
            let img = ImageTensor::new(4, 4, values).unwrap();
            let once = quantize_defense(&img, bits).unwrap();
            prop_assert_eq!(quantize_defense(&once, bits).unwrap(), once.clone());
            for c in 0..3 {
                let distinct: BTreeSet<u64> = once.as_slice().iter().skip(c).step_by(3).map(|v| v.to_bits()).collect();
                prop_assert!(distinct.len() <= 1 << bits);
            }
        }
    }
}
