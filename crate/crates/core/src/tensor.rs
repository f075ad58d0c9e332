//! Image and perturbation value types.
//!
//! Pixels live in the 0–255 domain as `f64`, row-major, three channels per
//! pixel. A [`Perturbation`] is an additive delta in the same units; it may be
//! negative and is only ever turned into a realistic image through
//! [`ImageTensor::apply`], which clamps back into the pixel box.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of colour channels carried by every image.
pub const CHANNELS: usize = 3;

/// Largest representable pixel value.
pub const PIXEL_MAX: f64 = 255.0;

/// Absolute slack allowed when checking `‖δ‖₂ ≤ ε` after a projection.
pub const BUDGET_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("image dimensions must be positive, got {height}x{width}")]
    EmptyShape { height: usize, width: usize },
    #[error("data length {actual} does not match {height}x{width}x3 = {expected}")]
    LengthMismatch {
        height: usize,
        width: usize,
        expected: usize,
        actual: usize,
    },
    #[error("element {index} = {value} is outside the pixel range [0, 255]")]
    OutOfRange { index: usize, value: f64 },
    #[error("element {index} is not finite")]
    NonFinite { index: usize },
    #[error("shape mismatch: {left:?} vs {right:?}")]
    ShapeMismatch { left: Shape, right: Shape },
    #[error("perturbation budget must be positive, got {0}")]
    InvalidBudget(f64),
}

/// Spatial shape of an image; the channel count is always [`CHANNELS`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape {
    pub height: usize,
    pub width: usize,
}

impl Shape {
    pub fn new(height: usize, width: usize) -> Result<Self, TensorError> {
        if height == 0 || width == 0 {
            return Err(TensorError::EmptyShape { height, width });
        }
        Ok(Shape { height, width })
    }

    /// Flattened dimension `height * width * 3`.
    pub fn len(&self) -> usize {
        self.height * self.width * CHANNELS
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn check_len(&self, actual: usize) -> Result<(), TensorError> {
        if actual != self.len() {
            return Err(TensorError::LengthMismatch {
                height: self.height,
                width: self.width,
                expected: self.len(),
                actual,
            });
        }
        Ok(())
    }
}

/// An RGB image with finite pixel values in `[0, 255]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ImageTensor {
    shape: Shape,
    data: Vec<f64>,
}

impl ImageTensor {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self, TensorError> {
        let shape = Shape::new(height, width)?;
        shape.check_len(data.len())?;
        for (index, &value) in data.iter().enumerate() {
            if !value.is_finite() {
                return Err(TensorError::NonFinite { index });
            }
            if !(0.0..=PIXEL_MAX).contains(&value) {
                return Err(TensorError::OutOfRange { index, value });
            }
        }
        Ok(ImageTensor { shape, data })
    }

    /// A constant image, every element set to `value` (clamped into the pixel box).
    pub fn filled(height: usize, width: usize, value: f64) -> Result<Self, TensorError> {
        let shape = Shape::new(height, width)?;
        let v = if value.is_finite() { value.clamp(0.0, PIXEL_MAX) } else { 0.0 };
        Ok(ImageTensor {
            shape,
            data: vec![v; shape.len()],
        })
    }

    /// Builds an image from arbitrary finite values, clamping each into `[0, 255]`.
    pub fn from_clamped(shape: Shape, mut data: Vec<f64>) -> Result<Self, TensorError> {
        shape.check_len(data.len())?;
        for (index, v) in data.iter_mut().enumerate() {
            if !v.is_finite() {
                return Err(TensorError::NonFinite { index });
            }
            *v = v.clamp(0.0, PIXEL_MAX);
        }
        Ok(ImageTensor { shape, data })
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn height(&self) -> usize {
        self.shape.height
    }

    pub fn width(&self) -> usize {
        self.shape.width
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    /// Mean pixel value over all elements.
    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    /// `self + p`, clamped elementwise into `[0, 255]`.
    pub fn apply(&self, p: &Perturbation) -> Result<ImageTensor, TensorError> {
        self.expect_shape(p.shape)?;
        let data = self
            .data
            .iter()
            .zip(&p.data)
            .map(|(x, d)| (x + d).clamp(0.0, PIXEL_MAX))
            .collect();
        Ok(ImageTensor {
            shape: self.shape,
            data,
        })
    }

    /// Euclidean distance to another image of the same shape, in pixel units.
    pub fn l2_distance(&self, other: &ImageTensor) -> Result<f64, TensorError> {
        self.expect_shape(other.shape)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt())
    }

    /// Elementwise rounding (half away from zero), as stored in an 8-bit file.
    pub fn rounded(&self) -> ImageTensor {
        ImageTensor {
            shape: self.shape,
            data: self.data.iter().map(|v| v.round()).collect(),
        }
    }

    /// Pixel bytes after rounding half away from zero.
    pub fn to_rgb8(&self) -> Vec<u8> {
        self.data.iter().map(|v| v.round() as u8).collect()
    }

    pub fn from_rgb8(height: usize, width: usize, bytes: &[u8]) -> Result<Self, TensorError> {
        let shape = Shape::new(height, width)?;
        shape.check_len(bytes.len())?;
        Ok(ImageTensor {
            shape,
            data: bytes.iter().map(|&b| f64::from(b)).collect(),
        })
    }

    fn expect_shape(&self, other: Shape) -> Result<(), TensorError> {
        if self.shape != other {
            return Err(TensorError::ShapeMismatch {
                left: self.shape,
                right: other,
            });
        }
        Ok(())
    }
}

/// Additive image delta in pixel units.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Perturbation {
    shape: Shape,
    data: Vec<f64>,
}

impl Perturbation {
    pub fn zeros(shape: Shape) -> Self {
        Perturbation {
            shape,
            data: vec![0.0; shape.len()],
        }
    }

    pub fn new(shape: Shape, data: Vec<f64>) -> Result<Self, TensorError> {
        shape.check_len(data.len())?;
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(TensorError::NonFinite { index });
        }
        Ok(Perturbation { shape, data })
    }

    /// The delta that maps `from` onto `to`.
    pub fn between(from: &ImageTensor, to: &ImageTensor) -> Result<Self, TensorError> {
        from.expect_shape(to.shape)?;
        let data = to.data.iter().zip(&from.data).map(|(b, a)| b - a).collect();
        Ok(Perturbation {
            shape: from.shape,
            data,
        })
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn l2_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Radial projection onto the L2 ball of radius `eps`.
    ///
    /// Returns `self` unchanged when it already lies inside the ball
    /// (boundary included); otherwise rescales by `eps / ‖self‖₂`.
    pub fn clip_l2(&self, eps: f64) -> Result<Perturbation, TensorError> {
        if eps <= 0.0 || !eps.is_finite() {
            return Err(TensorError::InvalidBudget(eps));
        }
        let norm = self.l2_norm();
        if norm <= eps {
            return Ok(self.clone());
        }
        // Rounding can leave the rescaled norm an ulp above `eps`; shrink the
        // factor until it is not, so a second projection is the identity.
        let mut scale = eps / norm;
        loop {
            let out = Perturbation {
                shape: self.shape,
                data: self.data.iter().map(|v| v * scale).collect(),
            };
            if out.l2_norm() <= eps {
                return Ok(out);
            }
            scale *= 1.0 - f64::EPSILON;
        }
    }

    /// `self + alpha * other`.
    pub fn add_scaled(&self, alpha: f64, other: &Perturbation) -> Result<Perturbation, TensorError> {
        if self.shape != other.shape {
            return Err(TensorError::ShapeMismatch {
                left: self.shape,
                right: other.shape,
            });
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a + alpha * b)
            .collect();
        Ok(Perturbation {
            shape: self.shape,
            data,
        })
    }

    pub fn negated(&self) -> Perturbation {
        Perturbation {
            shape: self.shape,
            data: self.data.iter().map(|v| -v).collect(),
        }
    }

    pub fn dot(&self, other: &Perturbation) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|&v| v == 0.0)
    }
}
