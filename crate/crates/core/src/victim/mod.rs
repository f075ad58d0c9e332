//! The opaque-victim abstraction.
//!
//! A victim is anything that turns an image into a [`GenerationResponse`]:
//! an in-process synthetic model, or a remote model reached through the JSON
//! protocol in [`wire`] via [`HttpVictim`].

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::objectives::{GenerationResponse, ResponseViolation};
use crate::tensor::ImageTensor;

mod http;
pub mod wire;

pub use http::{http_query, HttpVictim};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecodeStrategy {
    #[default]
    Greedy,
    Beam,
    TopK,
    Nucleus,
}

/// Decoding options forwarded verbatim to the victim.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecodeOptions {
    pub strategy: DecodeStrategy,
    pub max_new_tokens: usize,
    pub params: serde_json::Map<String, serde_json::Value>,
}

impl Default for DecodeOptions {
    fn default() -> Self {
        DecodeOptions {
            strategy: DecodeStrategy::Greedy,
            max_new_tokens: 1024,
            params: serde_json::Map::new(),
        }
    }
}

#[derive(Debug, Error)]
pub enum QueryError {
    /// Connection-level failure; already retried `attempts` times in total.
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    /// The victim rejected the request (HTTP 400/422).
    #[error("request rejected with HTTP {status}: {body}")]
    Protocol { status: u16, body: String },
    #[error("victim failed with HTTP {status}: {body}")]
    Server { status: u16, body: String },
    #[error("malformed victim response: {0}")]
    Malformed(#[from] ResponseViolation),
    #[error("victim cannot handle this request: {0}")]
    Unsupported(String),
}

impl QueryError {
    pub fn is_retriable(&self) -> bool {
        matches!(self, QueryError::Transport { .. })
    }
}

/// A model reachable only through queries.
///
/// Implementations must be safe to call concurrently; deterministic victims
/// return identical responses for identical requests.
pub trait Victim: Send + Sync {
    fn name(&self) -> &str;

    /// Number of top-k probabilities reported per position.
    fn topk(&self) -> usize;

    fn query(
        &self,
        image: &ImageTensor,
        decode: &DecodeOptions,
    ) -> Result<GenerationResponse, QueryError>;

    /// Whether queries cross a network boundary (timing is noisier).
    fn is_remote(&self) -> bool {
        false
    }
}

impl<V: Victim + ?Sized> Victim for &V {
    fn name(&self) -> &str {
        (**self).name()
    }
    fn topk(&self) -> usize {
        (**self).topk()
    }
    fn query(&self, image: &ImageTensor, decode: &DecodeOptions) -> Result<GenerationResponse, QueryError> {
        (**self).query(image, decode)
    }
    fn is_remote(&self) -> bool {
        (**self).is_remote()
    }
}

impl<V: Victim + ?Sized> Victim for Box<V> {
    fn name(&self) -> &str {
        (**self).name()
    }
    fn topk(&self) -> usize {
        (**self).topk()
    }
    fn query(&self, image: &ImageTensor, decode: &DecodeOptions) -> Result<GenerationResponse, QueryError> {
        (**self).query(image, decode)
    }
    fn is_remote(&self) -> bool {
        (**self).is_remote()
    }
}

impl<V: Victim + ?Sized> Victim for std::sync::Arc<V> {
    fn name(&self) -> &str {
        (**self).name()
    }
    fn topk(&self) -> usize {
        (**self).topk()
    }
    fn query(&self, image: &ImageTensor, decode: &DecodeOptions) -> Result<GenerationResponse, QueryError> {
        (**self).query(image, decode)
    }
    fn is_remote(&self) -> bool {
        (**self).is_remote()
    }
}
