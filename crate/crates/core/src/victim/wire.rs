//! JSON wire protocol for `POST /v1/generate`.
//!
//! Request:
//!
//! ```json
//! {"image": {"width": W, "height": H, "channels": 3, "encoding": "rgb8_base64", "data": "..."},
//!  "topk": K,
//!  "decode": {"strategy": "greedy", "max_new_tokens": 1024, "params": {}}}
//! ```
//!
//! Response:
//!
//! ```json
//! {"length": N, "text": "...", "positions": [{"eos_prob": p, "topk_probs": [...]}, ...],
//!  "server_decode_ms": t}
//! ```
//!
//! Pixels are rounded half away from zero to bytes before encoding.
//! Probabilities (never logits) travel on the wire, and top-k lists are the
//! raw k largest vocabulary probabilities sorted descending; the client
//! renormalises them.

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::DecodeOptions;
use crate::objectives::{GenerationResponse, PositionInfo, ResponseViolation};
use crate::tensor::{ImageTensor, CHANNELS};

pub const GENERATE_PATH: &str = "/v1/generate";
pub const IMAGE_ENCODING: &str = "rgb8_base64";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireImage {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub encoding: String,
    pub data: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireRequest {
    pub image: WireImage,
    pub topk: usize,
    #[serde(default)]
    pub decode: DecodeOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WirePosition {
    pub eos_prob: f64,
    pub topk_probs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireResponse {
    pub length: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    pub positions: Vec<WirePosition>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub server_decode_ms: Option<f64>,
}

/// Reasons a server rejects a syntactically valid request (HTTP 422).
#[derive(Debug, Error, Clone, PartialEq)]
pub enum RequestViolation {
    #[error("channels must be 3, got {0}")]
    Channels(usize),
    #[error("unsupported encoding {0:?}")]
    Encoding(String),
    #[error("image data is not valid base64: {0}")]
    Base64(String),
    #[error("decoded {actual} bytes, expected {width}x{height}x3 = {expected}")]
    ByteLength {
        width: usize,
        height: usize,
        expected: usize,
        actual: usize,
    },
    #[error("image dimensions must be positive")]
    EmptyImage,
    #[error("topk must be >= 2, got {0}")]
    TopK(usize),
    #[error("max_new_tokens must be >= 1")]
    MaxNewTokens,
}

impl WireRequest {
    pub fn new(image: &ImageTensor, topk: usize, decode: &DecodeOptions) -> Self {
        WireRequest {
            image: WireImage {
                width: image.width(),
                height: image.height(),
                channels: CHANNELS,
                encoding: IMAGE_ENCODING.to_string(),
                data: STANDARD.encode(image.to_rgb8()),
            },
            topk,
            decode: decode.clone(),
        }
    }

    /// Validates the request and decodes the 8-bit image it carries.
    pub fn decode_image(&self) -> Result<ImageTensor, RequestViolation> {
        let img = &self.image;
        if img.channels != CHANNELS {
            return Err(RequestViolation::Channels(img.channels));
        }
        if img.encoding != IMAGE_ENCODING {
            return Err(RequestViolation::Encoding(img.encoding.clone()));
        }
        if self.topk < 2 {
            return Err(RequestViolation::TopK(self.topk));
        }
        if self.decode.max_new_tokens == 0 {
            return Err(RequestViolation::MaxNewTokens);
        }
        if img.width == 0 || img.height == 0 {
            return Err(RequestViolation::EmptyImage);
        }
        let bytes = STANDARD
            .decode(img.data.as_bytes())
            .map_err(|e| RequestViolation::Base64(e.to_string()))?;
        let expected = img.width * img.height * CHANNELS;
        if bytes.len() != expected {
            return Err(RequestViolation::ByteLength {
                width: img.width,
                height: img.height,
                expected,
                actual: bytes.len(),
            });
        }
        Ok(ImageTensor::from_rgb8(img.height, img.width, &bytes)
            .expect("length checked above"))
    }
}

/// Serialises the request body for `image`.
pub fn encode_request(image: &ImageTensor, topk: usize, decode: &DecodeOptions) -> Vec<u8> {
    serde_json::to_vec(&WireRequest::new(image, topk, decode)).expect("request serialises")
}

impl From<&GenerationResponse> for WireResponse {
    fn from(r: &GenerationResponse) -> Self {
        WireResponse {
            length: r.length,
            text: r.text.clone(),
            positions: r
                .positions
                .iter()
                .map(|p| WirePosition {
                    eos_prob: p.eos_prob,
                    topk_probs: p.topk_probs.clone(),
                })
                .collect(),
            server_decode_ms: r.server_decode_ms,
        }
    }
}

impl From<WireResponse> for GenerationResponse {
    fn from(w: WireResponse) -> Self {
        GenerationResponse {
            length: w.length,
            positions: w
                .positions
                .into_iter()
                .map(|p| PositionInfo {
                    eos_prob: p.eos_prob,
                    topk_probs: p.topk_probs,
                })
                .collect(),
            text: w.text,
            server_decode_ms: w.server_decode_ms,
            client_latency_ms: None,
        }
    }
}

/// Parses and validates a response body. Nothing that violates a response
/// invariant gets past this function.
pub fn parse_response(body: &[u8]) -> Result<GenerationResponse, ResponseViolation> {
    let wire: WireResponse = serde_json::from_slice(body).map_err(|e| ResponseViolation {
        field: "body".into(),
        reason: e.to_string(),
    })?;
    let response = GenerationResponse::from(wire);
    response.validate()?;
    Ok(response)
}
