use std::io::Read;
use std::time::{Duration, Instant};

use super::wire::{self, WireRequest, GENERATE_PATH};
use super::{DecodeOptions, QueryError, Victim};
use crate::objectives::GenerationResponse;
use crate::tensor::ImageTensor;

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(120);
pub const DEFAULT_RETRIES: u32 = 3;

/// A victim behind the JSON protocol, reached over HTTP/1.1.
///
/// The underlying agent pools connections and is shared by concurrent callers.
#[derive(Debug, Clone)]
pub struct HttpVictim {
    name: String,
    url: String,
    topk: usize,
    retries: u32,
    agent: ureq::Agent,
}

impl HttpVictim {
    /// `endpoint` is the server root, e.g. `http://127.0.0.1:8080`.
    pub fn new(endpoint: &str, topk: usize) -> Self {
        Self::with_options(endpoint, topk, DEFAULT_TIMEOUT, DEFAULT_RETRIES)
    }

    pub fn with_options(endpoint: &str, topk: usize, timeout: Duration, retries: u32) -> Self {
        let root = endpoint.trim_end_matches('/');
        let url = if root.ends_with(GENERATE_PATH) {
            root.to_string()
        } else {
            format!("{root}{GENERATE_PATH}")
        };
        HttpVictim {
            name: root.to_string(),
            url,
            topk,
            retries,
            agent: ureq::AgentBuilder::new().timeout(timeout).build(),
        }
    }

    pub fn url(&self) -> &str {
        &self.url
    }

    pub fn query_wire(&self, req: &WireRequest) -> Result<GenerationResponse, QueryError> {
        http_query(&self.agent, &self.url, req, self.retries)
    }
}

impl Victim for HttpVictim {
    fn name(&self) -> &str {
        &self.name
    }

    fn topk(&self) -> usize {
        self.topk
    }

    fn query(&self, image: &ImageTensor, decode: &DecodeOptions) -> Result<GenerationResponse, QueryError> {
        self.query_wire(&WireRequest::new(image, self.topk, decode))
    }

    fn is_remote(&self) -> bool {
        true
    }
}

/// POSTs `req` to `url` and validates the reply.
///
/// Transport failures are retried up to `retries` more times; every attempt is
/// logged, and the returned latency covers only the successful attempt.
pub fn http_query(
    agent: &ureq::Agent,
    url: &str,
    req: &WireRequest,
    retries: u32,
) -> Result<GenerationResponse, QueryError> {
    let body = serde_json::to_vec(req).expect("request serialises");
    let mut attempt = 0u32;
    loop {
        attempt += 1;
        let start = Instant::now();
        match post_once(agent, url, &body) {
            Ok(bytes) => {
                let latency_ms = start.elapsed().as_secs_f64() * 1e3;
                log::debug!("POST {url} attempt {attempt} ok in {latency_ms:.2} ms");
                let mut response = wire::parse_response(&bytes)?;
                response.client_latency_ms = Some(latency_ms);
                return Ok(response);
            }
            Err(message @ QueryError::Transport { .. }) if attempt <= retries => {
                log::warn!("POST {url} attempt {attempt} failed: {message}; retrying");
            }
            Err(QueryError::Transport { message, .. }) => {
                log::warn!("POST {url} attempt {attempt} failed: {message}; giving up");
                return Err(QueryError::Transport {
                    attempts: attempt,
                    message,
                });
            }
            Err(other) => return Err(other),
        }
    }
}

fn post_once(agent: &ureq::Agent, url: &str, body: &[u8]) -> Result<Vec<u8>, QueryError> {
    let response = agent
        .post(url)
        .set("Content-Type", "application/json")
        .send_bytes(body);
    match response {
        Ok(resp) => {
            let mut bytes = Vec::new();
            resp.into_reader()
                .read_to_end(&mut bytes)
                .map_err(|e| QueryError::Transport {
                    attempts: 1,
                    message: e.to_string(),
                })?;
            Ok(bytes)
        }
        Err(ureq::Error::Status(status, resp)) => {
            let body = resp.into_string().unwrap_or_default();
            if status == 400 || status == 422 {
                Err(QueryError::Protocol { status, body })
            } else {
                Err(QueryError::Server { status, body })
            }
        }
        Err(ureq::Error::Transport(t)) => Err(QueryError::Transport {
            attempts: 1,
            message: t.to_string(),
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoint_gets_generate_path() {
        assert_eq!(
            HttpVictim::new("http://localhost:9/", 5).url(),
            "http://localhost:9/v1/generate"
        );
        assert_eq!(
            HttpVictim::new("http://localhost:9/v1/generate", 5).url(),
            "http://localhost:9/v1/generate"
        );
    }

    #[test]
    fn unreachable_endpoint_is_retried_then_reported() {
        // port 9 (discard) is closed on loopback in the sandbox
        let v = HttpVictim::with_options("http://127.0.0.1:9", 5, Duration::from_secs(2), 2);
        let img = ImageTensor::filled(1, 1, 0.0).unwrap();
        match v.query(&img, &DecodeOptions::default()) {
            Err(QueryError::Transport { attempts, .. }) => assert_eq!(attempts, 3),
            other => panic!("expected transport error, got {other:?}"),
        }
    }
}
