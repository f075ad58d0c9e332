use std::net::{SocketAddr, TcpListener, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use socket2::{Domain, Protocol, Socket, Type};
use thiserror::Error;
use tiny_http::{Header, Method, Response, Server};

use super::{SpecError, VictimSpec};
use crate::victim::wire::{WireRequest, WireResponse, GENERATE_PATH};
use crate::victim::{QueryError, Victim};

const WORKERS: usize = 8;
const POLL: Duration = Duration::from_millis(50);

#[derive(Debug, Error)]
pub enum MockError {
    #[error(transparent)]
    Spec(#[from] SpecError),
    #[error("cannot bind {addr}: {message}")]
    Bind { addr: String, message: String },
}

/// Wire-protocol server in front of an in-process victim.
///
/// Requests are served by a fixed pool of worker threads; the victim is shared
/// read-only. With a per-token delay configured, each request sleeps
/// `delay * N` milliseconds and reports that simulated time as
/// `server_decode_ms`, so the reported value is deterministic.
pub struct MockServer {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    workers: Vec<JoinHandle<()>>,
}

impl MockServer {
    pub fn start(spec: &VictimSpec, bind: &str) -> Result<Self, MockError> {
        let victim = Arc::new(spec.build()?);
        Self::start_with(victim, spec.delay_per_token_ms, bind)
    }

    pub fn start_with(
        victim: Arc<dyn Victim>,
        delay_per_token_ms: f64,
        bind: &str,
    ) -> Result<Self, MockError> {
        let bind_err = |message: String| MockError::Bind {
            addr: bind.to_string(),
            message,
        };
        let listener = nodelay_listener(bind).map_err(|e| bind_err(e.to_string()))?;
        let server = Server::from_listener(listener, None).map_err(|e| bind_err(e.to_string()))?;
        let addr = server
            .server_addr()
            .to_ip()
            .expect("bound to an IP address");
        let server = Arc::new(server);
        let stop = Arc::new(AtomicBool::new(false));
        let workers = (0..WORKERS)
            .map(|_| {
                let server = Arc::clone(&server);
                let victim = Arc::clone(&victim);
                let stop = Arc::clone(&stop);
                std::thread::spawn(move || {
                    while !stop.load(Ordering::Relaxed) {
                        match server.recv_timeout(POLL) {
                            Ok(Some(req)) => handle(victim.as_ref(), delay_per_token_ms, req),
                            Ok(None) => {}
                            Err(e) => {
                                log::error!("mock server receive failed: {e}");
                                break;
                            }
                        }
                    }
                })
            })
            .collect();
        log::info!("mock victim '{}' listening on {addr}", victim.name());
        Ok(MockServer {
            addr,
            stop,
            workers,
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// Root URL suitable for [`crate::victim::HttpVictim::new`].
    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Blocks until the worker threads exit (i.e. forever, unless the
    /// listener fails).
    pub fn join(mut self) {
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }

    pub fn shutdown(mut self) {
        self.stop_workers();
    }

    fn stop_workers(&mut self) {
        self.stop.store(true, Ordering::Relaxed);
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        self.stop_workers();
    }
}

/// Builds the victim described by `spec` and serves it on `bind` until the
/// process is killed.
pub fn serve_mock(spec: &VictimSpec, bind: &str) -> Result<(), MockError> {
    MockServer::start(spec, bind)?.join();
    Ok(())
}

fn handle(victim: &dyn Victim, delay_per_token_ms: f64, mut req: tiny_http::Request) {
    let mut body = Vec::new();
    let (status, payload) = match req.as_reader().read_to_end(&mut body) {
        Err(e) => (400, error_body(&format!("cannot read body: {e}"))),
        Ok(_) => route(victim, delay_per_token_ms, req.method(), req.url(), &body),
    };
    let header = Header::from_bytes("Content-Type", "application/json").expect("static header");
    let response = Response::from_data(payload)
        .with_status_code(status)
        .with_header(header);
    if let Err(e) = req.respond(response) {
        log::warn!("mock server failed to send response: {e}");
    }
}

fn error_body(message: &str) -> Vec<u8> {
    serde_json::to_vec(&serde_json::json!({ "error": message })).expect("json")
}

/// A listening socket with Nagle's algorithm disabled. Accepted connections
/// inherit the flag, which keeps multi-segment responses from stalling on
/// the client's delayed ACK and distorting latency measurements.
fn nodelay_listener(bind: &str) -> std::io::Result<TcpListener> {
    let addr = bind
        .to_socket_addrs()?
        .next()
        .ok_or_else(|| std::io::Error::new(std::io::ErrorKind::InvalidInput, "no address"))?;
    let socket = Socket::new(Domain::for_address(addr), Type::STREAM, Some(Protocol::TCP))?;
    socket.set_reuse_address(true)?;
    socket.set_nodelay(true)?;
    socket.bind(&addr.into())?;
    socket.listen(128)?;
    Ok(socket.into())
}

fn route(
    victim: &dyn Victim,
    delay_per_token_ms: f64,
    method: &Method,
    url: &str,
    body: &[u8],
) -> (u16, Vec<u8>) {
    if url != GENERATE_PATH {
        return (404, error_body(&format!("no route for {url}")));
    }
    if *method != Method::Post {
        return (405, error_body("use POST"));
    }
    let request: WireRequest = match serde_json::from_slice(body) {
        Ok(r) => r,
        Err(e) => return (400, error_body(&format!("invalid request body: {e}"))),
    };
    let image = match request.decode_image() {
        Ok(img) => img,
        Err(e) => return (422, error_body(&e.to_string())),
    };
    let mut response = match victim.query(&image, &request.decode) {
        Ok(r) => r,
        Err(QueryError::Unsupported(msg)) => return (422, error_body(&msg)),
        Err(e) => return (500, error_body(&e.to_string())),
    };
    for p in &mut response.positions {
        p.topk_probs.truncate(request.topk);
    }
    let simulated_ms = delay_per_token_ms * response.length as f64;
    if simulated_ms > 0.0 {
        std::thread::sleep(Duration::from_secs_f64(simulated_ms / 1e3));
    }
    response.server_decode_ms = Some(simulated_ms);
    let wire = WireResponse::from(&response);
    (200, serde_json::to_vec(&wire).expect("response serialises"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::RuleVictim;

    #[test]
    fn routes_reject_bad_paths_and_bodies() {
        let v = RuleVictim::new(10, 4);
        assert_eq!(route(&v, 0.0, &Method::Post, "/nope", b"{}").0, 404);
        assert_eq!(route(&v, 0.0, &Method::Get, GENERATE_PATH, b"").0, 405);
        assert_eq!(route(&v, 0.0, &Method::Post, GENERATE_PATH, b"{").0, 400);
        let bad = br#"{"image": {"width": 1, "height": 1, "channels": 3, "encoding": "rgb8_base64", "data": "AAAA"}, "topk": 1}"#;
        assert_eq!(route(&v, 0.0, &Method::Post, GENERATE_PATH, bad).0, 422);
        let ok = br#"{"image": {"width": 1, "height": 1, "channels": 3, "encoding": "rgb8_base64", "data": "AAAA"}, "topk": 2}"#;
        let (status, body) = route(&v, 0.0, &Method::Post, GENERATE_PATH, ok);
        assert_eq!(status, 200);
        let parsed: WireResponse = serde_json::from_slice(&body).unwrap();
        assert_eq!(parsed.length, 1);
        assert_eq!(parsed.positions[0].topk_probs.len(), 2);
    }
}
