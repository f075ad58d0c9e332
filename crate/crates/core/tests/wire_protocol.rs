//! Wire protocol against the mock server: golden bytes, transport
//! transparency, simulated decode delay, concurrency and error mapping.
//!
//! Regenerate the fixtures with `BLESS_FIXTURES=1 cargo test --test wire_protocol`.

use std::path::PathBuf;
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use vlm_slowdown::synthetic::{MockServer, VictimSpec};
use vlm_slowdown::victim::wire::{encode_request, parse_response, WireRequest, GENERATE_PATH};
use vlm_slowdown::victim::{DecodeOptions, HttpVictim, QueryError, Victim};
use vlm_slowdown::ImageTensor;

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn check_golden(name: &str, actual: &[u8]) {
    let path = fixture(name);
    if std::env::var_os("BLESS_FIXTURES").is_some() {
        std::fs::write(&path, actual).unwrap();
        return;
    }
    let expected = std::fs::read(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    assert_eq!(
        String::from_utf8_lossy(actual),
        String::from_utf8_lossy(&expected),
        "{name} differs from the golden file"
    );
}

fn golden_image() -> ImageTensor {
    ImageTensor::new(
        2,
        2,
        vec![255.0, 0.0, 127.6, 64.0, 200.0, 10.4, 99.5, 128.0, 3.0, 250.0, 180.0, 77.0],
    )
    .unwrap()
}

fn post_raw(url: &str, body: &[u8]) -> Result<Vec<u8>, u16> {
    match ureq::post(url).set("Content-Type", "application/json").send_bytes(body) {
        Ok(r) => {
            let mut out = Vec::new();
            std::io::Read::read_to_end(&mut r.into_reader(), &mut out).unwrap();
            Ok(out)
        }
        Err(ureq::Error::Status(code, _)) => Err(code),
        Err(e) => panic!("transport error: {e}"),
    }
}

#[test]
fn golden_request_and_response_bytes() {
    let spec = VictimSpec::from_file(fixture("rule_victim.json")).unwrap();
    let decode = DecodeOptions {
        max_new_tokens: 64,
        ..DecodeOptions::default()
    };
    let request = encode_request(&golden_image(), 4, &decode);
    check_golden("request.json", &request);

    let server = MockServer::start(&spec, "127.0.0.1:0").unwrap();
    let body = post_raw(&format!("{}{GENERATE_PATH}", server.url()), &request).unwrap();
    check_golden("response.json", &body);
    let parsed = parse_response(&body).unwrap();
    assert_eq!(parsed.length, 5);
    assert!(parsed.positions.iter().all(|p| p.topk_probs.len() == 4));
}

#[test]
fn golden_request_decodes_to_rounded_image() {
    let bytes = std::fs::read(fixture("request.json")).unwrap();
    let req: WireRequest = serde_json::from_slice(&bytes).unwrap();
    assert_eq!(req.decode_image().unwrap(), golden_image().rounded());
}

#[test]
fn transport_is_transparent() {
    let specs = [VictimSpec::rule(300, 6), VictimSpec::analytic(5, 12, 9, 6)];
    let decode = DecodeOptions::default();
    for spec in specs {
        let local = spec.build().unwrap();
        let server = MockServer::start(&spec, "127.0.0.1:0").unwrap();
        let remote = HttpVictim::new(&server.url(), 6);
        for seed in 0..5u64 {
            let pixels = (0..12).map(|i| ((i as u64 * 37 + seed * 91) % 256) as f64).collect();
            let img = ImageTensor::new(2, 2, pixels).unwrap();
            let a = local.query(&img, &decode).unwrap();
            let b = remote.query(&img, &decode).unwrap();
            assert!(b.client_latency_ms.is_some());
            assert_eq!(a.without_timing(), b.without_timing(), "{:?} seed {seed}", spec.kind);
        }
    }
}

#[test]
fn simulated_decode_time_scales_with_length() {
    let spec = VictimSpec {
        delay_per_token_ms: 2.0,
        ..VictimSpec::rule(50, 4)
    };
    let server = MockServer::start(&spec, "127.0.0.1:0").unwrap();
    let victim = HttpVictim::new(&server.url(), 4);
    // Mean pixel 127.5, i.e. m = 0.5 and N = 25.
    let pixels = (0..12).map(|i| if i % 2 == 0 { 127.0 } else { 128.0 }).collect();
    let img = ImageTensor::new(2, 2, pixels).unwrap();
    let r = victim.query(&img, &DecodeOptions::default()).unwrap();
    assert_eq!(r.length, 25);
    let decode_ms = r.server_decode_ms.unwrap();
    assert!((50.0..=100.0).contains(&decode_ms), "{decode_ms}");
    assert!(r.client_latency_ms.unwrap() >= decode_ms);
}

#[test]
fn concurrent_identical_requests_agree() {
    let spec = VictimSpec {
        delay_per_token_ms: 0.2,
        ..VictimSpec::rule(100, 5)
    };
    let server = MockServer::start(&spec, "127.0.0.1:0").unwrap();
    let victim = Arc::new(HttpVictim::new(&server.url(), 5));
    let img = Arc::new(ImageTensor::filled(3, 3, 90.0).unwrap());
    let handles: Vec<_> = (0..12)
        .map(|_| {
            let (v, i) = (Arc::clone(&victim), Arc::clone(&img));
            thread::spawn(move || v.query(&i, &DecodeOptions::default()).unwrap().without_timing())
        })
        .collect();
    let results: Vec<_> = handles.into_iter().map(|h| h.join().unwrap()).collect();
    assert!(results.windows(2).all(|w| w[0] == w[1]));
}

#[test]
fn max_new_tokens_truncates_remote_output() {
    let server = MockServer::start(&VictimSpec::rule(1000, 4), "127.0.0.1:0").unwrap();
    let victim = HttpVictim::new(&server.url(), 4);
    let decode = DecodeOptions {
        max_new_tokens: 7,
        ..DecodeOptions::default()
    };
    let r = victim.query(&ImageTensor::filled(1, 1, 200.0).unwrap(), &decode).unwrap();
    assert_eq!(r.length, 7);
}

#[test]
fn bad_requests_are_rejected_with_client_errors() {
    let server = MockServer::start(&VictimSpec::rule(10, 4), "127.0.0.1:0").unwrap();
    let url = format!("{}{GENERATE_PATH}", server.url());
    assert_eq!(post_raw(&url, b"{not json"), Err(400));
    let mut req: serde_json::Value =
        serde_json::from_slice(&encode_request(&golden_image(), 4, &DecodeOptions::default())).unwrap();
    req["image"]["encoding"] = "png".into();
    assert_eq!(post_raw(&url, req.to_string().as_bytes()), Err(422));
    assert_eq!(post_raw(&format!("{}/v2/other", server.url()), b"{}"), Err(404));

    let victim = HttpVictim::new(&server.url(), 1);
    assert!(matches!(
        victim.query(&golden_image(), &DecodeOptions::default()),
        Err(QueryError::Protocol { status: 422, .. })
    ));
}

/// Serves every request with the same status and body.
fn canned_server(status: u16, body: &'static str) -> String {
    let server = tiny_http::Server::http("127.0.0.1:0").unwrap();
    let addr = server.server_addr().to_ip().unwrap();
    thread::spawn(move || {
        for req in server.incoming_requests() {
            let _ = req.respond(tiny_http::Response::from_string(body).with_status_code(status));
        }
    });
    format!("http://{addr}")
}

#[test]
fn malformed_responses_fail_validation() {
    let cases = [
        (r#"{"length": 2, "positions": [{"eos_prob": 0.1, "topk_probs": [0.5]}]}"#, "positions"),
        (r#"{"length": 1, "positions": [{"eos_prob": 1.5, "topk_probs": [0.5]}]}"#, "eos_prob"),
        (r#"{"length": 1, "positions": [{"eos_prob": 0.1, "topk_probs": [0.2, 0.5]}]}"#, "topk_probs"),
        (r#"{"length": 1, "positions": [{"eos_prob": 0.1, "topk_probs": [0.7, 0.6]}]}"#, "topk_probs"),
        (r#"{"length": 1}"#, "body"),
        (r#"[1, 2, 3]"#, "body"),
    ];
    for (body, field) in cases {
        let err = parse_response(body.as_bytes()).unwrap_err();
        assert!(err.field.contains(field), "{body}: {err}");
        let victim = HttpVictim::with_options(&canned_server(200, body), 2, Duration::from_secs(5), 0);
        assert!(
            matches!(victim.query(&golden_image(), &DecodeOptions::default()), Err(QueryError::Malformed(_))),
            "{body}"
        );
    }
}

#[test]
fn server_errors_are_not_retried_as_transport_failures() {
    let victim = HttpVictim::with_options(&canned_server(503, "busy"), 2, Duration::from_secs(5), 3);
    match victim.query(&golden_image(), &DecodeOptions::default()) {
        Err(QueryError::Server { status, body }) => assert_eq!((status, body.as_str()), (503, "busy")),
        other => panic!("{other:?}"),
    }
}
