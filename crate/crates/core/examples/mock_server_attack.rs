//! Serves a rule victim over HTTP on a free local port, attacks it through
//! the wire protocol and reports length and latency before and after.
//!
//!     cargo run --release --example mock_server_attack [eta]

use vlm_slowdown::harness::{evaluate_pair, Defense};
use vlm_slowdown::synthetic::{MockServer, VictimSpec};
use vlm_slowdown::victim::HttpVictim;
use vlm_slowdown::{attack, AttackConfig, ImageTensor};

fn main() {
    let spec = VictimSpec {
        delay_per_token_ms: 0.05,
        ..VictimSpec::rule(1000, 20)
    };
    let server = MockServer::start(&spec, "127.0.0.1:0").expect("bind a local port");
    println!("mock victim listening on {}", server.url());

    let victim = HttpVictim::new(&server.url(), 20);
    let image = ImageTensor::new(2, 2, vec![12.0, 30.0, 5.0, 22.0, 8.0, 17.0, 35.0, 3.0, 26.0, 14.0, 9.0, 20.0])
        .unwrap();
    // The wire carries 8-bit pixels, so search noise far below one gray level
    // would be rounded away before it reaches the victim.
    let eta: f64 = std::env::args().nth(1).map_or(2.0, |s| s.parse().expect("eta"));
    let cfg = AttackConfig {
        iterations: 100,
        search_sigma: eta,
        ..AttackConfig::default()
    };
    let result = attack(&image, &victim, &cfg).expect("attack over HTTP");
    println!("{} queries, ||delta|| = {:.2}", result.query_count, result.delta.l2_norm());

    let (record, _) = evaluate_pair(&victim, &image, &result.adversarial.rounded(), Defense::None, &cfg.decode, 3)
        .expect("measure");
    println!("{}", serde_json::to_string_pretty(&record).unwrap());
    server.shutdown();
}
