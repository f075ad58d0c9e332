//! Attacks ten small dark images against the in-process rule victim and
//! prints the relative length increase of each.
//!
//!     cargo run --release --example rule_attack [iterations]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vlm_slowdown::harness::metrics::i_length;
use vlm_slowdown::synthetic::RuleVictim;
use vlm_slowdown::{attack, AttackConfig, ImageTensor};

fn main() {
    let iterations = std::env::args()
        .nth(1)
        .map(|s| s.parse().expect("iterations must be an integer"))
        .unwrap_or(200);
    let victim = RuleVictim::new(1000, 20);
    let mut rng = ChaCha8Rng::seed_from_u64(7);

    for i in 0..10u64 {
        let pixels: Vec<f64> = (0..12).map(|_| rng.gen_range(0.0..40.0f64).round()).collect();
        let image = ImageTensor::new(2, 2, pixels).unwrap();
        let cfg = AttackConfig {
            iterations,
            seed: i,
            ..AttackConfig::default()
        };
        let result = attack(&image, &victim, &cfg).expect("in-process victim cannot fail");
        let adv = result.adversarial.rounded();
        let adv_len = victim.length_for(&adv);
        println!(
            "image {i}: length {} -> {} ({:+.1}%), ||delta|| = {:.2}, queries = {}",
            result.baseline_response.length,
            adv_len,
            i_length(&result.baseline_response, &result.final_response).unwrap_or(f64::NAN),
            result.delta.l2_norm(),
            result.query_count,
        );
    }
}
