//! Contrasts the attack with equal-budget Gaussian noise, then measures how
//! much of the attack survives 4-bit input quantization.
//!
//!     cargo run --release --example baselines_defense

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vlm_slowdown::baselines::{gaussian_baseline, quantize_defense};
use vlm_slowdown::harness::metrics::relative_increase_pct;
use vlm_slowdown::synthetic::RuleVictim;
use vlm_slowdown::{attack, AttackConfig, ImageTensor};

fn main() {
    let victim = RuleVictim::new(1000, 20);
    let image = ImageTensor::new(2, 2, vec![20.0, 11.0, 31.0, 6.0, 25.0, 16.0, 2.0, 29.0, 13.0, 37.0, 9.0, 18.0])
        .unwrap();
    let cfg = AttackConfig {
        iterations: 200,
        ..AttackConfig::default()
    };
    let base = victim.length_for(&image) as f64;
    let pct = |img: &ImageTensor| relative_increase_pct(base, victim.length_for(img) as f64).unwrap();

    let adv = attack(&image, &victim, &cfg).unwrap().adversarial.rounded();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let noisy = gaussian_baseline(&image, 16.0, cfg.budget, &mut rng).unwrap().rounded();

    println!("baseline length: {base}");
    println!("attack:          {:+.1}%", pct(&adv));
    println!("gaussian noise:  {:+.1}%", pct(&noisy));
    for bits in [8, 6, 4, 2] {
        let q_orig = quantize_defense(&image, bits).unwrap();
        let q_adv = quantize_defense(&adv, bits).unwrap();
        let gain = relative_increase_pct(
            victim.length_for(&q_orig) as f64,
            victim.length_for(&q_adv) as f64,
        )
        .unwrap();
        println!("attack under {bits}-bit quantization: {gain:+.1}%");
    }
}
