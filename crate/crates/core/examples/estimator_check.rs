//! Compares NES gradient estimates with the exact gradient of the analytic
//! victim's total objective.
//!
//!     cargo run --release --example estimator_check

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vlm_slowdown::nes::estimator_check;
use vlm_slowdown::objectives::ObjectiveParams;
use vlm_slowdown::synthetic::AnalyticVictim;

fn main() {
    let victim = AnalyticVictim::from_seed(0, 64, 8, 10);
    let target = victim.with_params(ObjectiveParams {
        k: 10,
        ..ObjectiveParams::default()
    });
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for q in [5, 50, 500] {
        let report = estimator_check(&target, q, 1e-3, 0.5, 100, &mut rng);
        println!(
            "q = {q:>3}: within (1 ± 0.5) in {:>5.1}% of trials, mean cosine {:.3}, mean |g_hat|²/|g|² {:.2}",
            report.success_fraction * 100.0,
            report.mean_cosine,
            report.mean_norm_ratio
        );
    }
}
