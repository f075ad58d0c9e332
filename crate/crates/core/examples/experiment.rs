//! Runs a full batch experiment from a JSON config and prints the aggregate.
//! Without an argument it writes a few demo images and a config under the
//! system temp directory first.
//!
//!     cargo run --release --example experiment [config.json]

use vlm_slowdown::harness::{run_experiment, ExperimentConfig, ImageOutcome};
use vlm_slowdown::imageio::save_image;
use vlm_slowdown::ImageTensor;

fn demo_config(dir: &std::path::Path) -> ExperimentConfig {
    let inputs = dir.join("inputs");
    std::fs::create_dir_all(&inputs).unwrap();
    for i in 0..4 {
        let pixels = (0..12).map(|j| ((7 * i + 11 * j) % 37) as f64).collect();
        let img = ImageTensor::new(2, 2, pixels).unwrap();
        save_image(&img, inputs.join(format!("demo{i}.png"))).unwrap();
    }
    let json = format!(
        r#"{{
            "inputs": {{"dir": {inputs:?}}},
            "victim": {{"in_process": {{"kind": "rule", "l_max": 1000, "k": 20}}}},
            "attack": {{"iterations": 200}},
            "output_dir": {out:?}
        }}"#,
        out = dir.join("out"),
    );
    serde_json::from_str(&json).unwrap()
}

fn main() {
    let cfg = match std::env::args().nth(1) {
        Some(path) => ExperimentConfig::from_file(path).expect("valid config"),
        None => demo_config(&std::env::temp_dir().join("vlm-slowdown-demo")),
    };
    let report = run_experiment(&cfg).expect("experiment runs");
    for outcome in &report.records {
        match outcome {
            ImageOutcome::Ok(r) => println!(
                "{:<10} seed {:<3} length {:>4} -> {:>4}  L2 {:6.2}",
                r.image_id, r.seed, r.metrics.length_orig, r.metrics.length_adv, r.metrics.l2_distance
            ),
            ImageOutcome::Failed(f) => println!("{:<10} failed: {}", f.image_id, f.error),
        }
    }
    println!("{}", serde_json::to_string_pretty(&report.aggregate).unwrap());
    println!("reports written to {}", cfg.output_dir.display());
}
