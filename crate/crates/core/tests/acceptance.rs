//! One PASS/FAIL line per acceptance criterion. Runs without the libtest
//! harness so the lines always reach stdout; exits non-zero on any failure.

use std::path::PathBuf;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vlm_slowdown::baselines::{gaussian_baseline, quantize_defense};
use vlm_slowdown::harness::metrics::{median, relative_increase_pct};
use vlm_slowdown::harness::{run_experiment, EndpointConfig, ExperimentConfig, InputSource, Method, VictimSource};
use vlm_slowdown::imageio::save_image;
use vlm_slowdown::nes::{
    combine_pairs, cosine, estimate_flat, estimate_gradient_with_noise, estimator_check, sample_noise,
    sample_noise_flat,
};
use vlm_slowdown::objectives::{
    eos_objective, total_objective, var_objective, GenerationResponse, ObjectiveParams, PositionInfo,
};
use vlm_slowdown::synthetic::{AnalyticVictim, LinearObjective, MockServer, RuleVictim, VictimSpec};
use vlm_slowdown::victim::wire::{encode_request, parse_response, GENERATE_PATH};
use vlm_slowdown::victim::{DecodeOptions, HttpVictim};
use vlm_slowdown::{attack, AttackConfig, ImageTensor, Perturbation};

type Outcome = Result<String, String>;

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn response(eos: &[f64], topk: &[f64]) -> GenerationResponse {
    GenerationResponse {
        length: eos.len(),
        positions: eos
            .iter()
            .map(|&eos_prob| PositionInfo {
                eos_prob,
                topk_probs: topk.to_vec(),
            })
            .collect(),
        ..GenerationResponse::empty()
    }
}

fn objective_fidelity() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut cmp = |got: f64, want: f64| worst = worst.max((got - want).abs());
    cmp(eos_objective(&response(&[0.5, 0.5], &[0.5, 0.5]), 0.1), -0.55);
    cmp(eos_objective(&response(&[0.1, 0.2, 0.3], &[0.5, 0.5]), 0.1), -0.321);
    cmp(eos_objective(&response(&[0.0; 7], &[0.5, 0.5]), 0.1), 0.0);
    cmp(var_objective(&response(&[0.0], &[0.8, 0.2]), 2).unwrap(), -0.192_744_757_021_757_43);
    cmp(var_objective(&response(&[0.0, 0.0], &[0.25; 4]), 4).unwrap(), 0.0);
    let mut eos = vec![0.0; 10];
    eos[8] = 0.5;
    eos[9] = 0.5;
    let p = ObjectiveParams { k: 2, ..ObjectiveParams::default() };
    cmp(total_objective(&response(&eos, &[0.4, 0.1]), &p).unwrap(), 9.705_725_524_297_824);
    cmp(total_objective(&GenerationResponse::empty(), &p).unwrap(), 0.0);
    check(worst <= 1e-9, format!("max abs error {worst:.2e}"))
}

fn estimator_exactness() -> Outcome {
    let img = ImageTensor::filled(3, 3, 128.0).unwrap();
    let zero = Perturbation::zeros(img.shape());
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let noise = sample_noise(4, img.shape(), &mut rng);
    let constant = estimate_gradient_with_noise(&zero, &img, &|_: &ImageTensor| 7.5, &noise, 0.1).unwrap();
    if !constant.gradient.is_zero() {
        return Err("constant objective gave a non-zero gradient".into());
    }
    let mut worst: f64 = 0.0;
    for d in 1..=5 {
        let a: Vec<f64> = (0..d).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let x: Vec<f64> = (0..d).map(|_| rng.gen_range(0.0..255.0)).collect();
        let q = 3;
        let noise = sample_noise_flat(q, d, &mut rng);
        let mut want = vec![0.0; d];
        for mu in &noise[..q] {
            let proj: f64 = a.iter().zip(mu).map(|(u, v)| u * v).sum();
            want.iter_mut().zip(mu).for_each(|(w, m)| *w += proj * m / q as f64);
        }
        let scale = want.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for eta in [1e-3, 0.1, 1.0, 10.0] {
            let values: Vec<f64> = noise
                .iter()
                .map(|mu| (0..d).map(|i| a[i] * (x[i] + eta * mu[i])).sum())
                .collect();
            let slices: Vec<&[f64]> = noise.iter().map(Vec::as_slice).collect();
            let got = combine_pairs(&slices, &values, eta);
            for (g, w) in got.iter().zip(&want) {
                worst = worst.max((g - w).abs() / scale);
            }
        }
    }
    check(worst <= 1e-9, format!("constant -> exact zero; linear max rel error {worst:.2e}"))
}

fn estimator_unbiasedness() -> Outcome {
    let target = LinearObjective::from_seed(5, 100);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let trials = 200;
    let mut mean = vec![0.0; 100];
    for _ in 0..trials {
        let x: Vec<f64> = (0..100).map(|_| rng.gen_range(16.0..239.0)).collect();
        let g = estimate_flat(&target, &x, 50, 0.1, &mut rng);
        mean.iter_mut().zip(&g).for_each(|(m, v)| *m += v / trials as f64);
    }
    let c = cosine(&mean, &target.weights);
    check(c >= 0.99, format!("cosine {c:.4} (need >= 0.99)"))
}

fn concentration_check() -> Outcome {
    let victim = AnalyticVictim::from_seed(0, 64, 8, 10);
    let target = victim.with_params(ObjectiveParams { k: 10, ..ObjectiveParams::default() });
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let r = estimator_check(&target, 500, 1e-3, 0.5, 100, &mut rng);
    check(
        r.success_fraction >= 0.9 && r.mean_cosine >= 0.7,
        format!(
            "success {:.2} (need >= 0.9), mean cosine {:.3} (need >= 0.7)",
            r.success_fraction, r.mean_cosine
        ),
    )
}

fn gradient_oracle() -> Outcome {
    let victim = AnalyticVictim::from_seed(11, 48, 10, 8);
    let params = ObjectiveParams { k: 8, ..ObjectiveParams::default() };
    let value = |x: &[f64]| total_objective(&victim.respond(x), &params).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let h = 1e-4;
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let x: Vec<f64> = (0..48).map(|_| rng.gen_range(0.0..255.0)).collect();
        let exact = victim.grad_total(&x, &params).unwrap();
        let scale = exact.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for i in 0..48 {
            let (mut up, mut down) = (x.clone(), x.clone());
            up[i] += h;
            down[i] -= h;
            let fd = (value(&up) - value(&down)) / (2.0 * h);
            worst = worst.max((fd - exact[i]).abs() / scale);
        }
    }
    check(worst <= 1e-4, format!("max relative error {worst:.2e} over 20 points"))
}

fn seed_images() -> Vec<ImageTensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    (0..10)
        .map(|_| ImageTensor::new(2, 2, (0..12).map(|_| rng.gen_range(0.0..40.0f64).round()).collect()).unwrap())
        .collect()
}

struct EndToEnd {
    attack_gains: Vec<f64>,
    gaussian_gains: Vec<f64>,
    quantized_gains: Vec<f64>,
    max_delta: f64,
    pixels_ok: bool,
}

fn end_to_end_runs() -> EndToEnd {
    let victim = RuleVictim::new(1000, 20);
    let len = |img: &ImageTensor| victim.length_for(img) as f64;
    let mut out = EndToEnd {
        attack_gains: vec![],
        gaussian_gains: vec![],
        quantized_gains: vec![],
        max_delta: 0.0,
        pixels_ok: true,
    };
    for (i, image) in seed_images().iter().enumerate() {
        let cfg = AttackConfig { iterations: 200, seed: i as u64, ..AttackConfig::default() };
        let result = attack(image, &victim, &cfg).unwrap();
        out.max_delta = out.max_delta.max(result.delta.l2_norm());
        out.pixels_ok &= result.adversarial.as_slice().iter().all(|v| (0.0..=255.0).contains(v));
        let saved = result.adversarial.rounded();
        out.attack_gains.push(relative_increase_pct(len(image), len(&saved)).unwrap());

        let q_orig = quantize_defense(image, 4).unwrap();
        let q_adv = quantize_defense(&saved, 4).unwrap();
        out.quantized_gains.push(relative_increase_pct(len(&q_orig), len(&q_adv)).unwrap());

        let mut rng = ChaCha8Rng::seed_from_u64(i as u64);
        let noisy = gaussian_baseline(image, 16.0, cfg.budget, &mut rng).unwrap().rounded();
        out.gaussian_gains.push(relative_increase_pct(len(image), len(&noisy)).unwrap());
    }
    out
}

fn end_to_end(e: &EndToEnd) -> Outcome {
    let hits = e.attack_gains.iter().filter(|&&g| g >= 50.0).count();
    check(
        hits >= 8 && e.max_delta <= 64.0 + 1e-6 && e.pixels_ok,
        format!(
            "{hits}/10 images >= +50% (median {:+.1}%), max ||delta|| {:.4}, pixels in range: {}",
            median(&e.attack_gains).unwrap(),
            e.max_delta,
            e.pixels_ok
        ),
    )
}

fn baseline_ordering(e: &EndToEnd) -> Outcome {
    let (g, a) = (median(&e.gaussian_gains).unwrap(), median(&e.attack_gains).unwrap());
    check(g < a, format!("gaussian median {g:+.1}% vs attack median {a:+.1}%"))
}

fn defense_trend(e: &EndToEnd) -> Outcome {
    let (plain, squeezed) = (median(&e.attack_gains).unwrap(), median(&e.quantized_gains).unwrap());
    let drop = (plain - squeezed) / plain;
    check(
        drop < 0.2,
        format!("median {plain:+.1}% -> {squeezed:+.1}% under 4-bit quantization (relative drop {:.1}%)", drop * 100.0),
    )
}

fn determinism() -> Outcome {
    let server = MockServer::start(&VictimSpec::rule(1000, 20), "127.0.0.1:0").map_err(|e| e.to_string())?;
    let victim = HttpVictim::new(&server.url(), 20);
    let image = &seed_images()[0];
    let cfg = AttackConfig { iterations: 20, search_sigma: 2.0, seed: 77, ..AttackConfig::default() };
    let a = attack(image, &victim, &cfg).map_err(|e| e.to_string())?;
    let b = attack(image, &victim, &cfg).map_err(|e| e.to_string())?;
    let same_delta = a.delta.as_slice().iter().zip(b.delta.as_slice()).all(|(x, y)| x.to_bits() == y.to_bits());
    if !same_delta || a.delta.is_zero() {
        return Err(format!("delta differs between runs or is zero (||delta|| = {})", a.delta.l2_norm()));
    }

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let inputs = dir.path().join("in");
    std::fs::create_dir(&inputs).unwrap();
    for (i, img) in seed_images().iter().take(3).enumerate() {
        save_image(img, inputs.join(format!("{i}.png"))).unwrap();
    }
    let mut endpoint = EndpointConfig::new(server.url());
    endpoint.topk = 20;
    let lengths = |out: PathBuf| -> Result<Vec<(usize, usize)>, String> {
        let cfg = ExperimentConfig {
            inputs: Some(InputSource::Dir(inputs.clone())),
            victim: Some(VictimSource::Endpoint(endpoint.clone())),
            method: Method::Attack,
            attack: cfg.clone(),
            output_dir: out,
            latency_repeats: Some(1),
            ..Default::default()
        };
        let report = run_experiment(&cfg).map_err(|e| e.to_string())?;
        Ok(report.completed().map(|r| (r.metrics.length_orig, r.metrics.length_adv)).collect())
    };
    let first = lengths(dir.path().join("run1"))?;
    let second = lengths(dir.path().join("run2"))?;
    check(
        first.len() == 3 && first == second,
        format!("bit-identical delta over HTTP; report lengths {first:?} == {second:?}"),
    )
}

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn protocol_conformance() -> Outcome {
    let image = ImageTensor::new(
        2,
        2,
        vec![255.0, 0.0, 127.6, 64.0, 200.0, 10.4, 99.5, 128.0, 3.0, 250.0, 180.0, 77.0],
    )
    .unwrap();
    let decode = DecodeOptions { max_new_tokens: 64, ..DecodeOptions::default() };
    let request = encode_request(&image, 4, &decode);
    if request != std::fs::read(fixture("request.json")).unwrap() {
        return Err("request bytes differ from fixture".into());
    }
    let spec = VictimSpec::from_file(fixture("rule_victim.json")).unwrap();
    let server = MockServer::start(&spec, "127.0.0.1:0").map_err(|e| e.to_string())?;
    let body = ureq::post(&format!("{}{GENERATE_PATH}", server.url()))
        .send_bytes(&request)
        .map_err(|e| e.to_string())?
        .into_string()
        .unwrap();
    if body.as_bytes() != std::fs::read(fixture("response.json")).unwrap() {
        return Err("response bytes differ from fixture".into());
    }
    parse_response(body.as_bytes()).map_err(|e| e.to_string())?;
    let malformed = [
        r#"{"length": 2, "positions": [{"eos_prob": 0.1, "topk_probs": [0.5]}]}"#,
        r#"{"length": 1, "positions": [{"eos_prob": -0.1, "topk_probs": [0.5]}]}"#,
        r#"{"length": 1, "positions": [{"eos_prob": 0.1, "topk_probs": [0.1, 0.9]}]}"#,
        r#"{"length": 1, "positions": [{"eos_prob": 0.1, "topk_probs": [0.9, 0.8]}]}"#,
        r#"{"positions": []}"#,
    ];
    let rejected = malformed.iter().filter(|b| parse_response(b.as_bytes()).is_err()).count();
    check(
        rejected == malformed.len(),
        format!("golden request/response bytes match; {rejected}/{} malformed responses rejected", malformed.len()),
    )
}

fn main() {
    let mut failures = 0;
    let mut report = |name: &str, f: &dyn Fn() -> Outcome| {
        let start = Instant::now();
        let outcome = f();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS  {name:<28} {detail} [{secs:.1}s]"),
            Err(detail) => {
                failures += 1;
                println!("FAIL  {name:<28} {detail} [{secs:.1}s]");
            }
        }
    };
    report("objective fidelity", &objective_fidelity);
    report("estimator exactness", &estimator_exactness);
    report("estimator unbiasedness", &estimator_unbiasedness);
    report("concentration check", &concentration_check);
    report("gradient oracle self-check", &gradient_oracle);
    let start = Instant::now();
    let runs = end_to_end_runs();
    println!("      (rule-victim runs took {:.1}s)", start.elapsed().as_secs_f64());
    report("end-to-end attack", &|| end_to_end(&runs));
    report("baseline ordering", &|| baseline_ordering(&runs));
    report("determinism", &determinism);
    report("defense robustness trend", &|| defense_trend(&runs));
    report("protocol conformance", &protocol_conformance);
    if failures > 0 {
        println!("{failures} acceptance criteria failed");
        std::process::exit(1);
    }
}
