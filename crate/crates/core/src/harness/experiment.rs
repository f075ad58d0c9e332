use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{Defense, ExperimentConfig, Method};
use super::metrics::{self, energy_proxy};
use super::HarnessError;
use crate::baselines::{gaussian_baseline, quantize_defense};
use crate::imageio::{load_image, save_image};
use crate::nes::{attack, write_trace, AttackError, IterationRecord};
use crate::objectives::GenerationResponse;
use crate::tensor::ImageTensor;
use crate::victim::{DecodeOptions, Victim};

/// Response and median latency of `repeats` identical queries.
#[derive(Debug, Clone, PartialEq)]
pub struct Measurement {
    pub response: GenerationResponse,
    pub latency_ms: f64,
    pub queries: usize,
}

/// Queries `image` `repeats` times. Latency is the client round trip when
/// the victim reports one, otherwise the wall clock around the call.
pub fn measure(
    victim: &dyn Victim,
    image: &ImageTensor,
    decode: &DecodeOptions,
    repeats: usize,
) -> Result<Measurement, HarnessError> {
    let repeats = repeats.max(1);
    let mut latencies = Vec::with_capacity(repeats);
    let mut first = None;
    for _ in 0..repeats {
        let start = Instant::now();
        let r = victim.query(image, decode)?;
        let wall = start.elapsed().as_secs_f64() * 1e3;
        latencies.push(r.client_latency_ms.unwrap_or(wall));
        first.get_or_insert(r);
    }
    Ok(Measurement {
        response: first.expect("at least one repeat"),
        latency_ms: metrics::median(&latencies).expect("non-empty"),
        queries: repeats,
    })
}

/// Side-by-side metrics of an original and an adversarial image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub length_orig: usize,
    pub length_adv: usize,
    pub latency_orig_ms: f64,
    pub latency_adv_ms: f64,
    pub energy_proxy_orig: f64,
    pub energy_proxy_adv: f64,
    /// L2 distance between the images as measured, pixel units.
    pub l2_distance: f64,
    pub i_length_pct: Option<f64>,
    pub i_latency_pct: Option<f64>,
    pub i_energy_pct: Option<f64>,
}

fn defend(image: &ImageTensor, defense: Defense) -> Result<ImageTensor, HarnessError> {
    Ok(match defense {
        Defense::None => image.clone(),
        Defense::Quantize { bits } => quantize_defense(image, bits)?,
    })
}

/// Measures both images through the defense. Returns the record and the
/// number of victim queries spent.
pub fn evaluate_pair(
    victim: &dyn Victim,
    orig: &ImageTensor,
    adv: &ImageTensor,
    defense: Defense,
    decode: &DecodeOptions,
    repeats: usize,
) -> Result<(PairRecord, usize), HarnessError> {
    let l2_distance = metrics::l2_distance(orig, adv)?;
    let o = measure(victim, &defend(orig, defense)?, decode, repeats)?;
    let a = measure(victim, &defend(adv, defense)?, decode, repeats)?;
    let record = PairRecord {
        length_orig: o.response.length,
        length_adv: a.response.length,
        latency_orig_ms: o.latency_ms,
        latency_adv_ms: a.latency_ms,
        energy_proxy_orig: energy_proxy(&o.response),
        energy_proxy_adv: energy_proxy(&a.response),
        l2_distance,
        i_length_pct: metrics::i_length(&o.response, &a.response),
        i_latency_pct: metrics::i_latency(o.latency_ms, a.latency_ms),
        i_energy_pct: metrics::i_energy_proxy(&o.response, &a.response),
    };
    Ok((record, o.queries + a.queries))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub image_id: String,
    pub seed: u64,
    pub method: String,
    pub defense: String,
    #[serde(flatten)]
    pub metrics: PairRecord,
    /// Norm of the perturbation before 8-bit rounding.
    pub perturbation_norm: f64,
    /// Queries spent on this image, attack and measurement included.
    pub queries: usize,
    pub adversarial_path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailedRecord {
    pub image_id: String,
    pub seed: u64,
    pub method: String,
    pub error: String,
    /// Iterations whose trace was saved before the failure, if the attack
    /// got that far.
    pub iterations_completed: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum ImageOutcome {
    Ok(ImageRecord),
    Failed(FailedRecord),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub images_total: usize,
    pub images_completed: usize,
    pub images_failed: usize,
    /// Failed images that still left a partial attack trace behind.
    pub images_partial: usize,
    pub i_length_mean: Option<f64>,
    pub i_length_median: Option<f64>,
    pub i_latency_mean: Option<f64>,
    pub i_latency_median: Option<f64>,
    pub i_energy_mean: Option<f64>,
    pub i_energy_median: Option<f64>,
    pub l2_distance_mean: Option<f64>,
    pub queries_total: usize,
    pub wall_time_s: f64,
}

impl Aggregate {
    pub fn from_outcomes(outcomes: &[ImageOutcome], wall_time_s: f64) -> Self {
        let ok: Vec<&ImageRecord> = outcomes
            .iter()
            .filter_map(|o| match o {
                ImageOutcome::Ok(r) => Some(r),
                ImageOutcome::Failed(_) => None,
            })
            .collect();
        let collect = |f: fn(&PairRecord) -> Option<f64>| -> Vec<f64> {
            ok.iter().filter_map(|r| f(&r.metrics)).collect()
        };
        let il = collect(|m| m.i_length_pct);
        let it = collect(|m| m.i_latency_pct);
        let ie = collect(|m| m.i_energy_pct);
        let l2 = collect(|m| Some(m.l2_distance));
        let images_partial = outcomes
            .iter()
            .filter(|o| matches!(o, ImageOutcome::Failed(f) if f.iterations_completed.unwrap_or(0) > 0))
            .count();
        Aggregate {
            images_total: outcomes.len(),
            images_completed: ok.len(),
            images_failed: outcomes.len() - ok.len(),
            images_partial,
            i_length_mean: metrics::mean(&il),
            i_length_median: metrics::median(&il),
            i_latency_mean: metrics::mean(&it),
            i_latency_median: metrics::median(&it),
            i_energy_mean: metrics::mean(&ie),
            i_energy_median: metrics::median(&ie),
            l2_distance_mean: metrics::mean(&l2),
            queries_total: ok.iter().map(|r| r.queries).sum(),
            wall_time_s,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyReport {
    pub records: Vec<ImageOutcome>,
    pub aggregate: Aggregate,
}

impl EfficiencyReport {
    pub fn completed(&self) -> impl Iterator<Item = &ImageRecord> {
        self.records.iter().filter_map(|o| match o {
            ImageOutcome::Ok(r) => Some(r),
            ImageOutcome::Failed(_) => None,
        })
    }
}

/// Images attacked concurrently against a remote victim.
const MAX_REMOTE_IMAGES: usize = 4;

/// The result of the (parallel) generation phase for one image.
struct Prepared {
    image_id: String,
    seed: u64,
    original: ImageTensor,
    saved_adv: ImageTensor,
    perturbation_norm: f64,
    queries: usize,
    adversarial_path: PathBuf,
}

fn image_id(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

fn ensure_dir(path: &Path) -> Result<(), HarnessError> {
    std::fs::create_dir_all(path).map_err(|e| HarnessError::io(path, e))
}

fn prepare(
    cfg: &ExperimentConfig,
    victim: &dyn Victim,
    path: &Path,
    seed: u64,
) -> Result<Prepared, FailedRecord> {
    let image_id = image_id(path);
    let fail = |error: String, iterations_completed: Option<usize>| FailedRecord {
        image_id: image_id.clone(),
        seed,
        method: cfg.method.as_str().into(),
        error,
        iterations_completed,
    };
    let original = load_image(path).map_err(|e| fail(e.to_string(), None))?;
    let stem = format!("{image_id}_s{seed}");
    let trace_path = cfg.output_dir.join("traces").join(format!("{stem}.jsonl"));
    let save_trace = |trace: &[IterationRecord]| -> Result<(), String> {
        if cfg.write_traces {
            write_trace(&trace_path, trace).map_err(|e| format!("writing trace: {e}"))?;
        }
        Ok(())
    };

    let (adv, queries) = match cfg.method {
        Method::None => (original.clone(), 0),
        Method::Gaussian => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let adv = gaussian_baseline(&original, cfg.gaussian_sigma, cfg.attack.budget, &mut rng)
                .map_err(|e| fail(e.to_string(), None))?;
            (adv, 0)
        }
        Method::Attack => {
            let attack_cfg = crate::nes::AttackConfig {
                seed,
                ..cfg.attack.clone()
            };
            match attack(&original, victim, &attack_cfg) {
                Ok(result) => {
                    save_trace(&result.trace).map_err(|e| fail(e, None))?;
                    (result.adversarial, result.query_count)
                }
                Err(err) => {
                    let partial = match &err {
                        AttackError::Evaluation { partial_trace, .. }
                        | AttackError::NonFinite { partial_trace, .. } => Some(partial_trace),
                        _ => None,
                    };
                    let done = partial.map(|t| t.len());
                    if let Some(trace) = partial {
                        if let Err(e) = save_trace(trace) {
                            log::warn!("{image_id}: {e}");
                        }
                    }
                    return Err(fail(err.to_string(), done));
                }
            }
        }
    };

    let perturbation_norm = original.l2_distance(&adv).map_err(|e| fail(e.to_string(), None))?;
    let adversarial_path = cfg.output_dir.join("adv").join(format!("{stem}.png"));
    save_image(&adv, &adversarial_path).map_err(|e| fail(e.to_string(), None))?;
    let saved_adv = load_image(&adversarial_path).map_err(|e| fail(e.to_string(), None))?;
    Ok(Prepared {
        image_id,
        seed,
        original,
        saved_adv,
        perturbation_norm,
        queries,
        adversarial_path,
    })
}

/// Runs the configured method over every input and seed.
///
/// Generation runs in parallel across images. Measurement runs afterwards,
/// one image at a time, so latency figures are not skewed by the harness's
/// own concurrent load. Per-image failures become `failed` records; only
/// configuration and output errors abort the run.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<EfficiencyReport, HarnessError> {
    cfg.validate()?;
    let started = Instant::now();
    let inputs = cfg.resolve_inputs()?;
    let victim = cfg.victim.as_ref().expect("validated").connect()?;
    let repeats = cfg
        .latency_repeats
        .unwrap_or(if victim.is_remote() { 3 } else { 1 });

    ensure_dir(&cfg.output_dir.join("adv"))?;
    if cfg.write_traces && cfg.method == Method::Attack {
        ensure_dir(&cfg.output_dir.join("traces"))?;
    }

    let jobs: Vec<(&PathBuf, u64)> = cfg
        .effective_seeds()
        .into_iter()
        .flat_map(|base| {
            inputs
                .iter()
                .enumerate()
                .map(move |(i, p)| (p, base.wrapping_add(i as u64)))
        })
        .collect();
    log::info!(
        "running {} on {} image(s) x {} seed(s)",
        cfg.method.as_str(),
        inputs.len(),
        jobs.len() / inputs.len()
    );

    let generate = || -> Vec<Result<Prepared, FailedRecord>> {
        jobs.par_iter()
            .map(|(path, seed)| prepare(cfg, victim.as_ref(), path, *seed))
            .collect()
    };
    // Remote images spend their time waiting on the network, so they get
    // their own pool instead of the CPU-sized global one.
    let prepared = if victim.is_remote() {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs.len().clamp(1, MAX_REMOTE_IMAGES))
            .build()
            .map_err(|e| HarnessError::Config(format!("cannot start worker pool: {e}")))?
            .install(generate)
    } else {
        generate()
    };

    let mut outcomes = Vec::with_capacity(prepared.len());
    for p in prepared {
        let outcome = match p {
            Err(failed) => {
                log::warn!("{} (seed {}): {}", failed.image_id, failed.seed, failed.error);
                ImageOutcome::Failed(failed)
            }
            Ok(p) => match evaluate_pair(
                victim.as_ref(),
                &p.original,
                &p.saved_adv,
                cfg.defense,
                &cfg.attack.decode,
                repeats,
            ) {
                Ok((metrics, spent)) => ImageOutcome::Ok(ImageRecord {
                    image_id: p.image_id,
                    seed: p.seed,
                    method: cfg.method.as_str().into(),
                    defense: cfg.defense.label(),
                    metrics,
                    perturbation_norm: p.perturbation_norm,
                    queries: p.queries + spent,
                    adversarial_path: p.adversarial_path,
                }),
                Err(e) => ImageOutcome::Failed(FailedRecord {
                    image_id: p.image_id,
                    seed: p.seed,
                    method: cfg.method.as_str().into(),
                    error: e.to_string(),
                    iterations_completed: None,
                }),
            },
        };
        outcomes.push(outcome);
    }

    let aggregate = Aggregate::from_outcomes(&outcomes, started.elapsed().as_secs_f64());
    let report = EfficiencyReport {
        records: outcomes,
        aggregate,
    };
    write_report(&report, &cfg.output_dir)?;
    Ok(report)
}

/// Writes `records.jsonl` and `aggregate.csv` into `dir`.
pub fn write_report(report: &EfficiencyReport, dir: &Path) -> Result<(), HarnessError> {
    ensure_dir(dir)?;
    let records_path = dir.join("records.jsonl");
    let mut lines = String::new();
    for r in &report.records {
        lines.push_str(&serde_json::to_string(r).expect("records serialize"));
        lines.push('\n');
    }
    std::fs::write(&records_path, lines).map_err(|e| HarnessError::io(&records_path, e))?;

    let agg_path = dir.join("aggregate.csv");
    let mut w = csv::Writer::from_path(&agg_path)?;
    w.serialize(&report.aggregate)?;
    w.flush().map_err(|e| HarnessError::io(&agg_path, e))?;
    Ok(())
}
