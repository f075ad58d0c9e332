//! Command-line front end. The binary is a thin wrapper over [`run`].
//!
//! Exit codes: 0 on success, 1 on usage or configuration errors, 2 on
//! runtime failures.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::harness::{
    evaluate_pair, run_experiment, Defense, EndpointConfig, ExperimentConfig, HarnessError,
    InputSource, Method, VictimSource,
};
use crate::imageio::load_image;
use crate::nes::{estimator_check, DifferentiableObjective};
use crate::objectives::ObjectiveParams;
use crate::synthetic::{serve_mock, AnalyticVictim, LinearObjective, QuadraticObjective, VictimSpec};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "vlm-slowdown", version, about = "Black-box verbose-output attacks on vision-language models")]
pub struct Cli {
    /// Experiment config (JSON). Flags override its fields.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Base URL of a victim server speaking the JSON protocol.
    #[arg(long, global = true, env = "VLM_SLOWDOWN_ENDPOINT")]
    pub endpoint: Option<String>,
    /// Top-k size requested from a remote victim.
    #[arg(long, global = true)]
    pub topk: Option<usize>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory for adversarial images, traces and reports.
    #[arg(long, global = true, env = "VLM_SLOWDOWN_OUT")]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the NES attack over a set of images.
    Attack {
        #[command(flatten)]
        inputs: InputArgs,
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long)]
        q: Option<usize>,
        #[arg(long)]
        eta: Option<f64>,
        #[arg(long)]
        gamma: Option<f64>,
        #[arg(long)]
        eps: Option<f64>,
        #[arg(long)]
        quantize: Option<u32>,
    },
    /// Run a non-adversarial baseline over a set of images.
    Baseline {
        #[command(flatten)]
        inputs: InputArgs,
        #[arg(long, value_enum, default_value_t = BaselineMethod::Gaussian)]
        method: BaselineMethod,
        /// Per-element noise standard deviation, pixel units.
        #[arg(long)]
        sigma: Option<f64>,
        #[arg(long)]
        eps: Option<f64>,
        #[arg(long)]
        quantize: Option<u32>,
    },
    /// Measure one original/adversarial pair and print a JSON record.
    Eval {
        #[arg(long)]
        orig: PathBuf,
        #[arg(long)]
        adv: PathBuf,
        /// Quantize both images to this many bits per channel first.
        #[arg(long)]
        quantize: Option<u32>,
        /// In-process synthetic victim spec (JSON), used without --endpoint.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        repeats: usize,
    },
    /// Check the gradient estimator against an objective with a known gradient.
    EstimatorCheck {
        #[arg(long, value_enum, default_value_t = CheckVictim::Analytic)]
        victim: CheckVictim,
        /// Flat input dimension.
        #[arg(long, default_value_t = 64)]
        d: usize,
        #[arg(long, default_value_t = 500)]
        q: usize,
        #[arg(long, default_value_t = 1e-3)]
        eta: f64,
        #[arg(long, default_value_t = 0.5)]
        zeta: f64,
        #[arg(long, default_value_t = 100)]
        trials: usize,
        /// Generated length of the analytic victim.
        #[arg(long, default_value_t = 8)]
        length: usize,
        #[arg(long, default_value_t = 10)]
        k: usize,
    },
    /// Serve a synthetic victim over HTTP until interrupted.
    ServeMock {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8080")]
        bind: String,
    },
}

#[derive(Debug, Args)]
pub struct InputArgs {
    /// Input PNG; repeatable.
    #[arg(long = "image")]
    pub images: Vec<PathBuf>,
    /// Directory of input PNGs.
    #[arg(long, conflicts_with = "images")]
    pub input_dir: Option<PathBuf>,
    /// In-process synthetic victim spec (JSON), used without --endpoint.
    #[arg(long)]
    pub spec: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BaselineMethod {
    Gaussian,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CheckVictim {
    Analytic,
    Linear,
    Quadratic,
    /// Not differentiable; rejected with a usage error.
    Rule,
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Runtime(String),
}

impl From<HarnessError> for CliError {
    fn from(e: HarnessError) -> Self {
        match e {
            HarnessError::Config(_) | HarnessError::Spec(_) => CliError::Usage(e.to_string()),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

/// Parses `argv` (including the program name) and runs the command.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match execute(cli) {
        Ok(()) => EXIT_OK,
        Err(CliError::Usage(m)) => {
            eprintln!("error: {m}");
            EXIT_USAGE
        }
        Err(CliError::Runtime(m)) => {
            eprintln!("error: {m}");
            EXIT_RUNTIME
        }
    }
}

fn print_json<T: Serialize>(value: &T) {
    println!("{}", serde_json::to_string_pretty(value).expect("serializable"));
}

fn base_config(cli: &Cli) -> Result<ExperimentConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::from_file(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.attack.seed = seed;
        cfg.seeds.clear();
    }
    if let Some(out) = &cli.out {
        cfg.output_dir = out.clone();
    }
    Ok(cfg)
}

fn victim_override(cli: &Cli, spec: Option<&PathBuf>) -> Option<VictimSource> {
    if let Some(url) = &cli.endpoint {
        let mut e = EndpointConfig::new(url.clone());
        if let Some(k) = cli.topk {
            e.topk = k;
        }
        return Some(VictimSource::Endpoint(e));
    }
    spec.map(|p| VictimSource::SpecFile(p.clone()))
}

fn apply_inputs(cfg: &mut ExperimentConfig, cli: &Cli, inputs: &InputArgs) {
    if !inputs.images.is_empty() {
        cfg.inputs = Some(InputSource::Files(inputs.images.clone()));
    } else if let Some(dir) = &inputs.input_dir {
        cfg.inputs = Some(InputSource::Dir(dir.clone()));
    }
    if let Some(v) = victim_override(cli, inputs.spec.as_ref()) {
        cfg.victim = Some(v);
    }
}

fn quantize_defense_arg(bits: Option<u32>) -> Option<Defense> {
    bits.map(|bits| Defense::Quantize { bits })
}

fn run_and_print(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let report = run_experiment(cfg)?;
    print_json(&report.aggregate);
    if report.aggregate.images_completed == 0 {
        return Err(CliError::Runtime("no image completed".into()));
    }
    Ok(())
}

fn execute(cli: Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Attack {
            inputs,
            iterations,
            q,
            eta,
            gamma,
            eps,
            quantize,
        } => {
            let mut cfg = base_config(&cli)?;
            apply_inputs(&mut cfg, &cli, inputs);
            cfg.method = Method::Attack;
            let a = &mut cfg.attack;
            if let Some(v) = iterations {
                a.iterations = *v;
            }
            if let Some(v) = q {
                a.noise_pairs = *v;
            }
            if let Some(v) = eta {
                a.search_sigma = *v;
            }
            if let Some(v) = gamma {
                a.step_size = *v;
            }
            if let Some(v) = eps {
                a.budget = *v;
            }
            if let Some(d) = quantize_defense_arg(*quantize) {
                cfg.defense = d;
            }
            run_and_print(&cfg)
        }
        Command::Baseline {
            inputs,
            method,
            sigma,
            eps,
            quantize,
        } => {
            let mut cfg = base_config(&cli)?;
            apply_inputs(&mut cfg, &cli, inputs);
            cfg.method = match method {
                BaselineMethod::Gaussian => Method::Gaussian,
                BaselineMethod::None => Method::None,
            };
            if let Some(s) = sigma {
                cfg.gaussian_sigma = *s;
            }
            if let Some(e) = eps {
                cfg.attack.budget = *e;
            }
            if let Some(d) = quantize_defense_arg(*quantize) {
                cfg.defense = d;
            }
            run_and_print(&cfg)
        }
        Command::Eval {
            orig,
            adv,
            quantize,
            spec,
            repeats,
        } => {
            let cfg = base_config(&cli)?;
            let source = victim_override(&cli, spec.as_ref())
                .or(cfg.victim.clone())
                .ok_or_else(|| CliError::Usage("eval needs --endpoint or --spec".into()))?;
            let defense = quantize_defense_arg(*quantize).unwrap_or(cfg.defense);
            if let Defense::Quantize { bits } = defense {
                if !(1..=8).contains(&bits) {
                    return Err(CliError::Usage(format!("--quantize must be in 1..=8, got {bits}")));
                }
            }
            if *repeats == 0 {
                return Err(CliError::Usage("--repeats must be >= 1".into()));
            }
            let victim = source.connect()?;
            let o = load_image(orig).map_err(|e| CliError::Usage(e.to_string()))?;
            let a = load_image(adv).map_err(|e| CliError::Usage(e.to_string()))?;
            let (record, _) = evaluate_pair(victim.as_ref(), &o, &a, defense, &cfg.attack.decode, *repeats)?;
            print_json(&record);
            Ok(())
        }
        Command::EstimatorCheck {
            victim,
            d,
            q,
            eta,
            zeta,
            trials,
            length,
            k,
        } => {
            if *d == 0 || *q == 0 || *trials == 0 {
                return Err(CliError::Usage("--d, --q and --trials must be positive".into()));
            }
            if !(*zeta > 0.0 && *zeta < 1.0) {
                return Err(CliError::Usage("--zeta must lie in (0, 1)".into()));
            }
            if !(*eta > 0.0 && eta.is_finite()) {
                return Err(CliError::Usage("--eta must be positive".into()));
            }
            let seed = cli.seed.unwrap_or(0);
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
            let mut check = |target: &dyn DifferentiableObjective| {
                estimator_check(target, *q, *eta, *zeta, *trials, &mut rng)
            };
            let report = match victim {
                CheckVictim::Rule => {
                    return Err(CliError::Usage(
                        "the rule victim has no closed-form gradient; use analytic, linear or quadratic".into(),
                    ))
                }
                CheckVictim::Analytic => {
                    if *k < 2 || *length == 0 {
                        return Err(CliError::Usage("--k must be >= 2 and --length >= 1".into()));
                    }
                    let v = AnalyticVictim::from_seed(seed, *d, *length, *k);
                    check(&v.with_params(ObjectiveParams { k: *k, ..ObjectiveParams::default() }))
                }
                CheckVictim::Linear => check(&LinearObjective::from_seed(seed, *d)),
                CheckVictim::Quadratic => check(&QuadraticObjective::from_seed(seed, *d)),
            };
            print_json(&report);
            Ok(())
        }
        Command::ServeMock { spec, bind } => {
            let spec = VictimSpec::from_file(spec).map_err(|e| CliError::Usage(e.to_string()))?;
            spec.build().map_err(|e| CliError::Usage(e.to_string()))?;
            serve_mock(&spec, bind).map_err(|e| CliError::Runtime(e.to_string()))
        }
    }
}
