use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::nes::AttackConfig;
use crate::synthetic::VictimSpec;
use crate::victim::{HttpVictim, Victim};

/// Where input images come from. Only PNG files are picked up from a directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputSource {
    Dir(PathBuf),
    /// Text file with one image path per line, relative to the manifest.
    Manifest(PathBuf),
    Files(Vec<PathBuf>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EndpointConfig {
    pub url: String,
    #[serde(default = "default_topk")]
    pub topk: usize,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: f64,
    #[serde(default = "default_retries")]
    pub retries: u32,
}

fn default_topk() -> usize {
    100
}
fn default_timeout_secs() -> f64 {
    120.0
}
fn default_retries() -> u32 {
    3
}

impl EndpointConfig {
    pub fn new(url: impl Into<String>) -> Self {
        EndpointConfig {
            url: url.into(),
            topk: default_topk(),
            timeout_secs: default_timeout_secs(),
            retries: default_retries(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VictimSource {
    Endpoint(EndpointConfig),
    InProcess(VictimSpec),
    SpecFile(PathBuf),
}

impl VictimSource {
    pub fn connect(&self) -> Result<Box<dyn Victim>, HarnessError> {
        Ok(match self {
            VictimSource::Endpoint(e) => Box::new(HttpVictim::with_options(
                &e.url,
                e.topk,
                Duration::from_secs_f64(e.timeout_secs),
                e.retries,
            )),
            VictimSource::InProcess(spec) => Box::new(spec.build()?),
            VictimSource::SpecFile(path) => Box::new(VictimSpec::from_file(path)?.build()?),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    #[default]
    Attack,
    Gaussian,
    None,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Attack => "attack",
            Method::Gaussian => "gaussian",
            Method::None => "none",
        }
    }
}

/// Preprocessing applied to both the original and the adversarial image
/// before their measured queries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Defense {
    #[default]
    None,
    Quantize { bits: u32 },
}

impl Defense {
    pub fn label(&self) -> String {
        match self {
            Defense::None => "none".into(),
            Defense::Quantize { bits } => format!("quantize{bits}"),
        }
    }
}

/// Everything one experiment run needs. Loaded from JSON; every field has a
/// default so a config file only needs to name what it changes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub inputs: Option<InputSource>,
    pub victim: Option<VictimSource>,
    pub attack: AttackConfig,
    pub method: Method,
    /// Per-element standard deviation of the Gaussian baseline, pixel units.
    pub gaussian_sigma: f64,
    pub defense: Defense,
    pub output_dir: PathBuf,
    /// Base seeds; image `i` under base seed `s` runs with seed `s + i`.
    /// Empty means `[attack.seed]`.
    pub seeds: Vec<u64>,
    /// Timed repeats of each final query. `None` picks 3 for remote victims
    /// and 1 for in-process ones.
    pub latency_repeats: Option<usize>,
    pub write_traces: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            inputs: None,
            victim: None,
            attack: AttackConfig::default(),
            method: Method::Attack,
            gaussian_sigma: 16.0,
            defense: Defense::None,
            output_dir: PathBuf::from("out"),
            seeds: Vec::new(),
            latency_repeats: None,
            write_traces: true,
        }
    }
}

impl ExperimentConfig {
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, HarnessError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))
    }

    pub fn effective_seeds(&self) -> Vec<u64> {
        if self.seeds.is_empty() {
            vec![self.attack.seed]
        } else {
            self.seeds.clone()
        }
    }

    /// Resolves the input list, sorted for a stable processing order.
    pub fn resolve_inputs(&self) -> Result<Vec<PathBuf>, HarnessError> {
        let source = self
            .inputs
            .as_ref()
            .ok_or_else(|| HarnessError::Config("no input images configured".into()))?;
        let mut paths = match source {
            InputSource::Files(files) => files.clone(),
            InputSource::Dir(dir) => {
                let entries = std::fs::read_dir(dir).map_err(|e| {
                    HarnessError::Config(format!("cannot list {}: {e}", dir.display()))
                })?;
                let mut v = Vec::new();
                for entry in entries {
                    let p = entry.map_err(|e| HarnessError::Config(e.to_string()))?.path();
                    let is_png = p
                        .extension()
                        .and_then(|e| e.to_str())
                        .is_some_and(|e| e.eq_ignore_ascii_case("png"));
                    if is_png {
                        v.push(p);
                    }
                }
                v.sort();
                v
            }
            InputSource::Manifest(file) => {
                let text = std::fs::read_to_string(file).map_err(|e| {
                    HarnessError::Config(format!("cannot read manifest {}: {e}", file.display()))
                })?;
                let base = file.parent().unwrap_or(Path::new("."));
                text.lines()
                    .map(str::trim)
                    .filter(|l| !l.is_empty() && !l.starts_with('#'))
                    .map(|l| base.join(l))
                    .collect()
            }
        };
        if paths.is_empty() {
            return Err(HarnessError::Config("input set is empty".into()));
        }
        if let Some(missing) = paths.iter().find(|p| !p.exists()) {
            return Err(HarnessError::Config(format!(
                "input image {} does not exist",
                missing.display()
            )));
        }
        paths.dedup();
        Ok(paths)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.victim.is_none() {
            return Err(HarnessError::Config("no victim configured".into()));
        }
        self.attack
            .validate()
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        if !(self.gaussian_sigma >= 0.0 && self.gaussian_sigma.is_finite()) {
            return Err(HarnessError::Config("gaussian_sigma must be >= 0".into()));
        }
        if let Defense::Quantize { bits } = self.defense {
            if !(1..=8).contains(&bits) {
                return Err(HarnessError::Config(format!(
                    "quantization bits must be in 1..=8, got {bits}"
                )));
            }
        }
        if self.latency_repeats == Some(0) {
            return Err(HarnessError::Config("latency_repeats must be >= 1".into()));
        }
        self.resolve_inputs().map(|_| ())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_json_uses_defaults() {
        let cfg: ExperimentConfig = serde_json::from_str(
            r#"{"victim": {"endpoint": {"url": "http://127.0.0.1:8080"}},
                "defense": {"quantize": {"bits": 4}},
                "attack": {"iterations": 10}}"#,
        )
        .unwrap();
        assert_eq!(cfg.attack.iterations, 10);
        assert_eq!(cfg.attack.noise_pairs, 5);
        assert_eq!(cfg.method, Method::Attack);
        assert_eq!(cfg.defense, Defense::Quantize { bits: 4 });
        match cfg.victim {
            Some(VictimSource::Endpoint(e)) => assert_eq!((e.topk, e.retries), (100, 3)),
            other => panic!("{other:?}"),
        }
        let none: ExperimentConfig = serde_json::from_str(r#"{"defense": "none", "method": "none"}"#).unwrap();
        assert_eq!(none.defense, Defense::None);
        assert_eq!(none.method, Method::None);
    }

    #[test]
    fn inputs_must_exist() {
        let cfg = ExperimentConfig {
            inputs: Some(InputSource::Files(vec!["/definitely/missing.png".into()])),
            ..Default::default()
        };
        assert!(cfg.resolve_inputs().is_err());
        let empty = ExperimentConfig::default();
        assert!(empty.resolve_inputs().is_err());
    }

    #[test]
    fn manifest_paths_are_relative_to_manifest() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("a.png"), b"x").unwrap();
        std::fs::write(dir.path().join("list.txt"), "# images\na.png\n\n").unwrap();
        let cfg = ExperimentConfig {
            inputs: Some(InputSource::Manifest(dir.path().join("list.txt"))),
            ..Default::default()
        };
        assert_eq!(cfg.resolve_inputs().unwrap(), vec![dir.path().join("a.png")]);
    }
}
