//! Run configuration: a flat TOML table with a `version` key.
//!
//! Unknown keys are rejected. Task data is never stored; it is regenerated
//! from `task_seed` (or loaded from a versioned instance).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::instance::OracleInstance;
use crate::mask::{NMMask, SparsityPattern};
use crate::pge::{EstimatorKind, TrainConfig, DEFAULT_ALPHA, DEFAULT_LOGITS_MAGNITUDE};
use crate::rng::{substream, Domain};
use crate::tasks::{make_mlp_task, make_planted_linear, magnitude_mask, random_mask, LossKind, MlpConfig, PlantedConfig, ToyTask};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    PlantedLinear,
    Mlp,
    /// A versioned oracle instance, named by `instance`.
    Instance,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineSource {
    Magnitude,
    Random,
    /// A mask text file at `baseline_path`.
    File,
    /// The planted mask of a planted or instance task.
    Planted,
    /// The baseline recorded in a versioned instance.
    Instance,
}

fn default_alpha() -> f64 {
    DEFAULT_ALPHA
}

fn default_magnitude() -> f64 {
    DEFAULT_LOGITS_MAGNITUDE
}

fn default_estimator() -> EstimatorKind {
    EstimatorKind::SmoothedResidual
}

fn default_baseline() -> BaselineSource {
    BaselineSource::Magnitude
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_stats_samples() -> usize {
    100_000
}

fn default_tracker_steps() -> u64 {
    5000
}

fn default_sweep_samples() -> usize {
    10_000
}

fn default_curve_every() -> u64 {
    100
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    pub task: TaskKind,
    #[serde(default)]
    pub instance: Option<String>,
    #[serde(default)]
    pub dim: Option<usize>,
    #[serde(default)]
    pub pattern: Option<SparsityPattern>,
    #[serde(default)]
    pub task_seed: u64,
    #[serde(default)]
    pub noise: f64,
    #[serde(default)]
    pub samples: Option<usize>,
    #[serde(default)]
    pub batch_size: Option<usize>,
    #[serde(default)]
    pub hidden_width: Option<usize>,
    #[serde(default)]
    pub loss: LossKind,

    #[serde(default = "default_estimator")]
    pub estimator: EstimatorKind,
    pub learning_rate: f64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_magnitude")]
    pub logits_magnitude: f64,
    #[serde(default = "default_baseline")]
    pub baseline: BaselineSource,
    #[serde(default)]
    pub baseline_path: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
    pub iterations: u64,
    #[serde(default)]
    pub refresh_threshold: Option<f64>,
    /// Permits `learning_rate = 0`.
    #[serde(default)]
    pub noop: bool,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,

    #[serde(default = "default_stats_samples")]
    pub stats_samples: usize,
    #[serde(default = "default_tracker_steps")]
    pub tracker_steps: u64,
    #[serde(default = "default_sweep_samples")]
    pub sweep_samples: usize,
    #[serde(default = "default_curve_every")]
    pub curve_every: u64,
}

/// A task together with the masks a config may refer to.
#[derive(Debug, Clone)]
pub struct BuiltTask {
    pub task: ToyTask,
    pub planted: Option<NMMask>,
    pub instance: Option<OracleInstance>,
}

impl RunConfig {
    /// Parses and validates `text`; relative paths resolve against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        if let Some(p) = cfg.baseline_path.take() {
            cfg.baseline_path = Some(base.join(p));
        }
        if cfg.out_dir.is_relative() {
            cfg.out_dir = base.join(&cfg.out_dir);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, msg: String| Err(Error::Config(format!("`{field}`: {msg}")));
        if self.version != CONFIG_VERSION {
            return bad("version", format!("unsupported version {} (expected {CONFIG_VERSION})", self.version));
        }
        if !(0.0..1.0).contains(&self.alpha) {
            return bad("alpha", format!("{} must lie in [0, 1)", self.alpha));
        }
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return bad("learning_rate", format!("{} must be finite and non-negative", self.learning_rate));
        }
        if self.learning_rate == 0.0 && !self.noop {
            return bad("learning_rate", "must be positive unless `noop = true`".into());
        }
        if !self.logits_magnitude.is_finite() {
            return bad("logits_magnitude", "must be finite".into());
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return bad("noise", format!("{} must be finite and non-negative", self.noise));
        }
        if self.curve_every == 0 {
            return bad("curve_every", "must be positive".into());
        }
        match self.task {
            TaskKind::Instance => {
                if self.instance.is_none() {
                    return bad("instance", "required when `task = \"instance\"`".into());
                }
            }
            TaskKind::PlantedLinear | TaskKind::Mlp => {
                if self.dim.is_none() {
                    return bad("dim", "required for generated tasks".into());
                }
                if self.pattern.is_none() {
                    return bad("pattern", "required for generated tasks".into());
                }
                if self.samples.is_none() {
                    return bad("samples", "required for generated tasks".into());
                }
            }
        }
        if self.task == TaskKind::Mlp && self.hidden_width.is_none() {
            return bad("hidden_width", "required when `task = \"mlp\"`".into());
        }
        match (self.baseline, &self.baseline_path) {
            (BaselineSource::File, None) => return bad("baseline_path", "required when `baseline = \"file\"`".into()),
            (BaselineSource::File, Some(p)) if !p.is_file() => {
                return bad("baseline_path", format!("{} does not exist", p.display()));
            }
            (BaselineSource::Planted, _) if self.task == TaskKind::Mlp => {
                return bad("baseline", "the perceptron task has no planted mask".into());
            }
            (BaselineSource::Instance, _) if self.task != TaskKind::Instance => {
                return bad("baseline", "`instance` needs `task = \"instance\"`".into());
            }
            _ => {}
        }
        Ok(())
    }

    pub fn build_task(&self) -> Result<BuiltTask> {
        let config_err = |e: Error| match e {
            Error::Io(e) => Error::Io(e),
            other => Error::Config(other.to_string()),
        };
        match self.task {
            TaskKind::Instance => {
                let inst = OracleInstance::builtin(self.instance.as_deref().unwrap_or_default())?;
                if self.dim.is_some_and(|d| d != inst.task.dim()) || self.pattern.is_some_and(|p| p != inst.task.pattern()) {
                    return Err(Error::Config(format!("`dim`/`pattern` disagree with instance `{}`", inst.name)));
                }
                Ok(BuiltTask {
                    task: inst.task.clone(),
                    planted: Some(inst.planted.clone()),
                    instance: Some(inst),
                })
            }
            TaskKind::PlantedLinear => {
                let samples = self.samples.unwrap_or(1);
                let cfg = PlantedConfig::new(self.dim.unwrap_or(0), self.pattern(), samples, self.noise, self.task_seed)
                    .batch_size(self.batch_size.unwrap_or(samples))
                    .loss(self.loss);
                let inst = make_planted_linear(&cfg).map_err(config_err)?;
                Ok(BuiltTask {
                    task: inst.task,
                    planted: Some(inst.planted_mask),
                    instance: None,
                })
            }
            TaskKind::Mlp => {
                let samples = self.samples.unwrap_or(1);
                let task = make_mlp_task(&MlpConfig {
                    d: self.dim.unwrap_or(0),
                    pattern: self.pattern(),
                    hidden: self.hidden_width.unwrap_or(0),
                    n_samples: samples,
                    batch_size: self.batch_size.unwrap_or(samples),
                    seed: self.task_seed,
                })
                .map_err(config_err)?;
                Ok(BuiltTask {
                    task,
                    planted: None,
                    instance: None,
                })
            }
        }
    }

    fn pattern(&self) -> SparsityPattern {
        self.pattern.unwrap_or(SparsityPattern::new(2, 4).expect("2:4 is valid"))
    }

    pub fn baseline_mask(&self, built: &BuiltTask) -> Result<NMMask> {
        let task = &built.task;
        match self.baseline {
            BaselineSource::Magnitude => magnitude_mask(task.weights(), task.pattern()),
            BaselineSource::Random => random_mask(
                task.dim(),
                task.pattern(),
                &mut substream(self.seed, Domain::Baseline, 0, 0),
            ),
            BaselineSource::File => {
                let path = self.baseline_path.as_ref().expect("validated");
                let text = std::fs::read_to_string(path)?;
                let mask = NMMask::from_text(&text).map_err(|e| Error::Config(format!("`baseline_path`: {e}")))?;
                if mask.len() != task.dim() || mask.pattern() != task.pattern() {
                    return Err(Error::Config(format!(
                        "`baseline_path`: mask {} of length {} does not match the task",
                        mask.pattern(),
                        mask.len()
                    )));
                }
                Ok(mask)
            }
            BaselineSource::Planted => built
                .planted
                .clone()
                .ok_or_else(|| Error::Config("`baseline`: task has no planted mask".into())),
            BaselineSource::Instance => built
                .instance
                .as_ref()
                .map(|i| i.baseline.clone())
                .ok_or_else(|| Error::Config("`baseline`: task is not an instance".into())),
        }
    }

    pub fn train_config(&self, baseline: NMMask) -> TrainConfig {
        TrainConfig {
            kind: self.estimator,
            learning_rate: self.learning_rate,
            alpha: self.alpha,
            logits_magnitude: self.logits_magnitude,
            baseline,
            seed: self.seed,
            iterations: self.iterations,
            refresh_threshold: self.refresh_threshold,
        }
    }
}
