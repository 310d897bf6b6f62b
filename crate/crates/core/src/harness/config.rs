//! Experiment configuration, read from TOML.
//!
//! ```toml
//! [experiment]
//! task = "binary"            # binary | image | maze
//! condition = "plastic"      # plastic | homogeneous | non-plastic-rnn | lstm
//! rule = "decay-hebb"        # decay-hebb | oja; plastic conditions only
//! episodes = 2000
//! seed = 0
//! out_dir = "runs/binary"
//! checkpoint_every = 500     # 0 disables periodic checkpoints
//! workers = 1                # episodes per optimizer step, run in parallel
//! hidden_size = 2050         # baselines only; defaults to the I/O size
//!
//! [optimizer]
//! lr = 0.001
//! beta1 = 0.9
//! beta2 = 0.999
//! epsilon = 1e-8
//! clip_norm = 10.0           # optional global-norm clip
//! decay_every = 1000000      # optional step schedule
//! decay_factor = 0.6667
//!
//! [task]                     # binary and image tasks; defaults per task
//! n_elements = 50
//! n_patterns = 2
//! presentations = 3
//! show_steps = 3
//! gap_steps = 3
//! test_steps = 3
//! degradation = "half-bits-zero-random"
//!
//! [images]                   # image task only
//! path = "data/cifar-gray"   # PGM directory or raw file; synthetic if absent
//! side = 32
//! test_fraction = 0.1
//! synthetic_count = 200
//! synthetic_seed = 0
//!
//! [maze]                     # maze task only
//! gamma = 0.9
//! value_coef = 0.1
//! entropy_coef = 0.03
//! lr = 0.0001
//! hidden = 200
//! ```
//!
//! Unknown keys are errors. `task.rng_seed` is ignored in favour of
//! `experiment.seed`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::maze::{A2CConfig, MazeCondition};
use crate::optim::AdamConfig;
use crate::plastic::{AlphaMode, PlasticityRule};
use crate::tasks::{Degradation, TaskConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskKind {
    Binary,
    Image,
    Maze,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Condition {
    Plastic,
    Homogeneous,
    NonPlasticRnn,
    Lstm,
}

impl Condition {
    pub fn is_plastic(self) -> bool {
        matches!(self, Condition::Plastic | Condition::Homogeneous)
    }

    pub fn name(self) -> &'static str {
        match self {
            Condition::Plastic => "plastic",
            Condition::Homogeneous => "homogeneous",
            Condition::NonPlasticRnn => "non-plastic-rnn",
            Condition::Lstm => "lstm",
        }
    }

    pub fn alpha_mode(self) -> Option<AlphaMode> {
        match self {
            Condition::Plastic => Some(AlphaMode::PerConnection),
            Condition::Homogeneous => Some(AlphaMode::SharedScalar),
            _ => None,
        }
    }

    pub fn maze_condition(self) -> Result<MazeCondition> {
        match self {
            Condition::Plastic => Ok(MazeCondition::PerConnection),
            Condition::Homogeneous => Ok(MazeCondition::Homogeneous),
            Condition::NonPlasticRnn => Ok(MazeCondition::NonPlastic),
            Condition::Lstm => Err(Error::Config("the maze task has no LSTM condition".into())),
        }
    }
}

impl std::str::FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "binary" => Ok(TaskKind::Binary),
            "image" | "images" => Ok(TaskKind::Image),
            "maze" => Ok(TaskKind::Maze),
            other => Err(Error::Config(format!("unknown task `{other}`"))),
        }
    }
}

impl std::str::FromStr for Condition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plastic" | "per-connection" => Ok(Condition::Plastic),
            "homogeneous" | "shared" => Ok(Condition::Homogeneous),
            "non-plastic-rnn" | "rnn" | "non-plastic" => Ok(Condition::NonPlasticRnn),
            "lstm" => Ok(Condition::Lstm),
            other => Err(Error::Config(format!("unknown condition `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    pub task: TaskKind,
    pub condition: Condition,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rule: Option<PlasticityRule>,
    pub episodes: u64,
    #[serde(default)]
    pub seed: u64,
    pub out_dir: PathBuf,
    #[serde(default)]
    pub checkpoint_every: u64,
    #[serde(default = "one")]
    pub workers: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hidden_size: Option<usize>,
}

/// False for NaN too.
fn positive(x: f64) -> bool {
    x > 0.0
}

fn one() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lr: Option<f64>,
    #[serde(default = "beta1")]
    pub beta1: f64,
    #[serde(default = "beta2")]
    pub beta2: f64,
    #[serde(default = "epsilon")]
    pub epsilon: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clip_norm: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decay_every: Option<u64>,
    #[serde(default = "factor")]
    pub decay_factor: f64,
}

fn beta1() -> f64 {
    0.9
}
fn beta2() -> f64 {
    0.999
}
fn epsilon() -> f64 {
    1e-8
}
fn factor() -> f64 {
    1.0
}

impl Default for OptimizerSection {
    fn default() -> Self {
        OptimizerSection {
            lr: None,
            beta1: beta1(),
            beta2: beta2(),
            epsilon: epsilon(),
            clip_norm: None,
            decay_every: None,
            decay_factor: factor(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    #[serde(default = "side")]
    pub side: usize,
    #[serde(default = "test_fraction")]
    pub test_fraction: f64,
    #[serde(default = "synthetic_count")]
    pub synthetic_count: usize,
    #[serde(default)]
    pub synthetic_seed: u64,
}

fn side() -> usize {
    32
}
fn test_fraction() -> f64 {
    0.1
}
fn synthetic_count() -> usize {
    200
}

impl Default for ImageSection {
    fn default() -> Self {
        ImageSection {
            path: None,
            side: side(),
            test_fraction: test_fraction(),
            synthetic_count: synthetic_count(),
            synthetic_seed: 0,
        }
    }
}

/// Partial task settings; missing keys take the task's defaults.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_elements: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_patterns: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub presentations: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub show_steps: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gap_steps: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_steps: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub degradation: Option<Degradation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rng_seed: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentSection,
    #[serde(default)]
    pub optimizer: OptimizerSection,
    #[serde(default)]
    pub task: TaskSection,
    #[serde(default)]
    pub images: ImageSection,
    #[serde(default)]
    pub maze: A2CConfig,
}

impl ExperimentConfig {
    /// A config with every section at its defaults.
    pub fn new(task: TaskKind, condition: Condition, episodes: u64, out_dir: impl Into<PathBuf>) -> Self {
        ExperimentConfig {
            experiment: ExperimentSection {
                task,
                condition,
                rule: None,
                episodes,
                seed: 0,
                out_dir: out_dir.into(),
                checkpoint_every: 0,
                workers: 1,
                hidden_size: None,
            },
            optimizer: OptimizerSection::default(),
            task: TaskSection::default(),
            images: ImageSection::default(),
            maze: A2CConfig::default(),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Plasticity rule in force, if the condition has one.
    pub fn rule(&self) -> Option<PlasticityRule> {
        if !self.experiment.condition.is_plastic() {
            return None;
        }
        Some(self.experiment.rule.unwrap_or(match self.experiment.task {
            TaskKind::Maze => PlasticityRule::Oja,
            _ => PlasticityRule::DecayHebb,
        }))
    }

    /// Task settings with defaults filled in (binary: the 1000-bit task;
    /// image: `images.side`).
    pub fn task_config(&self) -> TaskConfig {
        let base = match self.experiment.task {
            TaskKind::Image => TaskConfig::images(self.images.side),
            _ => TaskConfig::binary_full(),
        };
        let t = &self.task;
        TaskConfig {
            n_elements: t.n_elements.unwrap_or(base.n_elements),
            n_patterns: t.n_patterns.unwrap_or(base.n_patterns),
            presentations: t.presentations.unwrap_or(base.presentations),
            show_steps: t.show_steps.unwrap_or(base.show_steps),
            gap_steps: t.gap_steps.unwrap_or(base.gap_steps),
            test_steps: t.test_steps.unwrap_or(base.test_steps),
            degradation: t.degradation.unwrap_or(base.degradation),
            rng_seed: self.experiment.seed,
        }
    }

    pub fn adam_config(&self) -> AdamConfig {
        let default_lr = match self.experiment.task {
            TaskKind::Binary => 1e-3,
            TaskKind::Image => 1e-4,
            TaskKind::Maze => self.maze.lr,
        };
        AdamConfig {
            lr: self.optimizer.lr.unwrap_or(default_lr),
            beta1: self.optimizer.beta1,
            beta2: self.optimizer.beta2,
            epsilon: self.optimizer.epsilon,
        }
    }

    pub fn clip_norm(&self) -> Option<f64> {
        self.optimizer.clip_norm.or(match self.experiment.task {
            TaskKind::Maze => self.maze.clip_norm,
            _ => None,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let e = &self.experiment;
        if e.workers == 0 {
            return Err(Error::Config("experiment.workers must be at least 1".into()));
        }
        if e.rule.is_some() && !e.condition.is_plastic() {
            return Err(Error::Config(format!(
                "experiment.rule has no effect for condition {}",
                e.condition.name()
            )));
        }
        let o = &self.optimizer;
        if o.lr.is_some_and(|lr| !positive(lr)) {
            return Err(Error::Config("optimizer.lr must be positive".into()));
        }
        if !(0.0..1.0).contains(&o.beta1) || !(0.0..1.0).contains(&o.beta2) || !positive(o.epsilon) {
            return Err(Error::Config(
                "optimizer betas must lie in [0, 1) and epsilon be positive".into(),
            ));
        }
        if o.decay_every == Some(0) {
            return Err(Error::Config("optimizer.decay_every must be positive".into()));
        }
        if o.clip_norm.is_some_and(|c| !positive(c)) {
            return Err(Error::Config("optimizer.clip_norm must be positive".into()));
        }
        match e.task {
            TaskKind::Maze => {
                e.condition.maze_condition()?;
                self.maze.validate()?;
                if !positive(self.maze.lr) {
                    return Err(Error::Config("maze.lr must be positive".into()));
                }
                if e.hidden_size.is_some() {
                    return Err(Error::Config("use maze.hidden for the maze core size".into()));
                }
            }
            TaskKind::Binary | TaskKind::Image => {
                let t = self.task_config();
                t.validate()?;
                let want = match e.task {
                    TaskKind::Binary => Degradation::HalfBitsZeroRandom,
                    _ => Degradation::HalfFieldTopOrBottom,
                };
                if t.degradation != want {
                    return Err(Error::Config("task.degradation does not match the task".into()));
                }
                if e.task == TaskKind::Image && t.image_side() != Some(self.images.side) {
                    return Err(Error::Config(format!(
                        "task.n_elements = {} does not match images.side = {}",
                        t.n_elements, self.images.side
                    )));
                }
                if let Some(h) = e.hidden_size {
                    if e.condition.is_plastic() {
                        return Err(Error::Config("hidden_size applies to baseline conditions only".into()));
                    }
                    if h < t.network_size() {
                        return Err(Error::Config(format!(
                            "hidden_size {h} is smaller than the I/O size {}",
                            t.network_size()
                        )));
                    }
                }
            }
        }
        if !(0.0..=1.0).contains(&self.images.test_fraction) {
            return Err(Error::Config("images.test_fraction must lie in [0, 1]".into()));
        }
        Ok(())
    }
}
