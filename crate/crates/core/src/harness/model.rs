//! The trainable model of an experiment and one episode of work on it.

use serde::{Deserialize, Serialize};

use super::config::{Condition, ExperimentConfig, TaskKind};
use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::maze::{a2c_loss, run_rl_episode, A2CConfig, ActionSource, MazeEnv, PolicyNet};
use crate::params::{GradMap, Parameterized};
use crate::plastic::{
    sign_error, BaselineParams, BaselineVariant, EpisodeModel, EpisodeSpec, PlasticNet, PlasticParams,
};
use crate::rng::{episode_rng, init_rng, Rng};
use crate::tasks::{
    gen_binary_episode, gen_image_episode, gen_synthetic_images, load_images, ImageStore, Split, TaskConfig,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Model {
    Plastic(PlasticNet),
    Baseline(BaselineParams),
    Policy(PolicyNet),
}

impl Model {
    /// Fresh parameters for `cfg`, drawn from the run's initialisation stream.
    pub fn init(cfg: &ExperimentConfig) -> Result<Model> {
        let mut rng = init_rng(cfg.experiment.seed);
        let condition = cfg.experiment.condition;
        match cfg.experiment.task {
            TaskKind::Maze => {
                let mut policy = PolicyNet::init(cfg.maze.hidden, condition.maze_condition()?, &mut rng);
                policy.rule = cfg.rule().unwrap_or(policy.rule);
                Ok(Model::Policy(policy))
            }
            TaskKind::Binary | TaskKind::Image => {
                let n = cfg.task_config().network_size();
                let hidden = cfg.experiment.hidden_size.unwrap_or(n);
                Ok(match condition {
                    Condition::Plastic | Condition::Homogeneous => {
                        let mode = condition.alpha_mode().expect("plastic condition");
                        let params = PlasticParams::init(n, mode, &mut rng);
                        Model::Plastic(PlasticNet::new(params, cfg.rule().expect("plastic condition")))
                    }
                    Condition::NonPlasticRnn => {
                        Model::Baseline(BaselineParams::init(BaselineVariant::Rnn, n, hidden, &mut rng)?)
                    }
                    Condition::Lstm => {
                        Model::Baseline(BaselineParams::init(BaselineVariant::Lstm, n, hidden, &mut rng)?)
                    }
                })
            }
        }
    }

    pub fn as_episode_model(&self) -> Option<&dyn EpisodeModel> {
        match self {
            Model::Plastic(m) => Some(m),
            Model::Baseline(m) => Some(m),
            Model::Policy(_) => None,
        }
    }
}

impl Parameterized for Model {
    fn visit_params(&self, f: &mut dyn FnMut(&str, (usize, usize), &[f64])) {
        match self {
            Model::Plastic(m) => m.visit_params(f),
            Model::Baseline(m) => m.visit_params(f),
            Model::Policy(m) => m.visit_params(f),
        }
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64])) {
        match self {
            Model::Plastic(m) => m.visit_params_mut(f),
            Model::Baseline(m) => m.visit_params_mut(f),
            Model::Policy(m) => m.visit_params_mut(f),
        }
    }
}

/// Data an experiment's episodes are drawn from.
#[derive(Clone, Debug)]
pub struct TaskContext {
    pub kind: TaskKind,
    pub task: TaskConfig,
    pub images: Option<ImageStore>,
    pub maze: A2CConfig,
}

impl TaskContext {
    pub fn new(cfg: &ExperimentConfig) -> Result<Self> {
        let images = match cfg.experiment.task {
            TaskKind::Image => {
                let s = &cfg.images;
                Some(match &s.path {
                    Some(path) => load_images(path, s.side, s.test_fraction)?,
                    None => {
                        let mut rng = init_rng(s.synthetic_seed);
                        let store = gen_synthetic_images(s.synthetic_count, s.side, &mut rng)?;
                        ImageStore::new(s.side, store.images, s.test_fraction)?
                    }
                })
            }
            _ => None,
        };
        let mut maze = cfg.maze.clone();
        if cfg.experiment.task == TaskKind::Maze {
            maze.condition = cfg.experiment.condition.maze_condition()?;
        }
        Ok(TaskContext {
            kind: cfg.experiment.task,
            task: cfg.task_config(),
            images,
            maze,
        })
    }

    /// CSV column names after `episode`.
    pub fn columns(&self) -> &'static [&'static str] {
        match self.kind {
            TaskKind::Binary => &["loss", "sign_error"],
            TaskKind::Image => &["loss", "mse"],
            TaskKind::Maze => &["total_reward", "wall_bumps", "reward_hits", "loss"],
        }
    }

    /// Column summarising task performance.
    pub fn metric_column(&self) -> &'static str {
        match self.kind {
            TaskKind::Binary => "sign_error",
            TaskKind::Image => "loss",
            TaskKind::Maze => "total_reward",
        }
    }

    pub fn pattern_episode(&self, split: Split, rng: &mut Rng) -> Result<EpisodeSpec> {
        match self.kind {
            TaskKind::Binary => gen_binary_episode(&self.task, rng),
            TaskKind::Image => {
                let store = self.images.as_ref().expect("image task has a store");
                gen_image_episode(store, split, &self.task, rng)
            }
            TaskKind::Maze => Err(Error::contract("pattern_episode", "maze has no pattern episodes")),
        }
    }
}

/// Outcome of one episode.
#[derive(Clone, Debug)]
pub struct EpisodeResult {
    pub loss: f64,
    /// Values for [`TaskContext::columns`].
    pub values: Vec<f64>,
    pub grads: Option<GradMap>,
    pub render: Option<String>,
}

/// How [`run_one_episode`] runs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EpisodeMode {
    pub split: Split,
    pub gradients: bool,
    /// Maze: greedy actions instead of sampling.
    pub greedy: bool,
    pub render: bool,
}

impl EpisodeMode {
    pub const TRAIN: EpisodeMode = EpisodeMode {
        split: Split::Train,
        gradients: true,
        greedy: false,
        render: false,
    };
}

/// Runs episode `index` of the run seeded by `seed`.
pub fn run_one_episode(
    model: &Model,
    ctx: &TaskContext,
    seed: u64,
    index: u64,
    mode: EpisodeMode,
) -> Result<EpisodeResult> {
    let mut rng = episode_rng(seed, index);
    let mut tape = Tape::new();
    match model {
        Model::Policy(policy) => {
            let mut env = MazeEnv::reset(&mut rng);
            let start = mode.render.then(|| env.render());
            let source = if mode.greedy {
                ActionSource::Argmax
            } else {
                ActionSource::Sample
            };
            let traj = run_rl_episode(&mut tape, policy, &mut env, &mut rng, &source)?;
            let loss = a2c_loss(&mut tape, &traj, &ctx.maze)?;
            let loss_value = tape.value(loss.loss).item();
            let grads = if mode.gradients {
                let mut g = tape.backward(loss.loss)?;
                Some(GradMap::from_tape(&mut g, &traj.bindings))
            } else {
                None
            };
            Ok(EpisodeResult {
                loss: loss_value,
                values: vec![
                    traj.total_reward(),
                    traj.wall_bumps as f64,
                    traj.reward_hits as f64,
                    loss_value,
                ],
                grads,
                render: start.map(|s| format!("start:\n{s}end:\n{}", env.render())),
            })
        }
        _ => {
            let net = model.as_episode_model().expect("pattern model");
            let ep = ctx.pattern_episode(mode.split, &mut rng)?;
            let out = net.run_episode(&mut tape, &ep)?;
            let loss = tape.value(out.loss).item();
            let n = ctx.task.n_elements;
            let output = &out.final_output.as_slice()[..n];
            let metric = match ctx.kind {
                TaskKind::Binary => sign_error(output, &ep.target[..n]),
                _ => loss / n as f64,
            };
            let grads = if mode.gradients {
                let mut g = tape.backward(out.loss)?;
                Some(GradMap::from_tape(&mut g, &out.bindings))
            } else {
                None
            };
            Ok(EpisodeResult {
                loss,
                values: vec![loss, metric],
                grads,
                render: None,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn models_match_conditions() {
        let mut cfg = ExperimentConfig::new(TaskKind::Binary, Condition::Plastic, 1, "x");
        cfg.task.n_elements = Some(10);
        let m = Model::init(&cfg).unwrap();
        assert_eq!(m.param_names(), vec!["w", "alpha", "eta"]);
        assert_eq!(m.param_count(), 2 * 121 + 1);
        cfg.experiment.condition = Condition::Homogeneous;
        assert_eq!(Model::init(&cfg).unwrap().param_count(), 121 + 2);
        cfg.experiment.condition = Condition::NonPlasticRnn;
        cfg.experiment.hidden_size = Some(20);
        assert_eq!(Model::init(&cfg).unwrap().param_count(), 400);
        cfg.experiment.condition = Condition::Lstm;
        assert!(matches!(Model::init(&cfg).unwrap(), Model::Baseline(_)));
    }

    #[test]
    fn episode_results_have_one_value_per_column() {
        let mut cfg = ExperimentConfig::new(TaskKind::Binary, Condition::Plastic, 1, "x");
        cfg.task.n_elements = Some(8);
        cfg.task.n_patterns = Some(2);
        let ctx = TaskContext::new(&cfg).unwrap();
        let m = Model::init(&cfg).unwrap();
        let r = run_one_episode(&m, &ctx, 0, 0, EpisodeMode::TRAIN).unwrap();
        assert_eq!(r.values.len(), ctx.columns().len());
        assert_eq!(r.grads.unwrap().len(), 3);

        let mut cfg = ExperimentConfig::new(TaskKind::Maze, Condition::NonPlasticRnn, 1, "x");
        cfg.maze.hidden = 5;
        let ctx = TaskContext::new(&cfg).unwrap();
        let m = Model::init(&cfg).unwrap();
        let mode = EpisodeMode {
            render: true,
            ..EpisodeMode::TRAIN
        };
        let r = run_one_episode(&m, &ctx, 0, 0, mode).unwrap();
        assert_eq!(r.values.len(), 4);
        assert!(r.render.unwrap().contains('A'));
    }
}
