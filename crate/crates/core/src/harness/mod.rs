//! Experiment orchestration: configs, training runs, condition comparisons,
//! gradient checks, matrix dumps and evaluation of trained checkpoints.

mod checkpoint;
mod compare;
mod config;
mod dump;
mod gradcheck;
mod model;
mod runner;

pub use checkpoint::{ArrayValue, Checkpoint, FORMAT_VERSION};
pub use compare::{aggregate, compare_conditions, median_iqr, Comparison, CurvePoint};
pub use config::{
    Condition, ExperimentConfig, ExperimentSection, ImageSection, OptimizerSection, TaskKind, TaskSection,
};
pub use dump::{dump_matrices, parse_dump, Dumped, SHARED_MARKER};
pub use gradcheck::{check_model, gradcheck, CaseReport, GradcheckConfig, GradcheckReport, MAX_N, MAX_T};
pub use model::{run_one_episode, EpisodeMode, EpisodeResult, Model, TaskContext};
pub use runner::{
    load_model, read_metrics, run_experiment, RunOptions, RunRecord, RunRow, CHECKPOINT_FILE, CONFIG_FILE, CSV_VERSION,
    METRICS_FILE, TIMING_FILE,
};

use std::path::Path;

use crate::error::Result;
use crate::tasks::Split;

/// Episode indices used by [`evaluate`] start here, far from any training
/// episode.
pub const EVAL_OFFSET: u64 = 1 << 62;

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub columns: Vec<String>,
    /// Mean of each column over the evaluated episodes.
    pub means: Vec<f64>,
    pub episodes: u64,
    pub renders: Vec<String>,
}

/// Runs `episodes` fresh episodes on the model in `checkpoint`, without
/// training. Image episodes use the test split; maze actions are greedy if
/// `greedy` is set.
pub fn evaluate(checkpoint: &Path, episodes: u64, greedy: bool, render: bool) -> Result<EvalReport> {
    let ck = Checkpoint::load(checkpoint)?;
    let model = ck.restore_model()?;
    let ctx = TaskContext::new(&ck.config)?;
    let split = match ck.config.experiment.task {
        TaskKind::Image => Split::Test,
        _ => Split::Train,
    };
    let mode = EpisodeMode {
        split,
        gradients: false,
        greedy,
        render,
    };
    let mut sums = vec![0.0; ctx.columns().len()];
    let mut renders = Vec::new();
    for k in 0..episodes {
        let r = run_one_episode(&model, &ctx, ck.config.experiment.seed, EVAL_OFFSET + k, mode)?;
        for (s, v) in sums.iter_mut().zip(&r.values) {
            *s += v;
        }
        renders.extend(r.render);
    }
    let means = sums.iter().map(|s| s / episodes.max(1) as f64).collect();
    Ok(EvalReport {
        columns: ctx.columns().iter().map(|c| c.to_string()).collect(),
        means,
        episodes,
        renders,
    })
}
