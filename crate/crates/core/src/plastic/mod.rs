//! Plastic recurrent networks and their non-plastic baselines.

mod baseline;
mod net;

pub use baseline::{
    baseline_step, BaselineLeaves, BaselineParams, BaselineState, BaselineVariant, LstmParams, RnnParams,
};
pub(crate) use net::check_divergence;
pub use net::{
    forward_step, hebb_update, recurrent_drive, run_episode, AlphaMode, PlasticLeaves, PlasticNet, PlasticParams,
    PlasticityRule, DIVERGENCE_LIMIT, INIT_ETA, INIT_STD,
};

use crate::autodiff::{NodeRef, Tape};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::params::{Bindings, Parameterized};

/// External input for one time step. `clamp_values[k]` is used only where
/// `clamp_mask[k]` is set.
#[derive(Clone, Debug, PartialEq)]
pub struct StepInput {
    pub clamp_mask: Vec<bool>,
    pub clamp_values: Vec<f64>,
}

impl StepInput {
    /// No neuron clamped.
    pub fn free(n: usize) -> Self {
        StepInput {
            clamp_mask: vec![false; n],
            clamp_values: vec![0.0; n],
        }
    }

    /// Clamps every neuron whose stimulus value is nonzero; zero entries
    /// provide no input.
    pub fn from_stimulus(values: &[f64]) -> Self {
        StepInput {
            clamp_mask: values.iter().map(|&v| v != 0.0).collect(),
            clamp_values: values.to_vec(),
        }
    }

    /// Clamps neuron `index` to 1.
    pub fn with_bias(mut self, index: usize) -> Self {
        self.clamp_mask[index] = true;
        self.clamp_values[index] = 1.0;
        self
    }

    pub fn len(&self) -> usize {
        self.clamp_mask.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clamp_mask.is_empty()
    }

    pub fn any_clamped(&self) -> bool {
        self.clamp_mask.iter().any(|&m| m)
    }

    pub fn clamped_count(&self) -> usize {
        self.clamp_mask.iter().filter(|&&m| m).count()
    }

    pub(crate) fn validate(&self, n: usize) -> Result<()> {
        if self.clamp_mask.len() != n || self.clamp_values.len() != n {
            return Err(Error::Shape {
                op: "StepInput",
                left: (self.clamp_mask.len(), self.clamp_values.len()),
                right: (n, n),
            });
        }
        let bad = self
            .clamp_mask
            .iter()
            .zip(&self.clamp_values)
            .any(|(&m, v)| m && !v.is_finite());
        if bad {
            return Err(Error::NonFinite { what: "clamp values" });
        }
        Ok(())
    }
}

/// One lifetime: the input schedule and the expected output at the last step.
#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeSpec {
    pub steps: Vec<StepInput>,
    pub target: Vec<f64>,
}

impl EpisodeSpec {
    /// Index of the step whose output is scored.
    pub fn loss_step(&self) -> usize {
        self.steps.len().saturating_sub(1)
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if self.steps.is_empty() {
            return Err(Error::contract("run_episode", "episode has no steps"));
        }
        if self.target.len() != n {
            return Err(Error::Shape {
                op: "run_episode",
                left: (1, self.target.len()),
                right: (1, n),
            });
        }
        Ok(())
    }
}

/// Result of unrolling one episode on a tape.
#[derive(Debug)]
pub struct EpisodeOutput {
    /// Summed squared error at the last step.
    pub loss: NodeRef,
    /// Output layer after the last step.
    pub final_output: Matrix,
    /// Output layer after every step.
    pub steps: Vec<NodeRef>,
    /// Leaf handles of every trainable parameter.
    pub bindings: Bindings,
}

/// A network that can be unrolled over an [`EpisodeSpec`].
pub trait EpisodeModel: Parameterized + Sync {
    /// Width of the clamped/read-out layer.
    fn io_size(&self) -> usize;
    fn run_episode(&self, tape: &mut Tape, episode: &EpisodeSpec) -> Result<EpisodeOutput>;
}

/// Fraction of positions whose output sign differs from the `±1` target. An
/// output of exactly zero counts as wrong.
pub fn sign_error(output: &[f64], target: &[f64]) -> f64 {
    assert_eq!(output.len(), target.len(), "sign_error length mismatch");
    if target.is_empty() {
        return 0.0;
    }
    let wrong = output
        .iter()
        .zip(target)
        .filter(|(o, t)| !(**o != 0.0 && o.signum() == t.signum()))
        .count();
    wrong as f64 / target.len() as f64
}
