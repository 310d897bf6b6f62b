use serde::{Deserialize, Serialize};

use super::{EpisodeModel, EpisodeOutput, EpisodeSpec, StepInput};
use crate::autodiff::{NodeRef, Tape};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::params::{Bindings, Parameterized};
use crate::rng::{self, Rng};

/// Standard deviation of the Gaussian initialisation of `w` and `alpha`.
pub const INIT_STD: f64 = 0.01;
/// Initial value of the plasticity rate.
pub const INIT_ETA: f64 = 0.01;
/// A trace entry beyond this magnitude aborts the episode.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AlphaMode {
    /// One trainable coefficient per connection.
    PerConnection,
    /// A single trainable coefficient shared by every connection.
    SharedScalar,
    /// No plastic term at all.
    Zero,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PlasticityRule {
    /// `hebb' = eta * x_pre * x_post + (1 - eta) * hebb`
    DecayHebb,
    /// `hebb' = hebb + eta * x_post * (x_pre - x_post * hebb)`
    Oja,
}

impl std::str::FromStr for PlasticityRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "decay" | "decay-hebb" | "hebb" => Ok(PlasticityRule::DecayHebb),
            "oja" => Ok(PlasticityRule::Oja),
            other => Err(Error::Config(format!("unknown plasticity rule `{other}`"))),
        }
    }
}

/// Structural parameters of a plastic recurrent network of `n` neurons.
///
/// `alpha` is `n x n` in per-connection mode, `1 x 1` in shared mode and
/// empty (`0 x 0`) when the network has no plastic term.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlasticParams {
    pub w: Matrix,
    pub alpha: Matrix,
    pub eta: f64,
    pub alpha_mode: AlphaMode,
}

impl PlasticParams {
    /// Gaussian initialisation: `w`, `alpha ~ N(0, 0.01^2)`, `eta = 0.01`.
    pub fn init(n: usize, alpha_mode: AlphaMode, rng: &mut Rng) -> Self {
        let w = rng::gaussian_matrix(rng, n, n, INIT_STD);
        let alpha = match alpha_mode {
            AlphaMode::PerConnection => rng::gaussian_matrix(rng, n, n, INIT_STD),
            AlphaMode::SharedScalar => rng::gaussian_matrix(rng, 1, 1, INIT_STD),
            AlphaMode::Zero => Matrix::zeros(0, 0),
        };
        PlasticParams {
            w,
            alpha,
            eta: INIT_ETA,
            alpha_mode,
        }
    }

    pub fn new(w: Matrix, alpha: Matrix, eta: f64, alpha_mode: AlphaMode) -> Result<Self> {
        let p = PlasticParams {
            w,
            alpha,
            eta,
            alpha_mode,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.w.rows();
        if self.w.cols() != n || n == 0 {
            return Err(Error::contract(
                "PlasticParams",
                format!("w must be square and non-empty, got {:?}", self.w.shape()),
            ));
        }
        let expect = match self.alpha_mode {
            AlphaMode::PerConnection => (n, n),
            AlphaMode::SharedScalar => (1, 1),
            AlphaMode::Zero => (0, 0),
        };
        if self.alpha.shape() != expect {
            return Err(Error::Shape {
                op: "PlasticParams",
                left: self.alpha.shape(),
                right: expect,
            });
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.w.rows()
    }

    /// Number of entries in `w` and `alpha` (`eta` excluded).
    pub fn structural_param_count(&self) -> usize {
        self.w.len() + self.alpha.len()
    }

    pub fn register(&self, tape: &mut Tape) -> PlasticLeaves {
        let w = tape.leaf(self.w.clone());
        let alpha = match self.alpha_mode {
            AlphaMode::Zero => None,
            _ => Some(tape.leaf(self.alpha.clone())),
        };
        let eta = tape.leaf(Matrix::scalar(self.eta));
        PlasticLeaves { w, alpha, eta }
    }
}

impl Parameterized for PlasticParams {
    fn visit_params(&self, f: &mut dyn FnMut(&str, (usize, usize), &[f64])) {
        f("w", self.w.shape(), self.w.as_slice());
        if self.alpha_mode != AlphaMode::Zero {
            f("alpha", self.alpha.shape(), self.alpha.as_slice());
        }
        f("eta", (1, 1), std::slice::from_ref(&self.eta));
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64])) {
        f("w", self.w.as_mut_slice());
        if self.alpha_mode != AlphaMode::Zero {
            f("alpha", self.alpha.as_mut_slice());
        }
        f("eta", std::slice::from_mut(&mut self.eta));
    }
}

/// Tape handles of one episode's structural parameters.
#[derive(Clone, Copy, Debug)]
pub struct PlasticLeaves {
    pub w: NodeRef,
    pub alpha: Option<NodeRef>,
    pub eta: NodeRef,
}

impl PlasticLeaves {
    pub fn bindings(&self) -> Bindings {
        let mut b = vec![("w", self.w)];
        if let Some(a) = self.alpha {
            b.push(("alpha", a));
        }
        b.push(("eta", self.eta));
        b
    }
}

/// Sum over inputs of `(w + alpha ⊙ hebb) * y_prev`, the pre-activation of
/// every neuron.
pub fn recurrent_drive(tape: &mut Tape, leaves: &PlasticLeaves, hebb: NodeRef, y_prev: NodeRef) -> Result<NodeRef> {
    match leaves.alpha {
        None => tape.matmul(y_prev, leaves.w),
        Some(alpha) => tape.plastic_matmul(y_prev, leaves.w, alpha, hebb),
    }
}

/// One network step: `y = tanh(y_prev * (w + alpha ⊙ hebb))`, then every
/// clamped neuron is overwritten with its stimulus value.
pub fn forward_step(
    tape: &mut Tape,
    leaves: &PlasticLeaves,
    hebb: NodeRef,
    y_prev: NodeRef,
    input: &StepInput,
) -> Result<NodeRef> {
    let n = leaves.w.rows();
    if y_prev.shape() != (1, n) {
        return Err(Error::Shape {
            op: "forward_step",
            left: y_prev.shape(),
            right: (1, n),
        });
    }
    input.validate(n)?;
    if !tape.value(y_prev).is_finite() {
        return Err(Error::NonFinite {
            what: "previous activation",
        });
    }
    let drive = recurrent_drive(tape, leaves, hebb, y_prev)?;
    let y = tape.tanh(drive)?;
    if input.any_clamped() {
        tape.clamp(y, &input.clamp_mask, &input.clamp_values)
    } else {
        Ok(y)
    }
}

/// Trace update from the activities before and after a step.
pub fn hebb_update(
    tape: &mut Tape,
    rule: PlasticityRule,
    leaves: &PlasticLeaves,
    hebb: NodeRef,
    y_prev: NodeRef,
    y_next: NodeRef,
) -> Result<NodeRef> {
    match rule {
        PlasticityRule::DecayHebb => tape.hebb_decay(hebb, leaves.eta, y_prev, y_next),
        PlasticityRule::Oja => tape.hebb_oja(hebb, leaves.eta, y_prev, y_next),
    }
}

pub(crate) fn check_divergence(tape: &Tape, hebb: NodeRef, step: usize) -> Result<()> {
    let trace = tape.value(hebb);
    let max_abs = if trace.is_finite() {
        trace.max_abs()
    } else {
        f64::INFINITY
    };
    if max_abs > DIVERGENCE_LIMIT {
        return Err(Error::Divergence { step, max_abs });
    }
    Ok(())
}

/// A plastic network together with the trace rule it runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlasticNet {
    pub params: PlasticParams,
    pub rule: PlasticityRule,
}

impl PlasticNet {
    pub fn new(params: PlasticParams, rule: PlasticityRule) -> Self {
        PlasticNet { params, rule }
    }
}

/// Unrolls one episode from a zero trace and zero activity. Each step first
/// computes the activity from the current trace, then updates the trace from
/// the activities before and after the step. The loss is the summed squared
/// error of the last step's output against the target.
pub fn run_episode(
    tape: &mut Tape,
    params: &PlasticParams,
    rule: PlasticityRule,
    episode: &EpisodeSpec,
) -> Result<EpisodeOutput> {
    let n = params.n();
    episode.validate(n)?;
    let leaves = params.register(tape);
    let mut hebb = tape.constant(Matrix::zeros(n, n));
    let mut y = tape.constant(Matrix::zeros(1, n));
    let mut steps = Vec::with_capacity(episode.steps.len());
    for (t, input) in episode.steps.iter().enumerate() {
        let y_next = forward_step(tape, &leaves, hebb, y, input)?;
        if leaves.alpha.is_some() {
            hebb = hebb_update(tape, rule, &leaves, hebb, y, y_next)?;
            check_divergence(tape, hebb, t)?;
        }
        steps.push(y_next);
        y = y_next;
    }
    let loss = tape.sum_sq_err(y, &Matrix::row(episode.target.clone()))?;
    Ok(EpisodeOutput {
        loss,
        final_output: tape.value(y).clone(),
        steps,
        bindings: leaves.bindings(),
    })
}

impl Parameterized for PlasticNet {
    fn visit_params(&self, f: &mut dyn FnMut(&str, (usize, usize), &[f64])) {
        self.params.visit_params(f)
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64])) {
        self.params.visit_params_mut(f)
    }
}

impl EpisodeModel for PlasticNet {
    fn io_size(&self) -> usize {
        self.params.n()
    }

    fn run_episode(&self, tape: &mut Tape, episode: &EpisodeSpec) -> Result<EpisodeOutput> {
        run_episode(tape, &self.params, self.rule, episode)
    }
}
