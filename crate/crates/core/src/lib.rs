//! Meta-training of recurrent networks with differentiable Hebbian
//! plasticity.
//!
//! Every connection carries a fixed weight `w`, a plasticity coefficient
//! `alpha` and a within-episode Hebbian trace; the effective weight is
//! `w + alpha * hebb`. The structural parameters (`w`, `alpha` and the shared
//! plasticity rate `eta`) are trained across episodes by backpropagating
//! through the whole unrolled episode, trace dynamics included.
//!
//! Modules:
//! - [`autodiff`]: reverse-mode differentiation tape over [`Matrix`] values.
//! - [`plastic`]: the plastic network, its Hebbian rules, and non-plastic
//!   RNN/LSTM baselines.
//! - [`optim`]: Adam and learning-rate schedules.
//! - [`tasks`]: binary-pattern and image-completion episode generators.
//! - [`maze`]: grid-world exploration task and the A2C meta-trainer.
//! - [`harness`]: experiment configs, training loops, checkpoints, gradient
//!   checking and matrix dumps.

pub mod autodiff;
pub mod error;
pub mod harness;
pub mod matrix;
pub mod maze;
pub mod optim;
pub mod params;
pub mod plastic;
pub mod rng;
pub mod tasks;

pub use error::{Error, Result};
pub use matrix::Matrix;
