//! Adam and a step-decay learning-rate schedule.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{GradMap, Parameterized};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Moment estimates of one parameter tensor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub cfg: AdamConfig,
    pub t: u64,
    pub moments: BTreeMap<String, Moments>,
}

impl AdamState {
    pub fn new(cfg: AdamConfig) -> Self {
        AdamState {
            cfg,
            t: 0,
            moments: BTreeMap::new(),
        }
    }

    /// One bias-corrected Adam update of every parameter of `params`, in
    /// place. Every parameter must have a gradient of matching size.
    pub fn step(&mut self, params: &mut dyn Parameterized, grads: &GradMap) -> Result<()> {
        // check everything before touching any state
        let mut problem = None;
        params.visit_params(&mut |name, (r, c), _| {
            if problem.is_some() {
                return;
            }
            match grads.get(name) {
                None => problem = Some(format!("no gradient for parameter `{name}`")),
                Some(g) if g.len() != r * c => {
                    problem = Some(format!(
                        "gradient for `{name}` has {} entries, parameter has {}",
                        g.len(),
                        r * c
                    ))
                }
                Some(_) => {}
            }
        });
        if let Some(msg) = problem {
            return Err(Error::contract("adam_step", msg));
        }

        self.t += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            epsilon,
        } = self.cfg;
        let bc1 = 1.0 - beta1.powi(self.t.min(i32::MAX as u64) as i32);
        let bc2 = 1.0 - beta2.powi(self.t.min(i32::MAX as u64) as i32);
        let moments = &mut self.moments;
        params.visit_params_mut(&mut |name, values| {
            let g = grads.get(name).expect("checked above").as_slice();
            let mo = moments.entry(name.to_string()).or_insert_with(|| Moments {
                m: vec![0.0; values.len()],
                v: vec![0.0; values.len()],
            });
            for k in 0..values.len() {
                mo.m[k] = beta1 * mo.m[k] + (1.0 - beta1) * g[k];
                mo.v[k] = beta2 * mo.v[k] + (1.0 - beta2) * g[k] * g[k];
                let m_hat = if bc1 > 0.0 { mo.m[k] / bc1 } else { mo.m[k] };
                let v_hat = if bc2 > 0.0 { mo.v[k] / bc2 } else { mo.v[k] };
                values[k] -= lr * m_hat / (v_hat.sqrt() + epsilon);
            }
        });
        Ok(())
    }
}

/// `adam_step` as a free function.
pub fn adam_step(state: &mut AdamState, params: &mut dyn Parameterized, grads: &GradMap) -> Result<()> {
    state.step(params, grads)
}

/// `base_lr * factor^floor(episode / decay_every)`.
pub fn lr_schedule(base_lr: f64, episode: u64, decay_every: u64, factor: f64) -> f64 {
    assert!(decay_every > 0, "decay_every must be positive");
    let k = episode / decay_every;
    base_lr * factor.powi(k.min(i32::MAX as u64) as i32)
}
