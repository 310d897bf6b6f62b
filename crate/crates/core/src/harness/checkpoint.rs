//! JSON checkpoints. Numbers are written in shortest round-trip form and
//! parsed back exactly, so a restored run continues bit-for-bit.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::{Condition, ExperimentConfig, TaskKind};
use super::model::Model;
use crate::error::{Error, Result};
use crate::optim::AdamState;
use crate::params::Parameterized;
use crate::plastic::{AlphaMode, PlasticityRule};

pub const FORMAT_VERSION: u32 = 1;

/// A parameter tensor as a grid of rows, or a bare number for the shared
/// plasticity coefficient.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ArrayValue {
    Scalar(f64),
    Grid(Vec<Vec<f64>>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub task: TaskKind,
    pub condition: Condition,
    /// Neuron count of the plastic core (I/O size for baselines).
    #[serde(rename = "N")]
    pub n: usize,
    pub alpha_mode: Option<AlphaMode>,
    pub rule: Option<PlasticityRule>,
    pub eta: Option<f64>,
    /// Every parameter except `eta`, by name.
    pub arrays: BTreeMap<String, ArrayValue>,
    pub optimizer_state: AdamState,
    pub rng_seed: u64,
    pub episodes_done: u64,
    pub config: ExperimentConfig,
}

impl Checkpoint {
    pub fn capture(cfg: &ExperimentConfig, model: &Model, adam: &AdamState, episodes_done: u64) -> Self {
        let (n, alpha_mode, rule, eta) = match model {
            Model::Plastic(p) => (
                p.params.n(),
                Some(p.params.alpha_mode),
                Some(p.rule),
                Some(p.params.eta),
            ),
            Model::Policy(p) => (p.hidden(), Some(p.core.alpha_mode), Some(p.rule), Some(p.core.eta)),
            Model::Baseline(b) => (b.io(), None, None, None),
        };
        let shared = alpha_mode == Some(AlphaMode::SharedScalar);
        let mut arrays = BTreeMap::new();
        model.visit_params(&mut |name, (r, c), v| {
            if name == "eta" {
                return;
            }
            let value = if name == "alpha" && shared {
                ArrayValue::Scalar(v[0])
            } else {
                ArrayValue::Grid((0..r).map(|i| v[i * c..(i + 1) * c].to_vec()).collect())
            };
            arrays.insert(name.to_string(), value);
        });
        Checkpoint {
            format_version: FORMAT_VERSION,
            task: cfg.experiment.task,
            condition: cfg.experiment.condition,
            n,
            alpha_mode,
            rule,
            eta,
            arrays,
            optimizer_state: adam.clone(),
            rng_seed: cfg.experiment.seed,
            episodes_done,
            config: cfg.clone(),
        }
    }

    /// Rebuilds the model described by the stored config and fills in the
    /// stored values.
    pub fn restore_model(&self) -> Result<Model> {
        let mut model = Model::init(&self.config)?;
        let mut problem = None;
        let mut seen = 0;
        model.visit_params_mut(&mut |name, values| {
            if problem.is_some() {
                return;
            }
            if name == "eta" {
                match self.eta {
                    Some(eta) => values[0] = eta,
                    None => problem = Some("missing eta".to_string()),
                }
                return;
            }
            let flat: Vec<f64> = match self.arrays.get(name) {
                Some(ArrayValue::Scalar(v)) => vec![*v],
                Some(ArrayValue::Grid(rows)) => rows.concat(),
                None => {
                    problem = Some(format!("missing array `{name}`"));
                    return;
                }
            };
            if flat.len() != values.len() {
                problem = Some(format!(
                    "array `{name}` has {} values, expected {}",
                    flat.len(),
                    values.len()
                ));
                return;
            }
            values.copy_from_slice(&flat);
            seen += 1;
        });
        if let Some(msg) = problem {
            return Err(Error::Checkpoint(msg));
        }
        if seen != self.arrays.len() {
            return Err(Error::Checkpoint(
                "checkpoint holds arrays the model does not have".into(),
            ));
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let tmp = path.with_extension("json.tmp");
        std::fs::write(&tmp, text).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ck: Checkpoint =
            serde_json::from_str(&text).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
        if ck.format_version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "format version {} unsupported (expected {FORMAT_VERSION})",
                ck.format_version
            )));
        }
        Ok(ck)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optim::AdamConfig;

    fn round_trip(cfg: &ExperimentConfig) {
        let mut model = Model::init(cfg).unwrap();
        // awkward values that need all 17 digits
        let mut k = 0.0f64;
        model.visit_params_mut(&mut |_, v| {
            for x in v.iter_mut() {
                k += 1.0;
                *x = (k / 3.0).sin() * 1e-3 + 1.0 / 7.0;
            }
        });
        let adam = AdamState::new(AdamConfig::default());
        let ck = Checkpoint::capture(cfg, &model, &adam, 42);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.json");
        ck.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.restore_model().unwrap(), model);
    }

    #[test]
    fn round_trips_every_model_kind() {
        let mut cfg = ExperimentConfig::new(TaskKind::Binary, Condition::Plastic, 1, "x");
        cfg.task.n_elements = Some(6);
        round_trip(&cfg);
        cfg.experiment.condition = Condition::Homogeneous;
        round_trip(&cfg);
        cfg.experiment.condition = Condition::Lstm;
        cfg.experiment.hidden_size = Some(9);
        round_trip(&cfg);
        let mut cfg = ExperimentConfig::new(TaskKind::Maze, Condition::NonPlasticRnn, 1, "x");
        cfg.maze.hidden = 4;
        round_trip(&cfg);
    }

    #[test]
    fn shared_alpha_is_a_bare_number() {
        let mut cfg = ExperimentConfig::new(TaskKind::Binary, Condition::Homogeneous, 1, "x");
        cfg.task.n_elements = Some(4);
        let model = Model::init(&cfg).unwrap();
        let ck = Checkpoint::capture(&cfg, &model, &AdamState::new(AdamConfig::default()), 0);
        assert!(matches!(ck.arrays["alpha"], ArrayValue::Scalar(_)));
        let json = serde_json::to_value(&ck).unwrap();
        assert!(json["arrays"]["alpha"].is_number());
        assert_eq!(json["N"], 5);
    }

    #[test]
    fn mismatched_arrays_are_rejected() {
        let mut cfg = ExperimentConfig::new(TaskKind::Binary, Condition::Plastic, 1, "x");
        cfg.task.n_elements = Some(4);
        let model = Model::init(&cfg).unwrap();
        let mut ck = Checkpoint::capture(&cfg, &model, &AdamState::new(AdamConfig::default()), 0);
        ck.arrays.insert("w".into(), ArrayValue::Grid(vec![vec![0.0]]));
        assert!(matches!(ck.restore_model(), Err(Error::Checkpoint(_))));
    }
}
