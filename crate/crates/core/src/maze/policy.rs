use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::env::{Action, MazeEnv, OBS_SIZE};
use crate::autodiff::{NodeRef, Tape};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::params::{Bindings, Parameterized};
use crate::plastic::{check_divergence, hebb_update, recurrent_drive, AlphaMode, PlasticParams, PlasticityRule};
use crate::rng::{self, Rng};

pub const N_ACTIONS: usize = 4;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MazeCondition {
    /// Per-connection plasticity coefficients.
    #[default]
    PerConnection,
    /// One plasticity coefficient for the whole core.
    Homogeneous,
    NonPlastic,
}

impl MazeCondition {
    pub fn alpha_mode(self) -> AlphaMode {
        match self {
            MazeCondition::PerConnection => AlphaMode::PerConnection,
            MazeCondition::Homogeneous => AlphaMode::SharedScalar,
            MazeCondition::NonPlastic => AlphaMode::Zero,
        }
    }
}

/// Recurrent policy: observation -> plastic core -> softmax over actions and
/// a scalar value estimate. The core's trace follows Oja's rule.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyNet {
    pub core: PlasticParams,
    pub rule: PlasticityRule,
    pub w_in: Matrix,
    pub b_in: Matrix,
    pub w_act: Matrix,
    pub b_act: Matrix,
    pub w_val: Matrix,
    pub b_val: Matrix,
}

impl PolicyNet {
    /// Core as [`PlasticParams::init`]; input and head weights Gaussian with
    /// std `1/sqrt(fan_in)`; biases zero.
    pub fn init(hidden: usize, condition: MazeCondition, rng: &mut Rng) -> PolicyNet {
        let core = PlasticParams::init(hidden, condition.alpha_mode(), rng);
        let s_in = 1.0 / (OBS_SIZE as f64).sqrt();
        let s_h = 1.0 / (hidden as f64).sqrt();
        PolicyNet {
            core,
            rule: PlasticityRule::Oja,
            w_in: rng::gaussian_matrix(rng, OBS_SIZE, hidden, s_in),
            b_in: Matrix::zeros(1, hidden),
            w_act: rng::gaussian_matrix(rng, hidden, N_ACTIONS, s_h),
            b_act: Matrix::zeros(1, N_ACTIONS),
            w_val: rng::gaussian_matrix(rng, hidden, 1, s_h),
            b_val: Matrix::zeros(1, 1),
        }
    }

    pub fn hidden(&self) -> usize {
        self.core.n()
    }

    pub fn register(&self, tape: &mut Tape) -> PolicyLeaves {
        PolicyLeaves {
            core: self.core.register(tape),
            w_in: tape.leaf(self.w_in.clone()),
            b_in: tape.leaf(self.b_in.clone()),
            w_act: tape.leaf(self.w_act.clone()),
            b_act: tape.leaf(self.b_act.clone()),
            w_val: tape.leaf(self.w_val.clone()),
            b_val: tape.leaf(self.b_val.clone()),
        }
    }

    fn heads_mut(&mut self) -> [(&'static str, &mut Matrix); 6] {
        [
            ("w_in", &mut self.w_in),
            ("b_in", &mut self.b_in),
            ("w_act", &mut self.w_act),
            ("b_act", &mut self.b_act),
            ("w_val", &mut self.w_val),
            ("b_val", &mut self.b_val),
        ]
    }
}

impl Parameterized for PolicyNet {
    fn visit_params(&self, f: &mut dyn FnMut(&str, (usize, usize), &[f64])) {
        self.core.visit_params(f);
        for (name, m) in [
            ("w_in", &self.w_in),
            ("b_in", &self.b_in),
            ("w_act", &self.w_act),
            ("b_act", &self.b_act),
            ("w_val", &self.w_val),
            ("b_val", &self.b_val),
        ] {
            f(name, m.shape(), m.as_slice());
        }
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64])) {
        self.core.visit_params_mut(f);
        for (name, m) in self.heads_mut() {
            f(name, m.as_mut_slice());
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct PolicyLeaves {
    pub core: crate::plastic::PlasticLeaves,
    pub w_in: NodeRef,
    pub b_in: NodeRef,
    pub w_act: NodeRef,
    pub b_act: NodeRef,
    pub w_val: NodeRef,
    pub b_val: NodeRef,
}

impl PolicyLeaves {
    pub fn bindings(&self) -> Bindings {
        let mut b = self.core.bindings();
        b.extend([
            ("w_in", self.w_in),
            ("b_in", self.b_in),
            ("w_act", self.w_act),
            ("b_act", self.b_act),
            ("w_val", self.w_val),
            ("b_val", self.b_val),
        ]);
        b
    }
}

/// How actions are chosen during an episode.
#[derive(Clone, Debug)]
pub enum ActionSource {
    /// Sample from the policy using the episode generator.
    Sample,
    /// Most probable action (lowest index on ties).
    Argmax,
    /// A fixed action sequence.
    Replay(Vec<usize>),
}

/// Everything recorded while running one maze episode.
#[derive(Debug, Default)]
pub struct Trajectory {
    pub log_probs: Vec<NodeRef>,
    pub values: Vec<NodeRef>,
    pub entropies: Vec<NodeRef>,
    pub probs: Vec<Vec<f64>>,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
    pub wall_bumps: usize,
    pub reward_hits: usize,
    pub bindings: Bindings,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn total_reward(&self) -> f64 {
        self.rewards.iter().sum()
    }
}

fn pick_action(probs: &[f64], source: &ActionSource, t: usize, rng: &mut Rng) -> Result<usize> {
    match source {
        ActionSource::Sample => {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            for (k, p) in probs.iter().enumerate() {
                acc += p;
                if u < acc {
                    return Ok(k);
                }
            }
            Ok(probs.len() - 1)
        }
        ActionSource::Argmax => {
            let mut best = 0;
            for k in 1..probs.len() {
                if probs[k] > probs[best] {
                    best = k;
                }
            }
            Ok(best)
        }
        ActionSource::Replay(actions) => actions
            .get(t)
            .copied()
            .filter(|&a| a < N_ACTIONS)
            .ok_or_else(|| Error::contract("run_rl_episode", format!("no valid replay action for step {t}"))),
    }
}

/// Runs `env` to completion from a zero core state and zero trace. Each step
/// feeds the 10-value observation through the input weights into the core,
/// reads action probabilities and a value from the new core state, acts, and
/// updates the trace.
pub fn run_rl_episode(
    tape: &mut Tape,
    policy: &PolicyNet,
    env: &mut MazeEnv,
    rng: &mut Rng,
    source: &ActionSource,
) -> Result<Trajectory> {
    let h_size = policy.hidden();
    let leaves = policy.register(tape);
    let mut hebb = tape.constant(Matrix::zeros(h_size, h_size));
    let mut h = tape.constant(Matrix::zeros(1, h_size));
    let mut obs = env.observe(0.0);
    let mut traj = Trajectory {
        bindings: leaves.bindings(),
        ..Trajectory::default()
    };
    let mut t = 0;
    while !env.done() {
        let x = tape.constant(Matrix::row(obs.to_vec()));
        let rec = recurrent_drive(tape, &leaves.core, hebb, h)?;
        let inp = tape.matmul(x, leaves.w_in)?;
        let inp = tape.add(inp, leaves.b_in)?;
        let drive = tape.add(rec, inp)?;
        let h_next = tape.tanh(drive)?;
        if leaves.core.alpha.is_some() {
            hebb = hebb_update(tape, policy.rule, &leaves.core, hebb, h, h_next)?;
            check_divergence(tape, hebb, t)?;
        }
        h = h_next;

        let logits = tape.matmul(h, leaves.w_act)?;
        let logits = tape.add(logits, leaves.b_act)?;
        let probs = tape.softmax_row(logits)?;
        let value = tape.matmul(h, leaves.w_val)?;
        let value = tape.add(value, leaves.b_val)?;

        let p = tape.value(probs).as_slice().to_vec();
        let a = pick_action(&p, source, t, rng)?;
        traj.log_probs.push(tape.log_prob(probs, a)?);
        traj.entropies.push(tape.entropy(probs)?);
        traj.values.push(value);
        traj.probs.push(p);
        traj.actions.push(a);

        let step = env.step(Action::from_index(a), rng)?;
        traj.rewards.push(step.reward);
        traj.wall_bumps += step.bumped as usize;
        traj.reward_hits += step.hit as usize;
        obs = step.obs;
        t += 1;
    }
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::maze::env::EPISODE_LEN;
    use crate::rng::{episode_rng, init_rng};

    #[test]
    fn zero_weights_give_uniform_actions() {
        let mut p = PolicyNet::init(8, MazeCondition::PerConnection, &mut init_rng(0));
        for (_, m) in p.heads_mut() {
            *m = Matrix::zeros(m.rows(), m.cols());
        }
        p.core.w = Matrix::zeros(8, 8);
        let mut rng = episode_rng(0, 0);
        let mut env = MazeEnv::reset(&mut rng);
        let mut tape = Tape::new();
        let traj = run_rl_episode(&mut tape, &p, &mut env, &mut rng, &ActionSource::Sample).unwrap();
        assert_eq!(traj.len(), EPISODE_LEN);
        for probs in &traj.probs {
            assert!(probs.iter().all(|&q| q == 0.25));
        }
    }

    #[test]
    fn reward_accounting_and_random_wall_penalty() {
        let p = PolicyNet::init(16, MazeCondition::Homogeneous, &mut init_rng(3));
        let mut per_step = 0.0;
        let episodes = 20;
        for k in 0..episodes {
            let mut rng = episode_rng(4, k);
            let mut env = MazeEnv::reset(&mut rng);
            let mut tape = Tape::new();
            let traj = run_rl_episode(&mut tape, &p, &mut env, &mut rng, &ActionSource::Sample).unwrap();
            let expect = 10.0 * traj.reward_hits as f64 - 0.1 * traj.wall_bumps as f64;
            assert!((traj.total_reward() - expect).abs() < 1e-9);
            per_step += -0.1 * traj.wall_bumps as f64 / traj.len() as f64;
            for probs in &traj.probs {
                assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
        per_step /= episodes as f64;
        assert!(per_step < 0.0 && per_step > -0.1, "{per_step}");
    }

    #[test]
    fn conditions_differ_only_in_alpha() {
        let names = |c| PolicyNet::init(12, c, &mut init_rng(0)).param_names();
        let plastic = names(MazeCondition::PerConnection);
        let fixed = names(MazeCondition::NonPlastic);
        let shared = names(MazeCondition::Homogeneous);
        assert_eq!(plastic, shared);
        let without: Vec<_> = plastic.iter().filter(|n| *n != "alpha").cloned().collect();
        assert_eq!(without, fixed);
    }

    #[test]
    fn replay_is_deterministic_and_checked() {
        let p = PolicyNet::init(6, MazeCondition::PerConnection, &mut init_rng(1));
        let actions: Vec<usize> = (0..EPISODE_LEN).map(|t| (t * 7) % 4).collect();
        let run = |acts: Vec<usize>| {
            let mut rng = episode_rng(2, 2);
            let mut env = MazeEnv::reset(&mut rng);
            let mut tape = Tape::new();
            run_rl_episode(&mut tape, &p, &mut env, &mut rng, &ActionSource::Replay(acts))
                .map(|t| (t.actions.clone(), t.rewards.clone()))
        };
        let a = run(actions.clone()).unwrap();
        assert_eq!(a, run(actions.clone()).unwrap());
        assert_eq!(a.0, actions);
        assert!(run(actions[..10].to_vec()).is_err());
    }
}
