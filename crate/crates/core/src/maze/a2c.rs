use serde::{Deserialize, Serialize};

use super::policy::{MazeCondition, Trajectory};
use crate::autodiff::{NodeRef, Tape};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct A2CConfig {
    pub gamma: f64,
    pub value_coef: f64,
    pub entropy_coef: f64,
    pub lr: f64,
    /// Global gradient-norm clip; none by default.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub clip_norm: Option<f64>,
    pub hidden: usize,
    /// Set from the experiment condition, not read from config files.
    #[serde(skip)]
    pub condition: MazeCondition,
}

impl Default for A2CConfig {
    fn default() -> Self {
        A2CConfig {
            gamma: 0.9,
            value_coef: 0.1,
            entropy_coef: 0.03,
            lr: 1e-4,
            clip_norm: None,
            hidden: 200,
            condition: MazeCondition::PerConnection,
        }
    }
}

impl A2CConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::Config(format!("maze.gamma = {} outside [0, 1]", self.gamma)));
        }
        if self.value_coef < 0.0 || self.entropy_coef < 0.0 {
            return Err(Error::Config("maze coefficients must be non-negative".into()));
        }
        if self.hidden == 0 {
            return Err(Error::Config("maze.hidden must be positive".into()));
        }
        if self.clip_norm.is_some_and(|c| c <= 0.0) {
            return Err(Error::Config("maze.clip_norm must be positive".into()));
        }
        Ok(())
    }
}

/// `R_t = r_t + gamma * R_{t+1}`, with `R_T = 0` past the last step.
pub fn discounted_returns(rewards: &[f64], gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for t in (0..rewards.len()).rev() {
        acc = rewards[t] + gamma * acc;
        out[t] = acc;
    }
    out
}

#[derive(Debug)]
pub struct A2CLoss {
    pub loss: NodeRef,
    pub returns: Vec<f64>,
    pub advantages: Vec<f64>,
}

/// `-sum A_t log pi(a_t) + value_coef * sum (R_t - V_t)^2 - entropy_coef * sum H_t`
/// with `A_t = R_t - V_t` held constant.
pub fn a2c_loss(tape: &mut Tape, traj: &Trajectory, cfg: &A2CConfig) -> Result<A2CLoss> {
    let returns = discounted_returns(&traj.rewards, cfg.gamma);
    let advantages: Vec<f64> = returns
        .iter()
        .zip(&traj.values)
        .map(|(r, v)| r - tape.value(*v).item())
        .collect();
    a2c_loss_with_advantages(tape, traj, cfg, &advantages)
}

/// The same objective with caller-supplied advantages.
pub fn a2c_loss_with_advantages(
    tape: &mut Tape,
    traj: &Trajectory,
    cfg: &A2CConfig,
    advantages: &[f64],
) -> Result<A2CLoss> {
    let n = traj.len();
    if n == 0 {
        return Err(Error::contract("a2c_update", "empty trajectory"));
    }
    if traj.log_probs.len() != n || traj.values.len() != n || traj.entropies.len() != n || advantages.len() != n {
        return Err(Error::contract(
            "a2c_update",
            "trajectory records have different lengths",
        ));
    }
    let returns = discounted_returns(&traj.rewards, cfg.gamma);
    let mut total: Option<NodeRef> = None;
    for t in 0..n {
        let pg = tape.mul_const(traj.log_probs[t], -advantages[t])?;
        let verr = tape.sum_sq_err(traj.values[t], &Matrix::scalar(returns[t]))?;
        let verr = tape.mul_const(verr, cfg.value_coef)?;
        let ent = tape.mul_const(traj.entropies[t], -cfg.entropy_coef)?;
        let step = tape.add(pg, verr)?;
        let step = tape.add(step, ent)?;
        total = Some(match total {
            None => step,
            Some(acc) => tape.add(acc, step)?,
        });
    }
    Ok(A2CLoss {
        loss: total.expect("n > 0"),
        returns,
        advantages: advantages.to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn returns_follow_the_recursion() {
        let r = [0.0, -0.1, 0.0, 10.0, 0.0];
        let g = discounted_returns(&r, 0.9);
        for t in 0..r.len() {
            let next = if t + 1 < r.len() { g[t + 1] } else { 0.0 };
            assert_eq!(g[t], r[t] + 0.9 * next);
        }
        assert_eq!(discounted_returns(&r, 0.0), r.to_vec());
    }

    #[test]
    fn geometric_discounting_of_one_reward() {
        let mut r = vec![0.0; 8];
        r[6] = 10.0;
        let g = discounted_returns(&r, 0.9);
        for k in 0..=6 {
            assert!((g[6 - k] - 10.0 * 0.9f64.powi(k as i32)).abs() < 1e-12);
        }
        assert_eq!(g[7], 0.0);
    }

    #[test]
    fn zero_rewards_and_values_leave_only_entropy() {
        let mut tape = Tape::new();
        let logits = tape.leaf(Matrix::row(vec![0.3, -0.2, 0.1, 0.0]));
        let probs = tape.softmax_row(logits).unwrap();
        let mut traj = Trajectory::default();
        let mut h_sum = 0.0;
        for a in 0..3 {
            traj.log_probs.push(tape.log_prob(probs, a).unwrap());
            let e = tape.entropy(probs).unwrap();
            h_sum += tape.value(e).item();
            traj.entropies.push(e);
            traj.values.push(tape.constant(Matrix::scalar(0.0)));
            traj.rewards.push(0.0);
            traj.actions.push(a);
        }
        let cfg = A2CConfig::default();
        let l = a2c_loss(&mut tape, &traj, &cfg).unwrap();
        assert!((tape.value(l.loss).item() + cfg.entropy_coef * h_sum).abs() < 1e-12);
        assert!(l.advantages.iter().all(|&a| a == 0.0));
    }

    #[test]
    fn empty_trajectory_is_rejected() {
        let mut tape = Tape::new();
        assert!(a2c_loss(&mut tape, &Trajectory::default(), &A2CConfig::default()).is_err());
    }
}
