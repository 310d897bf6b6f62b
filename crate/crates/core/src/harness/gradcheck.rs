//! Analytic gradients against central finite differences on small random
//! instances of every model.

use rand::Rng as _;

use crate::autodiff::Tape;
use crate::error::Result;
use crate::matrix::Matrix;
use crate::maze::{
    a2c_loss, a2c_loss_with_advantages, run_rl_episode, A2CConfig, ActionSource, MazeCondition, MazeEnv, PolicyNet,
    Trajectory, EPISODE_LEN, N_ACTIONS,
};
use crate::params::{GradMap, Parameterized};
use crate::plastic::{
    AlphaMode, BaselineParams, BaselineVariant, EpisodeModel, EpisodeSpec, PlasticNet, PlasticParams, PlasticityRule,
    StepInput,
};
use crate::rng::{self, episode_rng, Rng};

/// Largest network and episode a gradient check will build.
pub const MAX_N: usize = 10;
pub const MAX_T: usize = 6;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradcheckConfig {
    pub n_cases: usize,
    /// Relative tolerance.
    pub tol: f64,
    /// Differences below this absolute size always pass.
    pub abs_tol: f64,
    /// Finite-difference step.
    pub h: f64,
    pub seed: u64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        GradcheckConfig {
            n_cases: 200,
            tol: 1e-4,
            abs_tol: 1e-7,
            h: 1e-3,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CaseReport {
    pub name: String,
    pub components: usize,
    pub max_abs_err: f64,
    /// Largest relative error among components whose magnitude exceeds the
    /// absolute tolerance.
    pub max_rel_err: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckReport {
    pub cases: Vec<CaseReport>,
    pub max_rel_err: f64,
    pub passed: bool,
}

impl GradcheckReport {
    pub fn failures(&self) -> impl Iterator<Item = &CaseReport> {
        self.cases.iter().filter(|c| !c.passed)
    }
}

fn nudge<M: Parameterized>(model: &mut M, target: &str, index: usize, delta: f64) {
    model.visit_params_mut(&mut |name, v| {
        if name == target {
            v[index] += delta;
        }
    });
}

/// Compares the gradient returned by `f` with central differences of the
/// loss it returns, component by component.
pub fn check_model<M, F>(name: &str, model: &M, cfg: &GradcheckConfig, f: F) -> Result<CaseReport>
where
    M: Parameterized + Clone,
    F: Fn(&M) -> Result<(f64, GradMap)>,
{
    let (_, grads) = f(model)?;
    let mut shapes = Vec::new();
    model.visit_params(&mut |n, (r, c), _| shapes.push((n.to_string(), r * c)));
    let (mut max_abs, mut max_rel, mut passed, mut components) = (0.0f64, 0.0f64, true, 0);
    for (pname, len) in shapes {
        let analytic = grads.get(&pname).cloned().unwrap_or_else(|| Matrix::zeros(1, len));
        for k in 0..len {
            let at = |d: f64| -> Result<f64> {
                let mut m = model.clone();
                nudge(&mut m, &pname, k, d * cfg.h);
                Ok(f(&m)?.0)
            };
            // five-point stencil, error O(h^4)
            let numeric = (8.0 * (at(1.0)? - at(-1.0)?) - (at(2.0)? - at(-2.0)?)) / (12.0 * cfg.h);
            let a = analytic.as_slice()[k];
            let err = (a - numeric).abs();
            max_abs = max_abs.max(err);
            components += 1;
            let scale = a.abs().max(numeric.abs());
            let rel = if scale > cfg.abs_tol { err / scale } else { 0.0 };
            if rel.is_nan() || rel > max_rel {
                max_rel = rel;
            }
            if !(err <= cfg.abs_tol || rel <= cfg.tol) {
                passed = false;
            }
        }
    }
    Ok(CaseReport {
        name: name.to_string(),
        components,
        max_abs_err: max_abs,
        max_rel_err: max_rel,
        passed,
    })
}

fn episode_loss<M: EpisodeModel>(model: &M, ep: &EpisodeSpec) -> Result<(f64, GradMap)> {
    let mut tape = Tape::new();
    let out = model.run_episode(&mut tape, ep)?;
    let mut g = tape.backward(out.loss)?;
    Ok((tape.value(out.loss).item(), GradMap::from_tape(&mut g, &out.bindings)))
}

/// Random episode over `n` neurons and `t` steps. The first step is always
/// clamped so activity is nonzero; later steps are clamped on a coin flip,
/// each neuron with probability one half.
fn random_episode(n: usize, t: usize, rng: &mut Rng) -> EpisodeSpec {
    let steps = (0..t)
        .map(|s| {
            if s > 0 && rng.random_bool(0.5) {
                return StepInput::free(n);
            }
            let mut input = StepInput::free(n);
            for k in 0..n {
                if rng.random_bool(0.5) {
                    input.clamp_mask[k] = true;
                    input.clamp_values[k] = rng.random_range(-1.0..1.0);
                }
            }
            if !input.any_clamped() {
                input.clamp_mask[0] = true;
                input.clamp_values[0] = 0.7;
            }
            input
        })
        .collect();
    EpisodeSpec {
        steps,
        target: (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
    }
}

fn plastic_case(mode: AlphaMode, rule: PlasticityRule, frozen: bool, rng: &mut Rng) -> PlasticNet {
    let n = rng.random_range(2..=8);
    let mut p = PlasticParams::init(n, mode, rng);
    p.w = rng::gaussian_matrix(rng, n, n, 0.6);
    if mode != AlphaMode::Zero {
        p.alpha = if frozen {
            Matrix::zeros(p.alpha.rows(), p.alpha.cols())
        } else {
            rng::gaussian_matrix(rng, p.alpha.rows(), p.alpha.cols(), 0.6)
        };
    }
    p.eta = rng.random_range(0.05..0.5);
    PlasticNet::new(p, rule)
}

#[derive(Clone, Debug)]
struct Bandit {
    theta: Vec<f64>,
    v: f64,
}

impl Parameterized for Bandit {
    fn visit_params(&self, f: &mut dyn FnMut(&str, (usize, usize), &[f64])) {
        f("theta", (1, N_ACTIONS), &self.theta);
        f("v", (1, 1), std::slice::from_ref(&self.v));
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64])) {
        f("theta", &mut self.theta);
        f("v", std::slice::from_mut(&mut self.v));
    }
}

/// Single state, four actions, fixed rewards: one A2C step.
fn bandit_loss(
    b: &Bandit,
    action: usize,
    reward: f64,
    cfg: &A2CConfig,
    adv: Option<&[f64]>,
) -> Result<(f64, GradMap, Vec<f64>)> {
    let mut tape = Tape::new();
    let theta = tape.leaf(Matrix::row(b.theta.clone()));
    let v = tape.leaf(Matrix::scalar(b.v));
    let probs = tape.softmax_row(theta)?;
    let traj = Trajectory {
        log_probs: vec![tape.log_prob(probs, action)?],
        values: vec![v],
        entropies: vec![tape.entropy(probs)?],
        probs: vec![tape.value(probs).as_slice().to_vec()],
        actions: vec![action],
        rewards: vec![reward],
        bindings: vec![("theta", theta), ("v", v)],
        ..Trajectory::default()
    };
    let loss = match adv {
        Some(a) => a2c_loss_with_advantages(&mut tape, &traj, cfg, a)?,
        None => a2c_loss(&mut tape, &traj, cfg)?,
    };
    let mut g = tape.backward(loss.loss)?;
    Ok((
        tape.value(loss.loss).item(),
        GradMap::from_tape(&mut g, &traj.bindings),
        loss.advantages,
    ))
}

fn maze_loss(
    p: &PolicyNet,
    seed: u64,
    steps: usize,
    actions: &[usize],
    cfg: &A2CConfig,
    adv: Option<&[f64]>,
) -> Result<(f64, GradMap, Vec<f64>)> {
    let mut rng = episode_rng(seed, 0);
    let mut env = MazeEnv::reset(&mut rng);
    env.step_count = EPISODE_LEN - steps;
    let mut tape = Tape::new();
    let traj = run_rl_episode(
        &mut tape,
        p,
        &mut env,
        &mut rng,
        &ActionSource::Replay(actions.to_vec()),
    )?;
    let loss = match adv {
        Some(a) => a2c_loss_with_advantages(&mut tape, &traj, cfg, a)?,
        None => a2c_loss(&mut tape, &traj, cfg)?,
    };
    let mut g = tape.backward(loss.loss)?;
    Ok((
        tape.value(loss.loss).item(),
        GradMap::from_tape(&mut g, &traj.bindings),
        loss.advantages,
    ))
}

const KINDS: usize = 12;

fn run_case(i: usize, cfg: &GradcheckConfig) -> Result<CaseReport> {
    let mut rng = episode_rng(cfg.seed, i as u64);
    let rules = [PlasticityRule::DecayHebb, PlasticityRule::Oja];
    let rule = rules[(i / KINDS) % 2];
    let rule_name = match rule {
        PlasticityRule::DecayHebb => "decay",
        PlasticityRule::Oja => "oja",
    };
    match i % KINDS {
        k @ 0..=4 => {
            let (mode, frozen, label) = match k {
                0 | 1 => (AlphaMode::PerConnection, false, "per-connection"),
                2 => (AlphaMode::SharedScalar, false, "shared"),
                3 => (AlphaMode::Zero, false, "zero"),
                _ => (AlphaMode::PerConnection, true, "alpha-frozen-at-zero"),
            };
            let net = plastic_case(mode, rule, frozen, &mut rng);
            let t = rng.random_range(1..=MAX_T - 1);
            let ep = random_episode(net.params.n(), t, &mut rng);
            let name = format!("plastic/{label}/{rule_name} n={} t={t}", net.params.n());
            check_model(&name, &net, cfg, |m| episode_loss(m, &ep))
        }
        k @ 5..=8 => {
            let variant = if k < 7 {
                BaselineVariant::Rnn
            } else {
                BaselineVariant::Lstm
            };
            let io = rng.random_range(2..=6);
            let hidden = rng.random_range(io..=MAX_N);
            let mut b = BaselineParams::init(variant, io, hidden, &mut rng)?;
            b.visit_params_mut(&mut |_, v| {
                for x in v.iter_mut() {
                    *x += 0.3 * rng::gaussian(&mut rng);
                }
            });
            let t = rng.random_range(1..=MAX_T - 1);
            let ep = random_episode(io, t, &mut rng);
            let name = format!("{variant:?}/io={io} hidden={hidden} t={t}").to_lowercase();
            check_model(&name, &b, cfg, |m| episode_loss(m, &ep))
        }
        k @ 9..=10 => {
            let cond = [
                MazeCondition::PerConnection,
                MazeCondition::Homogeneous,
                MazeCondition::NonPlastic,
            ][(i / KINDS + k - 9) % 3];
            let hidden = rng.random_range(2..=6);
            let mut p = PolicyNet::init(hidden, cond, &mut rng);
            p.rule = rule;
            p.visit_params_mut(&mut |name, v| {
                for x in v.iter_mut() {
                    if name == "eta" {
                        *x = 0.1 + 0.2 * rng.random::<f64>();
                    } else {
                        *x = 0.5 * rng::gaussian(&mut rng);
                    }
                }
            });
            let steps = rng.random_range(1..=MAX_T);
            let actions: Vec<usize> = (0..steps).map(|_| rng.random_range(0..N_ACTIONS)).collect();
            let env_seed = rng.random();
            let a2c = A2CConfig {
                gamma: rng.random_range(0.0..1.0),
                ..A2CConfig::default()
            };
            let (_, _, adv) = maze_loss(&p, env_seed, steps, &actions, &a2c, None)?;
            let name = format!("maze/{cond:?}/{rule_name} h={hidden} t={steps}").to_lowercase();
            check_model(&name, &p, cfg, |m| {
                maze_loss(m, env_seed, steps, &actions, &a2c, Some(&adv)).map(|(l, g, _)| (l, g))
            })
        }
        _ => {
            let b = Bandit {
                theta: (0..N_ACTIONS).map(|_| rng::gaussian(&mut rng)).collect(),
                v: rng::gaussian(&mut rng),
            };
            let rewards: Vec<f64> = (0..N_ACTIONS).map(|_| rng.random_range(-1.0..10.0)).collect();
            let action = rng.random_range(0..N_ACTIONS);
            let a2c = A2CConfig::default();
            let (_, _, adv) = bandit_loss(&b, action, rewards[action], &a2c, None)?;
            check_model(&format!("bandit/action={action}"), &b, cfg, |m| {
                bandit_loss(m, action, rewards[action], &a2c, Some(&adv)).map(|(l, g, _)| (l, g))
            })
        }
    }
}

/// Runs `cfg.n_cases` random cases cycling through: plastic networks
/// (per-connection, shared, zero and frozen-at-zero alpha), RNN and LSTM
/// baselines, maze policies under all three conditions, and a one-step
/// bandit A2C reduction; both rules alternate across cycles.
pub fn gradcheck(cfg: &GradcheckConfig) -> Result<GradcheckReport> {
    let mut cases = Vec::with_capacity(cfg.n_cases);
    for i in 0..cfg.n_cases {
        cases.push(run_case(i, cfg)?);
    }
    let max_rel_err = cases.iter().map(|c| c.max_rel_err).fold(0.0, f64::max);
    let passed = cases.iter().all(|c| c.passed);
    Ok(GradcheckReport {
        cases,
        max_rel_err,
        passed,
    })
}
