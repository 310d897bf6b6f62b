//! Non-plastic RNN and LSTM baselines.
//!
//! Both expose an input/output layer of `io` units that is clamped exactly
//! like the plastic network. For the RNN the I/O units are the first `io`
//! hidden units. For the LSTM the I/O layer is a `tanh` read-out of the hidden
//! state, fed back as the LSTM input on the next step.

use serde::{Deserialize, Serialize};

use super::{EpisodeModel, EpisodeOutput, EpisodeSpec, StepInput};
use crate::autodiff::{NodeRef, Tape};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::params::{Bindings, Parameterized};
use crate::rng::{self, Rng};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BaselineVariant {
    Rnn,
    Lstm,
}

/// `h' = tanh(h W)` over `hidden` units; the first `io` units are the
/// clamped/read-out layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RnnParams {
    pub io: usize,
    pub w: Matrix,
}

const GATES: [&str; 4] = ["i", "f", "g", "o"];

/// Four-gate LSTM (input, forget, cell candidate, output) with a `tanh`
/// read-out onto the I/O layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LstmParams {
    pub io: usize,
    pub hidden: usize,
    /// Input weights `io x hidden`, gate order i, f, g, o.
    pub w_x: [Matrix; 4],
    /// Recurrent weights `hidden x hidden`.
    pub w_h: [Matrix; 4],
    /// Gate biases `1 x hidden`.
    pub b: [Matrix; 4],
    pub w_out: Matrix,
    pub b_out: Matrix,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "kebab-case")]
pub enum BaselineParams {
    Rnn(RnnParams),
    Lstm(LstmParams),
}

impl BaselineParams {
    pub fn init(variant: BaselineVariant, io: usize, hidden: usize, rng: &mut Rng) -> Result<Self> {
        if hidden < io || io == 0 {
            return Err(Error::Config(format!(
                "baseline needs hidden_size >= io size (got {hidden} < {io})"
            )));
        }
        Ok(match variant {
            BaselineVariant::Rnn => BaselineParams::Rnn(RnnParams {
                io,
                w: rng::gaussian_matrix(rng, hidden, hidden, super::INIT_STD),
            }),
            BaselineVariant::Lstm => {
                let sx = 1.0 / (io as f64).sqrt();
                let sh = 1.0 / (hidden as f64).sqrt();
                let w_x = std::array::from_fn(|_| rng::gaussian_matrix(rng, io, hidden, sx));
                let w_h = std::array::from_fn(|_| rng::gaussian_matrix(rng, hidden, hidden, sh));
                let mut b: [Matrix; 4] = std::array::from_fn(|_| Matrix::zeros(1, hidden));
                b[1] = Matrix::filled(1, hidden, 1.0);
                BaselineParams::Lstm(LstmParams {
                    io,
                    hidden,
                    w_x,
                    w_h,
                    b,
                    w_out: rng::gaussian_matrix(rng, hidden, io, sh),
                    b_out: Matrix::zeros(1, io),
                })
            }
        })
    }

    pub fn variant(&self) -> BaselineVariant {
        match self {
            BaselineParams::Rnn(_) => BaselineVariant::Rnn,
            BaselineParams::Lstm(_) => BaselineVariant::Lstm,
        }
    }

    pub fn io(&self) -> usize {
        match self {
            BaselineParams::Rnn(p) => p.io,
            BaselineParams::Lstm(p) => p.io,
        }
    }

    pub fn hidden_size(&self) -> usize {
        match self {
            BaselineParams::Rnn(p) => p.w.rows(),
            BaselineParams::Lstm(p) => p.hidden,
        }
    }

    pub fn register(&self, tape: &mut Tape) -> BaselineLeaves {
        match self {
            BaselineParams::Rnn(p) => BaselineLeaves::Rnn {
                io: p.io,
                w: tape.leaf(p.w.clone()),
            },
            BaselineParams::Lstm(p) => BaselineLeaves::Lstm {
                io: p.io,
                w_x: std::array::from_fn(|k| tape.leaf(p.w_x[k].clone())),
                w_h: std::array::from_fn(|k| tape.leaf(p.w_h[k].clone())),
                b: std::array::from_fn(|k| tape.leaf(p.b[k].clone())),
                w_out: tape.leaf(p.w_out.clone()),
                b_out: tape.leaf(p.b_out.clone()),
            },
        }
    }

    /// Zero hidden state (and zero I/O layer) at the start of an episode.
    pub fn initial_state(&self, tape: &mut Tape) -> BaselineState {
        match self {
            BaselineParams::Rnn(p) => BaselineState::Rnn {
                h: tape.constant(Matrix::zeros(1, p.w.rows())),
            },
            BaselineParams::Lstm(p) => BaselineState::Lstm {
                y: tape.constant(Matrix::zeros(1, p.io)),
                h: tape.constant(Matrix::zeros(1, p.hidden)),
                c: tape.constant(Matrix::zeros(1, p.hidden)),
            },
        }
    }
}

const LSTM_NAMES: [[&str; 4]; 3] = [
    ["lstm.w_x_i", "lstm.w_x_f", "lstm.w_x_g", "lstm.w_x_o"],
    ["lstm.w_h_i", "lstm.w_h_f", "lstm.w_h_g", "lstm.w_h_o"],
    ["lstm.b_i", "lstm.b_f", "lstm.b_g", "lstm.b_o"],
];

impl Parameterized for BaselineParams {
    fn visit_params(&self, f: &mut dyn FnMut(&str, (usize, usize), &[f64])) {
        match self {
            BaselineParams::Rnn(p) => f("rnn.w", p.w.shape(), p.w.as_slice()),
            BaselineParams::Lstm(p) => {
                for (names, mats) in LSTM_NAMES.iter().zip([&p.w_x, &p.w_h, &p.b]) {
                    for (name, m) in names.iter().zip(mats.iter()) {
                        f(name, m.shape(), m.as_slice());
                    }
                }
                f("lstm.w_out", p.w_out.shape(), p.w_out.as_slice());
                f("lstm.b_out", p.b_out.shape(), p.b_out.as_slice());
            }
        }
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64])) {
        match self {
            BaselineParams::Rnn(p) => f("rnn.w", p.w.as_mut_slice()),
            BaselineParams::Lstm(p) => {
                for (names, mats) in LSTM_NAMES.iter().zip([&mut p.w_x, &mut p.w_h, &mut p.b]) {
                    for (name, m) in names.iter().zip(mats.iter_mut()) {
                        f(name, m.as_mut_slice());
                    }
                }
                f("lstm.w_out", p.w_out.as_mut_slice());
                f("lstm.b_out", p.b_out.as_mut_slice());
            }
        }
    }
}

/// Tape handles of a baseline's parameters.
#[derive(Clone, Copy, Debug)]
pub enum BaselineLeaves {
    Rnn {
        io: usize,
        w: NodeRef,
    },
    Lstm {
        io: usize,
        w_x: [NodeRef; 4],
        w_h: [NodeRef; 4],
        b: [NodeRef; 4],
        w_out: NodeRef,
        b_out: NodeRef,
    },
}

impl BaselineLeaves {
    pub fn bindings(&self) -> Bindings {
        match self {
            BaselineLeaves::Rnn { w, .. } => vec![("rnn.w", *w)],
            BaselineLeaves::Lstm {
                w_x,
                w_h,
                b,
                w_out,
                b_out,
                ..
            } => {
                let mut out = Vec::new();
                for (names, nodes) in LSTM_NAMES.iter().zip([w_x, w_h, b]) {
                    out.extend(names.iter().copied().zip(nodes.iter().copied()));
                }
                out.push(("lstm.w_out", *w_out));
                out.push(("lstm.b_out", *b_out));
                out
            }
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub enum BaselineState {
    Rnn { h: NodeRef },
    Lstm { y: NodeRef, h: NodeRef, c: NodeRef },
}

impl BaselineState {
    /// The I/O layer of this state.
    pub fn output(&self, tape: &mut Tape, io: usize) -> Result<NodeRef> {
        match *self {
            BaselineState::Rnn { h } if h.cols() == io => Ok(h),
            BaselineState::Rnn { h } => tape.slice_cols(h, 0, io),
            BaselineState::Lstm { y, .. } => Ok(y),
        }
    }
}

/// One step of a baseline network.
pub fn baseline_step(
    tape: &mut Tape,
    leaves: &BaselineLeaves,
    state: BaselineState,
    input: &StepInput,
) -> Result<BaselineState> {
    match (leaves, state) {
        (BaselineLeaves::Rnn { io, w }, BaselineState::Rnn { h }) => {
            input.validate(*io)?;
            let drive = tape.matmul(h, *w)?;
            let a = tape.tanh(drive)?;
            let h = if input.any_clamped() {
                tape.clamp(a, &input.clamp_mask, &input.clamp_values)?
            } else {
                a
            };
            Ok(BaselineState::Rnn { h })
        }
        (
            BaselineLeaves::Lstm {
                io,
                w_x,
                w_h,
                b,
                w_out,
                b_out,
            },
            BaselineState::Lstm { y, h, c },
        ) => {
            input.validate(*io)?;
            let mut gates = [y; 4];
            for k in 0..4 {
                let zx = tape.matmul(y, w_x[k])?;
                let zh = tape.matmul(h, w_h[k])?;
                let z = tape.add(zx, zh)?;
                let z = tape.add(z, b[k])?;
                gates[k] = if GATES[k] == "g" {
                    tape.tanh(z)?
                } else {
                    tape.sigmoid(z)?
                };
            }
            let [i, f, g, o] = gates;
            let keep = tape.hadamard(f, c)?;
            let write = tape.hadamard(i, g)?;
            let c = tape.add(keep, write)?;
            let tc = tape.tanh(c)?;
            let h = tape.hadamard(o, tc)?;
            let out = tape.matmul(h, *w_out)?;
            let out = tape.add(out, *b_out)?;
            let out = tape.tanh(out)?;
            let y = if input.any_clamped() {
                tape.clamp(out, &input.clamp_mask, &input.clamp_values)?
            } else {
                out
            };
            Ok(BaselineState::Lstm { y, h, c })
        }
        _ => Err(Error::contract("baseline_step", "state does not match network variant")),
    }
}

impl EpisodeModel for BaselineParams {
    fn io_size(&self) -> usize {
        self.io()
    }

    fn run_episode(&self, tape: &mut Tape, episode: &EpisodeSpec) -> Result<EpisodeOutput> {
        let io = self.io();
        episode.validate(io)?;
        let leaves = self.register(tape);
        let mut state = self.initial_state(tape);
        let mut steps = Vec::with_capacity(episode.steps.len());
        for input in &episode.steps {
            state = baseline_step(tape, &leaves, state, input)?;
            steps.push(state.output(tape, io)?);
        }
        let y = *steps.last().expect("validated non-empty");
        let loss = tape.sum_sq_err(y, &Matrix::row(episode.target.clone()))?;
        Ok(EpisodeOutput {
            loss,
            final_output: tape.value(y).clone(),
            steps,
            bindings: leaves.bindings(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::init_rng;

    #[test]
    fn zero_weight_rnn_outputs_zeros() {
        let p = BaselineParams::Rnn(RnnParams {
            io: 3,
            w: Matrix::zeros(5, 5),
        });
        let mut t = Tape::new();
        let l = p.register(&mut t);
        let s0 = p.initial_state(&mut t);
        let h = t.constant(Matrix::row(vec![0.3, -0.2, 0.5, 0.1, 0.9]));
        let s = baseline_step(&mut t, &l, BaselineState::Rnn { h }, &StepInput::free(3)).unwrap();
        let out = s.output(&mut t, 3).unwrap();
        assert_eq!(t.value(out), &Matrix::zeros(1, 3));
        let s = baseline_step(&mut t, &l, s0, &StepInput::free(3)).unwrap();
        let BaselineState::Rnn { h } = s else { panic!() };
        assert_eq!(t.value(h).shape(), (1, 5));
    }

    #[test]
    fn lstm_gates_are_one_half_at_zero_weights() {
        let p = LstmParams {
            io: 2,
            hidden: 3,
            w_x: std::array::from_fn(|_| Matrix::zeros(2, 3)),
            w_h: std::array::from_fn(|_| Matrix::zeros(3, 3)),
            b: std::array::from_fn(|_| Matrix::zeros(1, 3)),
            w_out: Matrix::zeros(3, 2),
            b_out: Matrix::zeros(1, 2),
        };
        let p = BaselineParams::Lstm(p);
        let mut t = Tape::new();
        let l = p.register(&mut t);
        let y = t.constant(Matrix::row(vec![0.4, -0.7]));
        let h = t.constant(Matrix::row(vec![0.1, 0.2, 0.3]));
        let c0 = Matrix::row(vec![0.8, -0.6, 0.2]);
        let c = t.constant(c0.clone());
        let s = baseline_step(&mut t, &l, BaselineState::Lstm { y, h, c }, &StepInput::free(2)).unwrap();
        let BaselineState::Lstm { y, h, c } = s else { panic!() };
        // i = f = o = 0.5, g = 0: c' = 0.5 c, h' = 0.5 tanh(0.5 c)
        for k in 0..3 {
            let cv = t.value(c).as_slice()[k];
            assert_eq!(cv, 0.5 * c0.as_slice()[k]);
            assert_eq!(t.value(h).as_slice()[k], 0.5 * cv.tanh());
        }
        assert_eq!(t.value(y), &Matrix::zeros(1, 2));
    }

    #[test]
    fn clamped_entries_pass_through() {
        let mut rng = init_rng(2);
        for variant in [BaselineVariant::Rnn, BaselineVariant::Lstm] {
            let p = BaselineParams::init(variant, 3, 6, &mut rng).unwrap();
            let mut t = Tape::new();
            let l = p.register(&mut t);
            let s0 = p.initial_state(&mut t);
            let input = StepInput::from_stimulus(&[1.0, 0.0, -1.0]);
            let s = baseline_step(&mut t, &l, s0, &input).unwrap();
            let out = s.output(&mut t, 3).unwrap();
            let v = t.value(out).as_slice().to_vec();
            assert_eq!((v[0], v[2]), (1.0, -1.0));
        }
    }

    #[test]
    fn rejects_hidden_smaller_than_io() {
        assert!(BaselineParams::init(BaselineVariant::Rnn, 5, 4, &mut init_rng(0)).is_err());
    }

    #[test]
    fn lstm_forget_bias_starts_at_one() {
        let BaselineParams::Lstm(p) = BaselineParams::init(BaselineVariant::Lstm, 2, 4, &mut init_rng(0)).unwrap()
        else {
            panic!()
        };
        assert_eq!(p.b[1], Matrix::filled(1, 4, 1.0));
        assert_eq!(p.b[0], Matrix::zeros(1, 4));
    }
}
