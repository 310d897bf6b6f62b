use super::ops::{effective_row, log_softmax, softmax};
use super::{NodeRef, Op, Tape};
use crate::matrix::{self, Matrix};

/// Leaf gradients produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// Accumulated gradient for `node`, or zeros when no path reaches it.
    pub fn wrt(&self, node: NodeRef) -> Matrix {
        match self.grads.get(node.id()).and_then(Option::as_ref) {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes[node.id()];
                Matrix::zeros(r, c)
            }
        }
    }

    /// Moves the gradient for `node` out, zeros when absent.
    pub fn take(&mut self, node: NodeRef) -> Matrix {
        let (r, c) = self.shapes[node.id()];
        self.grads[node.id()].take().unwrap_or_else(|| Matrix::zeros(r, c))
    }
}

pub(super) fn run(tape: &Tape, loss: usize) -> Gradients {
    let nodes = tape.nodes();
    let mut grads: Vec<Option<Matrix>> = (0..nodes.len()).map(|_| None).collect();
    grads[loss] = Some(Matrix::scalar(1.0));
    for id in (0..=loss).rev() {
        let node = &nodes[id];
        if matches!(node.op, Op::Leaf | Op::Constant) || !node.requires_grad {
            continue;
        }
        let Some(g) = grads[id].take() else { continue };
        propagate(tape, id, &g, &mut grads);
    }
    // keep only leaf gradients
    for (id, slot) in grads.iter_mut().enumerate() {
        if !matches!(nodes[id].op, Op::Leaf) {
            *slot = None;
        }
    }
    Gradients {
        grads,
        shapes: nodes.iter().map(|n| n.value.shape()).collect(),
    }
}

/// Gradient buffers for the inputs of one record. Inputs that do not require
/// a gradient get `None`; an input appearing twice gets a scratch buffer for
/// its second slot, merged back afterwards.
struct Slots {
    ids: Vec<usize>,
    bufs: Vec<Option<Matrix>>,
    scratch: Vec<bool>,
}

impl Slots {
    fn open(tape: &Tape, inputs: &[usize], grads: &mut [Option<Matrix>]) -> Slots {
        let nodes = tape.nodes();
        let mut bufs = Vec::with_capacity(inputs.len());
        let mut scratch = Vec::with_capacity(inputs.len());
        for (k, &i) in inputs.iter().enumerate() {
            let (r, c) = nodes[i].value.shape();
            if !nodes[i].requires_grad {
                bufs.push(None);
                scratch.push(false);
            } else if inputs[..k].contains(&i) {
                bufs.push(Some(Matrix::zeros(r, c)));
                scratch.push(true);
            } else {
                bufs.push(Some(grads[i].take().unwrap_or_else(|| Matrix::zeros(r, c))));
                scratch.push(false);
            }
        }
        Slots {
            ids: inputs.to_vec(),
            bufs,
            scratch,
        }
    }

    fn close(self, grads: &mut [Option<Matrix>]) {
        let mut extra = Vec::new();
        for ((id, buf), scratch) in self.ids.into_iter().zip(self.bufs).zip(self.scratch) {
            match (buf, scratch) {
                (Some(b), false) => grads[id] = Some(b),
                (Some(b), true) => extra.push((id, b)),
                _ => {}
            }
        }
        for (id, b) in extra {
            grads[id].as_mut().expect("primary slot").add_assign(&b);
        }
    }
}

fn propagate(tape: &Tape, id: usize, g: &Matrix, grads: &mut [Option<Matrix>]) {
    let nodes = tape.nodes();
    let node = &nodes[id];
    let val = |i: usize| &nodes[i].value;
    let inputs = node.op.inputs();
    let mut slots = Slots::open(tape, &inputs, grads);
    let b = &mut slots.bufs;

    match &node.op {
        Op::Leaf | Op::Constant => unreachable!(),
        Op::MatMul(a, bb) => {
            if let Some(da) = b[0].as_mut() {
                matrix::matmul_bt_acc(g, val(*bb), da);
            }
            if let Some(db) = b[1].as_mut() {
                matrix::matmul_at_acc(val(*a), g, db);
            }
        }
        Op::Hadamard(a, bb) => {
            if let Some(da) = b[0].as_mut() {
                da.add_assign(&g.zip_map(val(*bb), |x, y| x * y));
            }
            if let Some(db) = b[1].as_mut() {
                db.add_assign(&g.zip_map(val(*a), |x, y| x * y));
            }
        }
        Op::Add(..) => {
            for d in b.iter_mut().flatten() {
                d.add_assign(g);
            }
        }
        Op::Sub(..) => {
            if let Some(da) = b[0].as_mut() {
                da.add_assign(g);
            }
            if let Some(db) = b[1].as_mut() {
                db.add_scaled(g, -1.0);
            }
        }
        Op::Scale { a, s } => {
            if let Some(da) = b[0].as_mut() {
                da.add_scaled(g, val(*s).item());
            }
            if let Some(ds) = b[1].as_mut() {
                ds.as_mut_slice()[0] += g.frobenius_dot(val(*a));
            }
        }
        Op::MulConst { c, .. } => {
            if let Some(da) = b[0].as_mut() {
                da.add_scaled(g, *c);
            }
        }
        Op::AddConst { .. } => {
            if let Some(da) = b[0].as_mut() {
                da.add_assign(g);
            }
        }
        Op::Tanh(_) => {
            if let Some(da) = b[0].as_mut() {
                da.add_assign(&g.zip_map(&node.value, |u, y| u * (1.0 - y * y)));
            }
        }
        Op::Sigmoid(_) => {
            if let Some(da) = b[0].as_mut() {
                da.add_assign(&g.zip_map(&node.value, |u, y| u * y * (1.0 - y)));
            }
        }
        Op::Outer(x, y) => {
            let (xv, yv) = (val(*x).as_slice(), val(*y).as_slice());
            let k = yv.len();
            if let Some(dx) = b[0].as_mut() {
                for (i, d) in dx.as_mut_slice().iter_mut().enumerate() {
                    *d += matrix::dot(&g.as_slice()[i * k..(i + 1) * k], yv);
                }
            }
            if let Some(dy) = b[1].as_mut() {
                for (i, &xi) in xv.iter().enumerate() {
                    matrix::axpy(dy.as_mut_slice(), xi, &g.as_slice()[i * k..(i + 1) * k]);
                }
            }
        }
        Op::Sum(_) => {
            if let Some(da) = b[0].as_mut() {
                let u = g.item();
                for d in da.as_mut_slice() {
                    *d += u;
                }
            }
        }
        Op::SumSqErr { pred, target } => {
            if let Some(dp) = b[0].as_mut() {
                let u = g.item();
                for ((d, p), t) in dp
                    .as_mut_slice()
                    .iter_mut()
                    .zip(val(*pred).as_slice())
                    .zip(target.as_slice())
                {
                    *d += 2.0 * (p - t) * u;
                }
            }
        }
        Op::SoftmaxRow(_) => {
            if let Some(da) = b[0].as_mut() {
                let p = node.value.as_slice();
                let gp = matrix::dot(g.as_slice(), p);
                for ((d, &gk), &pk) in da.as_mut_slice().iter_mut().zip(g.as_slice()).zip(p) {
                    *d += pk * (gk - gp);
                }
            }
        }
        Op::LogProb { probs, index } => {
            if let Some(dp) = b[0].as_mut() {
                let p = val(*probs).as_slice();
                dp.as_mut_slice()[*index] += g.item() / p[*index];
            }
        }
        Op::LogSoftmaxAt { logits, index } => {
            if let Some(dl) = b[0].as_mut() {
                let u = g.item();
                let p = softmax(val(*logits).as_slice());
                for (k, (d, pk)) in dl.as_mut_slice().iter_mut().zip(p).enumerate() {
                    let onehot = if k == *index { 1.0 } else { 0.0 };
                    *d += u * (onehot - pk);
                }
            }
        }
        Op::SoftmaxEntropy(logits) => {
            if let Some(dl) = b[0].as_mut() {
                let u = g.item();
                let h = node.value.item();
                let lv = val(*logits).as_slice();
                let p = softmax(lv);
                for ((d, pk), lp) in dl.as_mut_slice().iter_mut().zip(p).zip(log_softmax(lv)) {
                    *d -= u * pk * (lp + h);
                }
            }
        }
        Op::Entropy(probs) => {
            if let Some(dp) = b[0].as_mut() {
                let u = g.item();
                for (d, &p) in dp.as_mut_slice().iter_mut().zip(val(*probs).as_slice()) {
                    *d += u * -(p.ln() + 1.0);
                }
            }
        }
        Op::Clamp { mask, .. } => {
            if let Some(da) = b[0].as_mut() {
                for ((d, &u), &m) in da.as_mut_slice().iter_mut().zip(g.as_slice()).zip(mask) {
                    if !m {
                        *d += u;
                    }
                }
            }
        }
        Op::SliceCols { start, .. } => {
            if let Some(da) = b[0].as_mut() {
                let dst = &mut da.as_mut_slice()[*start..*start + g.cols()];
                for (d, u) in dst.iter_mut().zip(g.as_slice()) {
                    *d += u;
                }
            }
        }
        Op::PlasticMatMul {
            y,
            w,
            alpha,
            hebb,
            shared,
        } => plastic_matmul_backward(g, val(*y), val(*w), val(*alpha), val(*hebb), *shared, b),
        Op::HebbDecay { hebb, eta, pre, post } => {
            hebb_decay_backward(g, val(*hebb), val(*eta).item(), val(*pre), val(*post), b)
        }
        Op::HebbOja { hebb, eta, pre, post } => {
            hebb_oja_backward(g, val(*hebb), val(*eta).item(), val(*pre), val(*post), b)
        }
    }

    slots.close(grads);
}

fn plastic_matmul_backward(
    g: &Matrix,
    y: &Matrix,
    w: &Matrix,
    alpha: &Matrix,
    hebb: &Matrix,
    shared: bool,
    b: &mut [Option<Matrix>],
) {
    let (rows, k) = w.shape();
    let batch = y.rows();
    let mut eff = vec![0.0; k];
    let mut dw_row = vec![0.0; k];
    let mut dalpha_shared = 0.0;
    let need_params = b[1].is_some() || b[2].is_some() || b[3].is_some();
    for r in 0..rows {
        if b[0].is_some() {
            effective_row(w, alpha, hebb, shared, r, &mut eff);
            let dy = b[0].as_mut().unwrap();
            for bi in 0..batch {
                let gb = &g.as_slice()[bi * k..(bi + 1) * k];
                dy.as_mut_slice()[bi * rows + r] += matrix::dot(gb, &eff);
            }
        }
        if !need_params {
            continue;
        }
        dw_row.iter_mut().for_each(|v| *v = 0.0);
        for bi in 0..batch {
            let yb = y.get(bi, r);
            if yb != 0.0 {
                matrix::axpy(&mut dw_row, yb, &g.as_slice()[bi * k..(bi + 1) * k]);
            }
        }
        let span = r * k..(r + 1) * k;
        if let Some(dw) = b[1].as_mut() {
            for (d, v) in dw.as_mut_slice()[span.clone()].iter_mut().zip(&dw_row) {
                *d += v;
            }
        }
        let h_row = hebb.row_slice(r);
        if let Some(da) = b[2].as_mut() {
            if shared {
                dalpha_shared += matrix::dot(&dw_row, h_row);
            } else {
                let dst = &mut da.as_mut_slice()[span.clone()];
                for ((d, v), h) in dst.iter_mut().zip(&dw_row).zip(h_row) {
                    *d += v * h;
                }
            }
        }
        if let Some(dh) = b[3].as_mut() {
            let dst = &mut dh.as_mut_slice()[span];
            if shared {
                matrix::axpy(dst, alpha.item(), &dw_row);
            } else {
                for ((d, v), a) in dst.iter_mut().zip(&dw_row).zip(alpha.row_slice(r)) {
                    *d += v * a;
                }
            }
        }
    }
    if shared {
        if let Some(da) = b[2].as_mut() {
            da.as_mut_slice()[0] += dalpha_shared;
        }
    }
}

fn hebb_decay_backward(g: &Matrix, hebb: &Matrix, eta: f64, pre: &Matrix, post: &Matrix, b: &mut [Option<Matrix>]) {
    let k = hebb.cols();
    let (x, y) = (pre.as_slice(), post.as_slice());
    let mut deta = 0.0;
    for i in 0..hebb.rows() {
        let gr = &g.as_slice()[i * k..(i + 1) * k];
        let hr = hebb.row_slice(i);
        if let Some(dh) = b[0].as_mut() {
            matrix::axpy(&mut dh.as_mut_slice()[i * k..(i + 1) * k], 1.0 - eta, gr);
        }
        if b[1].is_some() {
            deta += gr
                .iter()
                .zip(hr)
                .zip(y)
                .map(|((gv, h), yj)| gv * (x[i] * yj - h))
                .sum::<f64>();
        }
        if let Some(dx) = b[2].as_mut() {
            dx.as_mut_slice()[i] += eta * matrix::dot(gr, y);
        }
        if let Some(dy) = b[3].as_mut() {
            matrix::axpy(dy.as_mut_slice(), eta * x[i], gr);
        }
    }
    if let Some(de) = b[1].as_mut() {
        de.as_mut_slice()[0] += deta;
    }
}

fn hebb_oja_backward(g: &Matrix, hebb: &Matrix, eta: f64, pre: &Matrix, post: &Matrix, b: &mut [Option<Matrix>]) {
    let k = hebb.cols();
    let (x, y) = (pre.as_slice(), post.as_slice());
    let mut deta = 0.0;
    for i in 0..hebb.rows() {
        let gr = &g.as_slice()[i * k..(i + 1) * k];
        let hr = hebb.row_slice(i);
        let xi = x[i];
        if let Some(dh) = b[0].as_mut() {
            let dst = &mut dh.as_mut_slice()[i * k..(i + 1) * k];
            for ((d, gv), yj) in dst.iter_mut().zip(gr).zip(y) {
                *d += gv * (1.0 - eta * yj * yj);
            }
        }
        if b[1].is_some() {
            deta += gr
                .iter()
                .zip(hr)
                .zip(y)
                .map(|((gv, h), yj)| gv * yj * (xi - yj * h))
                .sum::<f64>();
        }
        if let Some(dx) = b[2].as_mut() {
            dx.as_mut_slice()[i] += eta * matrix::dot(gr, y);
        }
        if let Some(dy) = b[3].as_mut() {
            let dst = dy.as_mut_slice();
            for (((d, gv), h), yj) in dst.iter_mut().zip(gr).zip(hr).zip(y) {
                *d += eta * gv * (xi - 2.0 * yj * h);
            }
        }
    }
    if let Some(de) = b[1].as_mut() {
        de.as_mut_slice()[0] += deta;
    }
}
