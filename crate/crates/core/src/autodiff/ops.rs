use super::{NodeRef, Op, Tape};
use crate::error::{Error, Result};
use crate::matrix::{self, Matrix};

fn same_shape(op: &'static str, a: NodeRef, b: NodeRef) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape {
            op,
            left: a.shape(),
            right: b.shape(),
        });
    }
    Ok(())
}

fn row_vector(op: &'static str, a: NodeRef) -> Result<()> {
    if a.rows() != 1 {
        return Err(Error::contract(
            op,
            format!("expected a 1xN row vector, got {:?}", a.shape()),
        ));
    }
    Ok(())
}

impl Tape {
    fn unary(&mut self, a: NodeRef, op: Op, value: Matrix) -> Result<NodeRef> {
        let rg = self.requires_grad(&[a.id]);
        Ok(self.push(op, value, rg))
    }

    pub fn matmul(&mut self, a: NodeRef, b: NodeRef) -> Result<NodeRef> {
        self.check(a)?;
        self.check(b)?;
        let value = self.value(a).matmul(self.value(b))?;
        let rg = self.requires_grad(&[a.id, b.id]);
        Ok(self.push(Op::MatMul(a.id, b.id), value, rg))
    }

    pub fn hadamard(&mut self, a: NodeRef, b: NodeRef) -> Result<NodeRef> {
        self.check(a)?;
        self.check(b)?;
        same_shape("hadamard", a, b)?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y);
        let rg = self.requires_grad(&[a.id, b.id]);
        Ok(self.push(Op::Hadamard(a.id, b.id), value, rg))
    }

    pub fn add(&mut self, a: NodeRef, b: NodeRef) -> Result<NodeRef> {
        self.check(a)?;
        self.check(b)?;
        same_shape("add", a, b)?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y);
        let rg = self.requires_grad(&[a.id, b.id]);
        Ok(self.push(Op::Add(a.id, b.id), value, rg))
    }

    pub fn sub(&mut self, a: NodeRef, b: NodeRef) -> Result<NodeRef> {
        self.check(a)?;
        self.check(b)?;
        same_shape("sub", a, b)?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x - y);
        let rg = self.requires_grad(&[a.id, b.id]);
        Ok(self.push(Op::Sub(a.id, b.id), value, rg))
    }

    /// `a * s` where `s` is a `1 x 1` node; differentiable in both.
    pub fn scale(&mut self, a: NodeRef, s: NodeRef) -> Result<NodeRef> {
        self.check(a)?;
        self.check(s)?;
        if s.shape() != (1, 1) {
            return Err(Error::Shape {
                op: "scale",
                left: a.shape(),
                right: s.shape(),
            });
        }
        let k = self.value(s).item();
        let value = self.value(a).map(|x| x * k);
        let rg = self.requires_grad(&[a.id, s.id]);
        Ok(self.push(Op::Scale { a: a.id, s: s.id }, value, rg))
    }

    pub fn mul_const(&mut self, a: NodeRef, c: f64) -> Result<NodeRef> {
        self.check(a)?;
        let value = self.value(a).map(|x| x * c);
        self.unary(a, Op::MulConst { a: a.id, c }, value)
    }

    pub fn add_const(&mut self, a: NodeRef, c: f64) -> Result<NodeRef> {
        self.check(a)?;
        let value = self.value(a).map(|x| x + c);
        self.unary(a, Op::AddConst { a: a.id }, value)
    }

    pub fn tanh(&mut self, a: NodeRef) -> Result<NodeRef> {
        self.check(a)?;
        let value = self.value(a).map(f64::tanh);
        self.unary(a, Op::Tanh(a.id), value)
    }

    pub fn sigmoid(&mut self, a: NodeRef) -> Result<NodeRef> {
        self.check(a)?;
        let value = self.value(a).map(|x| 1.0 / (1.0 + (-x).exp()));
        self.unary(a, Op::Sigmoid(a.id), value)
    }

    /// Outer product of two row vectors: `out[i][j] = x[i] * y[j]`.
    pub fn outer(&mut self, x: NodeRef, y: NodeRef) -> Result<NodeRef> {
        self.check(x)?;
        self.check(y)?;
        row_vector("outer", x)?;
        row_vector("outer", y)?;
        let (xv, yv) = (self.value(x), self.value(y));
        let mut value = Matrix::zeros(x.cols(), y.cols());
        for (i, &xi) in xv.as_slice().iter().enumerate() {
            let row = &mut value.as_mut_slice()[i * y.cols()..(i + 1) * y.cols()];
            matrix::axpy(row, xi, yv.as_slice());
        }
        let rg = self.requires_grad(&[x.id, y.id]);
        Ok(self.push(Op::Outer(x.id, y.id), value, rg))
    }

    pub fn sum(&mut self, a: NodeRef) -> Result<NodeRef> {
        self.check(a)?;
        let value = Matrix::scalar(self.value(a).sum());
        self.unary(a, Op::Sum(a.id), value)
    }

    /// `sum((pred - target)^2)` with `target` a constant.
    pub fn sum_sq_err(&mut self, pred: NodeRef, target: &Matrix) -> Result<NodeRef> {
        self.check(pred)?;
        if pred.shape() != target.shape() {
            return Err(Error::Shape {
                op: "sum_sq_err",
                left: pred.shape(),
                right: target.shape(),
            });
        }
        let loss: f64 = self
            .value(pred)
            .as_slice()
            .iter()
            .zip(target.as_slice())
            .map(|(p, t)| (p - t) * (p - t))
            .sum();
        let op = Op::SumSqErr {
            pred: pred.id,
            target: target.clone(),
        };
        self.unary(pred, op, Matrix::scalar(loss))
    }

    /// Row softmax of a `1 x K` logit vector, shifted by its maximum.
    pub fn softmax_row(&mut self, logits: NodeRef) -> Result<NodeRef> {
        self.check(logits)?;
        row_vector("softmax_row", logits)?;
        let value = Matrix::row(softmax(self.value(logits).as_slice()));
        self.unary(logits, Op::SoftmaxRow(logits.id), value)
    }

    /// `ln probs[index]`. When `probs` came from [`Tape::softmax_row`] the
    /// record is taken against the logits directly (log-softmax), so value
    /// and gradient stay finite even when the probability underflows.
    pub fn log_prob(&mut self, probs: NodeRef, index: usize) -> Result<NodeRef> {
        self.check(probs)?;
        row_vector("log_prob", probs)?;
        if index >= probs.cols() {
            return Err(Error::contract(
                "log_prob",
                format!("index {index} out of range for {} entries", probs.cols()),
            ));
        }
        if let Op::SoftmaxRow(logits) = self.nodes()[probs.id].op {
            let value = log_softmax(self.nodes()[logits].value.as_slice())[index];
            let rg = self.requires_grad(&[logits]);
            let op = Op::LogSoftmaxAt { logits, index };
            return Ok(self.push(op, Matrix::scalar(value), rg));
        }
        let value = self.value(probs).as_slice()[index].ln();
        let op = Op::LogProb { probs: probs.id, index };
        self.unary(probs, op, Matrix::scalar(value))
    }

    /// Shannon entropy `-sum p ln p` of a probability row.
    pub fn entropy(&mut self, probs: NodeRef) -> Result<NodeRef> {
        self.check(probs)?;
        row_vector("entropy", probs)?;
        if let Op::SoftmaxRow(logits) = self.nodes()[probs.id].op {
            let lp = log_softmax(self.nodes()[logits].value.as_slice());
            let h = -self
                .value(probs)
                .as_slice()
                .iter()
                .zip(&lp)
                .map(|(p, l)| p * l)
                .sum::<f64>();
            let rg = self.requires_grad(&[logits]);
            return Ok(self.push(Op::SoftmaxEntropy(logits), Matrix::scalar(h), rg));
        }
        let h = -self
            .value(probs)
            .as_slice()
            .iter()
            .map(|&p| if p > 0.0 { p * p.ln() } else { 0.0 })
            .sum::<f64>();
        self.unary(probs, Op::Entropy(probs.id), Matrix::scalar(h))
    }

    /// Overwrites the masked entries of a row vector with constants. No
    /// gradient flows through overwritten entries.
    pub fn clamp(&mut self, a: NodeRef, mask: &[bool], values: &[f64]) -> Result<NodeRef> {
        self.check(a)?;
        row_vector("clamp", a)?;
        if mask.len() > a.cols() || values.len() != mask.len() {
            return Err(Error::contract(
                "clamp",
                format!(
                    "mask/values of length {}/{} for {} entries",
                    mask.len(),
                    values.len(),
                    a.cols()
                ),
            ));
        }
        let mut value = self.value(a).clone();
        let mut full_mask = vec![false; a.cols()];
        for (k, (&m, &v)) in mask.iter().zip(values).enumerate() {
            if m {
                value.as_mut_slice()[k] = v;
                full_mask[k] = true;
            }
        }
        let free = full_mask.iter().any(|m| !m);
        let rg = free && self.requires_grad(&[a.id]);
        Ok(self.push(
            Op::Clamp {
                a: a.id,
                mask: full_mask,
            },
            value,
            rg,
        ))
    }

    /// Columns `start..start + len` of a row vector.
    pub fn slice_cols(&mut self, a: NodeRef, start: usize, len: usize) -> Result<NodeRef> {
        self.check(a)?;
        row_vector("slice_cols", a)?;
        if start + len > a.cols() {
            return Err(Error::contract(
                "slice_cols",
                format!("{start}..{} out of {} columns", start + len, a.cols()),
            ));
        }
        let value = Matrix::row(self.value(a).as_slice()[start..start + len].to_vec());
        self.unary(a, Op::SliceCols { a: a.id, start }, value)
    }

    /// Fused `y * (w + alpha ⊙ hebb)`. `alpha` is either the same shape as
    /// `w` (one coefficient per connection) or `1 x 1` (shared coefficient).
    pub fn plastic_matmul(&mut self, y: NodeRef, w: NodeRef, alpha: NodeRef, hebb: NodeRef) -> Result<NodeRef> {
        for n in [y, w, alpha, hebb] {
            self.check(n)?;
        }
        same_shape("plastic_matmul", w, hebb)?;
        let shared = alpha.shape() == (1, 1) && w.shape() != (1, 1);
        if !shared {
            same_shape("plastic_matmul", w, alpha)?;
        }
        if y.cols() != w.rows() {
            return Err(Error::Shape {
                op: "plastic_matmul",
                left: y.shape(),
                right: w.shape(),
            });
        }
        let (wv, av, hv, yv) = (self.value(w), self.value(alpha), self.value(hebb), self.value(y));
        let k = w.cols();
        let mut out = Matrix::zeros(y.rows(), k);
        let mut eff = vec![0.0; k];
        for r in 0..w.rows() {
            effective_row(wv, av, hv, shared, r, &mut eff);
            for b in 0..y.rows() {
                let yb = yv.get(b, r);
                if yb != 0.0 {
                    matrix::axpy(&mut out.as_mut_slice()[b * k..(b + 1) * k], yb, &eff);
                }
            }
        }
        let rg = self.requires_grad(&[y.id, w.id, alpha.id, hebb.id]);
        let op = Op::PlasticMatMul {
            y: y.id,
            w: w.id,
            alpha: alpha.id,
            hebb: hebb.id,
            shared,
        };
        Ok(self.push(op, out, rg))
    }

    /// Fused decaying Hebbian update
    /// `hebb' = eta * outer(pre, post) + (1 - eta) * hebb`.
    pub fn hebb_decay(&mut self, hebb: NodeRef, eta: NodeRef, pre: NodeRef, post: NodeRef) -> Result<NodeRef> {
        self.check_hebb_args("hebb_decay", hebb, eta, pre, post)?;
        let e = self.value(eta).item();
        let (hv, pv, qv) = (self.value(hebb), self.value(pre), self.value(post));
        let k = hebb.cols();
        let mut out = Matrix::zeros(hebb.rows(), k);
        for i in 0..hebb.rows() {
            let xi = pv.as_slice()[i];
            let src = hv.row_slice(i);
            let dst = &mut out.as_mut_slice()[i * k..(i + 1) * k];
            for ((d, &h), &yj) in dst.iter_mut().zip(src).zip(qv.as_slice()) {
                *d = e * (xi * yj) + (1.0 - e) * h;
            }
        }
        let rg = self.requires_grad(&[hebb.id, eta.id, pre.id, post.id]);
        let op = Op::HebbDecay {
            hebb: hebb.id,
            eta: eta.id,
            pre: pre.id,
            post: post.id,
        };
        Ok(self.push(op, out, rg))
    }

    /// Fused Oja update
    /// `hebb'[i][j] = hebb[i][j] + eta * post[j] * (pre[i] - post[j] * hebb[i][j])`.
    pub fn hebb_oja(&mut self, hebb: NodeRef, eta: NodeRef, pre: NodeRef, post: NodeRef) -> Result<NodeRef> {
        self.check_hebb_args("hebb_oja", hebb, eta, pre, post)?;
        let e = self.value(eta).item();
        let (hv, pv, qv) = (self.value(hebb), self.value(pre), self.value(post));
        let k = hebb.cols();
        let mut out = Matrix::zeros(hebb.rows(), k);
        for i in 0..hebb.rows() {
            let xi = pv.as_slice()[i];
            let src = hv.row_slice(i);
            let dst = &mut out.as_mut_slice()[i * k..(i + 1) * k];
            for ((d, &h), &yj) in dst.iter_mut().zip(src).zip(qv.as_slice()) {
                *d = h + e * yj * (xi - yj * h);
            }
        }
        let rg = self.requires_grad(&[hebb.id, eta.id, pre.id, post.id]);
        let op = Op::HebbOja {
            hebb: hebb.id,
            eta: eta.id,
            pre: pre.id,
            post: post.id,
        };
        Ok(self.push(op, out, rg))
    }

    fn check_hebb_args(
        &self,
        op: &'static str,
        hebb: NodeRef,
        eta: NodeRef,
        pre: NodeRef,
        post: NodeRef,
    ) -> Result<()> {
        for n in [hebb, eta, pre, post] {
            self.check(n)?;
        }
        row_vector(op, pre)?;
        row_vector(op, post)?;
        if eta.shape() != (1, 1) {
            return Err(Error::contract(op, "eta must be 1x1"));
        }
        if (pre.cols(), post.cols()) != hebb.shape() {
            return Err(Error::Shape {
                op,
                left: hebb.shape(),
                right: (pre.cols(), post.cols()),
            });
        }
        Ok(())
    }
}

/// Row `r` of `w + alpha ⊙ hebb` written into `out`.
#[inline]
pub(super) fn effective_row(w: &Matrix, alpha: &Matrix, hebb: &Matrix, shared: bool, r: usize, out: &mut [f64]) {
    let (wr, hr) = (w.row_slice(r), hebb.row_slice(r));
    if shared {
        let a = alpha.item();
        for ((o, &wv), &hv) in out.iter_mut().zip(wr).zip(hr) {
            *o = wv + a * hv;
        }
    } else {
        let ar = alpha.row_slice(r);
        for (((o, &wv), &av), &hv) in out.iter_mut().zip(wr).zip(ar).zip(hr) {
            *o = wv + av * hv;
        }
    }
}

pub(crate) fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

pub(crate) fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = logits.iter().map(|&l| (l - max).exp()).sum::<f64>().ln() + max;
    logits.iter().map(|&l| l - lse).collect()
}
