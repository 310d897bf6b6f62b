use super::*;

/// Central finite differences of `f` with respect to every entry of `x`.
fn numeric_grad(x: &Matrix, h: f64, f: impl Fn(&Matrix) -> f64) -> Matrix {
    let mut g = Matrix::zeros(x.rows(), x.cols());
    for k in 0..x.len() {
        let mut plus = x.clone();
        plus.as_mut_slice()[k] += h;
        let mut minus = x.clone();
        minus.as_mut_slice()[k] -= h;
        g.as_mut_slice()[k] = (f(&plus) - f(&minus)) / (2.0 * h);
    }
    g
}

fn assert_close(analytic: &Matrix, numeric: &Matrix, rel: f64) {
    assert_eq!(analytic.shape(), numeric.shape());
    for (a, n) in analytic.as_slice().iter().zip(numeric.as_slice()) {
        let diff = (a - n).abs();
        let scale = a.abs().max(n.abs());
        assert!(
            diff <= 1e-9 || diff / scale <= rel,
            "analytic {a} vs numeric {n} (rel {})",
            diff / scale
        );
    }
}

fn m(rows: usize, cols: usize, seed: u64) -> Matrix {
    // deterministic, irregular values in (-1, 1)
    let mut s = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
    Matrix::from_fn(rows, cols, |_, _| {
        s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
    })
}

#[test]
fn leaf_registration() {
    let mut t = Tape::new();
    let z = t.leaf(Matrix::zeros(2, 2));
    assert_eq!(z.shape(), (2, 2));
    let v = Matrix::row(vec![1.0, 2.0, 3.0]);
    let n = t.leaf(v.clone());
    assert_eq!(t.value(n), &v);
    let loss = t.sum(n).unwrap();
    let g = t.backward(loss).unwrap();
    assert_eq!(g.wrt(z), Matrix::zeros(2, 2));
}

#[test]
fn reset_restarts_ids_and_invalidates_handles() {
    let mut t = Tape::new();
    let a = t.leaf(Matrix::scalar(1.0));
    t.leaf(Matrix::scalar(2.0));
    t.reset();
    assert!(t.is_empty());
    let b = t.leaf(Matrix::scalar(3.0));
    assert_eq!(b.id(), 0);
    assert!(t.add(a, b).is_err());
}

#[test]
fn matmul_identity_and_hand_product() {
    let mut t = Tape::new();
    let i2 = t.constant(Matrix::identity(2));
    let mm = m(2, 2, 3);
    let mn = t.constant(mm.clone());
    let p = t.matmul(i2, mn).unwrap();
    assert_eq!(t.value(p), &mm);

    let a = t.constant(Matrix::row(vec![1.0, 2.0]));
    let b = t.constant(Matrix::from_rows(&[vec![3.0], vec![4.0]]).unwrap());
    let c = t.matmul(a, b).unwrap();
    assert_eq!(t.value(c).as_slice(), &[11.0]);
}

#[test]
fn matmul_shape_error_names_shapes() {
    let mut t = Tape::new();
    let a = t.leaf(Matrix::zeros(2, 3));
    let b = t.leaf(Matrix::zeros(2, 3));
    let msg = t.matmul(a, b).unwrap_err().to_string();
    assert!(msg.contains("(2, 3)") && msg.contains("matmul"), "{msg}");
}

#[test]
fn matmul_gradient_matches_finite_differences() {
    let (a0, b0) = (m(3, 4, 1), m(4, 2, 2));
    let mut t = Tape::new();
    let a = t.leaf(a0.clone());
    let b = t.leaf(b0.clone());
    let c = t.matmul(a, b).unwrap();
    let loss = t.sum(c).unwrap();
    let g = t.backward(loss).unwrap();
    let f = |x: &Matrix| x.matmul(&b0).unwrap().sum();
    assert_close(&g.wrt(a), &numeric_grad(&a0, 1e-5, f), 1e-6);
    let f = |x: &Matrix| a0.matmul(x).unwrap().sum();
    assert_close(&g.wrt(b), &numeric_grad(&b0, 1e-5, f), 1e-6);
}

#[test]
fn elementwise_identities() {
    let mut t = Tape::new();
    let a0 = m(2, 3, 9);
    let a = t.leaf(a0.clone());
    let z = t.constant(Matrix::zeros(2, 3));
    let h = t.hadamard(a, z).unwrap();
    assert_eq!(t.value(h), &Matrix::zeros(2, 3));
    let s = t.add(a, z).unwrap();
    assert_eq!(t.value(s), &a0);
    let wrong = t.constant(Matrix::zeros(3, 2));
    assert!(t.add(a, wrong).is_err());
}

#[test]
fn scale_gradient_wrt_scalar_is_sum_of_product_with_upstream() {
    let a0 = m(2, 3, 4);
    let up = m(2, 3, 5);
    let mut t = Tape::new();
    let a = t.leaf(a0.clone());
    let s = t.leaf(Matrix::scalar(0.7));
    let sa = t.scale(a, s).unwrap();
    let u = t.constant(up.clone());
    let weighted = t.hadamard(sa, u).unwrap();
    let loss = t.sum(weighted).unwrap();
    let g = t.backward(loss).unwrap();
    let expect = a0.frobenius_dot(&up);
    assert!((g.wrt(s).item() - expect).abs() < 1e-12);
    let fd = numeric_grad(&Matrix::scalar(0.7), 1e-5, |x| {
        a0.map(|v| v * x.item()).frobenius_dot(&up)
    });
    assert_close(&g.wrt(s), &fd, 1e-6);
}

#[test]
fn tanh_values_and_gradient() {
    let mut t = Tape::new();
    let x = t.leaf(Matrix::row(vec![0.0, 40.0, -40.0, 0.3]));
    let y = t.tanh(x).unwrap();
    let v = t.value(y).as_slice().to_vec();
    assert_eq!(v[0], 0.0);
    assert!(v[1] <= 1.0 && v[1] > 0.999 && v[2] >= -1.0 && v[2] < -0.999);
    let loss = t.sum(y).unwrap();
    let g = t.backward(loss).unwrap().wrt(x);
    assert!(g.as_slice()[1].abs() < 1e-30);
    let fd = (0.3f64 + 1e-5).tanh() - (0.3f64 - 1e-5).tanh();
    let fd = fd / 2e-5;
    assert!(((g.as_slice()[3] - fd) / fd).abs() < 1e-8);
}

#[test]
fn outer_products() {
    let mut t = Tape::new();
    let e1 = t.constant(Matrix::row(vec![1.0, 0.0]));
    let e2 = t.constant(Matrix::row(vec![0.0, 1.0]));
    let o = t.outer(e1, e2).unwrap();
    assert_eq!(t.value(o).to_rows(), vec![vec![0.0, 1.0], vec![0.0, 0.0]]);
    let x = t.leaf(Matrix::row(vec![1.0, 2.0]));
    let y = t.leaf(Matrix::row(vec![3.0, 4.0]));
    let o = t.outer(x, y).unwrap();
    assert_eq!(t.value(o).to_rows(), vec![vec![3.0, 4.0], vec![6.0, 8.0]]);
    let zeros = t.constant(Matrix::zeros(1, 2));
    let oz = t.outer(x, zeros).unwrap();
    assert_eq!(t.value(oz), &Matrix::zeros(2, 2));
    let col = t.constant(Matrix::zeros(2, 1));
    assert!(t.outer(col, x).is_err());

    let w = m(2, 2, 17);
    let wn = t.constant(w.clone());
    let prod = t.hadamard(o, wn).unwrap();
    let loss = t.sum(prod).unwrap();
    let g = t.backward(loss).unwrap();
    let fx = numeric_grad(&Matrix::row(vec![1.0, 2.0]), 1e-5, |xv| {
        let y = [3.0, 4.0];
        (0..2)
            .flat_map(|i| (0..2).map(move |j| (i, j)))
            .map(|(i, j)| xv.get(0, i) * y[j] * w.get(i, j))
            .sum()
    });
    assert_close(&g.wrt(x), &fx, 1e-7);
}

#[test]
fn sum_sq_err_values_and_gradient() {
    let mut t = Tape::new();
    let p = t.leaf(Matrix::row(vec![1.0, 0.0]));
    let same = t.sum_sq_err(p, &Matrix::row(vec![1.0, 0.0])).unwrap();
    assert_eq!(t.value(same).item(), 0.0);
    let l = t.sum_sq_err(p, &Matrix::zeros(1, 2)).unwrap();
    assert_eq!(t.value(l).item(), 1.0);
    assert!(t.sum_sq_err(p, &Matrix::zeros(1, 3)).is_err());

    let q = t.leaf(Matrix::row(vec![0.5]));
    let l = t.sum_sq_err(q, &Matrix::row(vec![0.2])).unwrap();
    let g = t.backward(l).unwrap().wrt(q).item();
    assert!((g - 0.6).abs() < 1e-15);
}

#[test]
fn softmax_is_stable_and_uniform_for_equal_logits() {
    let mut t = Tape::new();
    let l = t.leaf(Matrix::row(vec![0.3; 4]));
    let p = t.softmax_row(l).unwrap();
    for &v in t.value(p).as_slice() {
        assert!((v - 0.25).abs() < 1e-15);
    }
    let big = t.leaf(Matrix::row(vec![1000.0, 0.0]));
    let pb = t.softmax_row(big).unwrap();
    let v = t.value(pb).as_slice().to_vec();
    assert!(v.iter().all(|x| x.is_finite()));
    assert!((v[0] - 1.0).abs() < 1e-15 && v[1] < 1e-300);
    let lp = t.log_prob(pb, 1).unwrap();
    assert!((t.value(lp).item() + 1000.0).abs() < 1e-9);
    assert!(t.log_prob(pb, 2).is_err());
}

#[test]
fn log_prob_and_entropy_gradients_match_finite_differences() {
    let l0 = Matrix::row(vec![0.2, -1.3, 0.7, 0.05]);
    let lp = |x: &Matrix| crate::autodiff::ops::log_softmax(x.as_slice());
    for index in 0..4 {
        let mut t = Tape::new();
        let l = t.leaf(l0.clone());
        let p = t.softmax_row(l).unwrap();
        let o = t.log_prob(p, index).unwrap();
        let g = t.backward(o).unwrap().wrt(l);
        let fd = numeric_grad(&l0, 1e-5, |x| lp(x)[index]);
        assert_close(&g, &fd, 1e-6);
    }
    let mut t = Tape::new();
    let l = t.leaf(l0.clone());
    let p = t.softmax_row(l).unwrap();
    let h = t.entropy(p).unwrap();
    let g = t.backward(h).unwrap().wrt(l);
    let fd = numeric_grad(&l0, 1e-5, |x| {
        let lps = lp(x);
        -lps.iter().map(|v| v.exp() * v).sum::<f64>()
    });
    assert_close(&g, &fd, 1e-6);

    // generic (non-softmax) probability inputs
    let p0 = Matrix::row(vec![0.1, 0.6, 0.3]);
    let mut t = Tape::new();
    let p = t.leaf(p0.clone());
    let h = t.entropy(p).unwrap();
    let lpn = t.log_prob(p, 1).unwrap();
    let both = t.add(h, lpn).unwrap();
    let g = t.backward(both).unwrap().wrt(p);
    let fd = numeric_grad(&p0, 1e-6, |x| {
        -x.as_slice().iter().map(|v| v * v.ln()).sum::<f64>() + x.as_slice()[1].ln()
    });
    assert_close(&g, &fd, 1e-6);
}

#[test]
fn softmax_gradient_through_weighted_sum() {
    let l0 = Matrix::row(vec![0.5, -0.2, 1.1]);
    let wts = Matrix::row(vec![1.0, -2.0, 0.5]);
    let mut t = Tape::new();
    let l = t.leaf(l0.clone());
    let p = t.softmax_row(l).unwrap();
    let wn = t.constant(wts.clone());
    let prod = t.hadamard(p, wn).unwrap();
    let s = t.sum(prod).unwrap();
    let g = t.backward(s).unwrap().wrt(l);
    let fd = numeric_grad(&l0, 1e-5, |x| {
        crate::autodiff::ops::softmax(x.as_slice())
            .iter()
            .zip(wts.as_slice())
            .map(|(a, b)| a * b)
            .sum()
    });
    assert_close(&g, &fd, 1e-6);
}

#[test]
fn backward_requires_scalar_loss() {
    let mut t = Tape::new();
    let x = t.leaf(Matrix::zeros(1, 2));
    assert!(t.backward(x).is_err());
    let s = t.leaf(Matrix::scalar(4.0));
    assert_eq!(t.backward(s).unwrap().wrt(s).item(), 1.0);
}

#[test]
fn fan_out_accumulates() {
    let mut t = Tape::new();
    let a = t.leaf(Matrix::scalar(2.0));
    let b = t.leaf(Matrix::scalar(3.0));
    let s = t.add(a, b).unwrap();
    let sq = t.hadamard(s, s).unwrap();
    let g = t.backward(sq).unwrap();
    assert_eq!(g.wrt(a).item(), 10.0);
    assert_eq!(g.wrt(b).item(), 10.0);
    // same node used twice in one record
    let o = t.outer(a, a).unwrap();
    let so = t.sum(o).unwrap();
    assert_eq!(t.backward(so).unwrap().wrt(a).item(), 4.0);
}

#[test]
fn clamp_overwrites_and_blocks_gradient() {
    let mut t = Tape::new();
    let x = t.leaf(Matrix::row(vec![0.1, 0.2, 0.3]));
    let c = t.clamp(x, &[true, false, true], &[-1.0, 9.0, 1.0]).unwrap();
    assert_eq!(t.value(c).as_slice(), &[-1.0, 0.2, 1.0]);
    let s = t.sum(c).unwrap();
    assert_eq!(t.backward(s).unwrap().wrt(x).as_slice(), &[0.0, 1.0, 0.0]);
}

#[test]
fn slice_cols_scatters_gradient() {
    let mut t = Tape::new();
    let x = t.leaf(Matrix::row(vec![1.0, 2.0, 3.0, 4.0]));
    let s = t.slice_cols(x, 1, 2).unwrap();
    assert_eq!(t.value(s).as_slice(), &[2.0, 3.0]);
    let l = t.sum(s).unwrap();
    assert_eq!(t.backward(l).unwrap().wrt(x).as_slice(), &[0.0, 1.0, 1.0, 0.0]);
    assert!(t.slice_cols(x, 3, 2).is_err());
}

/// The fused plastic kernels must agree with the same expressions built from
/// primitive records, values and gradients alike.
#[test]
fn fused_plastic_kernels_match_composed_primitives() {
    let n = 5;
    for shared in [false, true] {
        for oja in [false, true] {
            let (w0, a0, h0) = (m(n, n, 21), m(n, n, 22), m(n, n, 23));
            let a0 = if shared { Matrix::scalar(0.37) } else { a0 };
            let (y0, y1) = (m(1, n, 24), m(1, n, 25));
            let run = |fused: bool| {
                let mut t = Tape::new();
                let w = t.leaf(w0.clone());
                let a = t.leaf(a0.clone());
                let h = t.leaf(h0.clone());
                let eta = t.leaf(Matrix::scalar(0.3));
                let y = t.leaf(y0.clone());
                let post = t.leaf(y1.clone());
                let (z, h2) = if fused {
                    let z = t.plastic_matmul(y, w, a, h).unwrap();
                    let h2 = if oja {
                        t.hebb_oja(h, eta, y, post).unwrap()
                    } else {
                        t.hebb_decay(h, eta, y, post).unwrap()
                    };
                    (z, h2)
                } else {
                    let ah = if shared {
                        t.scale(h, a).unwrap()
                    } else {
                        t.hadamard(a, h).unwrap()
                    };
                    let eff = t.add(w, ah).unwrap();
                    let z = t.matmul(y, eff).unwrap();
                    let o = t.outer(y, post).unwrap();
                    let h2 = if oja {
                        // hebb + eta * (outer(y, post) - hebb ⊙ outer(1, post²))
                        let p2 = t.hadamard(post, post).unwrap();
                        let ones = t.constant(Matrix::filled(1, n, 1.0));
                        let rep = t.outer(ones, p2).unwrap();
                        let hp = t.hadamard(h, rep).unwrap();
                        let d = t.sub(o, hp).unwrap();
                        let ed = t.scale(d, eta).unwrap();
                        t.add(h, ed).unwrap()
                    } else {
                        let eo = t.scale(o, eta).unwrap();
                        let one_minus = t.mul_const(eta, -1.0).unwrap();
                        let one_minus = t.add_const(one_minus, 1.0).unwrap();
                        let kept = t.scale(h, one_minus).unwrap();
                        t.add(eo, kept).unwrap()
                    };
                    (z, h2)
                };
                let zt = t.tanh(z).unwrap();
                let l1 = t.sum_sq_err(zt, &Matrix::filled(1, n, 0.25)).unwrap();
                let hw = t.constant(m(n, n, 26));
                let hh = t.hadamard(h2, hw).unwrap();
                let l2 = t.sum(hh).unwrap();
                let loss = t.add(l1, l2).unwrap();
                let lv = t.value(loss).item();
                let g = t.backward(loss).unwrap();
                let grads: Vec<Matrix> = [w, a, h, eta, y, post].iter().map(|&n| g.wrt(n)).collect();
                (lv, grads)
            };
            let (lf, gf) = run(true);
            let (lc, gc) = run(false);
            assert!((lf - lc).abs() < 1e-12, "loss {lf} vs {lc}");
            for (a, b) in gf.iter().zip(&gc) {
                for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
                    assert!((x - y).abs() < 1e-12, "shared={shared} oja={oja}: {x} vs {y}");
                }
            }
        }
    }
}

#[test]
fn backward_is_linear_in_the_loss() {
    let (a0, b0) = (m(3, 3, 31), m(1, 3, 32));
    let grads = |c: f64| {
        let mut t = Tape::new();
        let a = t.leaf(a0.clone());
        let b = t.leaf(b0.clone());
        let p = t.matmul(b, a).unwrap();
        let th = t.tanh(p).unwrap();
        let l = t.sum_sq_err(th, &Matrix::filled(1, 3, 0.5)).unwrap();
        let l = t.mul_const(l, c).unwrap();
        let g = t.backward(l).unwrap();
        (g.wrt(a), g.wrt(b))
    };
    let (ga, gb) = grads(1.0);
    // a power of two scales every intermediate exactly
    let (ga2, gb2) = grads(2.0);
    assert_eq!(ga.map(|v| 2.0 * v), ga2);
    assert_eq!(gb.map(|v| 2.0 * v), gb2);
    let (ga3, gb3) = grads(3.0);
    for (x, y) in ga
        .as_slice()
        .iter()
        .chain(gb.as_slice())
        .zip(ga3.as_slice().iter().chain(gb3.as_slice()))
    {
        assert!((3.0 * x - y).abs() <= 1e-14 * y.abs().max(1e-300));
    }
}

#[test]
fn tapes_are_topologically_ordered_and_deterministic() {
    let build = || {
        let mut t = Tape::new();
        let w = t.leaf(m(4, 4, 41));
        let mut y = t.constant(m(1, 4, 42));
        for _ in 0..3 {
            let z = t.matmul(y, w).unwrap();
            y = t.tanh(z).unwrap();
        }
        let l = t.sum_sq_err(y, &Matrix::zeros(1, 4)).unwrap();
        assert!(t.is_topologically_ordered());
        let v = t.value(l).item();
        (v, t.backward(l).unwrap().wrt(w))
    };
    let (v1, g1) = build();
    let (v2, g2) = build();
    assert_eq!(v1.to_bits(), v2.to_bits());
    assert_eq!(g1, g2);
}
