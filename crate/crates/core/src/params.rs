//! Named trainable parameters and their gradients.

use std::collections::BTreeMap;

use crate::autodiff::{Gradients, NodeRef};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// A model whose trainable tensors can be visited by name in a fixed order.
pub trait Parameterized {
    fn visit_params(&self, f: &mut dyn FnMut(&str, (usize, usize), &[f64]));
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64]));

    fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit_params(&mut |_, (r, c), _| n += r * c);
        n
    }

    fn param_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        self.visit_params(&mut |name, _, _| names.push(name.to_string()));
        names
    }

    fn all_finite(&self) -> bool {
        let mut ok = true;
        self.visit_params(&mut |_, _, v| ok &= v.iter().all(|x| x.is_finite()));
        ok
    }
}

/// Leaf handles registered for one episode, by parameter name.
pub type Bindings = Vec<(&'static str, NodeRef)>;

/// Gradients keyed by parameter name.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradMap(BTreeMap<String, Matrix>);

impl GradMap {
    pub fn new() -> Self {
        GradMap(BTreeMap::new())
    }

    pub fn from_tape(grads: &mut Gradients, bindings: &Bindings) -> Self {
        let mut map = GradMap::new();
        for (name, node) in bindings {
            map.0.insert((*name).to_string(), grads.take(*node));
        }
        map
    }

    pub fn insert(&mut self, name: impl Into<String>, g: Matrix) {
        self.0.insert(name.into(), g);
    }

    pub fn get(&self, name: &str) -> Option<&Matrix> {
        self.0.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Matrix)> {
        self.0.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Matrix)> {
        self.0.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Elementwise sum; both maps must hold the same names and shapes.
    pub fn accumulate(&mut self, other: &GradMap) -> Result<()> {
        if self.0.is_empty() {
            *self = other.clone();
            return Ok(());
        }
        for (name, g) in &other.0 {
            let mine = self
                .0
                .get_mut(name)
                .ok_or_else(|| Error::contract("GradMap::accumulate", format!("unknown parameter {name}")))?;
            if mine.shape() != g.shape() {
                return Err(Error::Shape {
                    op: "GradMap::accumulate",
                    left: mine.shape(),
                    right: g.shape(),
                });
            }
            mine.add_assign(g);
        }
        Ok(())
    }

    pub fn global_norm(&self) -> f64 {
        self.0.values().map(|g| g.frobenius_dot(g)).sum::<f64>().sqrt()
    }

    pub fn scale(&mut self, s: f64) {
        for g in self.0.values_mut() {
            g.scale_in_place(s);
        }
    }

    /// Rescales so the global L2 norm is at most `max_norm`. Returns the norm
    /// before clipping.
    pub fn clip_global_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.global_norm();
        if norm > max_norm && norm > 0.0 {
            self.scale(max_norm / norm);
        }
        norm
    }

    pub fn all_finite(&self) -> bool {
        self.0.values().all(Matrix::is_finite)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clipping_bounds_the_norm() {
        let mut g = GradMap::new();
        g.insert("a", Matrix::row(vec![3.0, 0.0]));
        g.insert("b", Matrix::scalar(4.0));
        assert_eq!(g.clip_global_norm(1.0), 5.0);
        assert!((g.global_norm() - 1.0).abs() < 1e-15);
        assert!((g.get("a").unwrap().as_slice()[0] - 0.6).abs() < 1e-15);
    }

    #[test]
    fn accumulate_sums_and_checks_names() {
        let mut a = GradMap::new();
        a.insert("x", Matrix::scalar(1.0));
        let mut b = GradMap::new();
        b.insert("x", Matrix::scalar(2.0));
        a.accumulate(&b).unwrap();
        assert_eq!(a.get("x").unwrap().item(), 3.0);
        let mut c = GradMap::new();
        c.insert("y", Matrix::scalar(2.0));
        assert!(a.accumulate(&c).is_err());
    }
}
