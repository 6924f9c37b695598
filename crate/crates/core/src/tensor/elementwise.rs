use std::sync::Arc;

use super::{Derivative, Grads, Graph, Op, Var, LOG_EPS};
use crate::error::{Error, Result};

impl Graph {
    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<Vec<usize>> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Dimension(format!(
                "{what} of {:?} and {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(self.shape(a).to_vec())
    }

    fn zip_with(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
        self.value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| f(*x, *y))
            .collect()
    }

    fn map_values(&self, a: Var, f: impl Fn(f64) -> f64) -> Vec<f64> {
        self.value(a).iter().map(|x| f(*x)).collect()
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let shape = self.same_shape(a, b, "add")?;
        let out = self.zip_with(a, b, |x, y| x + y);
        Ok(self.push(shape, out, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let shape = self.same_shape(a, b, "sub")?;
        let out = self.zip_with(a, b, |x, y| x - y);
        Ok(self.push(shape, out, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let shape = self.same_shape(a, b, "mul")?;
        let out = self.zip_with(a, b, |x, y| x * y);
        Ok(self.push(shape, out, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = self.map_values(a, |x| c * x);
        let shape = self.shape(a).to_vec();
        self.push(shape, out, Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let out = self.map_values(a, |x| x + c);
        let shape = self.shape(a).to_vec();
        self.push(shape, out, Op::AddScalar(a))
    }

    /// `1 - a`.
    pub fn one_minus(&mut self, a: Var) -> Var {
        let neg = self.scale(a, -1.0);
        self.add_scalar(neg, 1.0)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.map_values(a, |x| x.max(0.0));
        let shape = self.shape(a).to_vec();
        self.push(shape, out, Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.map_values(a, sigmoid);
        let shape = self.shape(a).to_vec();
        self.push(shape, out, Op::Sigmoid(a))
    }

    /// Natural log of `max(a, 1e-7)`. Clamped entries get zero gradient.
    pub fn log(&mut self, a: Var) -> Var {
        let out = self.map_values(a, |x| x.max(LOG_EPS).ln());
        let shape = self.shape(a).to_vec();
        self.push(shape, out, Op::LogClamp(a))
    }

    /// Elementwise `f` with caller-supplied derivative `df`.
    pub fn map(
        &mut self,
        a: Var,
        f: impl Fn(f64) -> f64,
        df: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Var {
        let out = self.map_values(a, f);
        let shape = self.shape(a).to_vec();
        let d: Derivative = Arc::new(df);
        self.push(shape, out, Op::Map(a, d))
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        if super::numel(&shape) != self.value(a).len() || shape.contains(&0) {
            return Err(Error::Dimension(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape(a)
            )));
        }
        let out = self.value(a).to_vec();
        Ok(self.push(shape, out, Op::Reshape(a)))
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(super) fn add_backward(grads: &mut Grads<'_>, a: Var, b: Var, g: &[f64], sign_b: f64) {
    if let Some(ga) = grads.slot(a) {
        ga.iter_mut().zip(g).for_each(|(s, v)| *s += v);
    }
    if let Some(gb) = grads.slot(b) {
        gb.iter_mut().zip(g).for_each(|(s, v)| *s += sign_b * v);
    }
}

pub(super) fn mul_backward(grads: &mut Grads<'_>, a: Var, b: Var, g: &[f64]) {
    let (va, vb) = (grads.value(a), grads.value(b));
    if let Some(ga) = grads.slot(a) {
        for ((s, gv), bv) in ga.iter_mut().zip(g).zip(vb) {
            *s += gv * bv;
        }
    }
    if let Some(gb) = grads.slot(b) {
        for ((s, gv), av) in gb.iter_mut().zip(g).zip(va) {
            *s += gv * av;
        }
    }
}

pub(super) fn scale_backward(grads: &mut Grads<'_>, a: Var, c: f64, g: &[f64]) {
    if let Some(ga) = grads.slot(a) {
        ga.iter_mut().zip(g).for_each(|(s, v)| *s += c * v);
    }
}

pub(super) fn relu_backward(grads: &mut Grads<'_>, a: Var, g: &[f64]) {
    let va = grads.value(a);
    if let Some(ga) = grads.slot(a) {
        for ((s, gv), x) in ga.iter_mut().zip(g).zip(va) {
            if *x > 0.0 {
                *s += gv;
            }
        }
    }
}

pub(super) fn sigmoid_backward(grads: &mut Grads<'_>, a: Var, out: &[f64], g: &[f64]) {
    if let Some(ga) = grads.slot(a) {
        for ((s, gv), y) in ga.iter_mut().zip(g).zip(out) {
            *s += gv * y * (1.0 - y);
        }
    }
}

pub(super) fn log_backward(grads: &mut Grads<'_>, a: Var, g: &[f64]) {
    let va = grads.value(a);
    if let Some(ga) = grads.slot(a) {
        for ((s, gv), x) in ga.iter_mut().zip(g).zip(va) {
            if *x > LOG_EPS {
                *s += gv / x;
            }
        }
    }
}

pub(super) fn map_backward(grads: &mut Grads<'_>, a: Var, d: &Derivative, g: &[f64]) {
    let va = grads.value(a);
    if let Some(ga) = grads.slot(a) {
        for ((s, gv), x) in ga.iter_mut().zip(g).zip(va) {
            *s += gv * d(*x);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_is_clamped() {
        let mut g = Graph::new();
        let x = g.variable(vec![3], vec![0.0, -5.0, 1.0]).unwrap();
        let y = g.log(x);
        let v = g.value(y).to_vec();
        assert_eq!(v[0], LOG_EPS.ln());
        assert_eq!(v[1], LOG_EPS.ln());
        assert_eq!(v[2], 0.0);
        let s = g.sum(y);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn sigmoid_is_stable_and_bounded() {
        assert_eq!(sigmoid(0.0), 0.5);
        for x in [-1e3, -50.0, -1.0, 1.0, 50.0] {
            let s = sigmoid(x);
            assert!(s.is_finite() && (0.0..=1.0).contains(&s));
        }
        assert!(sigmoid(-1e3) >= 0.0);
    }

    #[test]
    fn one_minus() {
        let mut g = Graph::new();
        let x = g.variable(vec![2], vec![0.25, 0.5]).unwrap();
        let y = g.one_minus(x);
        assert_eq!(g.value(y), &[0.75, 0.5]);
    }
}
