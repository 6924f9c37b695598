//! Reductions, row-wise normalizations and shape plumbing.

use std::sync::Arc;

use super::{Grads, Graph, Op, Var};
use crate::error::{Error, Result};

fn rows_of(shape: &[usize]) -> (usize, usize) {
    let d = *shape.last().expect("non-empty shape");
    (shape.iter().product::<usize>() / d, d)
}

/// Stable softmax of one row.
pub fn softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|x| (x - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

/// `log Σ exp(row)` with max subtraction.
pub fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl Graph {
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).iter().sum();
        self.push(vec![1], vec![s], Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let s = v.iter().sum::<f64>() / v.len() as f64;
        self.push(vec![1], vec![s], Op::Mean(a))
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let v = self.value(a);
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::Numeric("softmax input contains NaN or Inf".into()));
        }
        let (_, d) = rows_of(&shape);
        let out: Vec<f64> = v.chunks(d).flat_map(softmax).collect();
        Ok(self.push(shape, out, Op::SoftmaxRows(a)))
    }

    /// Per-row `-log softmax(row)[label]` for `logits[N×C]` (or `[C]` with
    /// one label). Output shape `[N]`.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let shape = self.shape(logits).to_vec();
        let (n, c) = rows_of(&shape);
        if labels.len() != n {
            return Err(Error::Usage(format!(
                "{} labels for {n} logit rows",
                labels.len()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&l| l >= c) {
            return Err(Error::Usage(format!(
                "label {bad} out of range for {c} classes"
            )));
        }
        let v = self.value(logits);
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::Numeric("cross-entropy logits contain NaN or Inf".into()));
        }
        let out: Vec<f64> = v
            .chunks(c)
            .zip(labels)
            .map(|(row, &l)| log_sum_exp(row) - row[l])
            .collect();
        Ok(self.push(vec![n], out, Op::CrossEntropyRows(logits, labels.into())))
    }

    /// Scale each row of the last axis to unit Euclidean norm.
    pub fn l2_normalize(&mut self, a: Var) -> Var {
        let shape = self.shape(a).to_vec();
        let (_, d) = rows_of(&shape);
        let out: Vec<f64> = self
            .value(a)
            .chunks(d)
            .flat_map(|row| {
                let n = row_norm(row);
                row.iter().map(move |x| x / n)
            })
            .collect();
        self.push(shape, out, Op::L2NormalizeRows(a))
    }

    /// Euclidean distance matrix between the rows of `x[N×D]`.
    pub fn pairwise_distance(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() != 2 {
            return Err(Error::Dimension(format!(
                "pairwise_distance expects [N, D], got {shape:?}"
            )));
        }
        let (n, d) = (shape[0], shape[1]);
        let v = self.value(x);
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            for j in (i + 1)..n {
                let dist = euclidean(&v[i * d..(i + 1) * d], &v[j * d..(j + 1) * d]);
                out[i * n + j] = dist;
                out[j * n + i] = dist;
            }
        }
        Ok(self.push(vec![n, n], out, Op::PairwiseDistance(x)))
    }

    /// Pick flat elements of `a` by index. Output shape `[indices.len()]`.
    pub fn gather(&mut self, a: Var, indices: &[usize]) -> Result<Var> {
        let v = self.value(a);
        if indices.is_empty() {
            return Err(Error::Usage("gather with no indices".into()));
        }
        if let Some(bad) = indices.iter().find(|&&i| i >= v.len()) {
            return Err(Error::Dimension(format!(
                "gather index {bad} out of range for {} elements",
                v.len()
            )));
        }
        let out = indices.iter().map(|&i| v[i]).collect();
        Ok(self.push(vec![indices.len()], out, Op::Gather(a, indices.into())))
    }

    /// `a[.., start..end, ..]` along `axis`.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, end: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() || start >= end || end > shape[axis] {
            return Err(Error::Dimension(format!(
                "slice {start}..{end} on axis {axis} of {shape:?}"
            )));
        }
        let (outer, len, inner) = split_axis(&shape, axis);
        let v = self.value(a);
        let mut out = Vec::with_capacity(outer * (end - start) * inner);
        for o in 0..outer {
            let base = o * len * inner;
            out.extend_from_slice(&v[base + start * inner..base + end * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = end - start;
        Ok(self.push(out_shape, out, Op::Slice { x: a, axis, start }))
    }

    /// Join tensors along `axis`; all other dimensions must agree.
    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = inputs
            .first()
            .ok_or_else(|| Error::Usage("concat of nothing".into()))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(Error::Dimension(format!("concat axis {axis} on {base:?}")));
        }
        let mut total = 0;
        for v in inputs {
            let s = self.shape(*v);
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(k, (x, y))| k == axis || x == y);
            if !compatible {
                return Err(Error::Dimension(format!(
                    "concat along axis {axis} of {base:?} and {s:?}"
                )));
            }
            total += s[axis];
        }
        let (outer, _, inner) = split_axis(&base, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for v in inputs {
                let len = self.shape(*v)[axis] * inner;
                out.extend_from_slice(&self.value(*v)[o * len..(o + 1) * len]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        Ok(self.push(
            shape,
            out,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
        ))
    }
}

pub(crate) fn row_norm(row: &[f64]) -> f64 {
    row.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12)
}

pub(crate) fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

pub(super) fn sum_backward(grads: &mut Grads<'_>, a: Var, g: f64) {
    if let Some(ga) = grads.slot(a) {
        ga.iter_mut().for_each(|s| *s += g);
    }
}

pub(super) fn softmax_backward(grads: &mut Grads<'_>, a: Var, out: &[f64], g: &[f64]) {
    let (_, d) = rows_of(grads.shape(a));
    if let Some(ga) = grads.slot(a) {
        for ((gr, yr), sr) in g.chunks(d).zip(out.chunks(d)).zip(ga.chunks_mut(d)) {
            let dot: f64 = gr.iter().zip(yr).map(|(x, y)| x * y).sum();
            for ((s, gv), y) in sr.iter_mut().zip(gr).zip(yr) {
                *s += y * (gv - dot);
            }
        }
    }
}

pub(super) fn cross_entropy_backward(
    grads: &mut Grads<'_>,
    a: Var,
    labels: &Arc<[usize]>,
    g: &[f64],
) {
    let (_, c) = rows_of(grads.shape(a));
    let va = grads.value(a);
    if let Some(ga) = grads.slot(a) {
        for (k, (row, sr)) in va.chunks(c).zip(ga.chunks_mut(c)).enumerate() {
            let p = softmax(row);
            for (j, (s, pj)) in sr.iter_mut().zip(&p).enumerate() {
                let onehot = if j == labels[k] { 1.0 } else { 0.0 };
                *s += g[k] * (pj - onehot);
            }
        }
    }
}

pub(super) fn l2_normalize_backward(grads: &mut Grads<'_>, a: Var, out: &[f64], g: &[f64]) {
    let (_, d) = rows_of(grads.shape(a));
    let va = grads.value(a);
    if let Some(ga) = grads.slot(a) {
        for (((xr, yr), gr), sr) in va
            .chunks(d)
            .zip(out.chunks(d))
            .zip(g.chunks(d))
            .zip(ga.chunks_mut(d))
        {
            let n = row_norm(xr);
            let dot: f64 = yr.iter().zip(gr).map(|(y, v)| y * v).sum();
            for ((s, gv), y) in sr.iter_mut().zip(gr).zip(yr) {
                *s += (gv - y * dot) / n;
            }
        }
    }
}

pub(super) fn pairwise_distance_backward(grads: &mut Grads<'_>, x: Var, out: &[f64], g: &[f64]) {
    let shape = grads.shape(x);
    let (n, d) = (shape[0], shape[1]);
    let v = grads.value(x);
    if let Some(gx) = grads.slot(x) {
        for i in 0..n {
            for j in 0..n {
                let dist = out[i * n + j];
                // Zero distance is a kink; take the zero subgradient.
                if i == j || dist == 0.0 {
                    continue;
                }
                let coef = g[i * n + j] / dist;
                for k in 0..d {
                    let diff = v[i * d + k] - v[j * d + k];
                    gx[i * d + k] += coef * diff;
                    gx[j * d + k] -= coef * diff;
                }
            }
        }
    }
}

pub(super) fn gather_backward(grads: &mut Grads<'_>, a: Var, idx: &Arc<[usize]>, g: &[f64]) {
    if let Some(ga) = grads.slot(a) {
        for (&i, gv) in idx.iter().zip(g) {
            ga[i] += gv;
        }
    }
}

pub(super) fn slice_backward(
    grads: &mut Grads<'_>,
    x: Var,
    axis: usize,
    start: usize,
    out_shape: &[usize],
    g: &[f64],
) {
    let (outer, len, inner) = split_axis(grads.shape(x), axis);
    let width = out_shape[axis] * inner;
    if let Some(gx) = grads.slot(x) {
        for o in 0..outer {
            let dst = o * len * inner + start * inner;
            gx[dst..dst + width]
                .iter_mut()
                .zip(&g[o * width..(o + 1) * width])
                .for_each(|(s, v)| *s += v);
        }
    }
}

pub(super) fn concat_backward(grads: &mut Grads<'_>, inputs: &[Var], axis: usize, g: &[f64]) {
    let nodes = grads.nodes;
    let base = &nodes[inputs[0].index()].shape;
    let (outer, _, inner) = split_axis(base, axis);
    let total: usize = inputs
        .iter()
        .map(|v| nodes[v.index()].shape[axis] * inner)
        .sum();
    let mut offset = 0;
    for v in inputs {
        let len = nodes[v.index()].shape[axis] * inner;
        if let Some(gv) = grads.slot(*v) {
            for o in 0..outer {
                let src = &g[o * total + offset..o * total + offset + len];
                gv[o * len..(o + 1) * len]
                    .iter_mut()
                    .zip(src)
                    .for_each(|(s, x)| *s += x);
            }
        }
        offset += len;
    }
}
