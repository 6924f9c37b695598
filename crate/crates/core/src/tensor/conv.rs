//! Convolution, pooling and batch normalization over `[N, C, H, W]` batches.
//!
//! Convolution is im2col + gemm per sample. Samples are independent, so the
//! batch axis is split across the rayon pool when the `parallel` feature is
//! on. Weight gradients are formed per sample and summed in sample order,
//! which keeps the result independent of the thread count.

use std::sync::Arc;

use super::linalg::gemm;
use super::{Grads, Graph, Op, Var};
use crate::error::{Error, Result};
use crate::par;

#[derive(Clone, Copy, Debug)]
struct ConvGeom {
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

impl ConvGeom {
    fn patch(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn out_px(&self) -> usize {
        self.oh * self.ow
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }
}

/// Output extent of a convolution along one axis, if positive.
pub fn conv_out_len(len: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    if stride == 0 || len + 2 * pad < k {
        return None;
    }
    Some((len + 2 * pad - k) / stride + 1)
}

fn im2col(x: &[f64], g: &ConvGeom, cols: &mut [f64]) {
    let px = g.out_px();
    for c in 0..g.c {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = ((c * g.kh + ki) * g.kw + kj) * px;
                let dst = &mut cols[row..row + px];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    let line = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                    if iy < 0 || iy >= g.h as isize {
                        line.fill(0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, d) in line.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        *d = if ix < 0 || ix >= g.w as isize {
                            0.0
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im(cols: &[f64], g: &ConvGeom, dx: &mut [f64]) {
    let px = g.out_px();
    for c in 0..g.c {
        let plane = &mut dx[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = ((c * g.kh + ki) * g.kw + kj) * px;
                let src = &cols[row..row + px];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let line = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..g.ow {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            line[ix as usize] += src[oy * g.ow + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Batch size and per-sample `[C, H, W]` of a 3-D or 4-D activation.
fn batch_dims(shape: &[usize]) -> Option<(usize, [usize; 3])> {
    match *shape {
        [c, h, w] => Some((1, [c, h, w])),
        [n, c, h, w] => Some((n, [c, h, w])),
        _ => None,
    }
}

fn geometry(xs: &[usize], ws: &[usize], stride: usize, pad: usize) -> Result<(usize, usize, ConvGeom)> {
    let (n, [c, h, w]) = batch_dims(xs).ok_or_else(|| {
        Error::Dimension(format!("conv2d input must be [C,H,W] or [N,C,H,W], got {xs:?}"))
    })?;
    let &[o, wc, kh, kw] = ws else {
        return Err(Error::Dimension(format!(
            "conv2d kernel must be [C_out,C_in,kh,kw], got {ws:?}"
        )));
    };
    if wc != c {
        return Err(Error::Dimension(format!(
            "conv2d kernel {ws:?} expects {wc} input channels, input {xs:?} has {c}"
        )));
    }
    let oh = conv_out_len(h, kh, stride, pad);
    let ow = conv_out_len(w, kw, stride, pad);
    let (Some(oh), Some(ow)) = (oh, ow) else {
        return Err(Error::Dimension(format!(
            "conv2d of {xs:?} with kernel {ws:?}, stride {stride}, pad {pad} has no output"
        )));
    };
    Ok((
        n,
        o,
        ConvGeom {
            c,
            h,
            w,
            kh,
            kw,
            stride,
            pad,
            oh,
            ow,
        },
    ))
}

impl Graph {
    /// 2-D cross-correlation with zero padding.
    pub fn conv2d(&mut self, x: Var, w: Var, stride: usize, pad: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let (n, o, g) = geometry(&xs, self.shape(w), stride, pad)?;
        let (xv, wv) = (self.value(x), self.value(w));
        let in_len = g.c * g.h * g.w;
        let out_len = o * g.out_px();
        let mut out = vec![0.0; n * out_len];
        par::for_each_chunk(&mut out, out_len, |i, dst| {
            let xi = &xv[i * in_len..(i + 1) * in_len];
            if g.is_pointwise() {
                gemm(o, g.patch(), g.out_px(), wv, false, xi, false, 0.0, dst);
            } else {
                let mut cols = vec![0.0; g.patch() * g.out_px()];
                im2col(xi, &g, &mut cols);
                gemm(o, g.patch(), g.out_px(), wv, false, &cols, false, 0.0, dst);
            }
        });
        let shape = if xs.len() == 3 {
            vec![o, g.oh, g.ow]
        } else {
            vec![n, o, g.oh, g.ow]
        };
        Ok(self.push(shape, out, Op::Conv2d { x, w, stride, pad }))
    }

    /// Spatial mean per channel: `[N,C,H,W] -> [N,C]`, `[C,H,W] -> [C]`.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let (n, [c, h, w]) = batch_dims(&xs).ok_or_else(|| {
            Error::Dimension(format!("global_avg_pool expects 3-D or 4-D input, got {xs:?}"))
        })?;
        let area = (h * w) as f64;
        let out: Vec<f64> = self
            .value(x)
            .chunks(h * w)
            .map(|p| p.iter().sum::<f64>() / area)
            .collect();
        let shape = if xs.len() == 3 { vec![c] } else { vec![n, c] };
        Ok(self.push(shape, out, Op::GlobalAvgPool(x)))
    }

    /// Batch normalization with statistics of the current batch, per channel
    /// over all non-channel axes of `x[N, C, ...]`. Also returns the batch
    /// mean and biased variance for running-statistics bookkeeping.
    pub fn batch_norm_train(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: f64,
    ) -> Result<(Var, Vec<f64>, Vec<f64>)> {
        let (n, c, s) = self.bn_dims(x, gamma, beta)?;
        let xv = self.value(x);
        let m = (n * s) as f64;
        let mut mean = vec![0.0; c];
        let mut var = vec![0.0; c];
        for b in 0..n {
            for ch in 0..c {
                let base = (b * c + ch) * s;
                mean[ch] += xv[base..base + s].iter().sum::<f64>();
            }
        }
        mean.iter_mut().for_each(|v| *v /= m);
        for b in 0..n {
            for ch in 0..c {
                let base = (b * c + ch) * s;
                var[ch] += xv[base..base + s]
                    .iter()
                    .map(|v| (v - mean[ch]) * (v - mean[ch]))
                    .sum::<f64>();
            }
        }
        var.iter_mut().for_each(|v| *v /= m);
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let y = self.bn_apply(x, gamma, beta, &mean, &inv_std, n, c, s, true);
        Ok((y, mean, var))
    }

    /// Batch normalization with fixed (running) statistics.
    #[allow(clippy::too_many_arguments)]
    pub fn batch_norm_eval(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running_mean: &[f64],
        running_var: &[f64],
        eps: f64,
    ) -> Result<Var> {
        let (n, c, s) = self.bn_dims(x, gamma, beta)?;
        if running_mean.len() != c || running_var.len() != c {
            return Err(Error::Dimension(format!(
                "running statistics of length {}/{} for {c} channels",
                running_mean.len(),
                running_var.len()
            )));
        }
        let inv_std: Vec<f64> = running_var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        Ok(self.bn_apply(x, gamma, beta, running_mean, &inv_std, n, c, s, false))
    }

    fn bn_dims(&self, x: Var, gamma: Var, beta: Var) -> Result<(usize, usize, usize)> {
        let xs = self.shape(x);
        if xs.len() < 2 {
            return Err(Error::Dimension(format!(
                "batch_norm expects [N, C, ...], got {xs:?}"
            )));
        }
        let c = xs[1];
        if self.shape(gamma) != [c] || self.shape(beta) != [c] {
            return Err(Error::Dimension(format!(
                "batch_norm affine parameters {:?}/{:?} for {c} channels",
                self.shape(gamma),
                self.shape(beta)
            )));
        }
        Ok((xs[0], c, xs[2..].iter().product()))
    }

    #[allow(clippy::too_many_arguments)]
    fn bn_apply(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mean: &[f64],
        inv_std: &[f64],
        n: usize,
        c: usize,
        s: usize,
        batch_stats: bool,
    ) -> Var {
        let (xv, gv, bv) = (self.value(x), self.value(gamma), self.value(beta));
        let mut out = vec![0.0; xv.len()];
        for b in 0..n {
            for ch in 0..c {
                let base = (b * c + ch) * s;
                let (mu, is, ga, be) = (mean[ch], inv_std[ch], gv[ch], bv[ch]);
                for (o, v) in out[base..base + s].iter_mut().zip(&xv[base..base + s]) {
                    *o = ga * (v - mu) * is + be;
                }
            }
        }
        let shape = self.shape(x).to_vec();
        self.push(
            shape,
            out,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                mean: mean.into(),
                inv_std: inv_std.into(),
                batch_stats,
            },
        )
    }
}

pub(super) fn conv2d_backward(
    grads: &mut Grads<'_>,
    x: Var,
    w: Var,
    stride: usize,
    pad: usize,
    out_shape: &[usize],
    g: &[f64],
) {
    let nodes = grads.nodes;
    let xs = &nodes[x.index()].shape;
    let (n, o, geom) = geometry(xs, &nodes[w.index()].shape, stride, pad)
        .expect("shapes were validated in the forward pass");
    debug_assert_eq!(out_shape.iter().product::<usize>(), n * o * geom.out_px());
    let xv = &nodes[x.index()].value;
    let wv = &nodes[w.index()].value;
    let in_len = geom.c * geom.h * geom.w;
    let out_len = o * geom.out_px();
    let (patch, px) = (geom.patch(), geom.out_px());

    if let Some(gw) = grads.slot(w) {
        let per_sample = par::map_indexed(n, |i| {
            let xi = &xv[i * in_len..(i + 1) * in_len];
            let gi = &g[i * out_len..(i + 1) * out_len];
            let mut dw = vec![0.0; o * patch];
            if geom.is_pointwise() {
                gemm(o, px, patch, gi, false, xi, true, 0.0, &mut dw);
            } else {
                let mut cols = vec![0.0; patch * px];
                im2col(xi, &geom, &mut cols);
                gemm(o, px, patch, gi, false, &cols, true, 0.0, &mut dw);
            }
            dw
        });
        for dw in per_sample {
            gw.iter_mut().zip(&dw).for_each(|(a, b)| *a += b);
        }
    }
    if let Some(gx) = grads.slot(x) {
        par::for_each_chunk(gx, in_len, |i, dxi| {
            let gi = &g[i * out_len..(i + 1) * out_len];
            if geom.is_pointwise() {
                gemm(patch, o, px, wv, true, gi, false, 1.0, dxi);
            } else {
                let mut cols = vec![0.0; patch * px];
                gemm(patch, o, px, wv, true, gi, false, 0.0, &mut cols);
                col2im(&cols, &geom, dxi);
            }
        });
    }
}

pub(super) fn global_avg_pool_backward(grads: &mut Grads<'_>, x: Var, g: &[f64]) {
    let xs = grads.shape(x);
    let area = xs[xs.len() - 2] * xs[xs.len() - 1];
    if let Some(gx) = grads.slot(x) {
        for (plane, gv) in gx.chunks_mut(area).zip(g) {
            let d = gv / area as f64;
            plane.iter_mut().for_each(|s| *s += d);
        }
    }
}

pub(super) struct BnSaved<'a> {
    pub x: Var,
    pub gamma: Var,
    pub beta: Var,
    pub mean: &'a Arc<[f64]>,
    pub inv_std: &'a Arc<[f64]>,
    pub batch_stats: bool,
}

pub(super) fn batch_norm_backward(grads: &mut Grads<'_>, saved: BnSaved<'_>, g: &[f64]) {
    let nodes = grads.nodes;
    let xs = &nodes[saved.x.index()].shape;
    let (n, c) = (xs[0], xs[1]);
    let s: usize = xs[2..].iter().product();
    let xv = &nodes[saved.x.index()].value;
    let gamma = &nodes[saved.gamma.index()].value;
    let m = (n * s) as f64;

    // Per-channel Σg and Σg·x̂.
    let mut sum_g = vec![0.0; c];
    let mut sum_gx = vec![0.0; c];
    for b in 0..n {
        for ch in 0..c {
            let base = (b * c + ch) * s;
            let (mu, is) = (saved.mean[ch], saved.inv_std[ch]);
            for (gv, xv) in g[base..base + s].iter().zip(&xv[base..base + s]) {
                sum_g[ch] += gv;
                sum_gx[ch] += gv * (xv - mu) * is;
            }
        }
    }
    if let Some(gg) = grads.slot(saved.gamma) {
        gg.iter_mut().zip(&sum_gx).for_each(|(a, b)| *a += b);
    }
    if let Some(gb) = grads.slot(saved.beta) {
        gb.iter_mut().zip(&sum_g).for_each(|(a, b)| *a += b);
    }
    if let Some(gx) = grads.slot(saved.x) {
        for b in 0..n {
            for ch in 0..c {
                let base = (b * c + ch) * s;
                let (mu, is, ga) = (saved.mean[ch], saved.inv_std[ch], gamma[ch]);
                let rows = gx[base..base + s]
                    .iter_mut()
                    .zip(&g[base..base + s])
                    .zip(&xv[base..base + s]);
                if saved.batch_stats {
                    for ((d, gv), xv) in rows {
                        let xhat = (xv - mu) * is;
                        *d += ga * is / m * (m * gv - sum_g[ch] - xhat * sum_gx[ch]);
                    }
                } else {
                    for ((d, gv), _) in rows {
                        *d += ga * is * gv;
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_kernel_scales() {
        let mut g = Graph::new();
        let x = g.constant(vec![1, 2, 2], vec![1., 2., 3., 4.]).unwrap();
        let w = g.constant(vec![1, 1, 1, 1], vec![2.]).unwrap();
        let y = g.conv2d(x, w, 1, 0).unwrap();
        assert_eq!(g.shape(y), &[1, 2, 2]);
        assert_eq!(g.value(y), &[2., 4., 6., 8.]);
    }

    #[test]
    fn zeros_stay_zero() {
        let mut g = Graph::new();
        let x = g.constant(vec![2, 3, 5, 4], vec![0.; 120]).unwrap();
        let wv: Vec<f64> = (0..4 * 3 * 9).map(|i| (i as f64).sin()).collect();
        let w = g.constant(vec![4, 3, 3, 3], wv).unwrap();
        let y = g.conv2d(x, w, 2, 1).unwrap();
        assert_eq!(g.shape(y), &[2, 4, 3, 2]);
        assert!(g.value(y).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn output_size_formula_and_errors() {
        assert_eq!(conv_out_len(96, 3, 1, 1), Some(96));
        assert_eq!(conv_out_len(96, 3, 2, 1), Some(48));
        assert_eq!(conv_out_len(2, 5, 1, 1), None);
        let mut g = Graph::new();
        let x = g.constant(vec![1, 2, 2], vec![0.; 4]).unwrap();
        let w = g.constant(vec![1, 1, 5, 5], vec![0.; 25]).unwrap();
        assert!(matches!(g.conv2d(x, w, 1, 1), Err(Error::Dimension(_))));
        let w = g.constant(vec![1, 2, 1, 1], vec![0.; 2]).unwrap();
        assert!(matches!(g.conv2d(x, w, 1, 0), Err(Error::Dimension(_))));
    }

    #[test]
    fn padded_sum_kernel() {
        // 3x3 ones kernel over a 2x2 input with pad 1: each output is the
        // sum of its in-bounds neighbourhood, which is the whole input.
        let mut g = Graph::new();
        let x = g.constant(vec![1, 2, 2], vec![1., 2., 3., 4.]).unwrap();
        let w = g.constant(vec![1, 1, 3, 3], vec![1.; 9]).unwrap();
        let y = g.conv2d(x, w, 1, 1).unwrap();
        assert_eq!(g.value(y), &[10.; 4]);
    }

    #[test]
    fn pooling_examples() {
        let mut g = Graph::new();
        let x = g.constant(vec![1, 2, 2], vec![1., 2., 3., 4.]).unwrap();
        let y = g.global_avg_pool(x).unwrap();
        assert_eq!(g.value(y), &[2.5]);
        let x = g.constant(vec![2, 1, 3, 3], vec![7.; 18]).unwrap();
        let y = g.global_avg_pool(x).unwrap();
        assert_eq!(g.value(y), &[7., 7.]);
    }

    #[test]
    fn batch_norm_normalizes() {
        let mut g = Graph::new();
        let x = g
            .constant(vec![2, 2, 1, 2], vec![1., 3., 10., 10., 5., 7., 0., 20.])
            .unwrap();
        let ga = g.constant(vec![2], vec![1., 1.]).unwrap();
        let be = g.constant(vec![2], vec![0., 0.]).unwrap();
        let (y, mean, var) = g.batch_norm_train(x, ga, be, 0.0).unwrap();
        assert_eq!(mean, vec![4.0, 10.0]);
        assert_eq!(var, vec![5.0, 50.0]);
        let ch0: Vec<f64> = [0, 1, 4, 5].iter().map(|&i| g.value(y)[i]).collect();
        let m: f64 = ch0.iter().sum::<f64>() / 4.0;
        let v: f64 = ch0.iter().map(|x| x * x).sum::<f64>() / 4.0;
        assert!(m.abs() < 1e-12 && (v - 1.0).abs() < 1e-12);
    }
}
