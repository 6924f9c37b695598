//! Matrix products, backed by `matrixmultiply`'s blocked dgemm.

use super::{Grads, Graph, Op, Var};
use crate::error::{Error, Result};

/// `c = a·b + beta·c` where `a` is `m×k` and `b` is `k×n`, both row-major.
/// `ta`/`tb` read the stored matrix as its transpose (stored `k×m` / `n×k`).
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    ta: bool,
    b: &[f64],
    tb: bool,
    beta: f64,
    c: &mut [f64],
) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the slices are exactly m×k, k×n and m×n and the strides stay
    // inside them; `c` does not alias `a` or `b` because it is borrowed mutably.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

impl Graph {
    /// Matrix product of `a[m×k]` and `b[k×p]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::Dimension(format!(
                "matmul of {sa:?} and {sb:?}: inner dimensions must agree"
            )));
        }
        let (m, k, p) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * p];
        gemm(m, k, p, self.value(a), false, self.value(b), false, 0.0, &mut out);
        Ok(self.push(vec![m, p], out, Op::MatMul(a, b)))
    }

    /// `x[N×D] + b[D]` broadcast over rows.
    pub fn add_row_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (sx, sb) = (self.shape(x), self.shape(b));
        if sx.len() != 2 || sb.len() != 1 || sx[1] != sb[0] {
            return Err(Error::Dimension(format!(
                "add_row_bias of {sx:?} and {sb:?}"
            )));
        }
        let d = sb[0];
        let bias = self.value(b);
        let out: Vec<f64> = self
            .value(x)
            .iter()
            .enumerate()
            .map(|(i, v)| v + bias[i % d])
            .collect();
        let shape = sx.to_vec();
        Ok(self.push(shape, out, Op::AddRowBias(x, b)))
    }

    /// Fully connected layer: `x·w + b`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let y = self.matmul(x, w)?;
        self.add_row_bias(y, b)
    }
}

pub(super) fn matmul_backward(grads: &mut Grads<'_>, a: Var, b: Var, g: &[f64]) {
    let (sa, sb) = (grads.shape(a), grads.shape(b));
    let (m, k, p) = (sa[0], sa[1], sb[1]);
    let (va, vb) = (grads.value(a), grads.value(b));
    if let Some(ga) = grads.slot(a) {
        // ga += g · bᵀ
        gemm(m, p, k, g, false, vb, true, 1.0, ga);
    }
    if let Some(gb) = grads.slot(b) {
        // gb += aᵀ · g
        gemm(k, m, p, va, true, g, false, 1.0, gb);
    }
}

pub(super) fn add_row_bias_backward(grads: &mut Grads<'_>, x: Var, b: Var, g: &[f64]) {
    if let Some(gx) = grads.slot(x) {
        gx.iter_mut().zip(g).for_each(|(a, v)| *a += v);
    }
    if let Some(gb) = grads.slot(b) {
        let d = gb.len();
        for row in g.chunks(d) {
            gb.iter_mut().zip(row).for_each(|(a, v)| *a += v);
        }
    }
}
