//! Reverse-mode automatic differentiation over dense `f64` arrays.
//!
//! A [`Graph`] is a tape: every operation appends a node holding its output
//! value and the inputs it was computed from. [`Graph::backward`] walks the
//! tape once in reverse creation order and accumulates gradients into every
//! leaf that was created with `requires_grad`.
//!
//! Parameters live outside the tape as [`Tensor`]s. A training step binds
//! them with [`Graph::leaf`], runs the forward pass, calls `backward`, and
//! then copies the leaf gradients back with [`Graph::accumulate_grad_into`].

mod conv;
mod elementwise;
pub mod gradcheck;
pub mod linalg;
mod optim;
mod reduce;

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use elementwise::sigmoid;
pub use optim::SgdMomentum;
pub use reduce::{log_sum_exp, softmax};
pub(crate) use reduce::euclidean;

/// Lower bound applied to every `log` argument.
pub const LOG_EPS: f64 = 1e-7;

/// Dense row-major array with an attached gradient buffer.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    values: Vec<f64>,
    grad: Vec<f64>,
    requires_grad: bool,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("requires_grad", &self.requires_grad)
            .finish_non_exhaustive()
    }
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

fn check_shape(shape: &[usize], len: usize) -> Result<()> {
    if shape.is_empty() || shape.contains(&0) {
        return Err(Error::Dimension(format!(
            "shape {shape:?} must be a non-empty list of positive dimensions"
        )));
    }
    if numel(shape) != len {
        return Err(Error::Dimension(format!(
            "shape {shape:?} holds {} values, got {len}",
            numel(shape)
        )));
    }
    Ok(())
}

impl Tensor {
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        check_shape(&shape, values.len())?;
        let grad = vec![0.0; values.len()];
        Ok(Self {
            shape,
            values,
            grad,
            requires_grad: false,
        })
    }

    /// A trainable tensor.
    pub fn param(shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        let mut t = Self::new(shape, values)?;
        t.requires_grad = true;
        Ok(t)
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = numel(&shape);
        Self::new(shape, vec![0.0; n]).expect("zeros: shape must be positive")
    }

    pub fn scalar(v: f64) -> Self {
        Self::new(vec![1], vec![v]).expect("scalar shape")
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn grad(&self) -> &[f64] {
        &self.grad
    }

    pub fn grad_mut(&mut self) -> &mut [f64] {
        &mut self.grad
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn set_requires_grad(&mut self, on: bool) {
        self.requires_grad = on;
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.values.len() != 1 {
            return Err(Error::Usage(format!(
                "item() on tensor of shape {:?}",
                self.shape
            )));
        }
        Ok(self.values[0])
    }
}

/// Handle to a node on a [`Graph`]. Only meaningful for the graph that made it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Elementwise derivative supplied by a caller of [`Graph::map`].
pub type Derivative = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

#[derive(Clone)]
pub(crate) enum Op {
    Leaf,
    MatMul(Var, Var),
    AddRowBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    Sigmoid(Var),
    LogClamp(Var),
    Map(Var, Derivative),
    Sum(Var),
    Mean(Var),
    SoftmaxRows(Var),
    CrossEntropyRows(Var, Arc<[usize]>),
    L2NormalizeRows(Var),
    PairwiseDistance(Var),
    Gather(Var, Arc<[usize]>),
    Slice {
        x: Var,
        axis: usize,
        start: usize,
    },
    Concat {
        inputs: Vec<Var>,
        axis: usize,
    },
    Reshape(Var),
    Conv2d {
        x: Var,
        w: Var,
        stride: usize,
        pad: usize,
    },
    GlobalAvgPool(Var),
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        mean: Arc<[f64]>,
        inv_std: Arc<[f64]>,
        batch_stats: bool,
    },
}

/// Names of every non-leaf op the tape can record.
pub fn differentiable_op_names() -> &'static [&'static str] {
    &[
        "matmul",
        "add_row_bias",
        "add",
        "sub",
        "mul",
        "scale",
        "add_scalar",
        "relu",
        "sigmoid",
        "log",
        "map",
        "sum",
        "mean",
        "softmax",
        "cross_entropy",
        "l2_normalize",
        "pairwise_distance",
        "gather",
        "slice",
        "concat",
        "reshape",
        "conv2d",
        "global_avg_pool",
        "batch_norm",
    ]
}

impl Op {
    #[allow(dead_code)]
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::AddRowBias(..) => "add_row_bias",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::AddScalar(..) => "add_scalar",
            Op::Relu(..) => "relu",
            Op::Sigmoid(..) => "sigmoid",
            Op::LogClamp(..) => "log",
            Op::Map(..) => "map",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
            Op::SoftmaxRows(..) => "softmax",
            Op::CrossEntropyRows(..) => "cross_entropy",
            Op::L2NormalizeRows(..) => "l2_normalize",
            Op::PairwiseDistance(..) => "pairwise_distance",
            Op::Gather(..) => "gather",
            Op::Slice { .. } => "slice",
            Op::Concat { .. } => "concat",
            Op::Reshape(..) => "reshape",
            Op::Conv2d { .. } => "conv2d",
            Op::GlobalAvgPool(..) => "global_avg_pool",
            Op::BatchNorm { .. } => "batch_norm",
        }
    }
}

pub(crate) struct Node {
    pub(crate) shape: Vec<usize>,
    pub(crate) value: Vec<f64>,
    pub(crate) op: Op,
    pub(crate) requires_grad: bool,
    /// Accumulated gradient; only populated for leaves.
    grad: Option<Vec<f64>>,
}

/// Computation tape. Nodes are stored in creation order, which is a
/// topological order because every op only references existing nodes.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Per-backward-pass gradient buffers, allocated lazily.
pub(crate) struct Grads<'a> {
    pub(crate) nodes: &'a [Node],
    bufs: Vec<Option<Vec<f64>>>,
}

impl<'a> Grads<'a> {
    /// Mutable gradient buffer for `v`, or `None` if `v` does not need one.
    pub(crate) fn slot(&mut self, v: Var) -> Option<&mut [f64]> {
        let node = &self.nodes[v.0];
        if !node.requires_grad {
            return None;
        }
        let len = node.value.len();
        Some(self.bufs[v.0].get_or_insert_with(|| vec![0.0; len]))
    }

    pub(crate) fn value(&self, v: Var) -> &'a [f64] {
        &self.nodes[v.0].value
    }

    pub(crate) fn shape(&self, v: Var) -> &'a [usize] {
        &self.nodes[v.0].shape
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub(crate) fn push(&mut self, shape: Vec<usize>, value: Vec<f64>, op: Op) -> Var {
        debug_assert_eq!(numel(&shape), value.len(), "{}", op.name());
        let requires_grad = match &op {
            Op::Leaf => false,
            other => inputs_of(other).iter().any(|v| self.nodes[v.0].requires_grad),
        };
        self.nodes.push(Node {
            shape,
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn push_leaf(&mut self, shape: Vec<usize>, value: Vec<f64>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            shape,
            value,
            op: Op::Leaf,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Bind a tensor's current values. Gradients flow to the leaf only if
    /// the tensor has `requires_grad` set.
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        self.push_leaf(t.shape.clone(), t.values.clone(), t.requires_grad)
    }

    /// Bind a tensor as a constant regardless of its `requires_grad` flag.
    pub fn frozen(&mut self, t: &Tensor) -> Var {
        self.push_leaf(t.shape.clone(), t.values.clone(), false)
    }

    pub fn constant(&mut self, shape: Vec<usize>, values: Vec<f64>) -> Result<Var> {
        check_shape(&shape, values.len())?;
        Ok(self.push_leaf(shape, values, false))
    }

    pub fn variable(&mut self, shape: Vec<usize>, values: Vec<f64>) -> Result<Var> {
        check_shape(&shape, values.len())?;
        Ok(self.push_leaf(shape, values, true))
    }

    /// Copy of `v`'s value as a constant leaf: gradients stop here.
    pub fn detach(&mut self, v: Var) -> Var {
        let n = &self.nodes[v.0];
        let (shape, value) = (n.shape.clone(), n.value.clone());
        self.push_leaf(shape, value, false)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Value of a one-element node.
    pub fn scalar(&self, v: Var) -> f64 {
        let n = &self.nodes[v.0];
        assert_eq!(n.value.len(), 1, "scalar() on shape {:?}", n.shape);
        n.value[0]
    }

    /// Accumulated gradient of a leaf, if any backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].grad.as_deref()
    }

    /// Node value and gradient packaged as a tensor.
    pub fn to_tensor(&self, v: Var) -> Tensor {
        let n = &self.nodes[v.0];
        Tensor {
            shape: n.shape.clone(),
            values: n.value.clone(),
            grad: n.grad.clone().unwrap_or_else(|| vec![0.0; n.value.len()]),
            requires_grad: n.requires_grad,
        }
    }

    /// Add the leaf gradient of `v` into `t.grad`.
    pub fn accumulate_grad_into(&self, v: Var, t: &mut Tensor) -> Result<()> {
        let n = &self.nodes[v.0];
        if n.shape != t.shape {
            return Err(Error::Dimension(format!(
                "gradient of shape {:?} cannot accumulate into tensor of shape {:?}",
                n.shape, t.shape
            )));
        }
        if let Some(g) = &n.grad {
            t.grad.iter_mut().zip(g).for_each(|(a, b)| *a += b);
        }
        Ok(())
    }

    /// Reset all leaf gradients on this graph.
    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    /// Reverse pass from a one-element root.
    ///
    /// Leaf gradients accumulate across calls: running `backward` twice
    /// without [`Graph::zero_grad`] doubles them.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        let root_node = self
            .nodes
            .get(root.0)
            .ok_or_else(|| Error::Usage(format!("root {root:?} is not on this graph")))?;
        if root_node.value.len() != 1 {
            return Err(Error::Usage(format!(
                "backward requires a scalar root, got shape {:?}",
                root_node.shape
            )));
        }
        if !root_node.requires_grad {
            return Ok(());
        }

        let leaf_grads = {
            let mut grads = Grads {
                nodes: &self.nodes,
                bufs: vec![None; root.0 + 1],
            };
            grads.bufs[root.0] = Some(vec![1.0]);
            let mut leaf_grads = Vec::new();
            for i in (0..=root.0).rev() {
                let Some(g) = grads.bufs[i].take() else {
                    continue;
                };
                let node = &self.nodes[i];
                if matches!(node.op, Op::Leaf) {
                    leaf_grads.push((i, g));
                } else {
                    backward_node(&node.op, i, &g, &mut grads);
                }
            }
            leaf_grads
        };

        for (i, g) in leaf_grads {
            match &mut self.nodes[i].grad {
                Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                slot @ None => *slot = Some(g),
            }
        }
        Ok(())
    }
}

fn inputs_of(op: &Op) -> Vec<Var> {
    match op {
        Op::Leaf => vec![],
        Op::MatMul(a, b)
        | Op::AddRowBias(a, b)
        | Op::Add(a, b)
        | Op::Sub(a, b)
        | Op::Mul(a, b) => vec![*a, *b],
        Op::Scale(a, _)
        | Op::AddScalar(a)
        | Op::Relu(a)
        | Op::Sigmoid(a)
        | Op::LogClamp(a)
        | Op::Map(a, _)
        | Op::Sum(a)
        | Op::Mean(a)
        | Op::SoftmaxRows(a)
        | Op::CrossEntropyRows(a, _)
        | Op::L2NormalizeRows(a)
        | Op::PairwiseDistance(a)
        | Op::Gather(a, _)
        | Op::Reshape(a)
        | Op::GlobalAvgPool(a) => vec![*a],
        Op::Slice { x, .. } => vec![*x],
        Op::Concat { inputs, .. } => inputs.clone(),
        Op::Conv2d { x, w, .. } => vec![*x, *w],
        Op::BatchNorm { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
    }
}

fn backward_node(op: &Op, out: usize, g: &[f64], grads: &mut Grads<'_>) {
    let out_value = &grads.nodes[out].value;
    match op {
        Op::Leaf => unreachable!("leaves are handled by the caller"),
        Op::MatMul(a, b) => linalg::matmul_backward(grads, *a, *b, g),
        Op::AddRowBias(x, b) => linalg::add_row_bias_backward(grads, *x, *b, g),
        Op::Add(a, b) => elementwise::add_backward(grads, *a, *b, g, 1.0),
        Op::Sub(a, b) => elementwise::add_backward(grads, *a, *b, g, -1.0),
        Op::Mul(a, b) => elementwise::mul_backward(grads, *a, *b, g),
        Op::Scale(a, c) => elementwise::scale_backward(grads, *a, *c, g),
        Op::AddScalar(a) => elementwise::scale_backward(grads, *a, 1.0, g),
        Op::Relu(a) => elementwise::relu_backward(grads, *a, g),
        Op::Sigmoid(a) => elementwise::sigmoid_backward(grads, *a, out_value, g),
        Op::LogClamp(a) => elementwise::log_backward(grads, *a, g),
        Op::Map(a, d) => elementwise::map_backward(grads, *a, d, g),
        Op::Sum(a) => reduce::sum_backward(grads, *a, g[0]),
        Op::Mean(a) => {
            let n = grads.value(*a).len() as f64;
            reduce::sum_backward(grads, *a, g[0] / n)
        }
        Op::SoftmaxRows(a) => reduce::softmax_backward(grads, *a, out_value, g),
        Op::CrossEntropyRows(a, labels) => reduce::cross_entropy_backward(grads, *a, labels, g),
        Op::L2NormalizeRows(a) => reduce::l2_normalize_backward(grads, *a, out_value, g),
        Op::PairwiseDistance(a) => reduce::pairwise_distance_backward(grads, *a, out_value, g),
        Op::Gather(a, idx) => reduce::gather_backward(grads, *a, idx, g),
        Op::Slice { x, axis, start } => {
            let out_shape = &grads.nodes[out].shape;
            reduce::slice_backward(grads, *x, *axis, *start, out_shape, g)
        }
        Op::Concat { inputs, axis } => reduce::concat_backward(grads, inputs, *axis, g),
        Op::Reshape(a) => elementwise::scale_backward(grads, *a, 1.0, g),
        Op::Conv2d { x, w, stride, pad } => {
            let out_shape = &grads.nodes[out].shape;
            conv::conv2d_backward(grads, *x, *w, *stride, *pad, out_shape, g)
        }
        Op::GlobalAvgPool(a) => conv::global_avg_pool_backward(grads, *a, g),
        Op::BatchNorm {
            x,
            gamma,
            beta,
            mean,
            inv_std,
            batch_stats,
        } => conv::batch_norm_backward(
            grads,
            conv::BnSaved {
                x: *x,
                gamma: *gamma,
                beta: *beta,
                mean,
                inv_std,
                batch_stats: *batch_stats,
            },
            g,
        ),
    }
}
