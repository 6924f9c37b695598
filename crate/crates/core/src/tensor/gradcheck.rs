//! Central finite-difference verification of every differentiable op.
//!
//! Each registered op supplies a generator of randomized cases. A case is a
//! set of input tensors plus a closure that builds the op on a fresh graph.
//! The checker reduces the op output to a scalar with fixed non-uniform
//! weights, differentiates it once analytically and once by central
//! differences, and reports `‖analytic − numeric‖ / max(‖analytic‖, ‖numeric‖)`.

use std::time::Instant;

use rand::Rng as _;
use serde::Serialize;

use super::{Graph, Tensor, Var};
use crate::error::Result;
use crate::rng::{self, Rng};

pub const DEFAULT_STEP: f64 = 1e-5;
pub const DEFAULT_TOLERANCE: f64 = 1e-5;

pub type Builder = Box<dyn Fn(&mut Graph, &[Var]) -> Result<Var> + Send + Sync>;

/// One randomized instance of an op.
pub struct Case {
    pub inputs: Vec<Tensor>,
    pub build: Builder,
}

impl Case {
    pub fn new(
        inputs: Vec<Tensor>,
        build: impl Fn(&mut Graph, &[Var]) -> Result<Var> + Send + Sync + 'static,
    ) -> Self {
        Self {
            inputs,
            build: Box::new(build),
        }
    }
}

fn reduction_weights(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| ((i as f64 + 1.0) * 0.754_877_666).sin() + 0.25)
        .collect()
}

fn scalar_of(case: &Case, inputs: &[Tensor]) -> Result<(Graph, Var, Vec<Var>)> {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t)).collect();
    let out = (case.build)(&mut g, &vars)?;
    let n = g.value(out).len();
    let root = if n == 1 {
        out
    } else {
        let shape = g.shape(out).to_vec();
        let w = g.constant(shape, reduction_weights(n))?;
        let weighted = g.mul(out, w)?;
        g.sum(weighted)
    };
    Ok((g, root, vars))
}

/// Worst relative error over all inputs of one case.
pub fn check_case(case: &Case, step: f64) -> Result<f64> {
    let mut inputs: Vec<Tensor> = case
        .inputs
        .iter()
        .cloned()
        .map(|mut t| {
            t.set_requires_grad(true);
            t
        })
        .collect();
    let (mut g, root, vars) = scalar_of(case, &inputs)?;
    g.backward(root)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(&inputs)
        .map(|(v, t)| {
            g.grad(*v)
                .map(<[f64]>::to_vec)
                .unwrap_or_else(|| vec![0.0; t.numel()])
        })
        .collect();

    let mut worst: f64 = 0.0;
    for (k, an) in analytic.iter().enumerate() {
        let mut numeric = vec![0.0; an.len()];
        for (i, slot) in numeric.iter_mut().enumerate() {
            let orig = inputs[k].values()[i];
            inputs[k].values_mut()[i] = orig + step;
            let (gp, rp, _) = scalar_of(case, &inputs)?;
            inputs[k].values_mut()[i] = orig - step;
            let (gm, rm, _) = scalar_of(case, &inputs)?;
            inputs[k].values_mut()[i] = orig;
            *slot = (gp.scalar(rp) - gm.scalar(rm)) / (2.0 * step);
        }
        worst = worst.max(relative_error(an, &numeric));
    }
    Ok(worst)
}

pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let scale = norm(a).max(norm(b));
    if scale < 1e-12 {
        norm(&diff)
    } else {
        norm(&diff) / scale
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct OpCheck {
    pub op: String,
    pub cases: usize,
    pub worst_relative_error: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct GradcheckReport {
    pub tolerance: f64,
    pub step: f64,
    pub seconds: f64,
    pub ops: Vec<OpCheck>,
}

impl GradcheckReport {
    pub fn all_passed(&self) -> bool {
        self.ops.iter().all(|o| o.passed)
    }
}

pub type Generator = fn(&mut Rng) -> Case;

/// Run `cases` randomized instances of each generator.
pub fn check_ops(ops: &[(&str, Generator)], cases: usize, seed: u64, tolerance: f64) -> Result<GradcheckReport> {
    let start = Instant::now();
    let mut out = Vec::with_capacity(ops.len());
    for (k, (name, gen)) in ops.iter().enumerate() {
        let mut r = rng::derive(seed, k as u64);
        let mut worst: f64 = 0.0;
        for _ in 0..cases {
            let case = gen(&mut r);
            let err = check_case(&case, DEFAULT_STEP)?;
            worst = if err.is_nan() { f64::INFINITY } else { worst.max(err) };
        }
        out.push(OpCheck {
            op: name.to_string(),
            cases,
            worst_relative_error: worst,
            passed: worst < tolerance,
        });
    }
    Ok(GradcheckReport {
        tolerance,
        step: DEFAULT_STEP,
        seconds: start.elapsed().as_secs_f64(),
        ops: out,
    })
}

/// The full suite over [`registry`].
pub fn run_suite(cases: usize, seed: u64) -> Result<GradcheckReport> {
    check_ops(&registry(), cases, seed, DEFAULT_TOLERANCE)
}

fn dim(r: &mut Rng, lo: usize, hi: usize) -> usize {
    r.random_range(lo..=hi)
}

fn normal_tensor(r: &mut Rng, shape: Vec<usize>) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, rng::normals(r, n, 1.0)).expect("positive shape")
}

/// Values bounded away from zero so that kinks (relu) are never straddled.
fn signed_away_from_zero(r: &mut Rng, shape: Vec<usize>) -> Tensor {
    let n = shape.iter().product();
    let v = (0..n)
        .map(|_| {
            let m = rng::uniform(r, 0.05, 2.0);
            if r.random_bool(0.5) { m } else { -m }
        })
        .collect();
    Tensor::new(shape, v).expect("positive shape")
}

fn positive_tensor(r: &mut Rng, shape: Vec<usize>, lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    let v = (0..n).map(|_| rng::uniform(r, lo, hi)).collect();
    Tensor::new(shape, v).expect("positive shape")
}

fn unary(r: &mut Rng, f: fn(&mut Graph, Var) -> Result<Var>) -> Case {
    let shape = vec![dim(r, 1, 4), dim(r, 1, 5)];
    Case::new(vec![normal_tensor(r, shape)], move |g, v| f(g, v[0]))
}

fn binary(r: &mut Rng, f: fn(&mut Graph, Var, Var) -> Result<Var>) -> Case {
    let shape = vec![dim(r, 1, 4), dim(r, 1, 5)];
    Case::new(
        vec![normal_tensor(r, shape.clone()), normal_tensor(r, shape)],
        move |g, v| f(g, v[0], v[1]),
    )
}

/// Every differentiable op with its case generator.
pub fn registry() -> Vec<(&'static str, Generator)> {
    vec![
        ("matmul", |r| {
            let (m, k, p) = (dim(r, 1, 5), dim(r, 1, 5), dim(r, 1, 5));
            Case::new(
                vec![normal_tensor(r, vec![m, k]), normal_tensor(r, vec![k, p])],
                |g, v| g.matmul(v[0], v[1]),
            )
        }),
        ("add_row_bias", |r| {
            let (n, d) = (dim(r, 1, 4), dim(r, 1, 5));
            Case::new(
                vec![normal_tensor(r, vec![n, d]), normal_tensor(r, vec![d])],
                |g, v| g.add_row_bias(v[0], v[1]),
            )
        }),
        ("add", |r| binary(r, |g, a, b| g.add(a, b))),
        ("sub", |r| binary(r, |g, a, b| g.sub(a, b))),
        ("mul", |r| binary(r, |g, a, b| g.mul(a, b))),
        ("scale", |r| {
            let c = rng::uniform(r, -3.0, 3.0);
            let shape = vec![dim(r, 1, 6)];
            let x = normal_tensor(r, shape);
            Case::new(vec![x], move |g, v| Ok(g.scale(v[0], c)))
        }),
        ("add_scalar", |r| {
            let c = rng::uniform(r, -3.0, 3.0);
            let shape = vec![dim(r, 1, 6)];
            let x = normal_tensor(r, shape);
            Case::new(vec![x], move |g, v| Ok(g.add_scalar(v[0], c)))
        }),
        ("relu", |r| {
            let shape = vec![dim(r, 1, 4), dim(r, 1, 5)];
            let x = signed_away_from_zero(r, shape);
            Case::new(vec![x], |g, v| Ok(g.relu(v[0])))
        }),
        ("sigmoid", |r| unary(r, |g, a| Ok(g.sigmoid(a)))),
        ("log", |r| {
            let shape = vec![dim(r, 1, 6)];
            let x = positive_tensor(r, shape, 0.2, 3.0);
            Case::new(vec![x], |g, v| Ok(g.log(v[0])))
        }),
        ("map", |r| unary(r, |g, a| Ok(g.map(a, f64::tanh, |x| 1.0 - x.tanh().powi(2))))),
        ("sum", |r| unary(r, |g, a| Ok(g.sum(a)))),
        ("mean", |r| unary(r, |g, a| Ok(g.mean(a)))),
        ("softmax", |r| unary(r, |g, a| g.softmax(a))),
        ("cross_entropy", |r| {
            let (n, c) = (dim(r, 1, 4), dim(r, 2, 6));
            let labels: Vec<usize> = (0..n).map(|_| r.random_range(0..c)).collect();
            let x = normal_tensor(r, vec![n, c]);
            Case::new(vec![x], move |g, v| g.cross_entropy(v[0], &labels))
        }),
        ("l2_normalize", |r| unary(r, |g, a| Ok(g.l2_normalize(a)))),
        ("pairwise_distance", |r| {
            let shape = vec![dim(r, 2, 5), dim(r, 1, 4)];
            let x = normal_tensor(r, shape);
            Case::new(vec![x], |g, v| g.pairwise_distance(v[0]))
        }),
        ("gather", |r| {
            let n = dim(r, 2, 8);
            let idx: Vec<usize> = (0..dim(r, 1, 6)).map(|_| r.random_range(0..n)).collect();
            let x = normal_tensor(r, vec![n]);
            Case::new(vec![x], move |g, v| g.gather(v[0], &idx))
        }),
        ("slice", |r| {
            let shape = vec![dim(r, 1, 3), dim(r, 1, 3), dim(r, 2, 6), dim(r, 1, 3)];
            let axis = r.random_range(0..4);
            let len = shape[axis];
            let start = r.random_range(0..len);
            let end = r.random_range(start + 1..=len);
            let x = normal_tensor(r, shape);
            Case::new(vec![x], move |g, v| g.slice(v[0], axis, start, end))
        }),
        ("concat", |r| {
            let (n, a, b) = (dim(r, 1, 3), dim(r, 1, 4), dim(r, 1, 4));
            let axis = r.random_range(0..2);
            let (sa, sb) = if axis == 0 {
                (vec![a, n], vec![b, n])
            } else {
                (vec![n, a], vec![n, b])
            };
            Case::new(
                vec![normal_tensor(r, sa), normal_tensor(r, sb)],
                move |g, v| g.concat(&[v[0], v[1]], axis),
            )
        }),
        ("reshape", |r| {
            let (a, b) = (dim(r, 1, 4), dim(r, 1, 4));
            let x = normal_tensor(r, vec![a, b]);
            Case::new(vec![x], move |g, v| g.reshape(v[0], vec![b, a]))
        }),
        ("conv2d", |r| {
            let (n, c, o) = (dim(r, 1, 2), dim(r, 1, 3), dim(r, 1, 3));
            let k = [1, 3][r.random_range(0..2)];
            let stride = dim(r, 1, 2);
            let pad = r.random_range(0..=k / 2);
            let (h, w) = (dim(r, k, 6), dim(r, k, 5));
            let x = normal_tensor(r, vec![n, c, h, w]);
            let wt = normal_tensor(r, vec![o, c, k, k]);
            Case::new(vec![x, wt], move |g, v| g.conv2d(v[0], v[1], stride, pad))
        }),
        ("global_avg_pool", |r| {
            let shape = vec![dim(r, 1, 3), dim(r, 1, 3), dim(r, 1, 4), dim(r, 1, 4)];
            let x = normal_tensor(r, shape);
            Case::new(vec![x], |g, v| g.global_avg_pool(v[0]))
        }),
        ("batch_norm", |r| {
            // With two values per channel the output is ±1 whatever the
            // input, so keep at least four.
            let c = dim(r, 1, 3);
            let shape = vec![dim(r, 2, 4), c, dim(r, 2, 3), dim(r, 1, 3)];
            let x = normal_tensor(r, shape);
            let ga = positive_tensor(r, vec![c], 0.5, 1.5);
            let be = normal_tensor(r, vec![c]);
            Case::new(vec![x, ga, be], |g, v| {
                Ok(g.batch_norm_train(v[0], v[1], v[2], 1e-5)?.0)
            })
        }),
        ("batch_norm_eval", |r| {
            let c = dim(r, 1, 3);
            let shape = vec![dim(r, 1, 3), c, dim(r, 1, 3), dim(r, 1, 3)];
            let x = normal_tensor(r, shape);
            let ga = normal_tensor(r, vec![c]);
            let be = normal_tensor(r, vec![c]);
            let mean = rng::normals(r, c, 1.0);
            let var: Vec<f64> = (0..c).map(|_| rng::uniform(r, 0.5, 2.0)).collect();
            Case::new(vec![x, ga, be], move |g, v| {
                g.batch_norm_eval(v[0], v[1], v[2], &mean, &var, 1e-5)
            })
        }),
        ("composite", composite_case),
    ]
}

/// A random chain of five ops on a shared input, with one input reused
/// by two consumers so the sum rule is exercised too.
fn composite_case(r: &mut Rng) -> Case {
    let (n, d) = (dim(r, 2, 4), dim(r, 2, 4));
    let plan: Vec<u8> = (0..5).map(|_| r.random_range(0..6)).collect();
    let x = normal_tensor(r, vec![n, d]);
    let w = normal_tensor(r, vec![d, d]);
    Case::new(vec![x, w], move |g, v| {
        let mut h = v[0];
        for step in &plan {
            h = match step {
                0 => g.matmul(h, v[1])?,
                1 => g.sigmoid(h),
                2 => g.softmax(h)?,
                3 => {
                    let s = g.sigmoid(h);
                    g.mul(s, h)?
                }
                4 => g.l2_normalize(h),
                _ => g.add(h, v[0])?,
            };
        }
        Ok(h)
    })
}
