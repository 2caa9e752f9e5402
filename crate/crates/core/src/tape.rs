//! Tape-based reverse-mode differentiation.
//!
//! Every primitive applied through a [`Tape`] appends one node holding its
//! value and the operand handles needed for the backward pass. Nodes are only
//! ever appended, so the tape order is a topological order and a reverse scan
//! visits every node after all of its consumers.
//!
//! Gradients are kept for leaves only. A tape supports exactly one call to
//! [`Tape::backward`].

use std::borrow::Cow;

use crate::error::{Error, Result};
use crate::tensor::{self, ConvGeom, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul { a: Var, b: Var, m: usize, k: usize, n: usize },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Exp(Var),
    Relu(Var),
    Reshape(Var),
    Sum(Var),
    Mean(Var),
    PopStd { x: Var, mean: f64 },
    Conv2d { input: Var, kernels: Var, geom: ConvGeom },
    ChannelBias { x: Var, bias: Var, plane: usize },
    AvgPool2x2 { x: Var, c: usize, h: usize, w: usize },
    CrossEntropy { logits: Var, label: usize, softmax: Vec<f64> },
}

#[derive(Debug)]
struct Node<'a> {
    value: Cow<'a, Tensor>,
    op: Op,
    requires_grad: bool,
}

/// Records primitive applications for one forward evaluation.
///
/// Leaves may borrow their tensors (model weights) for the lifetime `'a`, so
/// evaluating a model on a tape does not copy its parameters.
#[derive(Debug, Default)]
pub struct Tape<'a> {
    nodes: Vec<Node<'a>>,
    leaf_grads: Vec<Option<Vec<f64>>>,
    consumed: bool,
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn is_consumed(&self) -> bool {
        self.consumed
    }

    fn push(&mut self, value: Cow<'a, Tensor>, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push_op(&mut self, value: Tensor, op: Op, operands: &[Var]) -> Var {
        let rg = operands.iter().any(|v| self.nodes[v.0].requires_grad);
        self.push(Cow::Owned(value), op, rg)
    }

    /// Constant leaf borrowing `t`.
    pub fn constant(&mut self, t: &'a Tensor) -> Var {
        self.push(Cow::Borrowed(t), Op::Leaf, false)
    }

    /// Leaf borrowing `t` whose gradient is retained by `backward`.
    pub fn param(&mut self, t: &'a Tensor) -> Var {
        self.push(Cow::Borrowed(t), Op::Leaf, true)
    }

    /// Owned leaf.
    pub fn leaf(&mut self, t: Tensor, requires_grad: bool) -> Var {
        self.push(Cow::Owned(t), Op::Leaf, requires_grad)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn data(&self, v: Var) -> &[f64] {
        self.nodes[v.0].value.data()
    }

    /// Gradient of the last `backward` root with respect to leaf `v`.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.leaf_grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Copy of leaf `v` with its grad slot filled (when available).
    pub fn leaf_tensor(&self, v: Var) -> Tensor {
        let mut t = self.value(v).clone();
        if let Some(g) = self.grad(v) {
            t.set_grad(g.to_vec()).expect("grad length matches value");
        }
        t
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::dim(format!(
                "{what}: shapes {:?} and {:?} differ",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    fn map(&self, x: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let t = self.value(x);
        Tensor::new(t.shape().to_vec(), t.data().iter().map(|&v| f(v)).collect())
            .expect("elementwise map preserves shape")
    }

    fn zip(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let ta = self.value(a);
        let data = ta
            .data()
            .iter()
            .zip(self.data(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        Tensor::new(ta.shape().to_vec(), data).expect("elementwise zip preserves shape")
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::dim(format!("matmul of {sa:?} by {sb:?}")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let out = tensor::matmul_raw(self.data(a), self.data(b), m, k, n);
        let t = Tensor::new(vec![m, n], out)?;
        Ok(self.push_op(t, Op::MatMul { a, b, m, k, n }, &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let t = self.zip(a, b, |x, y| x + y);
        Ok(self.push_op(t, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let t = self.zip(a, b, |x, y| x - y);
        Ok(self.push_op(t, Op::Sub(a, b), &[a, b]))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let t = self.zip(a, b, |x, y| x * y);
        Ok(self.push_op(t, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let t = self.map(x, |v| v * c);
        self.push_op(t, Op::Scale(x, c), &[x])
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        let t = self.map(x, |v| v + c);
        self.push_op(t, Op::AddScalar(x), &[x])
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let t = self.map(x, f64::exp);
        self.push_op(t, Op::Exp(x), &[x])
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let t = self.map(x, |v| v.max(0.0));
        self.push_op(t, Op::Relu(x), &[x])
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).reshape(shape)?;
        Ok(self.push_op(t, Op::Reshape(x), &[x]))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.data(x).iter().sum();
        self.push_op(Tensor::scalar(s), Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let d = self.data(x);
        let s = d.iter().sum::<f64>() / d.len() as f64;
        self.push_op(Tensor::scalar(s), Op::Mean(x), &[x])
    }

    /// `sqrt(mean((x - mean(x))²))` over all elements.
    pub fn population_std(&mut self, x: Var) -> Result<Var> {
        let d = self.data(x);
        let s = tensor::population_std(d)?;
        let mean = d.iter().sum::<f64>() / d.len() as f64;
        Ok(self.push_op(Tensor::scalar(s), Op::PopStd { x, mean }, &[x]))
    }

    /// Cross-correlation of a `C×H×W` input with `O×C×k×k` kernels.
    pub fn conv2d(&mut self, input: Var, kernels: Var, stride: usize, padding: usize) -> Result<Var> {
        let geom = ConvGeom::new(self.shape(input), self.shape(kernels), stride, padding)?;
        let out = geom.forward(self.data(input), self.data(kernels));
        let t = Tensor::new(vec![geom.c_out, geom.h_out, geom.w_out], out)?;
        Ok(self.push_op(t, Op::Conv2d { input, kernels, geom }, &[input, kernels]))
    }

    /// Adds `bias[c]` to every element of channel `c` of a `C×…` tensor.
    pub fn channel_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (sx, sb) = (self.shape(x), self.shape(bias));
        if sx.is_empty() || sb != [sx[0]] {
            return Err(Error::dim(format!("channel bias {sb:?} for tensor {sx:?}")));
        }
        let plane = self.value(x).len() / sx[0];
        let b = self.data(bias);
        let data = self
            .data(x)
            .iter()
            .enumerate()
            .map(|(i, v)| v + b[i / plane])
            .collect();
        let t = Tensor::new(sx.to_vec(), data)?;
        Ok(self.push_op(t, Op::ChannelBias { x, bias, plane }, &[x, bias]))
    }

    /// 2×2 average pooling with stride 2; odd trailing rows/columns are dropped.
    pub fn avgpool2x2(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x);
        if s.len() != 3 || s[1] < 2 || s[2] < 2 {
            return Err(Error::dim(format!("avgpool2x2 needs C×H×W with H,W ≥ 2, got {s:?}")));
        }
        let (c, h, w) = (s[0], s[1], s[2]);
        let out = tensor::avgpool2x2_raw(self.data(x), c, h, w);
        let t = Tensor::new(vec![c, h / 2, w / 2], out)?;
        Ok(self.push_op(t, Op::AvgPool2x2 { x, c, h, w }, &[x]))
    }

    /// Softmax cross-entropy of a logit vector against a class index.
    pub fn cross_entropy(&mut self, logits: Var, label: usize) -> Result<Var> {
        let d = self.data(logits);
        if label >= d.len() {
            return Err(Error::contract(format!(
                "label {label} out of range for {} logits",
                d.len()
            )));
        }
        let max = d.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = d.iter().map(|v| (v - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        let softmax: Vec<f64> = exps.iter().map(|e| e / z).collect();
        let loss = z.ln() + max - d[label];
        Ok(self.push_op(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                label,
                softmax,
            },
            &[logits],
        ))
    }

    /// Propagates `∂root/∂·` to every leaf that requires a gradient.
    ///
    /// Leaves that do not influence `root` receive a zero gradient.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if self.consumed {
            return Err(Error::State("tape already used for a backward sweep".into()));
        }
        if self.value(root).len() != 1 {
            return Err(Error::contract(format!(
                "backward root must be a scalar, got shape {:?}",
                self.shape(root)
            )));
        }
        self.consumed = true;

        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; n];
        grads[root.0] = Some(vec![1.0]);

        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            if matches!(self.nodes[i].op, Op::Leaf) {
                grads[i] = Some(g);
                continue;
            }
            self.propagate(i, &g, &mut grads);
        }

        self.leaf_grads = (0..n)
            .map(|i| {
                let node = &self.nodes[i];
                if matches!(node.op, Op::Leaf) && node.requires_grad {
                    Some(grads[i].take().unwrap_or_else(|| vec![0.0; node.value.len()]))
                } else {
                    None
                }
            })
            .collect();
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let needs = |v: Var| self.nodes[v.0].requires_grad;
        let mut acc = |v: Var, delta: Vec<f64>| match &mut grads[v.0] {
            Some(existing) => existing.iter_mut().zip(&delta).for_each(|(e, d)| *e += d),
            slot @ None => *slot = Some(delta),
        };

        match &self.nodes[i].op {
            Op::Leaf => {}
            &Op::MatMul { a, b, m, k, n } => {
                if needs(a) {
                    acc(a, tensor::matmul_a_bt(g, self.data(b), m, n, k));
                }
                if needs(b) {
                    acc(b, tensor::matmul_at_b(self.data(a), g, m, k, n));
                }
            }
            &Op::Add(a, b) => {
                if needs(a) {
                    acc(a, g.to_vec());
                }
                if needs(b) {
                    acc(b, g.to_vec());
                }
            }
            &Op::Sub(a, b) => {
                if needs(a) {
                    acc(a, g.to_vec());
                }
                if needs(b) {
                    acc(b, g.iter().map(|v| -v).collect());
                }
            }
            &Op::Mul(a, b) => {
                if needs(a) {
                    acc(a, g.iter().zip(self.data(b)).map(|(g, y)| g * y).collect());
                }
                if needs(b) {
                    acc(b, g.iter().zip(self.data(a)).map(|(g, x)| g * x).collect());
                }
            }
            &Op::Scale(x, c) => acc(x, g.iter().map(|v| v * c).collect()),
            &Op::AddScalar(x) | &Op::Reshape(x) => acc(x, g.to_vec()),
            &Op::Exp(x) => {
                let y = self.nodes[i].value.data();
                acc(x, g.iter().zip(y).map(|(g, y)| g * y).collect());
            }
            &Op::Relu(x) => {
                let d = self.data(x);
                acc(x, g.iter().zip(d).map(|(g, &v)| if v > 0.0 { *g } else { 0.0 }).collect());
            }
            &Op::Sum(x) => acc(x, vec![g[0]; self.value(x).len()]),
            &Op::Mean(x) => {
                let n = self.value(x).len();
                acc(x, vec![g[0] / n as f64; n]);
            }
            &Op::PopStd { x, mean } => {
                let d = self.data(x);
                let s = self.nodes[i].value.data()[0];
                let n = d.len() as f64;
                // The derivative of sqrt is unbounded at 0; use the zero subgradient.
                let delta = if s > 0.0 {
                    d.iter().map(|v| g[0] * (v - mean) / (n * s)).collect()
                } else {
                    vec![0.0; d.len()]
                };
                acc(x, delta);
            }
            Op::Conv2d {
                input,
                kernels,
                geom,
            } => {
                if needs(*input) {
                    acc(*input, geom.grad_input(g, self.data(*kernels)));
                }
                if needs(*kernels) {
                    acc(*kernels, geom.grad_kernels(g, self.data(*input)));
                }
            }
            &Op::ChannelBias { x, bias, plane } => {
                if needs(x) {
                    acc(x, g.to_vec());
                }
                if needs(bias) {
                    let mut gb = vec![0.0; self.value(bias).len()];
                    for (j, v) in g.iter().enumerate() {
                        gb[j / plane] += v;
                    }
                    acc(bias, gb);
                }
            }
            &Op::AvgPool2x2 { x, c, h, w } => {
                let (ho, wo) = (h / 2, w / 2);
                let mut gx = vec![0.0; c * h * w];
                for ch in 0..c {
                    for y in 0..ho {
                        for xx in 0..wo {
                            let q = 0.25 * g[(ch * ho + y) * wo + xx];
                            let base = ch * h * w;
                            gx[base + 2 * y * w + 2 * xx] += q;
                            gx[base + 2 * y * w + 2 * xx + 1] += q;
                            gx[base + (2 * y + 1) * w + 2 * xx] += q;
                            gx[base + (2 * y + 1) * w + 2 * xx + 1] += q;
                        }
                    }
                }
                acc(x, gx);
            }
            Op::CrossEntropy {
                logits,
                label,
                softmax,
            } => {
                let mut d: Vec<f64> = softmax.iter().map(|p| g[0] * p).collect();
                d[*label] -= g[0];
                acc(*logits, d);
            }
        }
    }
}
