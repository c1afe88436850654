//! Reverse-mode differentiation over the kernels in [`crate::ops`].
//!
//! A [`GradTape`] records each operation together with its inputs and its
//! output value. [`GradTape::backward`] walks the records in exact reverse
//! order and applies each operation's adjoint.

use crate::error::{Error, Result};
use crate::ops::{self, Axis, BatchNormStats, BinaryOp, Conv2dParams};
use crate::tensor::Tensor;

/// Handle to a value recorded on a tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
pub enum Op {
    Leaf,
    /// Inputs: x, weight, and bias when `bias` is set.
    Conv2d { params: Conv2dParams, bias: bool },
    PadReplicate { pad: usize },
    AvgPool2d { kernel: usize, stride: usize },
    AdaptiveAvgPool2d { oh: usize, ow: usize },
    DirectionalPool(Axis),
    BilinearResize { oh: usize, ow: usize },
    Matmul,
    Transpose2d,
    Binary(BinaryOp),
    Scale(f32),
    Sigmoid,
    Silu,
    Softmax { axis: usize },
    /// Inputs: x, gamma, beta. Running statistics are constants.
    BatchNorm { mean: Tensor, var: Tensor },
    /// Inputs: x, gamma, beta.
    GroupNorm { groups: usize },
    Concat { axis: usize },
    Narrow { axis: usize, start: usize, len: usize },
    Reshape { shape: Vec<usize> },
    /// A value computed outside the tape; it has no adjoint.
    Opaque { name: &'static str },
}

impl Op {
    pub fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Conv2d { .. } => "conv2d",
            Op::PadReplicate { .. } => "pad_replicate",
            Op::AvgPool2d { .. } => "avg_pool2d",
            Op::AdaptiveAvgPool2d { .. } => "adaptive_avg_pool2d",
            Op::DirectionalPool(_) => "directional_pool",
            Op::BilinearResize { .. } => "bilinear_resize",
            Op::Matmul => "matmul",
            Op::Transpose2d => "transpose2d",
            Op::Binary(BinaryOp::Add) => "add",
            Op::Binary(BinaryOp::Mul) => "mul",
            Op::Scale(_) => "scale",
            Op::Sigmoid => "sigmoid",
            Op::Silu => "silu",
            Op::Softmax { .. } => "softmax",
            Op::BatchNorm { .. } => "batch_norm",
            Op::GroupNorm { .. } => "group_norm",
            Op::Concat { .. } => "concat",
            Op::Narrow { .. } => "narrow",
            Op::Reshape { .. } => "reshape",
            Op::Opaque { name } => name,
        }
    }
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    inputs: Vec<Var>,
    value: Tensor,
}

/// Single-writer record of one forward pass.
#[derive(Clone, Debug, Default)]
pub struct GradTape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`GradTape::backward`], indexed by [`Var`].
#[derive(Clone, Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    visited: Vec<Var>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Non-leaf records whose adjoint ran, in the order they ran.
    pub fn visit_order(&self) -> &[Var] {
        &self.visited
    }
}

fn eval(op: &Op, x: &[&Tensor]) -> Result<Tensor> {
    match op {
        Op::Leaf | Op::Opaque { .. } => unreachable!("leaf values are stored, not evaluated"),
        Op::Conv2d { params, bias } => ops::conv2d(x[0], x[1], bias.then(|| x[2]), *params),
        Op::PadReplicate { pad } => ops::pad_replicate(x[0], *pad),
        Op::AvgPool2d { kernel, stride } => ops::avg_pool2d(x[0], *kernel, *stride),
        Op::AdaptiveAvgPool2d { oh, ow } => ops::adaptive_avg_pool2d(x[0], *oh, *ow),
        Op::DirectionalPool(axis) => ops::directional_avg_pool(x[0], *axis),
        Op::BilinearResize { oh, ow } => ops::bilinear_resize(x[0], *oh, *ow),
        Op::Matmul => ops::matmul(x[0], x[1]),
        Op::Transpose2d => ops::transpose2d(x[0]),
        Op::Binary(b) => ops::binary(*b, x[0], x[1]),
        Op::Scale(s) => Ok(ops::scale(x[0], *s)),
        Op::Sigmoid => Ok(ops::sigmoid(x[0])),
        Op::Silu => Ok(ops::silu(x[0])),
        Op::Softmax { axis } => ops::softmax(x[0], *axis),
        Op::BatchNorm { mean, var } => ops::batch_norm(
            x[0],
            &BatchNormStats {
                mean: mean.clone(),
                var: var.clone(),
                gamma: x[1].clone(),
                beta: x[2].clone(),
            },
        ),
        Op::GroupNorm { groups } => ops::group_norm(x[0], *groups, x[1], x[2]),
        Op::Concat { axis } => ops::concat(x, *axis),
        Op::Narrow { axis, start, len } => ops::narrow(x[0], *axis, *start, *len),
        Op::Reshape { shape } => x[0].reshape(shape),
    }
}

/// Gradients for each input of `op`, given the upstream gradient `g`.
fn adjoint(op: &Op, x: &[&Tensor], y: &Tensor, g: &Tensor) -> Result<Vec<Tensor>> {
    Ok(match op {
        Op::Leaf => Vec::new(),
        Op::Opaque { name } => {
            return Err(Error::Autograd(format!("no adjoint recorded for operation `{name}`")))
        }
        Op::Conv2d { params, bias } => {
            let (gx, gw, gb) = ops::conv2d_backward(x[0], x[1], *bias, g, *params)?;
            let mut v = vec![gx, gw];
            v.extend(gb);
            v
        }
        Op::PadReplicate { pad } => vec![ops::pad_replicate_backward(x[0].shape(), *pad, g)?],
        Op::AvgPool2d { kernel, stride } => vec![ops::avg_pool2d_backward(x[0], *kernel, *stride, g)?],
        Op::AdaptiveAvgPool2d { oh, ow } => vec![ops::adaptive_avg_pool2d_backward(x[0], *oh, *ow, g)?],
        Op::DirectionalPool(axis) => vec![ops::directional_avg_pool_backward(x[0], *axis, g)?],
        Op::BilinearResize { .. } => vec![ops::bilinear_resize_backward(x[0].shape(), g)?],
        Op::Matmul => {
            let (ga, gb) = ops::matmul_backward(x[0], x[1], g)?;
            vec![ga, gb]
        }
        Op::Transpose2d => vec![ops::transpose2d(g)?],
        Op::Binary(b) => {
            let (ga, gb) = ops::binary_backward(*b, x[0], x[1], g)?;
            vec![ga, gb]
        }
        Op::Scale(s) => vec![ops::scale(g, *s)],
        Op::Sigmoid => vec![ops::sigmoid_backward(y, g)?],
        Op::Silu => vec![ops::silu_backward(x[0], g)?],
        Op::Softmax { axis } => vec![ops::softmax_backward(y, *axis, g)?],
        Op::BatchNorm { mean, var } => {
            let stats = BatchNormStats {
                mean: mean.clone(),
                var: var.clone(),
                gamma: x[1].clone(),
                beta: x[2].clone(),
            };
            let (gx, gg, gb) = ops::batch_norm_backward(x[0], &stats, g)?;
            vec![gx, gg, gb]
        }
        Op::GroupNorm { groups } => {
            let (gx, gg, gb) = ops::group_norm_backward(x[0], *groups, x[1], x[2], g)?;
            vec![gx, gg, gb]
        }
        Op::Concat { axis } => {
            let sizes: Vec<usize> = x.iter().map(|t| t.shape()[*axis]).collect();
            ops::split(g, &sizes, *axis)?
        }
        Op::Narrow { axis, start, .. } => vec![ops::narrow_backward(x[0].shape(), *axis, *start, g)?],
        Op::Reshape { .. } => vec![g.reshape(x[0].shape())?],
    })
}

impl GradTape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn op(&self, v: Var) -> &Op {
        &self.nodes[v.0].op
    }

    /// Records an input. Its gradient lands in the tensor's grad slot after
    /// [`GradTape::backward`].
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(Op::Leaf, Vec::new(), t)
    }

    /// Records a value computed elsewhere. Backward through it fails.
    pub fn opaque(&mut self, name: &'static str, inputs: &[Var], value: Tensor) -> Var {
        self.push(Op::Opaque { name }, inputs.to_vec(), value)
    }

    fn push(&mut self, op: Op, inputs: Vec<Var>, value: Tensor) -> Var {
        self.nodes.push(Node { op, inputs, value });
        Var(self.nodes.len() - 1)
    }

    pub fn apply(&mut self, op: Op, inputs: &[Var]) -> Result<Var> {
        if matches!(op, Op::Leaf | Op::Opaque { .. }) {
            return Err(Error::Autograd("use leaf() or opaque() for stored values".into()));
        }
        let value = {
            let xs: Vec<&Tensor> = inputs.iter().map(|v| &self.nodes[v.0].value).collect();
            eval(&op, &xs)?
        };
        Ok(self.push(op, inputs.to_vec(), value))
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, params: Conv2dParams) -> Result<Var> {
        let mut inputs = vec![x, w];
        inputs.extend(b);
        self.apply(Op::Conv2d { params, bias: b.is_some() }, &inputs)
    }

    pub fn pad_replicate(&mut self, x: Var, pad: usize) -> Result<Var> {
        self.apply(Op::PadReplicate { pad }, &[x])
    }

    pub fn avg_pool2d(&mut self, x: Var, kernel: usize, stride: usize) -> Result<Var> {
        self.apply(Op::AvgPool2d { kernel, stride }, &[x])
    }

    pub fn adaptive_avg_pool2d(&mut self, x: Var, oh: usize, ow: usize) -> Result<Var> {
        self.apply(Op::AdaptiveAvgPool2d { oh, ow }, &[x])
    }

    pub fn directional_pool(&mut self, x: Var, axis: Axis) -> Result<Var> {
        self.apply(Op::DirectionalPool(axis), &[x])
    }

    pub fn bilinear_resize(&mut self, x: Var, oh: usize, ow: usize) -> Result<Var> {
        self.apply(Op::BilinearResize { oh, ow }, &[x])
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Op::Matmul, &[a, b])
    }

    pub fn transpose2d(&mut self, x: Var) -> Result<Var> {
        self.apply(Op::Transpose2d, &[x])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Op::Binary(BinaryOp::Add), &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Op::Binary(BinaryOp::Mul), &[a, b])
    }

    pub fn scale(&mut self, x: Var, s: f32) -> Result<Var> {
        self.apply(Op::Scale(s), &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.apply(Op::Sigmoid, &[x])
    }

    pub fn silu(&mut self, x: Var) -> Result<Var> {
        self.apply(Op::Silu, &[x])
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.apply(Op::Softmax { axis }, &[x])
    }

    pub fn batch_norm(&mut self, x: Var, gamma: Var, beta: Var, mean: Tensor, var: Tensor) -> Result<Var> {
        self.apply(Op::BatchNorm { mean, var }, &[x, gamma, beta])
    }

    pub fn group_norm(&mut self, x: Var, groups: usize, gamma: Var, beta: Var) -> Result<Var> {
        self.apply(Op::GroupNorm { groups }, &[x, gamma, beta])
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        self.apply(Op::Concat { axis }, xs)
    }

    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        self.apply(Op::Narrow { axis, start, len }, &[x])
    }

    pub fn split(&mut self, x: Var, sizes: &[usize], axis: usize) -> Result<Vec<Var>> {
        let extent = self.value(x).shape().get(axis).copied().unwrap_or(0);
        let total: usize = sizes.iter().sum();
        if total != extent {
            return Err(Error::mismatch("split", format!("axis {axis} (sum of sizes)"), extent, total));
        }
        let mut start = 0;
        sizes
            .iter()
            .map(|&len| {
                let v = self.narrow(x, axis, start, len);
                start += len;
                v
            })
            .collect()
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        self.apply(Op::Reshape { shape: shape.to_vec() }, &[x])
    }

    /// Propagates `seed` (the gradient of `output`) back through every record
    /// up to `output`. Leaf tensors receive their gradient in the grad slot.
    pub fn backward(&mut self, output: Var, seed: &Tensor) -> Result<Gradients> {
        if self.nodes.is_empty() {
            return Err(Error::Autograd("tape is empty".into()));
        }
        let out_shape = self.nodes[output.0].value.shape();
        if seed.shape() != out_shape {
            return Err(Error::Autograd(format!(
                "seed shape {:?} does not match output shape {:?}",
                seed.shape(),
                out_shape
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; output.0 + 1];
        grads[output.0] = Some(seed.clone());
        let mut visited = Vec::new();
        for i in (0..=output.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !matches!(node.op, Op::Leaf) {
                visited.push(Var(i));
                let xs: Vec<&Tensor> = node.inputs.iter().map(|v| &self.nodes[v.0].value).collect();
                let input_grads = adjoint(&node.op, &xs, &node.value, &g)?;
                for (v, ig) in node.inputs.iter().zip(input_grads) {
                    grads[v.0] = Some(match grads[v.0].take() {
                        None => ig,
                        Some(acc) => accumulate(acc, &ig),
                    });
                }
            }
            grads[i] = Some(g);
        }
        for (node, g) in self.nodes.iter_mut().zip(&grads) {
            if let (Op::Leaf, Some(g)) = (&node.op, g) {
                node.value.set_grad(g.data().to_vec())?;
            }
        }
        Ok(Gradients { grads, visited })
    }

    /// Recomputes every non-stored value from the recorded leaves.
    pub fn replay(&self) -> Result<Vec<Tensor>> {
        let mut values: Vec<Tensor> = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let v = match node.op {
                Op::Leaf | Op::Opaque { .. } => node.value.clone(),
                _ => {
                    let xs: Vec<&Tensor> = node.inputs.iter().map(|v| &values[v.0]).collect();
                    eval(&node.op, &xs)?
                }
            };
            values.push(v);
        }
        Ok(values)
    }
}

fn accumulate(mut acc: Tensor, g: &Tensor) -> Tensor {
    acc.data_mut().iter_mut().zip(g.data()).for_each(|(a, b)| *a += b);
    acc
}
