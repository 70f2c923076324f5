//! Dynamic reverse-mode tape.
//!
//! Every operation evaluates eagerly, appends a node holding its output and
//! whatever it needs for the backward pass, and hands back a [`Var`] handle.
//! A tape lives for one forward/backward pass; nodes are only ever appended,
//! so node indices are already a topological order.

use super::params::{ParamGrads, ParamId, ParamStore};
use super::tensor::{Result, Tensor, TensorError};
use super::{conv, linalg, pointwise, sample, shape};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
pub(crate) enum Op {
    Constant,
    Variable,
    Param(ParamId),
    MatMul(Var, Var),
    AddBias(Var, Var),
    Conv2d {
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        padding: usize,
    },
    MaxPool {
        input: Var,
        argmax: Vec<u32>,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Relu(Var),
    Sin(Var),
    Cos(Var),
    Pow(Var, f32),
    Abs(Var),
    Square(Var),
    Scale(Var, f32),
    AddScalar(Var),
    Sum(Var),
    Mean(Var),
    Reshape(Var),
    Transpose(Var),
    Concat {
        inputs: Vec<Var>,
        axis: usize,
    },
    Columns {
        input: Var,
        start: usize,
    },
    Fourier {
        input: Var,
        frequencies: usize,
    },
    Wrap(Var),
    Sample {
        levels: Vec<Var>,
        coords: Var,
        lod: Option<Var>,
    },
}

impl Op {
    pub(crate) fn name(&self) -> &'static str {
        match self {
            Op::Constant => "constant",
            Op::Variable => "variable",
            Op::Param(_) => "param",
            Op::MatMul(..) => "matmul",
            Op::AddBias(..) => "add_bias",
            Op::Conv2d { .. } => "conv2d",
            Op::MaxPool { .. } => "maxpool2d",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Relu(_) => "relu",
            Op::Sin(_) => "sin",
            Op::Cos(_) => "cos",
            Op::Pow(..) => "pow",
            Op::Abs(_) => "abs",
            Op::Square(_) => "square",
            Op::Scale(..) => "scale",
            Op::AddScalar(..) => "add_scalar",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::Reshape(_) => "reshape",
            Op::Transpose(_) => "transpose",
            Op::Concat { .. } => "concat",
            Op::Columns { .. } => "columns",
            Op::Fourier { .. } => "fourier",
            Op::Wrap(_) => "wrap",
            Op::Sample { .. } => "sample",
        }
    }

    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Constant | Op::Variable | Op::Param(_) => Vec::new(),
            Op::MatMul(a, b)
            | Op::AddBias(a, b)
            | Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b) => vec![*a, *b],
            Op::Conv2d {
                input,
                kernel,
                bias,
                ..
            } => {
                let mut v = vec![*input, *kernel];
                v.extend(bias);
                v
            }
            Op::MaxPool { input, .. }
            | Op::Columns { input, .. }
            | Op::Fourier { input, .. } => vec![*input],
            Op::Relu(x)
            | Op::Sin(x)
            | Op::Cos(x)
            | Op::Pow(x, _)
            | Op::Abs(x)
            | Op::Square(x)
            | Op::Scale(x, _)
            | Op::AddScalar(x)
            | Op::Sum(x)
            | Op::Mean(x)
            | Op::Reshape(x)
            | Op::Transpose(x)
            | Op::Wrap(x) => vec![*x],
            Op::Concat { inputs, .. } => inputs.clone(),
            Op::Sample {
                levels,
                coords,
                lod,
            } => {
                let mut v = levels.clone();
                v.push(*coords);
                v.extend(lod);
                v
            }
        }
    }
}

#[derive(Debug)]
pub(crate) struct Node {
    pub(crate) value: Tensor,
    pub(crate) op: Op,
    pub(crate) requires_grad: bool,
}

/// Records operations for one forward pass.
#[derive(Debug, Default)]
pub struct Tape {
    pub(crate) nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_leaf(value, Op::Constant, false)
    }

    /// Leaf whose gradient is reported by [`Gradients::get`].
    pub fn variable(&mut self, value: Tensor) -> Var {
        self.push_leaf(value, Op::Variable, true)
    }

    /// Leaf holding a copy of a stored parameter; its gradient is routed back
    /// to the store by [`Gradients::param_grads`].
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.push_leaf(store.value(id).clone(), Op::Param(id), true)
    }

    fn push_leaf(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub(crate) fn push(&mut self, value: Tensor, op: Op) -> Result<Var> {
        value.check_finite(op.name())?;
        let requires_grad = op
            .inputs()
            .iter()
            .any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn shape(&self, var: Var) -> &[usize] {
        self.nodes[var.0].value.shape()
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    /// Propagates d(loss)/d(node) to every node that depends on a gradient
    /// leaf. Nodes are visited once each, in reverse recording order.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let loss_node = &self.nodes[loss.0];
        if !loss_node.value.is_scalar() {
            return Err(TensorError::NonScalarLoss(loss_node.value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f32>>> = vec![None; loss.0 + 1];
        if loss_node.requires_grad {
            grads[loss.0] = Some(vec![1.0]);
        }
        for index in (0..=loss.0).rev() {
            let node = &self.nodes[index];
            if !node.requires_grad {
                continue;
            }
            let Some(grad) = grads[index].take() else {
                continue;
            };
            let mut sink = GradSink {
                nodes: &self.nodes,
                grads: &mut grads,
            };
            self.backward_node(node, &grad, &mut sink)?;
            grads[index] = Some(grad);
        }
        for (index, g) in grads.iter().enumerate() {
            if let Some(g) = g {
                if let Some(pos) = g.iter().position(|v| !v.is_finite()) {
                    return Err(TensorError::NonFinite {
                        op: self.nodes[index].op.name(),
                        index: pos,
                    });
                }
            }
        }
        grads.resize(self.nodes.len(), None);
        Ok(Gradients { grads })
    }

    fn backward_node(&self, node: &Node, grad: &[f32], sink: &mut GradSink<'_>) -> Result<()> {
        let out = &node.value;
        match &node.op {
            Op::Constant | Op::Variable | Op::Param(_) => {}
            Op::MatMul(a, b) => linalg::matmul_backward(sink, *a, *b, grad),
            Op::AddBias(x, b) => linalg::add_bias_backward(sink, *x, *b, grad),
            Op::Conv2d {
                input,
                kernel,
                bias,
                padding,
            } => conv::conv2d_backward(sink, *input, *kernel, *bias, *padding, out.shape(), grad),
            Op::MaxPool { input, argmax } => conv::maxpool_backward(sink, *input, argmax, grad),
            Op::Add(a, b) => {
                sink.add(*a, grad);
                sink.add(*b, grad);
            }
            Op::Sub(a, b) => {
                sink.add(*a, grad);
                sink.add_scaled(*b, grad, -1.0);
            }
            Op::Mul(a, b) => pointwise::mul_backward(sink, *a, *b, grad),
            Op::Relu(x)
            | Op::Sin(x)
            | Op::Cos(x)
            | Op::Pow(x, _)
            | Op::Abs(x)
            | Op::Square(x)
            | Op::Wrap(x) => pointwise::unary_backward(sink, &node.op, *x, grad),
            Op::Scale(x, s) => sink.add_scaled(*x, grad, *s),
            Op::AddScalar(x) | Op::Reshape(x) => sink.add(*x, grad),
            Op::Sum(x) => sink.with(*x, |g| g.iter_mut().for_each(|v| *v += grad[0])),
            Op::Mean(x) => {
                let n = sink.nodes[x.0].value.numel() as f32;
                sink.with(*x, |g| g.iter_mut().for_each(|v| *v += grad[0] / n))
            }
            Op::Transpose(x) => shape::transpose_backward(sink, *x, grad),
            Op::Concat { inputs, axis } => shape::concat_backward(sink, inputs, *axis, grad),
            Op::Columns { input, start } => {
                shape::columns_backward(sink, *input, *start, out.shape()[1], grad)
            }
            Op::Fourier { input, frequencies } => {
                sample::fourier_backward(sink, *input, *frequencies, grad)
            }
            Op::Sample {
                levels,
                coords,
                lod,
            } => sample::sample_backward(sink, levels, *coords, *lod, grad),
        }
        Ok(())
    }
}

/// Mutable view of the gradient buffers handed to per-op backward rules.
pub(crate) struct GradSink<'a> {
    pub(crate) nodes: &'a [Node],
    grads: &'a mut Vec<Option<Vec<f32>>>,
}

impl GradSink<'_> {
    pub(crate) fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub(crate) fn wants(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    /// Runs `f` on the gradient buffer of `var`, allocating it on first use.
    /// Does nothing for nodes that do not require a gradient.
    pub(crate) fn with(&mut self, var: Var, f: impl FnOnce(&mut [f32])) {
        if !self.wants(var) {
            return;
        }
        let n = self.nodes[var.0].value.numel();
        let slot = &mut self.grads[var.0];
        f(slot.get_or_insert_with(|| vec![0.0; n]));
    }

    pub(crate) fn add(&mut self, var: Var, grad: &[f32]) {
        self.with(var, |g| {
            for (a, b) in g.iter_mut().zip(grad) {
                *a += *b;
            }
        });
    }

    pub(crate) fn add_scaled(&mut self, var: Var, grad: &[f32], scale: f32) {
        self.with(var, |g| {
            for (a, b) in g.iter_mut().zip(grad) {
                *a += scale * *b;
            }
        });
    }
}

/// Result of [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f32>>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `var`, or `None` if the loss does
    /// not depend on it.
    pub fn get(&self, var: Var) -> Option<&[f32]> {
        self.grads.get(var.0).and_then(|g| g.as_deref())
    }

    /// Collects gradients of every parameter leaf on `tape`, summing leaves
    /// that refer to the same parameter.
    pub fn param_grads(&self, tape: &Tape, store: &ParamStore) -> ParamGrads {
        let mut out = ParamGrads::zeros_like(store);
        for (index, node) in tape.nodes.iter().enumerate() {
            if let (Op::Param(id), Some(Some(g))) = (&node.op, self.grads.get(index)) {
                out.add(*id, g);
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gradient_is_all_ones() {
        let mut tape = Tape::new();
        let w = tape.variable(Tensor::from_fn([2, 3], |i| i as f32 - 2.0));
        let loss = tape.sum(w).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(w).unwrap(), &[1.0; 6]);
    }

    #[test]
    fn sum_of_squares_gradient() {
        let mut tape = Tape::new();
        let w = tape.variable(Tensor::new([3], vec![1.0, 2.0, 3.0]).unwrap());
        let sq = tape.square(w).unwrap();
        let loss = tape.sum(sq).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(w).unwrap(), &[2.0, 4.0, 6.0]);
    }

    #[test]
    fn fan_out_accumulates() {
        // loss = sum(w * w + 3 w) -> d/dw = 2w + 3
        let mut tape = Tape::new();
        let w = tape.variable(Tensor::new([2], vec![0.5, -1.0]).unwrap());
        let ww = tape.mul(w, w).unwrap();
        let w3 = tape.scale(w, 3.0).unwrap();
        let s = tape.add(ww, w3).unwrap();
        let loss = tape.sum(s).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(w).unwrap(), &[4.0, 1.0]);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut tape = Tape::new();
        let w = tape.variable(Tensor::zeros([2]));
        assert_eq!(
            tape.backward(w).unwrap_err(),
            TensorError::NonScalarLoss(vec![2])
        );
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut tape = Tape::new();
        let c = tape.constant(Tensor::full([2], 2.0));
        let w = tape.variable(Tensor::full([2], 1.0));
        let p = tape.mul(c, w).unwrap();
        let loss = tape.sum(p).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert!(grads.get(c).is_none());
        assert_eq!(grads.get(w).unwrap(), &[2.0, 2.0]);
    }

    #[test]
    fn non_finite_forward_rejected() {
        let mut tape = Tape::new();
        let w = tape.variable(Tensor::full([1], 1e30));
        let err = tape.square(w).unwrap_err();
        assert!(matches!(err, TensorError::NonFinite { op: "square", .. }));
    }
}
