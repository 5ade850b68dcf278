//! Reverse-mode differentiation over a linear tape of recorded operations.
//!
//! Every call on [`Tape`] computes its forward value eagerly and appends one
//! node. Node ids only ever refer to earlier nodes, so the tape is already in
//! topological order and [`Tape::backward`] is a single reverse sweep.

use crate::error::{Error, Result};
use crate::ops;
use crate::tensor::{Element, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Deliberate corruption of a backward rule, used to prove that the gradient
/// checker catches broken derivatives.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    /// Scale the convolution bias gradient by 1.5.
    ConvBiasGrad,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Conv2d {
        input: Var,
        weight: Var,
        bias: Var,
        stride: usize,
        padding: usize,
    },
    Linear {
        x: Var,
        weight: Var,
        bias: Var,
    },
    Relu(Var),
    Add(Var, Var),
    Mul(Var, Var),
    Concat {
        parts: Vec<Var>,
        axis: usize,
    },
    Reshape(Var),
    Sum(Var),
    L1Loss {
        pred: Var,
        truth: Var,
    },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Conv2d { .. } => "conv2d",
            Op::Linear { .. } => "linear",
            Op::Relu(_) => "relu",
            Op::Add(..) => "add",
            Op::Mul(..) => "mul",
            Op::Concat { .. } => "concat",
            Op::Reshape(_) => "reshape",
            Op::Sum(_) => "sum",
            Op::L1Loss { .. } => "l1_loss",
        }
    }
}

#[derive(Debug, Clone)]
struct Node<T> {
    value: Tensor<T>,
    op: Op,
}

#[derive(Debug, Clone)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    fault: Option<Fault>,
}

impl<T: Element> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Element> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            fault: None,
        }
    }

    pub fn with_fault(fault: Option<Fault>) -> Self {
        Tape {
            nodes: Vec::new(),
            fault,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Name of the operation that produced `v`.
    pub fn op_name(&self, v: Var) -> &'static str {
        self.nodes[v.0].op.name()
    }

    fn push(&mut self, value: Tensor<T>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Record an input or parameter.
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Var, stride: usize, padding: usize) -> Result<Var> {
        let out = ops::conv2d(self.value(input), self.value(weight), self.value(bias), stride, padding)?;
        Ok(self.push(
            out,
            Op::Conv2d {
                input,
                weight,
                bias,
                stride,
                padding,
            },
        ))
    }

    pub fn linear(&mut self, x: Var, weight: Var, bias: Var) -> Result<Var> {
        let out = ops::linear(self.value(x), self.value(weight), self.value(bias))?;
        Ok(self.push(out, Op::Linear { x, weight, bias }))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = ops::relu(self.value(x));
        self.push(out, Op::Relu(x))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = ops::add(self.value(a), self.value(b))?;
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = ops::mul(self.value(a), self.value(b))?;
        Ok(self.push(out, Op::Mul(a, b)))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let values: Vec<&Tensor<T>> = parts.iter().map(|&p| self.value(p)).collect();
        let out = ops::concat(&values, axis)?;
        Ok(self.push(
            out,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
        ))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).reshape(shape)?;
        Ok(self.push(out, Op::Reshape(x)))
    }

    /// Row-major flatten to rank 1.
    pub fn flatten(&mut self, x: Var) -> Var {
        let out = ops::flatten(self.value(x));
        self.push(out, Op::Reshape(x))
    }

    /// Flatten every axis after the first, keeping the batch axis.
    pub fn flatten_batch(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x);
        let batch = *shape
            .first()
            .ok_or_else(|| Error::shape("flatten_batch", "scalar input has no batch axis"))?;
        let rest = shape[1..].iter().product();
        self.reshape(x, &[batch, rest])
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let out = Tensor::scalar(self.value(x).sum());
        self.push(out, Op::Sum(x))
    }

    pub fn l1_loss(&mut self, pred: Var, truth: Var) -> Result<Var> {
        let loss = ops::l1_loss(self.value(pred), self.value(truth))?;
        Ok(self.push(Tensor::scalar(loss), Op::L1Loss { pred, truth }))
    }

    /// Differentiate the scalar `loss`, which must be the most recent node.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let value = self.value(loss);
        if !value.is_scalar() {
            return Err(Error::Backward(format!(
                "loss must be a scalar, got shape {:?}",
                value.shape()
            )));
        }
        if loss.0 + 1 != self.nodes.len() {
            return Err(Error::Backward(format!(
                "loss node {} is not the final node of a tape with {} nodes",
                loss.0,
                self.nodes.len()
            )));
        }

        let mut grads: Vec<Option<Tensor<T>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::full(value.shape(), T::one()));

        for id in (0..self.nodes.len()).rev() {
            let Some(upstream) = grads[id].take() else {
                continue;
            };
            let node = &self.nodes[id];
            match &node.op {
                Op::Leaf => grads[id] = Some(upstream),
                &Op::Conv2d {
                    input,
                    weight,
                    bias,
                    stride,
                    padding,
                } => {
                    let (gx, gw, mut gb) =
                        ops::conv2d_backward(self.value(input), self.value(weight), &upstream, stride, padding)?;
                    if self.fault == Some(Fault::ConvBiasGrad) {
                        gb = gb.map(|g| g * T::from_f64(1.5));
                    }
                    accumulate(&mut grads, input, gx);
                    accumulate(&mut grads, weight, gw);
                    accumulate(&mut grads, bias, gb);
                }
                &Op::Linear { x, weight, bias } => {
                    let (gx, gw, gb) = ops::linear_backward(self.value(x), self.value(weight), &upstream)?;
                    accumulate(&mut grads, x, gx);
                    accumulate(&mut grads, weight, gw);
                    accumulate(&mut grads, bias, gb);
                }
                &Op::Relu(x) => {
                    accumulate(&mut grads, x, ops::relu_backward(self.value(x), &upstream));
                }
                &Op::Add(a, b) => {
                    accumulate(&mut grads, a, upstream.clone());
                    accumulate(&mut grads, b, upstream);
                }
                &Op::Mul(a, b) => {
                    accumulate(&mut grads, a, ops::mul(&upstream, self.value(b))?);
                    accumulate(&mut grads, b, ops::mul(&upstream, self.value(a))?);
                }
                Op::Concat { parts, axis } => {
                    let sizes: Vec<usize> = parts.iter().map(|&p| self.shape(p)[*axis]).collect();
                    for (&p, g) in parts.iter().zip(ops::split(&upstream, *axis, &sizes)?) {
                        accumulate(&mut grads, p, g);
                    }
                }
                &Op::Reshape(x) => {
                    accumulate(&mut grads, x, upstream.reshape(self.shape(x))?);
                }
                &Op::Sum(x) => {
                    accumulate(&mut grads, x, Tensor::full(self.shape(x), upstream.item()));
                }
                &Op::L1Loss { pred, truth } => {
                    let gp = ops::l1_loss_backward(self.value(pred), self.value(truth), upstream.item());
                    accumulate(&mut grads, truth, gp.map(|g| -g));
                    accumulate(&mut grads, pred, gp);
                }
            }
        }
        Ok(Gradients { grads })
    }
}

fn accumulate<T: Element>(grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
    match &mut grads[v.0] {
        Some(existing) => existing.accumulate(&g),
        slot @ None => *slot = Some(g),
    }
}

/// Result of [`Tape::backward`]: the gradient of every leaf the loss depends on.
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Element> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of `v`, or zeros of `shape` when the loss does not depend on it.
    pub fn wrt(&self, v: Var, shape: &[usize]) -> Tensor<T> {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(shape))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_sum_gradient() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::vector(vec![-1.0, 2.0]));
        let r = tape.relu(x);
        let loss = tape.sum(r);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[0.0, 1.0]);
    }

    #[test]
    fn linear_in_weight_gradient_is_input() {
        let mut tape = Tape::<f64>::new();
        let w = tape.leaf(Tensor::vector(vec![0.3, -1.2, 4.0]));
        let x = tape.leaf(Tensor::vector(vec![2.0, 5.0, -7.0]));
        let wx = tape.mul(w, x).unwrap();
        let loss = tape.sum(wx);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(w).unwrap().data(), &[2.0, 5.0, -7.0]);
    }

    #[test]
    fn rejects_non_scalar_loss() {
        let mut tape = Tape::<f32>::new();
        let x = tape.leaf(Tensor::vector(vec![1.0, 2.0]));
        let err = tape.backward(x).unwrap_err();
        assert!(err.to_string().contains("scalar"));
    }

    #[test]
    fn rejects_loss_that_is_not_final() {
        let mut tape = Tape::<f32>::new();
        let x = tape.leaf(Tensor::vector(vec![1.0, 2.0]));
        let s = tape.sum(x);
        tape.relu(x);
        assert!(tape.backward(s).is_err());
    }

    #[test]
    fn shared_input_accumulates() {
        // loss = sum(x + x) → gradient 2
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::vector(vec![1.0, -3.0]));
        let y = tape.add(x, x).unwrap();
        let loss = tape.sum(y);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[2.0, 2.0]);
    }

    #[test]
    fn unreachable_leaf_has_no_gradient() {
        let mut tape = Tape::<f64>::new();
        let unused = tape.leaf(Tensor::vector(vec![1.0]));
        let x = tape.leaf(Tensor::vector(vec![1.0]));
        let loss = tape.sum(x);
        let grads = tape.backward(loss).unwrap();
        assert!(grads.get(unused).is_none());
        assert_eq!(grads.wrt(unused, &[1]).data(), &[0.0]);
    }

    #[test]
    fn l1_gradient_flows_to_both_sides() {
        let mut tape = Tape::<f64>::new();
        let p = tape.leaf(Tensor::new(vec![1, 2], vec![103.0, 196.0]).unwrap());
        let t = tape.leaf(Tensor::new(vec![1, 2], vec![100.0, 200.0]).unwrap());
        let loss = tape.l1_loss(p, t).unwrap();
        assert_eq!(tape.value(loss).item(), 3.5);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(p).unwrap().data(), &[0.5, -0.5]);
        assert_eq!(grads.get(t).unwrap().data(), &[-0.5, 0.5]);
    }
}
