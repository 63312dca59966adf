//! Reverse-mode differentiation over a recorded list of primitive calls.
//!
//! Every operation appends a node whose inputs are earlier nodes, so the
//! recording is topologically sorted by construction and `backward` is a
//! single reverse sweep.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};

use super::conv::{self, ConvSpec};
use super::ops;
use super::tensor::Tensor;
use crate::error::{Error, Result};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Caller-chosen identifier for a parameter leaf.
pub type ParamKey = usize;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var {
    tape: u64,
    index: usize,
}

enum Value<'p> {
    Owned(Tensor),
    Borrowed(&'p Tensor),
}

impl Value<'_> {
    fn get(&self) -> &Tensor {
        match self {
            Value::Owned(t) => t,
            Value::Borrowed(t) => t,
        }
    }
}

enum Op {
    Input,
    Param(ParamKey),
    Conv { x: usize, w: usize, b: usize, spec: ConvSpec },
    ConvTranspose { x: usize, w: usize, b: usize, spec: ConvSpec },
    MaxPool { x: usize, kernel: usize, stride: usize },
    Relu { x: usize },
    Concat { xs: Vec<usize> },
    Add { a: usize, b: usize },
    Slice { x: usize, start: usize },
    Mse { pred: usize, target: usize },
}

impl Op {
    fn inputs(&self) -> Vec<usize> {
        match self {
            Op::Input | Op::Param(_) => vec![],
            Op::Conv { x, w, b, .. } | Op::ConvTranspose { x, w, b, .. } => vec![*x, *w, *b],
            Op::MaxPool { x, .. } | Op::Relu { x } | Op::Slice { x, .. } => vec![*x],
            Op::Concat { xs } => xs.clone(),
            Op::Add { a, b } => vec![*a, *b],
            Op::Mse { pred, target } => vec![*pred, *target],
        }
    }

    fn is_leaf(&self) -> bool {
        matches!(self, Op::Input | Op::Param(_))
    }
}

struct Node<'p> {
    value: Value<'p>,
    op: Op,
}

/// Recording of a forward pass. Parameters are borrowed, never copied.
pub struct Tape<'p> {
    id: u64,
    nodes: Vec<Node<'p>>,
}

impl Default for Tape<'_> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'p> Tape<'p> {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Value<'p>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var {
            tape: self.id,
            index: self.nodes.len() - 1,
        }
    }

    fn resolve(&self, v: Var) -> Result<usize> {
        if v.tape != self.id {
            return Err(Error::Graph(format!(
                "value {} was recorded on tape {}, not on tape {}",
                v.index, v.tape, self.id
            )));
        }
        if v.index >= self.nodes.len() {
            return Err(Error::Graph(format!("value {} was never recorded", v.index)));
        }
        Ok(v.index)
    }

    pub fn value(&self, v: Var) -> Result<&Tensor> {
        let i = self.resolve(v)?;
        Ok(self.nodes[i].value.get())
    }

    fn get(&self, i: usize) -> &Tensor {
        self.nodes[i].value.get()
    }

    /// Records a constant input (gradients are still reported for it).
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(Value::Owned(t), Op::Input)
    }

    pub fn input_ref(&mut self, t: &'p Tensor) -> Var {
        self.push(Value::Borrowed(t), Op::Input)
    }

    pub fn param(&mut self, key: ParamKey, t: &'p Tensor) -> Var {
        self.push(Value::Borrowed(t), Op::Param(key))
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, spec: ConvSpec) -> Result<Var> {
        let (x, w, b) = (self.resolve(x)?, self.resolve(w)?, self.resolve(b)?);
        let y = conv::conv2d(self.get(x), self.get(w), self.get(b), &spec)?;
        Ok(self.push(Value::Owned(y), Op::Conv { x, w, b, spec }))
    }

    pub fn conv_transpose2d(&mut self, x: Var, w: Var, b: Var, spec: ConvSpec) -> Result<Var> {
        let (x, w, b) = (self.resolve(x)?, self.resolve(w)?, self.resolve(b)?);
        let y = conv::conv_transpose2d(self.get(x), self.get(w), self.get(b), &spec)?;
        Ok(self.push(Value::Owned(y), Op::ConvTranspose { x, w, b, spec }))
    }

    pub fn maxpool2d(&mut self, x: Var, kernel: usize, stride: usize) -> Result<Var> {
        let x = self.resolve(x)?;
        let y = ops::maxpool2d(self.get(x), kernel, stride)?;
        Ok(self.push(Value::Owned(y), Op::MaxPool { x, kernel, stride }))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let x = self.resolve(x)?;
        let y = ops::relu(self.get(x));
        Ok(self.push(Value::Owned(y), Op::Relu { x }))
    }

    pub fn concat_channels(&mut self, xs: &[Var]) -> Result<Var> {
        let xs = xs.iter().map(|&v| self.resolve(v)).collect::<Result<Vec<_>>>()?;
        let refs: Vec<&Tensor> = xs.iter().map(|&i| self.get(i)).collect();
        let y = ops::concat_channels(&refs)?;
        Ok(self.push(Value::Owned(y), Op::Concat { xs }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (a, b) = (self.resolve(a)?, self.resolve(b)?);
        let y = ops::add_elementwise(self.get(a), self.get(b))?;
        Ok(self.push(Value::Owned(y), Op::Add { a, b }))
    }

    pub fn slice_channels(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let x = self.resolve(x)?;
        let y = ops::slice_channels(self.get(x), start, len)?;
        Ok(self.push(Value::Owned(y), Op::Slice { x, start }))
    }

    /// Scalar (shape `[1]`) mean squared error.
    pub fn mse(&mut self, pred: Var, target: Var) -> Result<Var> {
        let (pred, target) = (self.resolve(pred)?, self.resolve(target)?);
        let loss = ops::mse_loss(self.get(pred), self.get(target))?;
        let y = Tensor::new(&[1], vec![loss])?;
        Ok(self.push(Value::Owned(y), Op::Mse { pred, target }))
    }

    /// Gradients of the scalar `loss` with respect to every leaf that
    /// contributes to it. Intermediate gradients are released as soon as they
    /// have been propagated.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let root = self.resolve(loss)?;
        if self.get(root).numel() != 1 {
            return Err(Error::Graph(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.get(root).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root] = Some(Tensor::full(self.get(root).shape(), 1.0));
        let mut leaves = Vec::new();

        for i in (0..=root).rev() {
            let node = &self.nodes[i];
            if node.op.is_leaf() {
                if let Some(g) = grads[i].take() {
                    leaves.push((i, g));
                }
                continue;
            }
            let Some(dy) = grads[i].take() else {
                continue;
            };
            if let Some(&bad) = node.op.inputs().iter().find(|&&j| j >= i) {
                return Err(Error::Graph(format!("node {i} reads node {bad}, which is not earlier")));
            }
            for (j, g) in self.node_backward(&node.op, &dy)? {
                accumulate(&mut grads[j], g)?;
            }
        }

        let mut params = HashMap::new();
        let mut by_node = HashMap::new();
        for (i, g) in leaves {
            if let Op::Param(key) = self.nodes[i].op {
                if let Some(prev) = params.remove(&key) {
                    let mut merged = Some(prev);
                    accumulate(&mut merged, g)?;
                    params.insert(key, merged.expect("accumulated"));
                } else {
                    params.insert(key, g);
                }
            } else {
                by_node.insert(i, g);
            }
        }
        Ok(Gradients {
            tape: self.id,
            inputs: by_node,
            params,
        })
    }

    fn node_backward(&self, op: &Op, dy: &Tensor) -> Result<Vec<(usize, Tensor)>> {
        Ok(match *op {
            Op::Input | Op::Param(_) => vec![],
            Op::Conv { x, w, b, ref spec } => {
                let g = conv::conv2d_backward(self.get(x), self.get(w), spec, dy)?;
                vec![(x, g.input), (w, g.weight), (b, g.bias)]
            }
            Op::ConvTranspose { x, w, b, ref spec } => {
                let g = conv::conv_transpose2d_backward(self.get(x), self.get(w), spec, dy)?;
                vec![(x, g.input), (w, g.weight), (b, g.bias)]
            }
            Op::MaxPool { x, kernel, stride } => {
                vec![(x, ops::maxpool2d_backward(self.get(x), kernel, stride, dy)?)]
            }
            Op::Relu { x } => vec![(x, ops::relu_backward(self.get(x), dy)?)],
            Op::Concat { ref xs } => {
                let mut channels = Vec::with_capacity(xs.len());
                for &j in xs {
                    channels.push(self.get(j).dims4()?[1]);
                }
                xs.iter().copied().zip(ops::split_channels(dy, &channels)?).collect()
            }
            Op::Add { a, b } => vec![(a, dy.clone()), (b, dy.clone())],
            Op::Slice { x, start } => {
                vec![(x, ops::unslice_channels(dy, self.get(x).shape(), start)?)]
            }
            Op::Mse { pred, target } => {
                let dp = ops::mse_loss_backward(self.get(pred), self.get(target), dy.data()[0])?;
                let dt = dp.scale(-1.0);
                vec![(pred, dp), (target, dt)]
            }
        })
    }
}

fn accumulate(slot: &mut Option<Tensor>, g: Tensor) -> Result<()> {
    match slot {
        None => *slot = Some(g),
        Some(acc) => {
            if !acc.same_shape(&g) {
                return Err(Error::Graph(format!(
                    "gradient shape {:?} does not match {:?}",
                    g.shape(),
                    acc.shape()
                )));
            }
            acc.data_mut().iter_mut().zip(g.data()).for_each(|(a, b)| *a += b);
        }
    }
    Ok(())
}

/// Leaf gradients produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    tape: u64,
    inputs: HashMap<usize, Tensor>,
    params: HashMap<ParamKey, Tensor>,
}

impl Gradients {
    /// Gradient for a recorded input; `None` when the loss does not depend on it.
    pub fn input(&self, v: Var) -> Result<Option<&Tensor>> {
        if v.tape != self.tape {
            return Err(Error::Graph("variable belongs to a different tape".into()));
        }
        Ok(self.inputs.get(&v.index))
    }

    pub fn param(&self, key: ParamKey) -> Option<&Tensor> {
        self.params.get(&key)
    }

    pub fn take_param(&mut self, key: ParamKey) -> Option<Tensor> {
        self.params.remove(&key)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mse_gradient_closed_form() {
        let mut tape = Tape::new();
        let p = tape.input(Tensor::new(&[1, 1, 1, 3], vec![1.0, 2.0, 3.0]).unwrap());
        let t = tape.input(Tensor::new(&[1, 1, 1, 3], vec![0.0, 2.0, 5.0]).unwrap());
        let loss = tape.mse(p, t).unwrap();
        let grads = tape.backward(loss).unwrap();
        let g = grads.input(p).unwrap().unwrap();
        let want = [2.0 / 3.0, 0.0, -4.0 / 3.0];
        for (a, b) in g.data().iter().zip(want) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn foreign_variables_are_rejected() {
        let mut a = Tape::new();
        let mut b = Tape::new();
        let va = a.input(Tensor::zeros(&[1, 1, 2, 2]));
        assert!(matches!(b.relu(va), Err(Error::Graph(_))));
        let vb = b.input(Tensor::zeros(&[1, 1, 2, 2]));
        let loss = b.mse(vb, vb).unwrap();
        assert!(matches!(a.backward(loss), Err(Error::Graph(_))));
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut tape = Tape::new();
        let x = tape.input(Tensor::zeros(&[1, 1, 2, 2]));
        let y = tape.relu(x).unwrap();
        assert!(matches!(tape.backward(y), Err(Error::Graph(_))));
    }

    #[test]
    fn shared_parameter_gradients_accumulate() {
        let w = Tensor::new(&[1, 1, 1, 1], vec![2.0]).unwrap();
        let mut tape = Tape::new();
        let x = tape.input(Tensor::new(&[1, 1, 1, 1], vec![3.0]).unwrap());
        let w1 = tape.param(7, &w);
        let w2 = tape.param(7, &w);
        let s = tape.add(w1, w2).unwrap();
        let loss = tape.mse(s, x).unwrap();
        let grads = tape.backward(loss).unwrap();
        // loss = (2w - 3)^2, d/dw = 4(2w - 3) = 4
        assert_eq!(grads.param(7).unwrap().data(), [4.0]);
    }

    #[test]
    fn unused_leaf_has_no_gradient() {
        let mut tape = Tape::new();
        let x = tape.input(Tensor::zeros(&[1, 1, 1, 1]));
        let unused = tape.input(Tensor::zeros(&[1, 1, 1, 1]));
        let loss = tape.mse(x, x).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert!(grads.input(unused).unwrap().is_none());
    }
}
