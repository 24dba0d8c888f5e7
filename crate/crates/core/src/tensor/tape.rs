//! The Wengert tape: op recording and reverse-mode gradient accumulation.

use std::cell::RefCell;
use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};

use super::kernels::{self, Op};
use super::{Result, Tensor, TensorError};

static TAPE_IDS: AtomicU64 = AtomicU64::new(0);

struct Node {
    op: Op,
    inputs: Vec<usize>,
    value: Tensor,
}

struct Inner {
    nodes: Vec<Node>,
    params: Vec<(String, usize)>,
}

/// Records a computation as an acyclic list of nodes in execution order.
///
/// A tape is confined to one unit of execution; run independent tapes for
/// parallel work.
pub struct Tape {
    inner: RefCell<Inner>,
    id: u64,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            inner: RefCell::new(Inner {
                nodes: Vec::new(),
                params: Vec::new(),
            }),
            id: TAPE_IDS.fetch_add(1, Ordering::Relaxed),
        }
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, op: Op, inputs: Vec<usize>, value: Tensor) -> Var<'_> {
        let mut inner = self.inner.borrow_mut();
        inner.nodes.push(Node { op, inputs, value });
        Var {
            tape: self,
            idx: inner.nodes.len() - 1,
        }
    }

    /// A constant input; never receives a gradient.
    pub fn leaf(&self, value: Tensor) -> Var<'_> {
        self.push(Op::Leaf, vec![], value)
    }

    /// A named differentiable leaf. [`Tape::backward`] reports one gradient
    /// per registered parameter.
    pub fn param(&self, name: impl Into<String>, value: Tensor) -> Var<'_> {
        let v = self.push(Op::Leaf, vec![], value);
        self.inner.borrow_mut().params.push((name.into(), v.idx));
        v
    }

    fn apply(&self, op: Op, inputs: &[&Var<'_>]) -> Result<Var<'_>> {
        for v in inputs {
            if v.tape.id != self.id {
                return Err(TensorError::ForeignTape);
            }
        }
        let value = {
            let inner = self.inner.borrow();
            let vals: Vec<&Tensor> = inputs.iter().map(|v| &inner.nodes[v.idx].value).collect();
            let out = kernels::forward(&op, &vals)?;
            if !out.all_finite() {
                return Err(TensorError::NonFinite { op: op.name() });
            }
            out
        };
        let idxs: Vec<usize> = inputs.iter().map(|v| v.idx).collect();
        Ok(self.push(op, idxs, value))
    }

    pub fn concat<'t>(&'t self, parts: &[Var<'t>], axis: usize) -> Result<Var<'t>> {
        let refs: Vec<&Var> = parts.iter().collect();
        self.apply(Op::Concat { axis }, &refs)
    }

    /// Reverse-mode sweep from a scalar loss. Returns the exact partial
    /// derivative of the recorded composition for every registered
    /// parameter; unused parameters get zero gradients.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        if loss.tape.id != self.id {
            return Err(TensorError::ForeignTape);
        }
        let inner = self.inner.borrow();
        let loss_value = &inner.nodes[loss.idx].value;
        if loss_value.len() != 1 {
            return Err(TensorError::NonScalarLoss {
                shape: loss_value.shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Tensor>> = (0..inner.nodes.len()).map(|_| None).collect();
        grads[loss.idx] = Some(Tensor::from_op(
            loss_value.shape().to_vec(),
            vec![1.0],
            loss_value.precision(),
        ));
        for i in (0..=loss.idx).rev() {
            if grads[i].is_none() || matches!(inner.nodes[i].op, Op::Leaf) {
                continue;
            }
            let g = grads[i].take().unwrap();
            let node = &inner.nodes[i];
            let vals: Vec<&Tensor> = node
                .inputs
                .iter()
                .map(|&j| &inner.nodes[j].value)
                .collect();
            let input_grads = kernels::backward(&node.op, &vals, &node.value, &g)?;
            for (&j, ig) in node.inputs.iter().zip(input_grads) {
                grads[j] = Some(match grads[j].take() {
                    None => ig,
                    Some(acc) => accumulate(acc, &ig),
                });
            }
        }
        let mut by_name = HashMap::new();
        for (name, idx) in &inner.params {
            let g = grads[*idx]
                .clone()
                .unwrap_or_else(|| Tensor::zeros(inner.nodes[*idx].value.shape()));
            by_name.insert(name.clone(), g);
        }
        Ok(Gradients { by_name })
    }

    /// Recompute a recorded value from the leaves. At fixed precision the
    /// result is bit-identical to the recorded forward pass.
    pub fn replay(&self, v: Var<'_>) -> Result<Tensor> {
        if v.tape.id != self.id {
            return Err(TensorError::ForeignTape);
        }
        let inner = self.inner.borrow();
        let mut values: Vec<Tensor> = Vec::with_capacity(v.idx + 1);
        for node in inner.nodes.iter().take(v.idx + 1) {
            let value = if matches!(node.op, Op::Leaf) {
                node.value.clone()
            } else {
                let vals: Vec<&Tensor> = node.inputs.iter().map(|&j| &values[j]).collect();
                kernels::forward(&node.op, &vals)?
            };
            values.push(value);
        }
        Ok(values.pop().unwrap())
    }
}

fn accumulate(mut acc: Tensor, add: &Tensor) -> Tensor {
    let mut data = std::mem::take(&mut acc.data);
    for (a, b) in data.iter_mut().zip(add.data()) {
        *a += b;
    }
    Tensor::from_op(acc.shape, data, acc.precision)
}

/// Gradients keyed by parameter name.
#[derive(Debug)]
pub struct Gradients {
    by_name: HashMap<String, Tensor>,
}

impl Gradients {
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.by_name.get(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.by_name.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.by_name.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_name.is_empty()
    }
}

/// Handle to a node on a tape. Cheap to copy; ops append new nodes.
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    idx: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var")
            .field("idx", &self.idx)
            .field("shape", &self.shape())
            .finish()
    }
}

impl<'t> Var<'t> {
    pub fn value(&self) -> Tensor {
        self.tape.inner.borrow().nodes[self.idx].value.clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.inner.borrow().nodes[self.idx]
            .value
            .shape()
            .to_vec()
    }

    pub fn len(&self) -> usize {
        self.tape.inner.borrow().nodes[self.idx].value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn item(&self) -> Result<f64> {
        self.tape.inner.borrow().nodes[self.idx].value.item()
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    // ---- op catalog ----

    pub fn add(&self, other: &Var<'t>) -> Result<Var<'t>> {
        self.tape.apply(Op::Add, &[self, other])
    }

    pub fn sub(&self, other: &Var<'t>) -> Result<Var<'t>> {
        self.tape.apply(Op::Sub, &[self, other])
    }

    pub fn mul(&self, other: &Var<'t>) -> Result<Var<'t>> {
        self.tape.apply(Op::Mul, &[self, other])
    }

    pub fn scalar_mul(&self, s: f64) -> Result<Var<'t>> {
        self.tape.apply(Op::ScalarMul(s), &[self])
    }

    pub fn matmul(&self, other: &Var<'t>) -> Result<Var<'t>> {
        self.tape.apply(Op::MatMul, &[self, other])
    }

    pub fn reshape(&self, to: &[usize]) -> Result<Var<'t>> {
        self.tape.apply(Op::Reshape { to: to.to_vec() }, &[self])
    }

    pub fn transpose(&self, perm: &[usize]) -> Result<Var<'t>> {
        self.tape
            .apply(Op::Transpose { perm: perm.to_vec() }, &[self])
    }

    /// Contiguous slice: one `(start, len)` pair per axis.
    pub fn slice(&self, ranges: &[(usize, usize)]) -> Result<Var<'t>> {
        let start: Vec<usize> = ranges.iter().map(|r| r.0).collect();
        let len: Vec<usize> = ranges.iter().map(|r| r.1).collect();
        self.tape.apply(Op::Slice { start, len }, &[self])
    }

    pub fn mean_axis(&self, axis: usize) -> Result<Var<'t>> {
        self.tape.apply(Op::MeanAxis { axis }, &[self])
    }

    pub fn var_axis(&self, axis: usize) -> Result<Var<'t>> {
        self.tape.apply(Op::VarAxis { axis }, &[self])
    }

    pub fn abs(&self) -> Result<Var<'t>> {
        self.tape.apply(Op::Abs, &[self])
    }

    pub fn sqrt(&self) -> Result<Var<'t>> {
        self.tape.apply(Op::Sqrt, &[self])
    }

    pub fn exp(&self) -> Result<Var<'t>> {
        self.tape.apply(Op::Exp, &[self])
    }

    pub fn ln_1p(&self) -> Result<Var<'t>> {
        self.tape.apply(Op::Ln1p, &[self])
    }

    pub fn softmax_last(&self) -> Result<Var<'t>> {
        self.tape.apply(Op::SoftmaxLast, &[self])
    }

    pub fn gelu(&self) -> Result<Var<'t>> {
        self.tape.apply(Op::Gelu, &[self])
    }

    pub fn tanh(&self) -> Result<Var<'t>> {
        self.tape.apply(Op::Tanh, &[self])
    }

    pub fn sigmoid(&self) -> Result<Var<'t>> {
        self.tape.apply(Op::Sigmoid, &[self])
    }

    // ---- compositions over the catalog ----

    /// Elementwise reciprocal for strictly positive inputs:
    /// `1/x = exp(-ln(1+(x-1)))`.
    pub fn recip_positive(&self) -> Result<Var<'t>> {
        let ones = self.tape.leaf(Tensor::full(&self.shape(), 1.0));
        self.sub(&ones)?.ln_1p()?.scalar_mul(-1.0)?.exp()
    }

    pub fn add_scalar(&self, s: f64) -> Result<Var<'t>> {
        let c = self.tape.leaf(Tensor::full(&self.shape(), s));
        self.add(&c)
    }

    /// x * sigmoid(x).
    pub fn silu(&self) -> Result<Var<'t>> {
        self.mul(&self.sigmoid()?)
    }

    /// Mean over every element, yielding a rank-0 scalar.
    pub fn mean_all(&self) -> Result<Var<'t>> {
        self.reshape(&[self.len()])?.mean_axis(0)
    }

    pub fn sum_all(&self) -> Result<Var<'t>> {
        let n = self.len() as f64;
        self.mean_all()?.scalar_mul(n)
    }
}
