//! Forward and backward kernels for the tape's op catalog.
//!
//! Every op computes in f64 and rounds through f32 when the operands carry
//! 32-bit precision, so recorded graphs replay bit-for-bit at either width.

use super::{strides, Precision, Result, Tensor, TensorError};

const GELU_C0: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_C1: f64 = 0.044_715;

#[derive(Debug, Clone)]
pub(crate) enum Op {
    Leaf,
    Add,
    Sub,
    Mul,
    ScalarMul(f64),
    MatMul,
    Reshape { to: Vec<usize> },
    Transpose { perm: Vec<usize> },
    Concat { axis: usize },
    Slice { start: Vec<usize>, len: Vec<usize> },
    MeanAxis { axis: usize },
    VarAxis { axis: usize },
    Abs,
    Sqrt,
    Exp,
    Ln1p,
    SoftmaxLast,
    Gelu,
    Tanh,
    Sigmoid,
}

impl Op {
    pub(crate) fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add => "add",
            Op::Sub => "subtract",
            Op::Mul => "elementwise-multiply",
            Op::ScalarMul(_) => "scalar-multiply",
            Op::MatMul => "matrix-multiply",
            Op::Reshape { .. } => "reshape",
            Op::Transpose { .. } => "transpose",
            Op::Concat { .. } => "concatenate",
            Op::Slice { .. } => "slice",
            Op::MeanAxis { .. } => "mean-over-axis",
            Op::VarAxis { .. } => "variance-over-axis",
            Op::Abs => "absolute-value",
            Op::Sqrt => "square-root",
            Op::Exp => "exponential",
            Op::Ln1p => "natural-log-of-one-plus",
            Op::SoftmaxLast => "softmax-over-last-axis",
            Op::Gelu => "GELU",
            Op::Tanh => "tanh",
            Op::Sigmoid => "sigmoid",
        }
    }
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(TensorError::ShapeMismatch {
            op,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    Ok(())
}

fn joint_precision(op: &'static str, a: &Tensor, b: &Tensor) -> Result<Precision> {
    if a.precision() != b.precision() {
        return Err(TensorError::PrecisionMismatch { op });
    }
    Ok(a.precision())
}

fn zip(op: &'static str, a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
    same_shape(op, a, b)?;
    let p = joint_precision(op, a, b)?;
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| f(x, y))
        .collect();
    Ok(Tensor::from_op(a.shape().to_vec(), data, p))
}

fn map(x: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor::from_op(
        x.shape().to_vec(),
        x.data().iter().map(|&v| f(v)).collect(),
        x.precision(),
    )
}

/// Dense 2-D product `out += a (m x k) * b (k x n)`.
fn mm_accum(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (kk, &av) in arow.iter().enumerate() {
            if av != 0.0 {
                let brow = &b[kk * n..(kk + 1) * n];
                for (o, &bv) in orow.iter_mut().zip(brow) {
                    *o += av * bv;
                }
            }
        }
    }
}

/// `out += a (m x n) * b^T (k x n)` giving an `m x k` result.
fn mm_nt_accum(a: &[f64], b: &[f64], m: usize, n: usize, k: usize, out: &mut [f64]) {
    for i in 0..m {
        let arow = &a[i * n..(i + 1) * n];
        let orow = &mut out[i * k..(i + 1) * k];
        for (kk, o) in orow.iter_mut().enumerate() {
            let brow = &b[kk * n..(kk + 1) * n];
            let mut acc = 0.0;
            for (av, bv) in arow.iter().zip(brow) {
                acc += av * bv;
            }
            *o += acc;
        }
    }
}

/// `out += a^T (m x k) * b (m x n)` giving a `k x n` result.
fn mm_tn_accum(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let brow = &b[i * n..(i + 1) * n];
        for (kk, &av) in arow.iter().enumerate() {
            if av != 0.0 {
                let orow = &mut out[kk * n..(kk + 1) * n];
                for (o, &bv) in orow.iter_mut().zip(brow) {
                    *o += av * bv;
                }
            }
        }
    }
}

enum MatMulKind {
    /// lhs `[..., K] x [K, N]`; contraction over the last lhs axis.
    RhsMatrix { rows: usize, k: usize, n: usize },
    /// Equal-rank stacks `[..., M, K] x [..., K, N]` with identical leading dims.
    Batched {
        batch: usize,
        m: usize,
        k: usize,
        n: usize,
    },
}

fn classify_matmul(a: &Tensor, b: &Tensor) -> Result<(MatMulKind, Vec<usize>)> {
    let mismatch = || TensorError::ShapeMismatch {
        op: "matrix-multiply",
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    };
    if a.rank() < 2 || b.rank() < 2 {
        return Err(mismatch());
    }
    if b.rank() == 2 {
        let k = *a.shape().last().unwrap();
        if b.shape()[0] != k {
            return Err(mismatch());
        }
        let n = b.shape()[1];
        let rows = a.len() / k.max(1);
        let mut out = a.shape().to_vec();
        *out.last_mut().unwrap() = n;
        Ok((MatMulKind::RhsMatrix { rows, k, n }, out))
    } else if a.rank() == b.rank() {
        let r = a.rank();
        if a.shape()[..r - 2] != b.shape()[..r - 2] {
            return Err(mismatch());
        }
        let (m, k) = (a.shape()[r - 2], a.shape()[r - 1]);
        let (k2, n) = (b.shape()[r - 2], b.shape()[r - 1]);
        if k != k2 {
            return Err(mismatch());
        }
        let batch: usize = a.shape()[..r - 2].iter().product();
        let mut out = a.shape().to_vec();
        out[r - 2] = m;
        out[r - 1] = n;
        Ok((MatMulKind::Batched { batch, m, k, n }, out))
    } else {
        Err(mismatch())
    }
}

fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let p = joint_precision("matrix-multiply", a, b)?;
    let (kind, out_shape) = classify_matmul(a, b)?;
    let mut data = vec![0.0; out_shape.iter().product()];
    match kind {
        MatMulKind::RhsMatrix { rows, k, n } => {
            mm_accum(a.data(), b.data(), rows, k, n, &mut data);
        }
        MatMulKind::Batched { batch, m, k, n } => {
            for bi in 0..batch {
                mm_accum(
                    &a.data()[bi * m * k..(bi + 1) * m * k],
                    &b.data()[bi * k * n..(bi + 1) * k * n],
                    m,
                    k,
                    n,
                    &mut data[bi * m * n..(bi + 1) * m * n],
                );
            }
        }
    }
    Ok(Tensor::from_op(out_shape, data, p))
}

fn matmul_backward(a: &Tensor, b: &Tensor, grad: &Tensor) -> Result<Vec<Tensor>> {
    let (kind, _) = classify_matmul(a, b)?;
    let mut da = vec![0.0; a.len()];
    let mut db = vec![0.0; b.len()];
    match kind {
        MatMulKind::RhsMatrix { rows, k, n } => {
            mm_nt_accum(grad.data(), b.data(), rows, n, k, &mut da);
            mm_tn_accum(a.data(), grad.data(), rows, k, n, &mut db);
        }
        MatMulKind::Batched { batch, m, k, n } => {
            for bi in 0..batch {
                let g = &grad.data()[bi * m * n..(bi + 1) * m * n];
                let av = &a.data()[bi * m * k..(bi + 1) * m * k];
                let bv = &b.data()[bi * k * n..(bi + 1) * k * n];
                mm_nt_accum(g, bv, m, n, k, &mut da[bi * m * k..(bi + 1) * m * k]);
                mm_tn_accum(av, g, m, k, n, &mut db[bi * k * n..(bi + 1) * k * n]);
            }
        }
    }
    Ok(vec![
        Tensor::from_op(a.shape().to_vec(), da, a.precision()),
        Tensor::from_op(b.shape().to_vec(), db, b.precision()),
    ])
}

fn transpose(x: &Tensor, perm: &[usize]) -> Result<Tensor> {
    let r = x.rank();
    let mut seen = vec![false; r];
    if perm.len() != r || perm.iter().any(|&p| p >= r || std::mem::replace(&mut seen[p], true)) {
        return Err(TensorError::Domain {
            op: "transpose",
            what: format!("{perm:?} is not a permutation of 0..{r}"),
        });
    }
    let out_shape: Vec<usize> = perm.iter().map(|&p| x.shape()[p]).collect();
    let in_strides = strides(x.shape());
    let out_strides = strides(&out_shape);
    // out position of input dim d
    let mut inv = vec![0usize; r];
    for (q, &p) in perm.iter().enumerate() {
        inv[p] = q;
    }
    let mut data = vec![0.0; x.len()];
    for (lin, &v) in x.data().iter().enumerate() {
        let mut rem = lin;
        let mut out_idx = 0;
        for d in 0..r {
            let c = rem / in_strides[d];
            rem %= in_strides[d];
            out_idx += c * out_strides[inv[d]];
        }
        data[out_idx] = v;
    }
    Ok(Tensor::from_op(out_shape, data, x.precision()))
}

fn invert_perm(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0usize; perm.len()];
    for (q, &p) in perm.iter().enumerate() {
        inv[p] = q;
    }
    inv
}

fn concat(inputs: &[&Tensor], axis: usize) -> Result<Tensor> {
    let first = inputs.first().ok_or_else(|| TensorError::Domain {
        op: "concatenate",
        what: "no inputs".into(),
    })?;
    let r = first.rank();
    if axis >= r {
        return Err(TensorError::AxisOutOfRange {
            op: "concatenate",
            axis,
            rank: r,
        });
    }
    let p = first.precision();
    let mut total_axis = 0usize;
    for t in inputs {
        if t.rank() != r
            || t.shape()[..axis] != first.shape()[..axis]
            || t.shape()[axis + 1..] != first.shape()[axis + 1..]
        {
            return Err(TensorError::ShapeMismatch {
                op: "concatenate",
                lhs: first.shape().to_vec(),
                rhs: t.shape().to_vec(),
            });
        }
        if t.precision() != p {
            return Err(TensorError::PrecisionMismatch { op: "concatenate" });
        }
        total_axis += t.shape()[axis];
    }
    let mut out_shape = first.shape().to_vec();
    out_shape[axis] = total_axis;
    let outer: usize = first.shape()[..axis].iter().product();
    let inner: usize = first.shape()[axis + 1..].iter().product();
    let mut data = vec![0.0; out_shape.iter().product()];
    let out_block = total_axis * inner;
    let mut offset = 0usize;
    for t in inputs {
        let block = t.shape()[axis] * inner;
        for o in 0..outer {
            let src = &t.data()[o * block..(o + 1) * block];
            let dst = &mut data[o * out_block + offset..o * out_block + offset + block];
            dst.copy_from_slice(src);
        }
        offset += block;
    }
    Ok(Tensor::from_op(out_shape, data, p))
}

fn concat_backward(inputs: &[&Tensor], axis: usize, grad: &Tensor) -> Result<Vec<Tensor>> {
    let first = inputs[0];
    let outer: usize = first.shape()[..axis].iter().product();
    let inner: usize = first.shape()[axis + 1..].iter().product();
    let out_block = grad.shape()[axis] * inner;
    let mut offset = 0usize;
    let mut grads = Vec::with_capacity(inputs.len());
    for t in inputs {
        let block = t.shape()[axis] * inner;
        let mut data = vec![0.0; t.len()];
        for o in 0..outer {
            let src = &grad.data()[o * out_block + offset..o * out_block + offset + block];
            data[o * block..(o + 1) * block].copy_from_slice(src);
        }
        offset += block;
        grads.push(Tensor::from_op(t.shape().to_vec(), data, t.precision()));
    }
    Ok(grads)
}

fn slice(x: &Tensor, start: &[usize], len: &[usize]) -> Result<Tensor> {
    let r = x.rank();
    if start.len() != r || len.len() != r {
        return Err(TensorError::Domain {
            op: "slice",
            what: format!(
                "start/len rank {}/{} does not match tensor rank {r}",
                start.len(),
                len.len()
            ),
        });
    }
    for d in 0..r {
        if start[d] + len[d] > x.shape()[d] || len[d] == 0 {
            return Err(TensorError::Domain {
                op: "slice",
                what: format!(
                    "range {}..{} out of bounds for axis {d} of extent {}",
                    start[d],
                    start[d] + len[d],
                    x.shape()[d]
                ),
            });
        }
    }
    let in_strides = strides(x.shape());
    let out_strides = strides(len);
    let n: usize = len.iter().product();
    let mut data = vec![0.0; n];
    for (out_idx, slot) in data.iter_mut().enumerate() {
        let mut rem = out_idx;
        let mut in_idx = 0;
        for d in 0..r {
            let c = rem / out_strides[d];
            rem %= out_strides[d];
            in_idx += (start[d] + c) * in_strides[d];
        }
        *slot = x.data()[in_idx];
    }
    Ok(Tensor::from_op(len.to_vec(), data, x.precision()))
}

fn slice_backward(x: &Tensor, start: &[usize], len: &[usize], grad: &Tensor) -> Tensor {
    let r = x.rank();
    let in_strides = strides(x.shape());
    let out_strides = strides(len);
    let mut data = vec![0.0; x.len()];
    for (out_idx, &g) in grad.data().iter().enumerate() {
        let mut rem = out_idx;
        let mut in_idx = 0;
        for d in 0..r {
            let c = rem / out_strides[d];
            rem %= out_strides[d];
            in_idx += (start[d] + c) * in_strides[d];
        }
        data[in_idx] = g;
    }
    Tensor::from_op(x.shape().to_vec(), data, x.precision())
}

/// Split a shape at `axis` into (outer, extent, inner) block sizes.
fn axis_blocks(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn check_axis(op: &'static str, x: &Tensor, axis: usize) -> Result<()> {
    if axis >= x.rank() {
        return Err(TensorError::AxisOutOfRange {
            op,
            axis,
            rank: x.rank(),
        });
    }
    Ok(())
}

fn reduced_shape(shape: &[usize], axis: usize) -> Vec<usize> {
    let mut s = shape.to_vec();
    s.remove(axis);
    s
}

fn mean_axis(x: &Tensor, axis: usize) -> Result<Tensor> {
    check_axis("mean-over-axis", x, axis)?;
    let (outer, ax, inner) = axis_blocks(x.shape(), axis);
    if ax == 0 {
        return Err(TensorError::EmptyAxis { axis, extent: ax });
    }
    let mut data = vec![0.0; outer * inner];
    for o in 0..outer {
        for i in 0..inner {
            let mut acc = 0.0;
            for a in 0..ax {
                acc += x.data()[(o * ax + a) * inner + i];
            }
            data[o * inner + i] = acc / ax as f64;
        }
    }
    Ok(Tensor::from_op(
        reduced_shape(x.shape(), axis),
        data,
        x.precision(),
    ))
}

fn mean_axis_backward(x: &Tensor, axis: usize, grad: &Tensor) -> Tensor {
    let (outer, ax, inner) = axis_blocks(x.shape(), axis);
    let mut data = vec![0.0; x.len()];
    for o in 0..outer {
        for i in 0..inner {
            let g = grad.data()[o * inner + i] / ax as f64;
            for a in 0..ax {
                data[(o * ax + a) * inner + i] = g;
            }
        }
    }
    Tensor::from_op(x.shape().to_vec(), data, x.precision())
}

/// Population variance (divide by the axis extent).
fn var_axis(x: &Tensor, axis: usize) -> Result<Tensor> {
    check_axis("variance-over-axis", x, axis)?;
    let (outer, ax, inner) = axis_blocks(x.shape(), axis);
    if ax < 1 {
        return Err(TensorError::EmptyAxis { axis, extent: ax });
    }
    let mut data = vec![0.0; outer * inner];
    for o in 0..outer {
        for i in 0..inner {
            let mut mean = 0.0;
            for a in 0..ax {
                mean += x.data()[(o * ax + a) * inner + i];
            }
            mean /= ax as f64;
            let mut acc = 0.0;
            for a in 0..ax {
                let d = x.data()[(o * ax + a) * inner + i] - mean;
                acc += d * d;
            }
            data[o * inner + i] = acc / ax as f64;
        }
    }
    Ok(Tensor::from_op(
        reduced_shape(x.shape(), axis),
        data,
        x.precision(),
    ))
}

fn var_axis_backward(x: &Tensor, axis: usize, grad: &Tensor) -> Tensor {
    let (outer, ax, inner) = axis_blocks(x.shape(), axis);
    let mut data = vec![0.0; x.len()];
    for o in 0..outer {
        for i in 0..inner {
            let mut mean = 0.0;
            for a in 0..ax {
                mean += x.data()[(o * ax + a) * inner + i];
            }
            mean /= ax as f64;
            let g = grad.data()[o * inner + i] * 2.0 / ax as f64;
            for a in 0..ax {
                let idx = (o * ax + a) * inner + i;
                data[idx] = g * (x.data()[idx] - mean);
            }
        }
    }
    Tensor::from_op(x.shape().to_vec(), data, x.precision())
}

/// Row-stable softmax: subtracts the per-row maximum before exponentiation.
fn softmax_last(x: &Tensor) -> Result<Tensor> {
    if x.rank() == 0 {
        return Err(TensorError::AxisOutOfRange {
            op: "softmax-over-last-axis",
            axis: 0,
            rank: 0,
        });
    }
    let n = *x.shape().last().unwrap();
    let rows = x.len() / n.max(1);
    let mut data = vec![0.0; x.len()];
    for r in 0..rows {
        let row = &x.data()[r * n..(r + 1) * n];
        let out = &mut data[r * n..(r + 1) * n];
        let mx = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let mut denom = 0.0;
        for (o, &v) in out.iter_mut().zip(row) {
            *o = (v - mx).exp();
            denom += *o;
        }
        for o in out.iter_mut() {
            *o /= denom;
        }
    }
    Ok(Tensor::from_op(x.shape().to_vec(), data, x.precision()))
}

fn softmax_last_backward(output: &Tensor, grad: &Tensor) -> Tensor {
    let n = *output.shape().last().unwrap();
    let rows = output.len() / n.max(1);
    let mut data = vec![0.0; output.len()];
    for r in 0..rows {
        let y = &output.data()[r * n..(r + 1) * n];
        let g = &grad.data()[r * n..(r + 1) * n];
        let dot: f64 = y.iter().zip(g).map(|(&yv, &gv)| yv * gv).sum();
        for j in 0..n {
            data[r * n + j] = y[j] * (g[j] - dot);
        }
    }
    Tensor::from_op(output.shape().to_vec(), data, output.precision())
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C0 * (x + GELU_C1 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C0 * (x + GELU_C1 * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C0 * (1.0 + 3.0 * GELU_C1 * x * x)
}

pub(crate) fn forward(op: &Op, inputs: &[&Tensor]) -> Result<Tensor> {
    match op {
        Op::Leaf => unreachable!("leaf nodes are never recomputed"),
        Op::Add => zip("add", inputs[0], inputs[1], |a, b| a + b),
        Op::Sub => zip("subtract", inputs[0], inputs[1], |a, b| a - b),
        Op::Mul => zip("elementwise-multiply", inputs[0], inputs[1], |a, b| a * b),
        Op::ScalarMul(s) => Ok(map(inputs[0], |v| s * v)),
        Op::MatMul => matmul(inputs[0], inputs[1]),
        Op::Reshape { to } => {
            let x = inputs[0];
            let expected: usize = to.iter().product();
            if expected != x.len() {
                return Err(TensorError::ShapeMismatch {
                    op: "reshape",
                    lhs: x.shape().to_vec(),
                    rhs: to.clone(),
                });
            }
            Ok(Tensor::from_op(
                to.clone(),
                x.data().to_vec(),
                x.precision(),
            ))
        }
        Op::Transpose { perm } => transpose(inputs[0], perm),
        Op::Concat { axis } => concat(inputs, *axis),
        Op::Slice { start, len } => slice(inputs[0], start, len),
        Op::MeanAxis { axis } => mean_axis(inputs[0], *axis),
        Op::VarAxis { axis } => var_axis(inputs[0], *axis),
        Op::Abs => Ok(map(inputs[0], f64::abs)),
        Op::Sqrt => {
            let x = inputs[0];
            if let Some(i) = x.data().iter().position(|&v| v < 0.0) {
                return Err(TensorError::Domain {
                    op: "square-root",
                    what: format!("negative input {} at flat index {i}", x.data()[i]),
                });
            }
            Ok(map(x, f64::sqrt))
        }
        Op::Exp => Ok(map(inputs[0], f64::exp)),
        Op::Ln1p => {
            let x = inputs[0];
            if let Some(i) = x.data().iter().position(|&v| v <= -1.0) {
                return Err(TensorError::Domain {
                    op: "natural-log-of-one-plus",
                    what: format!("input {} at flat index {i} is <= -1", x.data()[i]),
                });
            }
            Ok(map(x, f64::ln_1p))
        }
        Op::SoftmaxLast => softmax_last(inputs[0]),
        Op::Gelu => Ok(map(inputs[0], gelu)),
        Op::Tanh => Ok(map(inputs[0], f64::tanh)),
        Op::Sigmoid => Ok(map(inputs[0], |v| 1.0 / (1.0 + (-v).exp()))),
    }
}

/// One gradient per input, given the upstream gradient of the output.
pub(crate) fn backward(
    op: &Op,
    inputs: &[&Tensor],
    output: &Tensor,
    grad: &Tensor,
) -> Result<Vec<Tensor>> {
    let g1 = |t: Tensor| Ok(vec![t]);
    match op {
        Op::Leaf => Ok(vec![]),
        Op::Add => Ok(vec![grad.clone(), grad.clone()]),
        Op::Sub => Ok(vec![grad.clone(), map(grad, |v| -v)]),
        Op::Mul => Ok(vec![
            zip("elementwise-multiply", grad, inputs[1], |g, b| g * b)?,
            zip("elementwise-multiply", grad, inputs[0], |g, a| g * a)?,
        ]),
        Op::ScalarMul(s) => g1(map(grad, |v| s * v)),
        Op::MatMul => matmul_backward(inputs[0], inputs[1], grad),
        Op::Reshape { .. } => g1(Tensor::from_op(
            inputs[0].shape().to_vec(),
            grad.data().to_vec(),
            grad.precision(),
        )),
        Op::Transpose { perm } => g1(transpose(grad, &invert_perm(perm))?),
        Op::Concat { axis } => concat_backward(inputs, *axis, grad),
        Op::Slice { start, len } => g1(slice_backward(inputs[0], start, len, grad)),
        Op::MeanAxis { axis } => g1(mean_axis_backward(inputs[0], *axis, grad)),
        Op::VarAxis { axis } => g1(var_axis_backward(inputs[0], *axis, grad)),
        // Subgradient 0 at exactly 0 keeps L1 losses well-defined.
        Op::Abs => g1(zip("absolute-value", grad, inputs[0], |g, x| {
            g * if x > 0.0 {
                1.0
            } else if x < 0.0 {
                -1.0
            } else {
                0.0
            }
        })?),
        Op::Sqrt => g1(zip("square-root", grad, output, |g, y| g / (2.0 * y))?),
        Op::Exp => g1(zip("exponential", grad, output, |g, y| g * y)?),
        Op::Ln1p => g1(zip("natural-log-of-one-plus", grad, inputs[0], |g, x| {
            g / (1.0 + x)
        })?),
        Op::SoftmaxLast => g1(softmax_last_backward(output, grad)),
        Op::Gelu => g1(zip("GELU", grad, inputs[0], |g, x| g * gelu_grad(x))?),
        Op::Tanh => g1(zip("tanh", grad, output, |g, y| g * (1.0 - y * y))?),
        Op::Sigmoid => g1(zip("sigmoid", grad, output, |g, y| g * y * (1.0 - y))?),
    }
}
