//! Dense tensors with reverse-mode automatic differentiation.
//!
//! A [`Tensor`] is an immutable row-major array of reals. Differentiable
//! computations are recorded on a [`Tape`]; calling [`Tape::backward`] on a
//! scalar result yields one gradient per named leaf parameter, computed by
//! replaying the recorded graph in reverse.

mod gradcheck;
mod kernels;
mod tape;

#[cfg(test)]
mod tests;

pub use gradcheck::{as_loss_fn, grad_check, GradCheckReport};
pub use tape::{Gradients, Tape, Var};

use thiserror::Error;

/// Element precision of a tensor.
///
/// Storage is always `f64`; `F32` rounds the result of every operation
/// through 32-bit, so a 32-bit pipeline is reproducible while gradient
/// checks can run at full 64-bit precision.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Precision {
    F32,
    #[default]
    F64,
}

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("shape {shape:?} implies {expected} elements, got {actual}")]
    ShapeDataMismatch {
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },
    #[error("precision mismatch in {op}")]
    PrecisionMismatch { op: &'static str },
    #[error("{op}: axis {axis} out of range for rank {rank}")]
    AxisOutOfRange {
        op: &'static str,
        axis: usize,
        rank: usize,
    },
    #[error("variance over axis {axis} of extent {extent} (need at least 1)")]
    EmptyAxis { axis: usize, extent: usize },
    #[error("{op}: {what}")]
    Domain { op: &'static str, what: String },
    #[error("backward requires a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
    #[error("variable does not belong to the active tape")]
    ForeignTape,
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
}

pub type Result<T> = std::result::Result<T, TensorError>;

/// Immutable dense tensor, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    precision: Precision,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        Self::with_precision(shape, data, Precision::F64)
    }

    pub fn with_precision(shape: Vec<usize>, data: Vec<f64>, precision: Precision) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(TensorError::ShapeDataMismatch {
                shape,
                expected,
                actual: data.len(),
            });
        }
        let mut t = Tensor {
            shape,
            data,
            precision,
        };
        t.round_to_precision();
        Ok(t)
    }

    pub fn scalar(v: f64) -> Self {
        Tensor {
            shape: vec![],
            data: vec![v],
            precision: Precision::F64,
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
            precision: Precision::F64,
        }
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, 1.0)
    }

    pub fn full(shape: &[usize], v: f64) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![v; shape.iter().product()],
            precision: Precision::F64,
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> f64) -> Self {
        let n: usize = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: (0..n).map(|i| f(i)).collect(),
            precision: Precision::F64,
        }
    }

    /// I.i.d. standard normal draws in row-major order.
    pub fn randn(shape: &[usize], rng: &mut impl rand::Rng) -> Self {
        use rand_distr::{Distribution, StandardNormal};
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|_| StandardNormal.sample(rng))
            .collect::<Vec<f64>>();
        Tensor {
            shape: shape.to_vec(),
            data,
            precision: Precision::F64,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn precision(&self) -> Precision {
        self.precision
    }

    pub fn to_precision(&self, precision: Precision) -> Tensor {
        let mut t = self.clone();
        t.precision = precision;
        t.round_to_precision();
        t
    }

    /// The single element of a scalar (rank-0 or one-element) tensor.
    pub fn item(&self) -> Result<f64> {
        if self.data.len() == 1 {
            Ok(self.data[0])
        } else {
            Err(TensorError::NonScalarLoss {
                shape: self.shape.clone(),
            })
        }
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1 && self.shape.is_empty()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Index of the first non-finite element, if any.
    pub fn first_non_finite(&self) -> Option<usize> {
        self.data.iter().position(|v| !v.is_finite())
    }

    pub(crate) fn round_to_precision(&mut self) {
        if self.precision == Precision::F32 {
            for v in &mut self.data {
                *v = *v as f32 as f64;
            }
        }
    }

    pub(crate) fn from_op(shape: Vec<usize>, data: Vec<f64>, precision: Precision) -> Tensor {
        let mut t = Tensor {
            shape,
            data,
            precision,
        };
        t.round_to_precision();
        t
    }
}

/// Row-major strides of a shape.
pub(crate) fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1usize; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}
