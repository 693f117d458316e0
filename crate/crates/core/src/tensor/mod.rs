//! Dense `f64` tensors with tape-based reverse-mode differentiation.
//!
//! The module has three layers:
//!
//! * [`kernels`] holds untaped slice math shared by every caller.
//! * [`Tensor`] is a plain row-major array. The free functions here
//!   ([`matmul`], [`softmax`], [`sigmoid`], [`scatter_add`],
//!   [`cross_entropy`]) evaluate eagerly without recording anything.
//! * [`Tape`] records the same operations on [`Var`] handles and replays
//!   them backward to produce gradients for every leaf that asked for one.
//!
//! Broadcasting is limited to adding a row vector to every row of a
//! matrix. Masking uses [`kernels::MASK_VALUE`] rather than `-inf` so that
//! masked entries never produce `0 · ∞`.

pub mod kernels;
mod optim;
mod tape;

pub use optim::{AdamW, AdamWConfig, WarmupSchedule};
pub use tape::{Tape, Var};

use thiserror::Error;

/// Log-clamp applied to the target probability in cross-entropy.
pub const CE_EPS: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("index {index} out of range for length {len} in {op}")]
    Index {
        op: &'static str,
        index: usize,
        len: usize,
    },
    #[error("axis {axis} is invalid for a rank-{rank} tensor")]
    Axis { axis: usize, rank: usize },
    #[error("data length {len} does not match shape {shape:?}")]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("loss must be a single element, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("backward already ran on this tape; call reset_grads first")]
    BackwardTwice,
}

pub type Result<T> = std::result::Result<T, TensorError>;

/// Row-major dense tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(TensorError::DataLength {
                shape,
                len: data.len(),
            });
        }
        Ok(Self {
            shape,
            data,
            requires_grad: false,
            grad: None,
        })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; n],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn scalar(v: f64) -> Self {
        Self {
            shape: vec![1],
            data: vec![v],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
            requires_grad: false,
            grad: None,
        }
    }

    /// Builds a matrix from equal-length rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for row in rows {
            if row.len() != cols {
                return Err(TensorError::Shape {
                    op: "from_rows",
                    left: vec![cols],
                    right: vec![row.len()],
                });
            }
            data.extend_from_slice(row);
        }
        Self::new(vec![rows.len(), cols], data)
    }

    pub fn with_requires_grad(mut self, flag: bool) -> Self {
        self.requires_grad = flag;
        self
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    /// Installs a gradient buffer; it must match the value shape.
    pub fn set_grad(&mut self, grad: Vec<f64>) -> Result<()> {
        if grad.len() != self.data.len() {
            return Err(TensorError::Shape {
                op: "set_grad",
                left: self.shape.clone(),
                right: vec![grad.len()],
            });
        }
        self.grad = Some(grad);
        Ok(())
    }

    pub fn clear_grad(&mut self) {
        self.grad = None;
    }

    /// `(rows, cols)` view: rank-1 tensors are a single row.
    pub fn dims2(&self) -> (usize, usize) {
        match self.shape.as_slice() {
            [] => (1, 1),
            [n] => (1, *n),
            [r, c] => (*r, *c),
            s => (s[..s.len() - 1].iter().product(), s[s.len() - 1]),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

fn require_matrix(t: &Tensor, op: &'static str) -> Result<(usize, usize)> {
    match t.shape() {
        [r, c] => Ok((*r, *c)),
        s => Err(TensorError::Shape {
            op,
            left: s.to_vec(),
            right: vec![0, 0],
        }),
    }
}

/// Matrix product `[m×k] · [k×n]`.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = require_matrix(a, "matmul")?;
    let (k2, n) = require_matrix(b, "matmul")?;
    if k != k2 {
        return Err(TensorError::Shape {
            op: "matmul",
            left: a.shape.clone(),
            right: b.shape.clone(),
        });
    }
    Tensor::new(vec![m, n], kernels::matmul(&a.data, &b.data, m, k, n))
}

/// `(outer, len, inner)` strides for reducing along `axis`.
pub(crate) fn axis_layout(shape: &[usize], axis: usize) -> Result<(usize, usize, usize)> {
    if axis >= shape.len() {
        return Err(TensorError::Axis {
            axis,
            rank: shape.len(),
        });
    }
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    Ok((outer, shape[axis], inner))
}

pub(crate) fn softmax_along(data: &[f64], shape: &[usize], axis: usize) -> Result<Vec<f64>> {
    let (outer, len, inner) = axis_layout(shape, axis)?;
    let mut out = data.to_vec();
    if inner == 1 {
        kernels::softmax_rows(&mut out, len);
        return Ok(out);
    }
    let mut buf = vec![0.0; len];
    for o in 0..outer {
        for i in 0..inner {
            for (j, b) in buf.iter_mut().enumerate() {
                *b = data[(o * len + j) * inner + i];
            }
            kernels::softmax_in_place(&mut buf);
            for (j, b) in buf.iter().enumerate() {
                out[(o * len + j) * inner + i] = *b;
            }
        }
    }
    Ok(out)
}

/// Softmax along `axis`, stabilised by max subtraction.
pub fn softmax(x: &Tensor, axis: usize) -> Result<Tensor> {
    let out = softmax_along(&x.data, &x.shape, axis)?;
    Tensor::new(x.shape.clone(), out)
}

/// Elementwise logistic function.
pub fn sigmoid(x: &Tensor) -> Tensor {
    Tensor {
        shape: x.shape.clone(),
        data: x.data.iter().map(|&v| kernels::sigmoid(v)).collect(),
        requires_grad: false,
        grad: None,
    }
}

/// Accumulates `weights[i]` into `base[positions[i]]`; duplicates sum.
pub fn scatter_add(base: &Tensor, positions: &[usize], weights: &Tensor) -> Result<Tensor> {
    if positions.len() != weights.numel() {
        return Err(TensorError::Shape {
            op: "scatter_add",
            left: vec![positions.len()],
            right: weights.shape.clone(),
        });
    }
    let mut out = base.data.clone();
    for (&p, &w) in positions.iter().zip(&weights.data) {
        let len = out.len();
        *out.get_mut(p).ok_or(TensorError::Index {
            op: "scatter_add",
            index: p,
            len,
        })? += w;
    }
    Tensor::new(base.shape.clone(), out)
}

/// `-ln(max(p[target], CE_EPS))` for a probability vector `p`.
pub fn cross_entropy(p: &Tensor, target: usize) -> Result<f64> {
    let v = p.data.get(target).ok_or(TensorError::Index {
        op: "cross_entropy",
        index: target,
        len: p.numel(),
    })?;
    Ok(-v.max(CE_EPS).ln())
}
