//! Dense f64 tensors with reverse-mode differentiation.
//!
//! A [`Tape`] records every primitive application; [`Tape::backward`] walks
//! the record in reverse and accumulates gradients for every tensor that
//! requires them. [`grad_check`] compares analytic gradients against central
//! finite differences. Everything is 64-bit: the point of this stack is tight
//! numeric verification, not throughput.

mod gradcheck;
mod tape;
#[cfg(test)]
mod tests;

pub use gradcheck::{grad_check, GradCheckConfig, GradCheckEntry, GradReport};
pub use tape::{NodeId, Tape};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("backward requires a scalar loss, got shape {shape:?}")]
    NotScalar { shape: Vec<usize> },
    #[error("softmax row {row} is fully masked (no finite entry)")]
    FullyMaskedRow { row: usize },
    #[error("{what}: index {index} out of range for length {len}")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        len: usize,
    },
    #[error("forward is not deterministic: two evaluations gave {first} and {second}")]
    NonDeterministicForward { first: f64, second: f64 },
}

/// A dense row-major tensor of 64-bit floats.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    requires_grad: bool,
}

impl Tensor {
    /// Build a tensor, checking that the data length matches the shape.
    pub fn from_shape(shape: Vec<usize>, data: Vec<f64>) -> Self {
        let numel: usize = shape.iter().product();
        assert_eq!(
            numel,
            data.len(),
            "tensor data length {} does not match shape {:?}",
            data.len(),
            shape
        );
        Tensor {
            shape,
            data,
            requires_grad: false,
        }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; numel],
            requires_grad: false,
        }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor::from_shape(vec![1, 1], vec![v])
    }

    /// A 1 x n row vector.
    pub fn row(data: Vec<f64>) -> Self {
        Tensor::from_shape(vec![1, data.len()], data)
    }

    /// A flat length-n vector.
    pub fn vector(data: Vec<f64>) -> Self {
        Tensor::from_shape(vec![data.len()], data)
    }

    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
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

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// Rows/cols of a 2-D tensor; 1-D tensors count as a single row.
    pub fn dims2(&self) -> (usize, usize) {
        match self.shape.len() {
            1 => (1, self.shape[0]),
            2 => (self.shape[0], self.shape[1]),
            _ => panic!("expected rank <= 2, got shape {:?}", self.shape),
        }
    }

    pub fn is_scalar(&self) -> bool {
        self.numel() == 1
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// C[m,n] = A[m,k] * B[k,n], accumulated row by row for sequential access.
pub(crate) fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    out.fill(0.0);
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let out_row = &mut out[i * n..(i + 1) * n];
        for (p, &av) in a_row.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row.iter()) {
                *o += av * bv;
            }
        }
    }
}

/// C[m,k] = A[m,n] * B[k,n]^T (B stored row-major, used untransposed).
pub(crate) fn matmul_nt_raw(a: &[f64], b: &[f64], m: usize, n: usize, k: usize, out: &mut [f64]) {
    for i in 0..m {
        let a_row = &a[i * n..(i + 1) * n];
        let out_row = &mut out[i * k..(i + 1) * k];
        for (p, o) in out_row.iter_mut().enumerate() {
            let b_row = &b[p * n..(p + 1) * n];
            let mut s = 0.0;
            for (&av, &bv) in a_row.iter().zip(b_row.iter()) {
                s += av * bv;
            }
            *o = s;
        }
    }
}

/// C[k,n] = A[m,k]^T * B[m,n], accumulated so it can add into `out`.
pub(crate) fn matmul_tn_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    out.fill(0.0);
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let b_row = &b[i * n..(i + 1) * n];
        for (p, &av) in a_row.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let out_row = &mut out[p * n..(p + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row.iter()) {
                *o += av * bv;
            }
        }
    }
}
