//! Minimal dense-tensor numerics with reverse-mode differentiation over a
//! fixed operator set.
//!
//! Everything is 64-bit, row-major, and CPU-only. The differentiable
//! operator set is closed: matmul, add (plus row broadcast), elementwise
//! mul, constant scale, transpose, row slice/concat, embedding lookup,
//! masked softmax, RMS norm, SiLU, sum, and the MSE/L1 losses. Each op
//! carries a hand-derived vector-Jacobian rule in [`graph`], and the whole
//! set is finite-difference checked in the test suite.

pub mod graph;
pub mod kernels;
pub mod optim;

pub use graph::{Graph, Var};
pub use optim::{AdamWConfig, OptimizerState};

use std::sync::Arc;

use crate::error::{Error, Result};

/// A dense 64-bit tensor. Data is immutable after creation (shared via
/// `Arc`); only the gradient buffer mutates, during accumulation and
/// optimizer steps.
#[derive(Debug, Clone)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Arc<Vec<f64>>,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Shape(format!(
                "shape {:?} wants {} elements, data has {}",
                shape,
                n,
                data.len()
            )));
        }
        Ok(Tensor { shape, data: Arc::new(data), requires_grad: false, grad: None })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor { shape, data: Arc::new(vec![0.0; n]), requires_grad: false, grad: None }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor { shape: vec![1], data: Arc::new(vec![v]), requires_grad: false, grad: None }
    }

    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        if self.grad.is_none() {
            self.grad = Some(vec![0.0; self.numel()]);
        }
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Shared handle to the raw buffer, used when registering the tensor
    /// as a graph leaf without copying.
    pub(crate) fn data_arc(&self) -> Arc<Vec<f64>> {
        Arc::clone(&self.data)
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = self.grad.as_mut() {
            g.iter_mut().for_each(|x| *x = 0.0);
        } else if self.requires_grad {
            self.grad = Some(vec![0.0; self.numel()]);
        }
    }

    /// Add `delta` into the gradient buffer (allocates it on first use).
    pub fn accumulate_grad(&mut self, delta: &[f64]) -> Result<()> {
        if delta.len() != self.numel() {
            return Err(Error::Shape(format!(
                "grad accumulation: tensor has {} elements, delta has {}",
                self.numel(),
                delta.len()
            )));
        }
        let g = self.grad.get_or_insert_with(|| vec![0.0; delta.len()]);
        for (gi, di) in g.iter_mut().zip(delta) {
            *gi += di;
        }
        Ok(())
    }

    /// Mutable access to the values, for optimizer updates. Cheap when no
    /// graph still holds the buffer.
    pub fn data_mut(&mut self) -> &mut [f64] {
        Arc::make_mut(&mut self.data).as_mut_slice()
    }

    /// Mutable gradient buffer, allocated (zeroed) on first use.
    pub fn grad_buffer_mut(&mut self) -> &mut [f64] {
        let n = self.numel();
        self.grad.get_or_insert_with(|| vec![0.0; n]).as_mut_slice()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Boolean matrix used as an attention mask, row-major.
#[derive(Debug, Clone)]
pub struct BoolMat {
    rows: usize,
    cols: usize,
    data: Arc<Vec<bool>>,
}

impl BoolMat {
    pub fn new(rows: usize, cols: usize, data: Vec<bool>) -> Result<Self> {
        if rows * cols != data.len() {
            return Err(Error::Shape(format!(
                "mask {}x{} wants {} entries, got {}",
                rows,
                cols,
                rows * cols,
                data.len()
            )));
        }
        Ok(BoolMat { rows, cols, data: Arc::new(data) })
    }

    pub fn ones(rows: usize, cols: usize) -> Self {
        BoolMat { rows, cols, data: Arc::new(vec![true; rows * cols]) }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> bool {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[bool] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.data
    }
}

impl PartialEq for BoolMat {
    fn eq(&self, other: &Self) -> bool {
        self.rows == other.rows && self.cols == other.cols && *self.data == *other.data
    }
}
