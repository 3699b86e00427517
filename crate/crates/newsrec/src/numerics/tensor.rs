//! Dense row-major tensor of `Real` values.
//!
//! Shapes are explicit and checked: every operation that combines tensors
//! validates dimensions and reports a contract violation on mismatch rather
//! than silently broadcasting.

use crate::error::{contract, Result};
use crate::numerics::{Real, RngState};

/// Dense tensor: a shape vector plus row-major data.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<Real>,
}

impl Tensor {
    /// Build from an explicit shape and row-major data.
    pub fn from_vec(shape: Vec<usize>, data: Vec<Real>) -> Result<Self> {
        let expect: usize = shape.iter().product();
        if expect != data.len() {
            return Err(contract(format!(
                "shape {:?} wants {} elements, got {}",
                shape,
                expect,
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n: usize = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn scalar(x: Real) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![x],
        }
    }

    /// Fresh tensor with entries drawn from N(mean, std^2).
    pub fn gaussian(shape: &[usize], mean: Real, std: Real, rng: &mut RngState) -> Self {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| rng.gaussian(mean, std)).collect();
        Tensor {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[Real] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Real] {
        &mut self.data
    }

    /// Single element of a scalar (shape `[1]`) tensor.
    pub fn item(&self) -> Real {
        debug_assert_eq!(self.data.len(), 1, "item() on non-scalar tensor");
        self.data[0]
    }

    /// Number of rows when interpreted as a matrix (`[n, k]`) or the length
    /// of a vector (`[n]`).
    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    /// Columns of a `[n, k]` matrix.
    pub fn cols(&self) -> usize {
        debug_assert_eq!(self.shape.len(), 2);
        self.shape[1]
    }

    /// Row `i` of a rank-2 tensor as a slice.
    pub fn row(&self, i: usize) -> &[Real] {
        let k = self.shape[1];
        &self.data[i * k..(i + 1) * k]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [Real] {
        let k = self.shape[1];
        &mut self.data[i * k..(i + 1) * k]
    }

    /// Value at `(i, j)` of a rank-2 tensor.
    pub fn at2(&self, i: usize, j: usize) -> Real {
        self.data[i * self.shape[1] + j]
    }

    /// Value at `(i, j, l)` of a rank-3 tensor.
    pub fn at3(&self, i: usize, j: usize, l: usize) -> Real {
        self.data[(i * self.shape[1] + j) * self.shape[2] + l]
    }

    pub fn set2(&mut self, i: usize, j: usize, x: Real) {
        self.data[i * self.shape[1] + j] = x;
    }

    pub fn set3(&mut self, i: usize, j: usize, l: usize, x: Real) {
        let idx = (i * self.shape[1] + j) * self.shape[2] + l;
        self.data[idx] = x;
    }

    /// True when every entry is finite.
    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// `self += scale * other`; shapes must match exactly.
    pub fn add_scaled(&mut self, other: &Tensor, scale: Real) {
        debug_assert_eq!(self.shape, other.shape, "add_scaled shape mismatch");
        for (a, b) in self.data.iter_mut().zip(other.data.iter()) {
            *a += scale * b;
        }
    }

    pub fn fill(&mut self, x: Real) {
        self.data.fill(x);
    }
}
