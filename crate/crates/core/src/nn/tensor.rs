//! Trainable parameter storage.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Shape {
    Vector(usize),
    /// Row-major `(rows, cols)`.
    Matrix(usize, usize),
}

impl Shape {
    pub fn len(&self) -> usize {
        match *self {
            Shape::Vector(n) => n,
            Shape::Matrix(r, c) => r * c,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `(rows, cols)`, with a vector reported as a single column.
    pub fn dims(&self) -> (usize, usize) {
        match *self {
            Shape::Vector(n) => (n, 1),
            Shape::Matrix(r, c) => (r, c),
        }
    }
}

/// A named array of reals with its gradient and Adam moment buffers.
///
/// All four buffers always have `shape.len()` entries.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamTensor {
    name: String,
    shape: Shape,
    pub(crate) values: Vec<f64>,
    pub(crate) grad: Vec<f64>,
    pub(crate) adam_m: Vec<f64>,
    pub(crate) adam_v: Vec<f64>,
    pub(crate) step_count: u64,
}

impl ParamTensor {
    pub fn zeros(name: impl Into<String>, shape: Shape) -> Self {
        let n = shape.len();
        Self {
            name: name.into(),
            shape,
            values: vec![0.0; n],
            grad: vec![0.0; n],
            adam_m: vec![0.0; n],
            adam_v: vec![0.0; n],
            step_count: 0,
        }
    }

    /// Panics if `values.len()` does not match `shape`.
    pub fn from_values(name: impl Into<String>, shape: Shape, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), shape.len(), "values do not match shape");
        let mut t = Self::zeros(name, shape);
        t.values = values;
        t
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn grad(&self) -> &[f64] {
        &self.grad
    }

    pub fn grad_mut(&mut self) -> &mut [f64] {
        &mut self.grad
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }

    /// Clears optimizer state, keeping values.
    pub fn reset_optimizer(&mut self) {
        self.adam_m.fill(0.0);
        self.adam_v.fill(0.0);
        self.step_count = 0;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn buffers_share_shape() {
        let t = ParamTensor::zeros("w", Shape::Matrix(3, 4));
        assert_eq!(t.len(), 12);
        assert_eq!(t.grad().len(), 12);
        assert_eq!(t.adam_m.len(), 12);
        assert_eq!(t.adam_v.len(), 12);
    }

    #[test]
    fn zero_grad_clears_everything() {
        let mut t = ParamTensor::zeros("b", Shape::Vector(5));
        t.grad_mut().iter_mut().enumerate().for_each(|(i, g)| *g = i as f64 - 2.5);
        t.zero_grad();
        assert!(t.grad().iter().all(|&g| g == 0.0));
    }
}
