//! Minimal dense tensor engine.
//!
//! Values are row-major `f64`. A [`Graph`] records every operation applied during a forward
//! pass so that [`Graph::backward`] can replay it in reverse and produce gradients for every
//! leaf marked as requiring them. The set of operations is exactly what the proposal network
//! and its losses need; there is no general broadcasting.

mod adam;
pub mod gemm;
mod gradcheck;
mod graph;
pub mod kernels;
mod norm;

pub use adam::{Adam, AdamConfig};
pub use gradcheck::{grad_check, GradCheck, GradCheckReport};
pub use graph::{sigmoid, Gradients, Graph, MapAxis, Var, P_CLAMP};
pub use norm::{BatchNormState, NormMode};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::shape(format!("zero-sized dimension in {shape:?}")));
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::shape(format!(
                "shape {shape:?} holds {numel} values but {} were given",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        assert!(shape.iter().all(|&d| d > 0), "zero-sized dimension");
        let numel = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; numel],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn from_vec(data: Vec<f64>) -> Self {
        let n = data.len();
        Self::new(vec![n], data).expect("non-empty vector")
    }

    /// Standard normal samples.
    pub fn randn<R: Rng + ?Sized>(shape: &[usize], rng: &mut R) -> Self {
        let mut t = Self::zeros(shape);
        for v in &mut t.data {
            *v = StandardNormal.sample(rng);
        }
        t
    }

    /// Uniform samples in `[-bound, bound)`.
    pub fn uniform<R: Rng + ?Sized>(shape: &[usize], bound: f64, rng: &mut R) -> Self {
        let mut t = Self::zeros(shape);
        for v in &mut t.data {
            *v = rng.gen_range(-bound..bound);
        }
        t
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

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != self.data.len() || shape.contains(&0) {
            return Err(Error::shape(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape
            )));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    /// Rejects the tensor if any value is NaN or infinite.
    pub fn validate(&self) -> Result<()> {
        match self.data.iter().position(|v| !v.is_finite()) {
            None => Ok(()),
            Some(i) => Err(Error::NonFinite {
                location: format!("flat index {i} of tensor {:?}", self.shape),
                value: self.data[i],
            }),
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        assert_eq!(self.shape, other.shape);
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_checks_length() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 6]).is_ok());
        assert!(Tensor::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::new(vec![2, 0], vec![]).is_err());
    }

    #[test]
    fn validate_flags_nan() {
        let t = Tensor::new(vec![3], vec![1.0, f64::NAN, 2.0]).unwrap();
        let err = t.validate().unwrap_err().to_string();
        assert!(err.contains("flat index 1"), "{err}");
        assert!(Tensor::from_vec(vec![1.0, 2.0]).validate().is_ok());
    }
}
