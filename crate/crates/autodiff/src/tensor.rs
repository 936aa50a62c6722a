use std::sync::Arc;

use crate::error::{Result, TensorError};

/// A dense row-major tensor of `f64` values.
///
/// Shapes are restricted to what the encoders and losses need: scalars
/// (`[1]`), vectors (`[n]`) and matrices (`[rows, cols]`).
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    values: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        let expect: usize = shape.iter().product();
        if expect != values.len() || shape.is_empty() || shape.len() > 2 {
            return Err(TensorError::contract(
                "tensor",
                format!("shape {:?} incompatible with {} values", shape, values.len()),
            ));
        }
        Ok(Tensor { shape, values })
    }

    pub fn scalar(v: f64) -> Self {
        Tensor {
            shape: vec![1],
            values: vec![v],
        }
    }

    pub fn vector(values: Vec<f64>) -> Self {
        Tensor {
            shape: vec![values.len()],
            values,
        }
    }

    pub fn matrix(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        Tensor::new(vec![rows, cols], values)
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n: usize = shape.iter().product();
        Tensor {
            shape,
            values: vec![0.0; n],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn numel(&self) -> usize {
        self.values.len()
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

/// Node value storage: owned buffers for intermediates, shared buffers for
/// parameter leaves so a graph never copies the parameter store.
#[derive(Debug, Clone)]
pub(crate) enum Data {
    Owned(Vec<f64>),
    Shared(Arc<Vec<f64>>),
}

impl std::ops::Deref for Data {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        match self {
            Data::Owned(v) => v,
            Data::Shared(v) => v,
        }
    }
}
