//! Weight initialization helpers.

use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Glorot/Xavier uniform: `U[-limit, limit]` with `limit = sqrt(6/(fan_in+fan_out))`.
pub fn xavier_uniform<F: Scalar>(shape: Vec<usize>, fan_in: usize, fan_out: usize, rng: &mut Rng) -> Tensor<F> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let numel: usize = shape.iter().product();
    let data = (0..numel).map(|_| F::from_f64(rng.uniform_in(-limit, limit))).collect();
    Tensor::from_vec(shape, data).expect("finite init")
}

/// Gaussian with given standard deviation.
pub fn normal<F: Scalar>(shape: Vec<usize>, std: f64, rng: &mut Rng) -> Tensor<F> {
    let numel: usize = shape.iter().product();
    let data = (0..numel).map(|_| F::from_f64(rng.standard_normal() * std)).collect();
    Tensor::from_vec(shape, data).expect("finite init")
}
