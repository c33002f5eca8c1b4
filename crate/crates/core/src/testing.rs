//! Shared helpers for unit tests.

use rand::Rng;

use crate::tensor::Tensor;

pub use crate::gradcheck::{central_difference, max_relative_error};

pub fn random_tensor<R: Rng + ?Sized>(shape: &[usize], rng: &mut R) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0)).unwrap()
}
