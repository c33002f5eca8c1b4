//! Convolutional networks written from scratch for isolated scene-character
//! recognition: dense tensors, hand-derived layer gradients, minibatch SGD,
//! a 50×50 grayscale preprocessing and five-orientation augmentation pipeline,
//! and a sweep harness over filter size, stride and learning rate.

pub mod checkpoint;
pub mod cli;
pub mod data;
pub mod error;
pub mod experiment;
pub mod gradcheck;
pub mod layers;
pub mod network;
pub mod optim;
pub mod par;
pub mod tensor;

#[cfg(test)]
mod testing;

pub use error::{Error, Result};
pub use tensor::{conv_output_shape, Shape2D, Tensor};
