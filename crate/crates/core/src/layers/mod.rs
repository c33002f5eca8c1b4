//! Forward and backward passes for every layer kind the networks use.
//!
//! All passes are pure functions of `(parameters, input)`; parameter updates
//! live in [`crate::optim`].

mod activation;
mod conv;
mod dense;
mod pool;

pub use activation::{relu, relu_backward, softmax};
pub use conv::{ConvGradients, ConvLayer, Patches};
pub use dense::{DenseGradients, FullyConnectedLayer};
pub use pool::{maxpool_backward, ArgmaxMap, MaxPoolLayer};
