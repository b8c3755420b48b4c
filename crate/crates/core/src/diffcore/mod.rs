//! Minimal reverse-mode automatic differentiation over dense tensors.
//!
//! The operator set is exactly what the neural process needs: elementwise
//! arithmetic with row/scalar broadcasting, matrix products, padded 3×3
//! convolution on 3×3 grids, the usual activations, softmax, layer
//! normalization, mean pooling, concatenation and slicing.

pub mod gradcheck;
pub mod loss;
mod tape;
mod tensor;

pub use loss::{gaussian_nll, kl_diag_gaussian, taped_kl, taped_mean_nll};
pub use tape::{sigmoid, softplus, Gradients, NodeId, Tape, LAYER_NORM_EPS};
pub use tensor::Tensor;
