//! Reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! The engine records the primitives a small convolutional segmentation
//! network needs (convolution, bilinear upsampling, matrix products,
//! softmax and friends) on a single-use [`Graph`], sweeps it backwards once,
//! and hands parameter gradients to a [`ParamStore`] updated by [`Adam`].

pub mod checkpoint;
mod error;
pub mod gradcheck;
mod graph;
mod kernels;
mod params;
mod tensor;

pub use error::{AutodiffError, Result};
pub use gradcheck::{check_gradients, finite_diff_check, PRIMITIVES};
pub use graph::{Gradients, Graph, Var};
pub use params::{Adam, ParamId, ParamStore};
pub use tensor::Tensor;
