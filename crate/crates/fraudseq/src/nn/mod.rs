//! Minimal reverse-mode neural kernels: dense layer, LSTM stack, 2-D
//! convolution, average pooling, softmax cross-entropy, and Adagrad.
//!
//! There is no autodiff graph. Each kernel exposes a forward pass that
//! returns whatever cache its matching backward pass needs, and every
//! differentiable path is verified against central finite differences.
//! Everything is 64-bit and deterministic.

pub mod conv;
pub mod dense;
pub mod gradcheck;
pub mod init;
pub mod lstm;
pub mod params;
pub mod softmax;

pub use conv::{avg_pool2d, avg_pool2d_backward, conv2d_backward, conv2d_forward};
pub use dense::{dense_backward, dense_forward, tanh_backward, tanh_forward};
pub use lstm::{lstm_stack_backward, lstm_stack_forward, lstm_step, LstmLayerParams};
pub use params::{adagrad_step, AdagradState, Gradients, ParameterStore};
pub use softmax::softmax_xent;
