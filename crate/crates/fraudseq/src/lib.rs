//! Sequential behavioral fraud detection toolkit.
//!
//! Classifies multivariate categorical event sequences (user sessions) as
//! fraudulent or legitimate with a stacked-LSTM sequence classifier, a CNN
//! over Markov transition fields, a fused CNN+RNN model, and two baselines
//! (MLP, DTW k-nearest-neighbor), evaluated with AUC / KS / precision /
//! coverage. All randomness is seeded; every pipeline output is
//! reproducible byte for byte.

pub mod cli;
pub mod dtw;
pub mod encoder;
pub mod error;
pub mod events;
pub mod metrics;
pub mod models;
pub mod mtf;
pub mod nn;
pub mod synth;
pub mod tensor;

pub use error::{Error, Result};
