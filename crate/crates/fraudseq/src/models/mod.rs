//! The four classifiers (stacked-LSTM RNN, CNN over transition fields,
//! the fused CNN+RNN model, and the MLP baseline) with a shared
//! mini-batch Adagrad training loop and model persistence.

pub mod config;
pub mod data;
pub mod net;
pub mod train;

pub use config::{ConvBlockSpec, ModelConfig, ModelKind};
pub use data::ModelData;
pub use net::{
    backward, build_params, conv_output_shape, forward, fraud_probabilities, BatchInput,
    ForwardPass, ModelDims,
};
pub use train::{
    schema_fingerprint, score, train, EpochLog, TrainOutcome, TrainedModel, ADAGRAD_EPS,
};
