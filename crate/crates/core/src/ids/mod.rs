//! Quantised-MLP intrusion detection.
//!
//! Every received frame contributes 10 feature bytes; the detector looks at
//! a sliding window of the 4 most recent frames (40 bytes), runs a 5-layer
//! MLP with 4-bit weights and activations in pure integer arithmetic, and
//! applies softmax to the 4 output logits. The same model serves both
//! integration strategies; they differ only in the modelled processing
//! latency.

mod classify;
mod evaluate;
mod features;
mod model;
mod quantise;
mod softmax;
mod train;

pub use classify::{
    classify, Classifier, CostProfile, IdsVerdict, LatencyRecord, ReceivedFrame, Strategy,
    PAPER_ARTIX7,
};
pub use evaluate::{evaluate, evaluate_windows, predict_windows};
pub use features::{
    extract_features, windows_from_trace, FeatureWindow, LabeledWindow, FEATURE_LEN,
    FRAME_FEATURE_LEN, WINDOW_FRAMES,
};
pub use model::{mlp_infer, QuantLayer, QuantMlpModel, Requant, MODEL_FORMAT_VERSION};
pub use quantise::{quantise_model, quantise_weight, QuantiseReport};
pub use softmax::softmax;
pub use train::{train_reference, FloatLayer, FloatMlp, TrainConfig};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum IdsError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("no IDS model loaded")]
    ModelNotLoaded,
    #[error("insufficient training data: {0}")]
    InsufficientData(String),
    #[error("model file: {0}")]
    Format(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
