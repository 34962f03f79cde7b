//! Experiments on trained models: feature taps, a one-vs-rest linear SVM,
//! evaluation metrics, and feature-map grids for display.

mod features;
mod grid;
mod metrics;
mod svm;

pub use features::{extract_features, model_checksum, predict, FeatureSet};
pub use grid::{feature_grid, grid_size, Grid};
pub use metrics::{evaluate, test_model, MetricsReport};
pub use svm::{train_linear, LinearModel, LinearParams};

use crate::engine::EngineError;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ExperimentError {
    #[error("unknown blob '{name}' (available: {available})")]
    UnknownBlob { name: String, available: String },
    #[error("no samples")]
    NoSamples,
    #[error("length mismatch: {predictions} predictions, {truth} truth labels")]
    LengthMismatch { predictions: usize, truth: usize },
    #[error("class {class} out of range for {classes} classes")]
    ClassOutOfRange { class: usize, classes: usize },
    #[error("need at least 2 classes, found {0}")]
    TooFewClasses(usize),
    #[error("dataset has {dataset} classes but the model outputs {model}")]
    ClassCountMismatch { dataset: usize, model: usize },
    #[error("feature dimension {got} does not match the classifier's {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Engine(#[from] EngineError),
}
