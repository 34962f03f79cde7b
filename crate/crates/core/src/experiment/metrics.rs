use serde::{Deserialize, Serialize};

use crate::datastore::Dataset;
use crate::engine::TrainedModel;
use crate::par::Execution;

use super::{predict, ExperimentError};

/// Accuracy figures and the confusion matrix (rows = truth, columns =
/// prediction), stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub num_classes: usize,
    pub total: u64,
    pub correct: u64,
    pub global_accuracy: f64,
    /// 0 for classes with no truth samples; see `per_class_defined`.
    pub per_class_accuracy: Vec<f64>,
    pub per_class_defined: Vec<bool>,
    pub confusion: Vec<u64>,
}

impl MetricsReport {
    pub fn cell(&self, truth: usize, predicted: usize) -> u64 {
        self.confusion[truth * self.num_classes + predicted]
    }

    pub fn row(&self, truth: usize) -> &[u64] {
        &self.confusion[truth * self.num_classes..(truth + 1) * self.num_classes]
    }

    pub fn rows(&self) -> Vec<Vec<u64>> {
        (0..self.num_classes).map(|k| self.row(k).to_vec()).collect()
    }
}

pub fn evaluate(predictions: &[usize], truth: &[usize], k: usize) -> Result<MetricsReport, ExperimentError> {
    if predictions.len() != truth.len() {
        return Err(ExperimentError::LengthMismatch { predictions: predictions.len(), truth: truth.len() });
    }
    if truth.is_empty() {
        return Err(ExperimentError::NoSamples);
    }
    if let Some(&bad) = predictions.iter().chain(truth).find(|&&c| c >= k) {
        return Err(ExperimentError::ClassOutOfRange { class: bad, classes: k });
    }
    let mut confusion = vec![0u64; k * k];
    for (&p, &t) in predictions.iter().zip(truth) {
        confusion[t * k + p] += 1;
    }
    let total = truth.len() as u64;
    let correct: u64 = (0..k).map(|i| confusion[i * k + i]).sum();
    let mut per_class_accuracy = Vec::with_capacity(k);
    let mut per_class_defined = Vec::with_capacity(k);
    for i in 0..k {
        let row: u64 = confusion[i * k..(i + 1) * k].iter().sum();
        per_class_defined.push(row > 0);
        per_class_accuracy.push(if row > 0 { confusion[i * k + i] as f64 / row as f64 } else { 0.0 });
    }
    Ok(MetricsReport {
        num_classes: k,
        total,
        correct,
        global_accuracy: correct as f64 / total as f64,
        per_class_accuracy,
        per_class_defined,
        confusion,
    })
}

/// Scores `dataset` with the model's own output layer.
pub fn test_model(model: &TrainedModel, dataset: &Dataset, exec: Execution) -> Result<MetricsReport, ExperimentError> {
    let outputs = model.num_classes()?;
    if outputs != dataset.num_classes() {
        return Err(ExperimentError::ClassCountMismatch { dataset: dataset.num_classes(), model: outputs });
    }
    let predictions = predict(model, dataset, exec)?;
    evaluate(&predictions, &dataset.labels(), outputs)
}
