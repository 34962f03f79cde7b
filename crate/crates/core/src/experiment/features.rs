use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::datastore::Dataset;
use crate::engine::{layers::argmax, save_model, TrainedModel};
use crate::par::{map_chunks, Execution};

use super::ExperimentError;

/// Samples per forward pass when tapping activations.
const TAP_BATCH: usize = 32;

/// Flattened activations of one blob, one row per dataset sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSet {
    pub layer_name: String,
    /// (c, h, w) of the tapped blob.
    pub blob_shape: [usize; 3],
    pub vectors: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub class_names: Vec<String>,
    pub model_checksum: String,
    pub dataset_checksum: String,
}

impl FeatureSet {
    pub fn dim(&self) -> usize {
        self.blob_shape.iter().product()
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    /// Rows as (label, vector) pairs for the libsvm writer.
    pub fn libsvm_rows(&self) -> Vec<(i64, Vec<f64>)> {
        self.labels.iter().zip(&self.vectors).map(|(&l, v)| (l as i64, v.clone())).collect()
    }
}

/// Hex SHA-256 of the serialized model file.
pub fn model_checksum(model: &TrainedModel) -> String {
    hex::encode(Sha256::digest(save_model(model)))
}

/// One FeatureSet per requested blob, in request order.
pub fn extract_features(
    model: &TrainedModel,
    dataset: &Dataset,
    blobs: &[String],
    exec: Execution,
) -> Result<Vec<FeatureSet>, ExperimentError> {
    let net = model.network()?;
    let report = net.shape_report();
    let mut shapes = Vec::new();
    for name in blobs {
        let Some(&[_, c, h, w]) = report.blob_shapes.get(name) else {
            let available = report.blob_shapes.keys().cloned().collect::<Vec<_>>().join(", ");
            return Err(ExperimentError::UnknownBlob { name: name.clone(), available });
        };
        shapes.push([c, h, w]);
    }
    let indices: Vec<usize> = (0..dataset.len()).collect();
    let chunks = map_chunks(&indices, TAP_BATCH, exec, |chunk| {
        let (batch, _) = dataset.batch(chunk);
        let acts = net.forward(&model.weights, &batch)?;
        let map = net.blob_map(&acts);
        Ok::<_, ExperimentError>(
            blobs
                .iter()
                .map(|b| {
                    let t = &map[b];
                    (0..chunk.len()).map(|i| t.sample(i).to_vec()).collect::<Vec<_>>()
                })
                .collect::<Vec<_>>(),
        )
    });
    let mut per_blob: Vec<Vec<Vec<f64>>> = vec![Vec::with_capacity(dataset.len()); blobs.len()];
    for chunk in chunks {
        for (acc, rows) in per_blob.iter_mut().zip(chunk?) {
            acc.extend(rows);
        }
    }
    let model_sum = model_checksum(model);
    let labels = dataset.labels();
    Ok(blobs
        .iter()
        .zip(shapes)
        .zip(per_blob)
        .map(|((name, blob_shape), vectors)| FeatureSet {
            layer_name: name.clone(),
            blob_shape,
            vectors,
            labels: labels.clone(),
            class_names: dataset.class_names().to_vec(),
            model_checksum: model_sum.clone(),
            dataset_checksum: dataset.checksum().to_string(),
        })
        .collect())
}

/// Argmax of the final output per sample (lowest index on ties).
pub fn predict(model: &TrainedModel, dataset: &Dataset, exec: Execution) -> Result<Vec<usize>, ExperimentError> {
    let net = model.network()?;
    let out = net.output_slot();
    let indices: Vec<usize> = (0..dataset.len()).collect();
    let chunks = map_chunks(&indices, TAP_BATCH, exec, |chunk| {
        let (batch, _) = dataset.batch(chunk);
        let acts = net.forward(&model.weights, &batch)?;
        let y = acts.slot(out);
        Ok::<_, ExperimentError>((0..chunk.len()).map(|i| argmax(y.sample(i))).collect::<Vec<_>>())
    });
    let mut preds = Vec::with_capacity(dataset.len());
    for c in chunks {
        preds.extend(c?);
    }
    Ok(preds)
}
