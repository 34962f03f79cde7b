use std::collections::BTreeSet;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::tensor::Tensor;

use super::DataError;

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    /// (1, c, h, w)
    pub image: Tensor,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub path: String,
    pub format: String,
}

/// Labeled samples plus their class table. Immutable once built; cloning
/// shares the sample storage.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    samples: Arc<Vec<Sample>>,
    class_names: Vec<String>,
    provenance: Provenance,
    checksum: String,
}

/// Serializable overview of a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub id: String,
    pub samples: usize,
    pub class_names: Vec<String>,
    pub class_counts: Vec<usize>,
    pub sample_shape: Option<[usize; 3]>,
    pub provenance: Provenance,
    pub checksum: String,
}

impl Dataset {
    /// Builds a dataset, checking labels and shapes. `checksum` of `None`
    /// derives one from the contents.
    pub fn new(
        samples: Vec<Sample>,
        class_names: Vec<String>,
        provenance: Provenance,
        checksum: Option<String>,
    ) -> Result<Dataset, DataError> {
        let mut shape = None;
        for (i, s) in samples.iter().enumerate() {
            if s.label >= class_names.len() {
                return Err(DataError::Invalid(format!(
                    "sample {i} has label {} but only {} classes exist",
                    s.label,
                    class_names.len()
                )));
            }
            let [n, c, h, w] = s.image.shape();
            if n != 1 {
                return Err(DataError::Invalid(format!("sample {i} has batch dimension {n}, expected 1")));
            }
            match shape {
                None => shape = Some([c, h, w]),
                Some(prev) if prev != [c, h, w] => {
                    return Err(DataError::MixedShapes { first: prev, other: [c, h, w], at: i.to_string() })
                }
                _ => {}
            }
        }
        let checksum = checksum.unwrap_or_else(|| content_checksum(&samples, &class_names));
        Ok(Dataset { samples: Arc::new(samples), class_names, provenance, checksum })
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn checksum(&self) -> &str {
        &self.checksum
    }

    /// Content-derived identifier (prefix of the checksum).
    pub fn id(&self) -> String {
        self.checksum.chars().take(16).collect()
    }

    /// (c, h, w) shared by every sample.
    pub fn sample_shape(&self) -> Option<[usize; 3]> {
        self.samples.first().map(|s| {
            let [_, c, h, w] = s.image.shape();
            [c, h, w]
        })
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.label).collect()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.class_names.len()];
        for s in self.samples.iter() {
            counts[s.label] += 1;
        }
        counts
    }

    pub fn summary(&self) -> DatasetSummary {
        DatasetSummary {
            id: self.id(),
            samples: self.len(),
            class_names: self.class_names.clone(),
            class_counts: self.class_counts(),
            sample_shape: self.sample_shape(),
            provenance: self.provenance.clone(),
            checksum: self.checksum.clone(),
        }
    }

    pub fn with_provenance(mut self, provenance: Provenance) -> Dataset {
        self.provenance = provenance;
        self
    }

    /// Subset by sample index, same class table, content checksum.
    pub fn subset(&self, indices: &[usize], tag: &str) -> Dataset {
        let samples = indices.iter().map(|&i| self.samples[i].clone()).collect();
        let provenance =
            Provenance { path: self.provenance.path.clone(), format: format!("{}+{tag}", self.provenance.format) };
        Dataset::new(samples, self.class_names.clone(), provenance, None).expect("subset of a valid dataset")
    }

    /// Stacks samples `indices` into one (n, c, h, w) batch.
    pub fn batch(&self, indices: &[usize]) -> (Tensor, Vec<usize>) {
        let tensor = Tensor::stack(indices.iter().map(|&i| &self.samples[i].image)).expect("uniform sample shapes");
        (tensor, indices.iter().map(|&i| self.samples[i].label).collect())
    }
}

/// Sorted distinct names, used as the class table for string labels.
pub fn sorted_class_names<'a>(labels: impl IntoIterator<Item = &'a str>) -> Vec<String> {
    let set: BTreeSet<&str> = labels.into_iter().collect();
    set.into_iter().map(String::from).collect()
}

fn content_checksum(samples: &[Sample], class_names: &[String]) -> String {
    let mut h = Sha256::new();
    for name in class_names {
        h.update((name.len() as u64).to_le_bytes());
        h.update(name.as_bytes());
    }
    for s in samples {
        h.update((s.label as u64).to_le_bytes());
        for d in s.image.shape() {
            h.update((d as u64).to_le_bytes());
        }
        h.update(s.image.to_le_bytes());
    }
    hex::encode(h.finalize())
}

/// Hash over (name, bytes) pairs sorted by name.
pub fn file_checksum(mut entries: Vec<(String, Vec<u8>)>) -> String {
    entries.sort_by(|a, b| a.0.cmp(&b.0));
    let mut h = Sha256::new();
    for (name, bytes) in &entries {
        h.update((name.len() as u64).to_le_bytes());
        h.update(name.as_bytes());
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(bytes);
    }
    hex::encode(h.finalize())
}
