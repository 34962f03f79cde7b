use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dataset::Dataset;
use super::DataError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    /// Fraction of samples (per class when stratified) sent to training.
    pub train_fraction: f64,
    pub seed: u64,
    #[serde(default)]
    pub stratified: bool,
}

/// Seed-deterministic partition into (train, test). Each side keeps the
/// original sample order and the full class table.
pub fn split(dataset: &Dataset, spec: &SplitSpec) -> Result<(Dataset, Dataset), DataError> {
    let f = spec.train_fraction;
    if !(f > 0.0 && f < 1.0) {
        return Err(DataError::Invalid(format!("train_fraction must be in (0,1), got {f}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let groups: Vec<Vec<usize>> = if spec.stratified {
        let mut g = vec![Vec::new(); dataset.num_classes()];
        for (i, s) in dataset.samples().iter().enumerate() {
            g[s.label].push(i);
        }
        g
    } else {
        vec![(0..dataset.len()).collect()]
    };

    let mut train = Vec::new();
    let mut test = Vec::new();
    for (class, mut members) in groups.into_iter().enumerate() {
        if members.is_empty() && spec.stratified {
            continue;
        }
        let n = members.len();
        let k = (f * n as f64).round() as usize;
        if k == 0 || k == n {
            let what = if spec.stratified {
                format!("class '{}' has {n} samples", dataset.class_names()[class])
            } else {
                format!("dataset has {n} samples")
            };
            return Err(DataError::SplitInfeasible(format!("{what}; fraction {f} leaves one side empty")));
        }
        members.shuffle(&mut rng);
        train.extend_from_slice(&members[..k]);
        test.extend_from_slice(&members[k..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((dataset.subset(&train, "train"), dataset.subset(&test, "test")))
}
