use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::engine::layers::argmax;

use super::{ExperimentError, FeatureSet};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearParams {
    /// Hinge-loss weight; the L2 term is ‖w‖²/(2C) against the summed hinge.
    pub c: f64,
    pub epochs: u64,
    pub seed: u64,
}

impl Default for LinearParams {
    fn default() -> Self {
        LinearParams { c: 1.0, epochs: 50, seed: 0 }
    }
}

/// One-vs-rest linear classifier: `weights` is K×D, one row per class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
    pub params: LinearParams,
    pub class_names: Vec<String>,
    pub layer_name: String,
}

impl LinearModel {
    pub fn dim(&self) -> usize {
        self.weights.first().map_or(0, Vec::len)
    }

    pub fn scores(&self, x: &[f64]) -> Vec<f64> {
        self.weights.iter().zip(&self.bias).map(|(w, b)| dot(w, x) + b).collect()
    }

    pub fn predict(&self, x: &[f64]) -> usize {
        argmax(&self.scores(x))
    }

    pub fn predict_all(&self, features: &FeatureSet) -> Result<Vec<usize>, ExperimentError> {
        if !features.is_empty() && features.dim() != self.dim() {
            return Err(ExperimentError::DimensionMismatch { expected: self.dim(), got: features.dim() });
        }
        Ok(features.vectors.iter().map(|x| self.predict(x)).collect())
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Trains one binary SVM per class with stochastic subgradient steps
/// (step 1/(λt), λ = 1/(C·n)) on `λ/2·‖w‖² + mean hinge`, which has the same
/// minimizer as `‖w‖²/2 + C·Σ hinge`. The bias is an extra always-one
/// feature. Each epoch visits the samples in a seed-shuffled order.
pub fn train_linear(features: &FeatureSet, params: LinearParams) -> Result<LinearModel, ExperimentError> {
    if features.is_empty() {
        return Err(ExperimentError::NoSamples);
    }
    if !(params.c > 0.0 && params.c.is_finite()) {
        return Err(ExperimentError::Invalid(format!("C must be positive, got {}", params.c)));
    }
    let k = features.class_names.len().max(features.labels.iter().max().map_or(0, |m| m + 1));
    let present = {
        let mut seen = vec![false; k];
        features.labels.iter().for_each(|&l| seen[l] = true);
        seen.iter().filter(|&&s| s).count()
    };
    if present < 2 {
        return Err(ExperimentError::TooFewClasses(present));
    }
    let d = features.dim();
    let n = features.len();
    let lambda = 1.0 / (params.c * n as f64);

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut order: Vec<usize> = (0..n).collect();
    // Augmented weights: the last entry is the bias.
    let mut w = vec![vec![0.0; d + 1]; k];
    let mut t = 0u64;
    for _ in 0..params.epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            t += 1;
            let eta = 1.0 / (lambda * t as f64);
            let x = &features.vectors[i];
            for (class, wk) in w.iter_mut().enumerate() {
                let y = if features.labels[i] == class { 1.0 } else { -1.0 };
                let margin = y * (dot(&wk[..d], x) + wk[d]);
                let shrink = 1.0 - eta * lambda;
                wk.iter_mut().for_each(|v| *v *= shrink);
                if margin < 1.0 {
                    for (wj, xj) in wk.iter_mut().zip(x) {
                        *wj += eta * y * xj;
                    }
                    wk[d] += eta * y;
                }
                // Keep the iterate inside the ball that contains the optimum.
                let norm = dot(wk, wk).sqrt();
                let radius = 1.0 / lambda.sqrt();
                if norm > radius {
                    wk.iter_mut().for_each(|v| *v *= radius / norm);
                }
            }
        }
    }
    let bias = w.iter().map(|wk| wk[d]).collect();
    let weights = w.into_iter().map(|mut wk| {
        wk.truncate(d);
        wk
    });
    Ok(LinearModel {
        weights: weights.collect(),
        bias,
        params,
        class_names: features.class_names.clone(),
        layer_name: features.layer_name.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(points: &[(f64, usize)]) -> FeatureSet {
        FeatureSet {
            layer_name: "x".into(),
            blob_shape: [1, 1, 1],
            vectors: points.iter().map(|p| vec![p.0]).collect(),
            labels: points.iter().map(|p| p.1).collect(),
            class_names: vec!["neg".into(), "pos".into()],
            model_checksum: String::new(),
            dataset_checksum: String::new(),
        }
    }

    #[test]
    fn separates_two_points() {
        let fs = toy(&[(-1.0, 0), (1.0, 1)]);
        let m = train_linear(&fs, LinearParams { c: 1.0, epochs: 50, seed: 0 }).unwrap();
        assert_eq!(m.predict_all(&fs).unwrap(), [0, 1]);
        // Class-1 score changes sign between the two points.
        assert!(m.scores(&[-1.0])[1] < 0.0 && m.scores(&[1.0])[1] > 0.0);
    }

    #[test]
    fn zero_epochs_predicts_class_zero() {
        let fs = toy(&[(-1.0, 0), (1.0, 1), (2.0, 1)]);
        let m = train_linear(&fs, LinearParams { c: 1.0, epochs: 0, seed: 0 }).unwrap();
        assert!(m.weights.iter().flatten().all(|&v| v == 0.0));
        assert_eq!(m.predict_all(&fs).unwrap(), [0, 0, 0]);
    }

    #[test]
    fn deterministic_per_seed() {
        let fs = toy(&[(-2.0, 0), (-1.0, 0), (0.5, 1), (1.0, 1), (3.0, 1)]);
        let p = LinearParams { c: 0.5, epochs: 7, seed: 3 };
        assert_eq!(train_linear(&fs, p).unwrap(), train_linear(&fs, p).unwrap());
    }

    #[test]
    fn single_class_rejected() {
        let fs = toy(&[(1.0, 1), (2.0, 1)]);
        assert_eq!(train_linear(&fs, LinearParams::default()), Err(ExperimentError::TooFewClasses(1)));
    }
}
