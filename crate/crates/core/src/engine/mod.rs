//! Desk-scale CNN execution: compiled networks, deterministic weight
//! initialization, SGD with momentum and weight decay, the training loop
//! and the model container format.

pub mod gradcheck;
pub mod layers;
mod model_file;
mod network;
mod train;

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::netspec::{derive_deploy, DeployError, Diagnostic, LayerKind, NetSpec, SolverConfig};
use crate::tensor::Tensor;

pub use model_file::{load_model, save_model, MODEL_MAGIC};
pub use network::{Activations, Network};
pub use train::{train, NoHooks, TrainHooks, TrainProgress};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EngineError {
    #[error("input shape mismatch: expected (c,h,w) = {expected:?}, got {got:?}")]
    ShapeMismatch { expected: [usize; 3], got: [usize; 3] },
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("dataset has {dataset} classes but the net outputs {net}")]
    ClassCountMismatch { dataset: usize, net: usize },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("{0}")]
    Net(String),
    #[error(transparent)]
    Deploy(#[from] DeployError),
    #[error("shape inference failed: {}", .0.message)]
    Shape(Diagnostic),
    #[error("model file: {0}")]
    ModelFile(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerWeights {
    pub weight: Tensor,
    pub bias: Tensor,
}

/// Learnable tensors keyed by layer name.
pub type WeightMap = BTreeMap<String, LayerWeights>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Initialized,
    Completed,
    Stopped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub solver: Option<SolverConfig>,
    pub status: RunStatus,
    pub final_loss: Option<f64>,
    pub train_accuracy: Option<f64>,
    pub epochs_completed: u64,
    pub iterations: u64,
    pub class_names: Vec<String>,
}

/// Deploy-form net, its learned weights and how they were obtained.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub spec: NetSpec,
    pub input_chw: [usize; 3],
    pub weights: WeightMap,
    pub meta: TrainingMeta,
}

impl TrainedModel {
    pub fn network(&self) -> Result<Network, EngineError> {
        Network::compile(&self.spec, self.input_chw)
    }

    pub fn num_classes(&self) -> Result<usize, EngineError> {
        Ok(self.network()?.num_outputs())
    }
}

/// The inference form of `spec`: train nets are converted, deploy nets are
/// returned as-is.
pub fn runnable_spec(spec: &NetSpec) -> Result<NetSpec, EngineError> {
    if spec.layers.iter().any(|l| l.kind == LayerKind::Data) {
        Ok(derive_deploy(spec)?)
    } else {
        Ok(spec.clone())
    }
}

/// Fan-based uniform bound `sqrt(6 / (fan_in + fan_out))` for a weight of
/// shape (out, in, kh, kw).
pub fn init_bound(weight_shape: [usize; 4]) -> f64 {
    let [out, inp, kh, kw] = weight_shape;
    let fan_in = inp * kh * kw;
    let fan_out = out * kh * kw;
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// Uniform weights in `[-b, b]` (see [`init_bound`]) and zero biases, drawn
/// layer by layer in net order from a ChaCha8 stream seeded with `seed`.
pub fn init_weights(spec: &NetSpec, input_chw: [usize; 3], seed: u64) -> Result<WeightMap, EngineError> {
    let net = Network::compile(&runnable_spec(spec)?, input_chw)?;
    Ok(init_for(&net, seed))
}

pub(crate) fn init_for(net: &Network, seed: u64) -> WeightMap {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = WeightMap::new();
    for (layer, ws, bs) in net.weight_shapes() {
        let bound = init_bound(ws);
        let mut weight = Tensor::zeros(ws);
        for v in weight.data_mut() {
            *v = (2.0 * rng.gen::<f64>() - 1.0) * bound;
        }
        out.insert(layer, LayerWeights { weight, bias: Tensor::zeros(bs) });
    }
    out
}

/// A freshly initialized model for a (train or deploy) net.
pub fn init_model(
    spec: &NetSpec,
    input_chw: [usize; 3],
    seed: u64,
    class_names: Vec<String>,
) -> Result<TrainedModel, EngineError> {
    let deploy = runnable_spec(spec)?;
    let net = Network::compile(&deploy, input_chw)?;
    Ok(TrainedModel {
        spec: deploy,
        input_chw,
        weights: init_for(&net, seed),
        meta: TrainingMeta {
            solver: None,
            status: RunStatus::Initialized,
            final_loss: None,
            train_accuracy: None,
            epochs_completed: 0,
            iterations: 0,
            class_names,
        },
    })
}

/// Every blob of the model's net for `batch`.
pub fn forward(model: &TrainedModel, batch: &Tensor) -> Result<BTreeMap<String, Tensor>, EngineError> {
    let net = model.network()?;
    let acts = net.forward(&model.weights, batch)?;
    Ok(net.blob_map(&acts))
}

/// Mean softmax cross-entropy over the batch and its gradient for every
/// learnable tensor.
pub fn backward(model: &TrainedModel, batch: &Tensor, labels: &[usize]) -> Result<(f64, WeightMap), EngineError> {
    let net = model.network()?;
    let (loss, grads, _) = net.loss_and_gradients(&model.weights, batch, labels)?;
    Ok((loss, grads))
}

/// One momentum SGD update at zero-based `iteration`:
/// `v ← momentum·v − lr·(g + weight_decay·w)`, `w ← w + v`.
pub fn sgd_step(
    weights: &mut WeightMap,
    grads: &WeightMap,
    velocity: &mut WeightMap,
    config: &SolverConfig,
    iteration: u64,
) {
    let lr = config.learning_rate(iteration);
    for (name, lw) in weights.iter_mut() {
        let Some(g) = grads.get(name) else { continue };
        let v = velocity.entry(name.clone()).or_insert_with(|| LayerWeights {
            weight: Tensor::zeros(lw.weight.shape()),
            bias: Tensor::zeros(lw.bias.shape()),
        });
        update(&mut lw.weight, &g.weight, &mut v.weight, config, lr);
        update(&mut lw.bias, &g.bias, &mut v.bias, config, lr);
    }
}

fn update(w: &mut Tensor, g: &Tensor, v: &mut Tensor, config: &SolverConfig, lr: f64) {
    for ((wv, gv), vv) in w.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
        *vv = config.momentum * *vv - lr * (gv + config.weight_decay * *wv);
        *wv += *vv;
    }
}

#[cfg(test)]
mod tests;
