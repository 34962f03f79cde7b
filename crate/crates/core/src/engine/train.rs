use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datastore::Dataset;
use crate::netspec::{NetSpec, SolverConfig};

use super::{
    init_for, runnable_spec, sgd_step, EngineError, Network, RunStatus, TrainedModel, TrainingMeta, WeightMap,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainProgress {
    /// Epochs completed so far.
    pub epoch: u64,
    /// Iterations (mini-batches) completed so far.
    pub iteration: u64,
    pub total_iterations: u64,
    /// Mean loss over the epoch just finished.
    pub loss: f64,
    /// Training accuracy over the epoch just finished.
    pub accuracy: f64,
    pub eta_seconds: f64,
}

/// Observer and cancellation probe for a training run. All methods are
/// called from the training thread.
pub trait TrainHooks {
    fn progress(&mut self, _progress: &TrainProgress) {}

    /// Checked before every iteration; `true` stops the run.
    fn should_stop(&mut self) -> bool {
        false
    }

    fn iteration_done(&mut self, _iteration: u64) {}

    /// Called at epoch boundaries when `snapshot_every` > 0.
    fn snapshot(&mut self, _epoch: u64, _model: &TrainedModel) {}
}

pub struct NoHooks;

impl TrainHooks for NoHooks {}

const ETA_ALPHA: f64 = 0.1;

/// Mini-batch SGD for `config.max_epochs` epochs over a seed-shuffled copy
/// of `dataset`. The last partial batch of an epoch is kept.
pub fn train(
    spec: &NetSpec,
    config: &SolverConfig,
    dataset: &Dataset,
    hooks: &mut dyn TrainHooks,
) -> Result<TrainedModel, EngineError> {
    let Some(input_chw) = dataset.sample_shape() else {
        return Err(EngineError::EmptyDataset);
    };
    let deploy = runnable_spec(spec)?;
    let net = Network::compile(&deploy, input_chw)?;
    if net.num_outputs() != dataset.num_classes() {
        return Err(EngineError::ClassCountMismatch { dataset: dataset.num_classes(), net: net.num_outputs() });
    }

    let mut model = TrainedModel {
        spec: deploy,
        input_chw,
        weights: init_for(&net, config.seed),
        meta: TrainingMeta {
            solver: Some(config.clone()),
            status: RunStatus::Completed,
            final_loss: None,
            train_accuracy: None,
            epochs_completed: 0,
            iterations: 0,
            class_names: dataset.class_names().to_vec(),
        },
    };
    let mut velocity = WeightMap::new();
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed);
    shuffle_rng.set_stream(1);

    let batch_size = config.batch_size.max(1) as usize;
    let per_epoch = dataset.len().div_ceil(batch_size) as u64;
    let total = per_epoch * config.max_epochs;
    let mut iteration = 0u64;
    let mut iter_seconds: Option<f64> = None;

    for epoch in 0..config.max_epochs {
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for chunk in order.chunks(batch_size) {
            if hooks.should_stop() {
                model.meta.status = RunStatus::Stopped;
                model.meta.iterations = iteration;
                return Ok(model);
            }
            let started = Instant::now();
            let (batch, labels) = dataset.batch(chunk);
            let (loss, grads, acts) = net.loss_and_gradients(&model.weights, &batch, &labels)?;
            let logits = acts.slot(net.logits_slot());
            correct += (0..labels.len()).filter(|&i| super::layers::argmax(logits.sample(i)) == labels[i]).count();
            loss_sum += loss * labels.len() as f64;
            sgd_step(&mut model.weights, &grads, &mut velocity, config, iteration);
            iteration += 1;
            model.meta.iterations = iteration;
            let dt = started.elapsed().as_secs_f64();
            iter_seconds = Some(match iter_seconds {
                None => dt,
                Some(avg) => ETA_ALPHA * dt + (1.0 - ETA_ALPHA) * avg,
            });
            hooks.iteration_done(iteration);
        }
        let epoch_loss = loss_sum / dataset.len() as f64;
        let epoch_acc = correct as f64 / dataset.len() as f64;
        model.meta.epochs_completed = epoch + 1;
        model.meta.final_loss = Some(epoch_loss);
        model.meta.train_accuracy = Some(epoch_acc);
        hooks.progress(&TrainProgress {
            epoch: epoch + 1,
            iteration,
            total_iterations: total,
            loss: epoch_loss,
            accuracy: epoch_acc,
            eta_seconds: (total - iteration) as f64 * iter_seconds.unwrap_or(0.0),
        });
        if config.snapshot_every > 0 && (epoch + 1) % config.snapshot_every == 0 {
            hooks.snapshot(epoch + 1, &model);
        }
    }
    Ok(model)
}
