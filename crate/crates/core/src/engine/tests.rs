use std::fs;
use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::gradcheck::{check_gradients, Objective};
use super::*;
use crate::datastore::synthetic::blobs;
use crate::netspec::{parse_net, parse_solver, LrPolicy};
use crate::shapecheck::infer_shapes;

fn fixture(name: &str) -> String {
    let p = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name);
    fs::read_to_string(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

fn random_tensor(shape: [usize; 4], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..shape.iter().product()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Tensor::from_vec(shape, data).unwrap()
}

/// Random weights and biases so no gradient is trivially zero.
fn random_weights(net: &Network, seed: u64) -> WeightMap {
    net.weight_shapes()
        .into_iter()
        .enumerate()
        .map(|(i, (layer, ws, bs))| {
            let lw = LayerWeights {
                weight: random_tensor(ws, seed + 2 * i as u64),
                bias: random_tensor(bs, seed + 2 * i as u64 + 1),
            };
            (layer, lw)
        })
        .collect()
}

fn assert_grads(src: &str, batch_shape: [usize; 4], obj: impl Fn(&Network) -> Objective) {
    let spec = parse_net(src).unwrap();
    let [_, c, h, w] = batch_shape;
    let net = Network::compile(&spec, [c, h, w]).unwrap();
    let weights = random_weights(&net, 11);
    let batch = random_tensor(batch_shape, 99);
    let checks = check_gradients(&net, &weights, &batch, &obj(&net), 1e-5).unwrap();
    assert!(checks.len() > 1);
    for chk in checks {
        assert!(chk.relative_error < 1e-4, "{}: relative error {:e}", chk.tensor, chk.relative_error);
    }
}

#[test]
fn gradients_convolution_padded_strided() {
    let src = r#"input: "x"
        layer { name: "c" type: "Convolution" bottom: "x" top: "c" convolution_param { num_output: 3 kernel_size: 3 stride: 2 pad: 1 } }
        layer { name: "f" type: "InnerProduct" bottom: "c" top: "f" inner_product_param { num_output: 3 } }"#;
    assert_grads(src, [2, 2, 5, 5], |_| Objective::SoftmaxLoss(vec![0, 2]));
}

#[test]
fn gradients_max_pool() {
    let src = r#"input: "x"
        layer { name: "c" type: "Convolution" bottom: "x" top: "c" convolution_param { num_output: 2 kernel_size: 2 } }
        layer { name: "p" type: "Pooling" bottom: "c" top: "p" pooling_param { pool: MAX kernel_size: 2 stride: 2 } }
        layer { name: "f" type: "InnerProduct" bottom: "p" top: "f" inner_product_param { num_output: 2 } }"#;
    assert_grads(src, [3, 1, 6, 6], |_| Objective::SoftmaxLoss(vec![1, 0, 1]));
}

#[test]
fn gradients_average_pool_with_padding() {
    let src = r#"input: "x"
        layer { name: "p" type: "Pooling" bottom: "x" top: "p" pooling_param { pool: AVE kernel_size: 3 stride: 2 pad: 1 } }
        layer { name: "f" type: "InnerProduct" bottom: "p" top: "f" inner_product_param { num_output: 4 } }"#;
    assert_grads(src, [2, 2, 5, 5], |_| Objective::SoftmaxLoss(vec![3, 1]));
}

#[test]
fn gradients_inner_product_and_in_place_relu() {
    let src = r#"input: "x"
        layer { name: "f1" type: "InnerProduct" bottom: "x" top: "h" inner_product_param { num_output: 6 } }
        layer { name: "r" type: "ReLU" bottom: "h" top: "h" }
        layer { name: "f2" type: "InnerProduct" bottom: "h" top: "o" inner_product_param { num_output: 3 } }"#;
    assert_grads(src, [4, 3, 2, 1], |_| Objective::SoftmaxLoss(vec![0, 1, 2, 1]));
}

#[test]
fn gradients_softmax_layer() {
    let src = r#"input: "x"
        layer { name: "f" type: "InnerProduct" bottom: "x" top: "f" inner_product_param { num_output: 4 } }
        layer { name: "s" type: "Softmax" bottom: "f" top: "s" }"#;
    assert_grads(src, [2, 3, 1, 1], |_| Objective::Probe(random_tensor([2, 4, 1, 1], 5)));
}

#[test]
fn gradients_fixture_net_after_deploy() {
    let spec = runnable_spec(&parse_net(&fixture("nets/valid/tiny_conv.prototxt")).unwrap()).unwrap();
    let net = Network::compile(&spec, [1, 8, 8]).unwrap();
    let weights = random_weights(&net, 3);
    let batch = random_tensor([2, 1, 8, 8], 4);
    for chk in check_gradients(&net, &weights, &batch, &Objective::SoftmaxLoss(vec![0, 1]), 1e-5).unwrap() {
        assert!(chk.relative_error < 1e-4, "{chk:?}");
    }
}

#[test]
fn zero_net_bias_gradient_is_softmax_minus_onehot() {
    let spec = parse_net(r#"input: "x" layer { name: "f" type: "InnerProduct" bottom: "x" top: "f" inner_product_param { num_output: 3 } }"#).unwrap();
    let mut model = init_model(&spec, [2, 1, 1], 0, vec![]).unwrap();
    for lw in model.weights.values_mut() {
        lw.weight.data_mut().fill(0.0);
    }
    let (loss, grads) = backward(&model, &Tensor::zeros([1, 2, 1, 1]), &[1]).unwrap();
    assert!((loss - 3f64.ln()).abs() < 1e-15);
    let third = 1.0 / 3.0;
    let expected = [third, third - 1.0, third];
    for (g, e) in grads["f"].bias.data().iter().zip(expected) {
        assert!((g - e).abs() < 1e-15, "{g} vs {e}");
    }
    assert!(grads["f"].weight.data().iter().all(|&g| g == 0.0));
}

#[test]
fn uniform_logits_loss_is_ln_classes() {
    let (loss, _) = layers::softmax_loss(&Tensor::zeros([3, 4, 1, 1]), &[0, 1, 3]);
    assert!((loss - 4f64.ln()).abs() < 1e-15);
    assert!((loss - 1.3863).abs() < 1e-4);
}

#[test]
fn softmax_rows_sum_to_one() {
    let y = layers::softmax_forward(&random_tensor([5, 7, 1, 1], 8).reshape([5, 7, 1, 1]).unwrap());
    for i in 0..5 {
        let s: f64 = y.sample(i).iter().sum();
        assert!((s - 1.0).abs() <= 1e-12);
    }
}

#[test]
fn label_out_of_range_rejected() {
    let spec = parse_net(r#"input: "x" layer { name: "f" type: "InnerProduct" bottom: "x" top: "f" inner_product_param { num_output: 2 } }"#).unwrap();
    let model = init_model(&spec, [1, 1, 1], 0, vec![]).unwrap();
    let err = backward(&model, &Tensor::zeros([1, 1, 1, 1]), &[2]).unwrap_err();
    assert_eq!(err, EngineError::LabelOutOfRange { label: 2, classes: 2 });
}

fn single_weight(w: f64, g: f64) -> (WeightMap, WeightMap) {
    let t = |v| Tensor::from_vec([1, 1, 1, 1], vec![v]).unwrap();
    let weights = WeightMap::from([("l".into(), LayerWeights { weight: t(w), bias: t(0.0) })]);
    let grads = WeightMap::from([("l".into(), LayerWeights { weight: t(g), bias: t(0.0) })]);
    (weights, grads)
}

#[test]
fn sgd_single_step() {
    let config = SolverConfig { base_lr: 0.1, momentum: 0.0, weight_decay: 0.0, ..SolverConfig::default() };
    let (mut w, g) = single_weight(1.0, 1.0);
    let mut v = WeightMap::new();
    sgd_step(&mut w, &g, &mut v, &config, 0);
    assert!((w["l"].weight.data()[0] - 0.9).abs() < 1e-15);
    assert!((v["l"].weight.data()[0] + 0.1).abs() < 1e-15);
}

#[test]
fn sgd_zero_gradient_fixpoint() {
    let config = SolverConfig { weight_decay: 0.0, ..SolverConfig::default() };
    let (mut w, g) = single_weight(0.37, 0.0);
    let before = w.clone();
    let mut v = WeightMap::new();
    for t in 0..5 {
        sgd_step(&mut w, &g, &mut v, &config, t);
    }
    assert_eq!(w, before);
}

#[test]
fn sgd_momentum_and_decay() {
    // v1 = -0.1·(1 + 0.5·2) = -0.2, w1 = 1.8; v2 = 0.9·-0.2 - 0.1·(1 + 0.9) = -0.37, w2 = 1.43
    let config = SolverConfig { base_lr: 0.1, momentum: 0.9, weight_decay: 0.5, ..SolverConfig::default() };
    let (mut w, g) = single_weight(2.0, 1.0);
    let mut v = WeightMap::new();
    sgd_step(&mut w, &g, &mut v, &config, 0);
    sgd_step(&mut w, &g, &mut v, &config, 1);
    assert!((w["l"].weight.data()[0] - 1.43).abs() < 1e-12);
    assert!((v["l"].weight.data()[0] + 0.37).abs() < 1e-12);
}

#[test]
fn step_schedule() {
    let config = SolverConfig {
        base_lr: 0.01,
        gamma: 0.1,
        step_size: 100,
        lr_policy: LrPolicy::Step,
        ..SolverConfig::default()
    };
    assert!((config.learning_rate(250) - 0.0001).abs() < 1e-18);
    assert_eq!(config.learning_rate(99), 0.01);
}

#[test]
fn init_bound_and_determinism() {
    let spec = parse_net(r#"input: "x" layer { name: "c" type: "Convolution" bottom: "x" top: "c" convolution_param { num_output: 8 kernel_size: 5 } }"#).unwrap();
    let b = init_bound([8, 1, 5, 5]);
    assert_eq!(b, (6.0f64 / 225.0).sqrt());
    let w = init_weights(&spec, [1, 9, 9], 42).unwrap();
    let c = &w["c"];
    assert!(c.weight.data().iter().all(|v| v.abs() <= b));
    assert!(c.weight.data().iter().any(|v| v.abs() > 0.8 * b));
    assert!(c.bias.data().iter().all(|&v| v == 0.0));
    assert_eq!(init_weights(&spec, [1, 9, 9], 42).unwrap(), w);
    assert_ne!(init_weights(&spec, [1, 9, 9], 43).unwrap(), w);
}

#[test]
fn forward_shapes_match_shape_report() {
    for (file, chw) in [
        ("tiny_conv.prototxt", [1, 8, 8]),
        ("tiny_conv_deploy.prototxt", [1, 8, 8]),
        ("lenet.prototxt", [1, 28, 28]),
        ("mlp.prototxt", [2, 3, 3]),
        ("ave_pool_padded.prototxt", [2, 7, 7]),
        ("strided_conv.prototxt", [3, 32, 32]),
    ] {
        let spec = runnable_spec(&parse_net(&fixture(&format!("nets/valid/{file}"))).unwrap()).unwrap();
        let report = infer_shapes(&spec, [2, chw[0], chw[1], chw[2]]).unwrap();
        let model = init_model(&spec, chw, 1, vec![]).unwrap();
        let blobs = forward(&model, &random_tensor([2, chw[0], chw[1], chw[2]], 0)).unwrap();
        for (name, t) in &blobs {
            assert_eq!(Some(&t.shape()), report.blob_shapes.get(name), "{file}: blob {name}");
        }
        assert_eq!(blobs.len(), report.blob_shapes.len(), "{file}");
    }
}

fn tiny_setup() -> (NetSpec, SolverConfig) {
    let spec = parse_net(&fixture("nets/valid/tiny_conv.prototxt")).unwrap();
    let config = parse_solver(&fixture("solvers/tiny.prototxt")).unwrap();
    (spec, config)
}

#[derive(Default)]
struct Recorder {
    progress: Vec<TrainProgress>,
    iterations: u64,
    stop_after: Option<u64>,
    snapshots: Vec<u64>,
}

impl TrainHooks for Recorder {
    fn progress(&mut self, p: &TrainProgress) {
        self.progress.push(p.clone());
    }
    fn should_stop(&mut self) -> bool {
        self.stop_after.is_some_and(|n| self.iterations >= n)
    }
    fn iteration_done(&mut self, iteration: u64) {
        self.iterations = iteration;
    }
    fn snapshot(&mut self, epoch: u64, _model: &TrainedModel) {
        self.snapshots.push(epoch);
    }
}

#[test]
fn trains_separable_blobs_deterministically() {
    let (spec, config) = tiny_setup();
    let data = blobs(200, 8, 5);
    let mut rec = Recorder::default();
    let model = train(&spec, &config, &data, &mut rec).unwrap();
    assert_eq!(model.meta.status, RunStatus::Completed);
    assert!(model.meta.train_accuracy.unwrap() >= 0.95, "{:?}", model.meta);
    assert_eq!(rec.progress.len(), 20);
    assert_eq!(model.meta.iterations, 20 * 13);
    assert_eq!(rec.progress.last().unwrap().eta_seconds, 0.0);
    assert!(rec.progress.windows(2).all(|w| w[0].iteration < w[1].iteration));

    let again = train(&spec, &config, &data, &mut NoHooks).unwrap();
    assert_eq!(again.meta.final_loss.unwrap().to_bits(), model.meta.final_loss.unwrap().to_bits());
    assert_eq!(again.weights, model.weights);
}

#[test]
fn zero_epochs_returns_initialization() {
    let (spec, mut config) = tiny_setup();
    config.max_epochs = 0;
    let data = blobs(20, 8, 1);
    let mut rec = Recorder::default();
    let model = train(&spec, &config, &data, &mut rec).unwrap();
    assert_eq!(model.weights, init_weights(&spec, [1, 8, 8], config.seed).unwrap());
    assert!(rec.progress.is_empty());
    assert_eq!(model.meta.iterations, 0);
}

#[test]
fn immediate_cancel_returns_initialization() {
    let (spec, config) = tiny_setup();
    let mut rec = Recorder { stop_after: Some(0), ..Recorder::default() };
    let model = train(&spec, &config, &blobs(20, 8, 1), &mut rec).unwrap();
    assert_eq!(model.meta.status, RunStatus::Stopped);
    assert_eq!(model.weights, init_weights(&spec, [1, 8, 8], config.seed).unwrap());
}

#[test]
fn cancel_mid_run_stops_at_once() {
    let (spec, config) = tiny_setup();
    let mut rec = Recorder { stop_after: Some(7), ..Recorder::default() };
    let model = train(&spec, &config, &blobs(64, 8, 1), &mut rec).unwrap();
    assert_eq!(model.meta.status, RunStatus::Stopped);
    assert_eq!(model.meta.iterations, 7);
    assert_eq!(rec.iterations, 7);
}

#[test]
fn snapshots_at_epoch_multiples() {
    let (spec, mut config) = tiny_setup();
    config.max_epochs = 5;
    config.snapshot_every = 2;
    let mut rec = Recorder::default();
    train(&spec, &config, &blobs(16, 8, 1), &mut rec).unwrap();
    assert_eq!(rec.snapshots, [2, 4]);
}

#[test]
fn class_count_must_match_outputs() {
    let spec = parse_net(&fixture("nets/valid/mlp.prototxt")).unwrap();
    let err = train(&spec, &SolverConfig::default(), &blobs(10, 8, 0), &mut NoHooks).unwrap_err();
    assert_eq!(err, EngineError::ClassCountMismatch { dataset: 2, net: 3 });
}

#[test]
fn model_file_round_trip() {
    let (spec, mut config) = tiny_setup();
    config.max_epochs = 1;
    let model = train(&spec, &config, &blobs(32, 8, 2), &mut NoHooks).unwrap();
    let bytes = save_model(&model);
    assert_eq!(&bytes[..8], MODEL_MAGIC);
    let loaded = load_model(&bytes).unwrap();
    assert_eq!(loaded, model);

    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(load_model(&bad), Err(EngineError::ModelFile(_))));
    assert!(load_model(&bytes[..bytes.len() - 3]).is_err());
}
