use std::collections::{BTreeMap, HashMap};

use crate::netspec::{LayerKind, LayerParams, NetSpec, PoolMethod};
use crate::shapecheck::{infer_shapes, Shape4, ShapeReport};
use crate::tensor::Tensor;

use super::layers::{self, PoolCache, Window};
use super::{EngineError, LayerWeights, WeightMap};

#[derive(Debug, Clone)]
pub(crate) enum Op {
    Convolution(Window),
    Pooling(PoolMethod, Window),
    InnerProduct,
    ReLU,
    Softmax,
}

#[derive(Debug, Clone)]
pub(crate) struct Step {
    pub layer: String,
    pub op: Op,
    pub input: usize,
    pub output: usize,
}

/// A deploy-form net compiled against a fixed sample shape. Slot 0 holds
/// the input; step `i` writes slot `i + 1`, so in-place layers keep their
/// pre-activation values for the backward pass.
#[derive(Debug, Clone)]
pub struct Network {
    pub(crate) steps: Vec<Step>,
    input_blob: String,
    input_chw: [usize; 3],
    blob_slots: BTreeMap<String, usize>,
    /// Single-sample shapes (n = 1) per slot.
    slot_shapes: Vec<Shape4>,
    report: ShapeReport,
}

/// Per-slot activations from one forward pass.
#[derive(Debug, Clone)]
pub struct Activations {
    slots: Vec<Tensor>,
    pool_caches: HashMap<usize, PoolCache>,
}

impl Activations {
    pub fn slot(&self, i: usize) -> &Tensor {
        &self.slots[i]
    }
}

impl Network {
    pub fn compile(spec: &NetSpec, input_chw: [usize; 3]) -> Result<Network, EngineError> {
        spec.validate().map_err(|d| EngineError::Net(d.to_string()))?;
        let [input_blob] = spec.inputs.as_slice() else {
            return Err(EngineError::Net(format!(
                "a runnable net needs exactly one declared input, found {}",
                spec.inputs.len()
            )));
        };
        let [c, h, w] = input_chw;
        let report = infer_shapes(spec, [1, c, h, w]).map_err(EngineError::Shape)?;

        let mut blob_slots = BTreeMap::new();
        blob_slots.insert(input_blob.clone(), 0);
        let mut slot_shapes = vec![[1, c, h, w]];
        let mut steps = Vec::new();
        for layer in &spec.layers {
            let op = match (&layer.kind, &layer.params) {
                (LayerKind::Convolution, LayerParams::Convolution(p)) => Op::Convolution(Window {
                    kernel: p.kernel_size as usize,
                    stride: p.stride() as usize,
                    pad: p.pad() as usize,
                }),
                (LayerKind::Pooling, LayerParams::Pooling(p)) => Op::Pooling(
                    p.method(),
                    Window { kernel: p.kernel_size as usize, stride: p.stride() as usize, pad: p.pad() as usize },
                ),
                (LayerKind::InnerProduct, _) => Op::InnerProduct,
                (LayerKind::ReLU, _) => Op::ReLU,
                (LayerKind::Softmax, _) => Op::Softmax,
                (kind, _) => {
                    return Err(EngineError::Net(format!(
                        "layer '{}' of type {kind} cannot run in an inference net; derive the deploy net first",
                        layer.name
                    )))
                }
            };
            let input = blob_slots[&layer.bottoms[0]];
            let output = steps.len() + 1;
            blob_slots.insert(layer.tops[0].clone(), output);
            slot_shapes.push(report.blob(&layer.tops[0]).expect("every top has a shape"));
            steps.push(Step { layer: layer.name.clone(), op, input, output });
        }
        Ok(Network { steps, input_blob: input_blob.clone(), input_chw, blob_slots, slot_shapes, report })
    }

    pub fn input_chw(&self) -> [usize; 3] {
        self.input_chw
    }

    pub fn input_blob(&self) -> &str {
        &self.input_blob
    }

    /// Shape report at batch size 1.
    pub fn shape_report(&self) -> &ShapeReport {
        &self.report
    }

    pub fn blob_slot(&self, blob: &str) -> Option<usize> {
        self.blob_slots.get(blob).copied()
    }

    pub fn blob_names(&self) -> impl Iterator<Item = &str> {
        self.blob_slots.keys().map(String::as_str)
    }

    pub fn output_slot(&self) -> usize {
        self.steps.len()
    }

    /// Slot the training loss reads: the input of a final Softmax, or the
    /// last output when the net ends in raw scores.
    pub fn logits_slot(&self) -> usize {
        match self.steps.last() {
            Some(Step { op: Op::Softmax, input, .. }) => *input,
            _ => self.output_slot(),
        }
    }

    /// Number of classes the net scores (channels at the output).
    pub fn num_outputs(&self) -> usize {
        let [_, c, h, w] = self.slot_shapes[self.output_slot()];
        c * h * w
    }

    /// Per-layer (weight, bias) shapes for the learnable layers, in order.
    pub fn weight_shapes(&self) -> Vec<(String, Shape4, Shape4)> {
        self.steps
            .iter()
            .filter_map(|s| {
                let in_shape = self.slot_shapes[s.input];
                let out_shape = self.slot_shapes[s.output];
                match s.op {
                    Op::Convolution(win) => Some((
                        s.layer.clone(),
                        [out_shape[1], in_shape[1], win.kernel, win.kernel],
                        [out_shape[1], 1, 1, 1],
                    )),
                    Op::InnerProduct => Some((
                        s.layer.clone(),
                        [out_shape[1], in_shape[1] * in_shape[2] * in_shape[3], 1, 1],
                        [out_shape[1], 1, 1, 1],
                    )),
                    _ => None,
                }
            })
            .collect()
    }

    fn check_batch(&self, batch: &Tensor) -> Result<(), EngineError> {
        let [_, c, h, w] = batch.shape();
        if [c, h, w] != self.input_chw {
            return Err(EngineError::ShapeMismatch { expected: self.input_chw, got: [c, h, w] });
        }
        Ok(())
    }

    fn check_weights(&self, weights: &WeightMap) -> Result<(), EngineError> {
        for (layer, ws, bs) in self.weight_shapes() {
            match weights.get(&layer) {
                Some(lw) if lw.weight.shape() == ws && lw.bias.shape() == bs => {}
                Some(lw) => {
                    return Err(EngineError::Net(format!(
                        "weights of layer '{layer}' have shape {:?}/{:?}, expected {ws:?}/{bs:?}",
                        lw.weight.shape(),
                        lw.bias.shape()
                    )))
                }
                None => return Err(EngineError::Net(format!("no weights for layer '{layer}'"))),
            }
        }
        Ok(())
    }

    pub fn forward(&self, weights: &WeightMap, batch: &Tensor) -> Result<Activations, EngineError> {
        self.check_batch(batch)?;
        self.check_weights(weights)?;
        let mut slots = Vec::with_capacity(self.steps.len() + 1);
        slots.push(batch.clone());
        let mut pool_caches = HashMap::new();
        for step in &self.steps {
            let x = &slots[step.input];
            let y = match &step.op {
                Op::Convolution(win) => {
                    let lw = &weights[&step.layer];
                    layers::conv_forward(x, &lw.weight, &lw.bias, *win)
                }
                Op::Pooling(method, win) => {
                    let (y, cache) = layers::pool_forward(x, *method, *win);
                    pool_caches.insert(step.output, cache);
                    y
                }
                Op::InnerProduct => {
                    let lw = &weights[&step.layer];
                    layers::inner_product_forward(x, &lw.weight, &lw.bias)
                }
                Op::ReLU => layers::relu_forward(x),
                Op::Softmax => layers::softmax_forward(x),
            };
            slots.push(y);
        }
        Ok(Activations { slots, pool_caches })
    }

    /// Latest tensor for every blob name.
    pub fn blob_map(&self, acts: &Activations) -> BTreeMap<String, Tensor> {
        self.blob_slots.iter().map(|(name, &slot)| (name.clone(), acts.slots[slot].clone())).collect()
    }

    /// Back-propagates `grad` (with respect to slot `from`) to every
    /// learnable tensor. Returns the weight gradients and the input gradient.
    pub fn backward_from(
        &self,
        weights: &WeightMap,
        acts: &Activations,
        from: usize,
        grad: Tensor,
    ) -> (WeightMap, Tensor) {
        let mut grads: Vec<Option<Tensor>> = vec![None; self.steps.len() + 1];
        grads[from] = Some(grad);
        let mut out = WeightMap::new();
        for step in self.steps.iter().rev() {
            if step.output > from {
                continue;
            }
            let Some(dy) = grads[step.output].take() else { continue };
            let x = &acts.slots[step.input];
            let dx = match &step.op {
                Op::Convolution(win) => {
                    let lw = &weights[&step.layer];
                    let (dx, dw, db) = layers::conv_backward(x, &lw.weight, &dy, *win);
                    out.insert(step.layer.clone(), LayerWeights { weight: dw, bias: db });
                    dx
                }
                Op::Pooling(method, win) => {
                    let cache = acts.pool_caches.get(&step.output).cloned().unwrap_or_default();
                    layers::pool_backward(x, &dy, *method, *win, &cache)
                }
                Op::InnerProduct => {
                    let lw = &weights[&step.layer];
                    let (dx, dw, db) = layers::inner_product_backward(x, &lw.weight, &dy);
                    out.insert(step.layer.clone(), LayerWeights { weight: dw, bias: db });
                    dx
                }
                Op::ReLU => layers::relu_backward(x, &dy),
                Op::Softmax => layers::softmax_backward(&acts.slots[step.output], &dy),
            };
            match &mut grads[step.input] {
                Some(acc) => acc.data_mut().iter_mut().zip(dx.data()).for_each(|(a, b)| *a += b),
                slot @ None => *slot = Some(dx),
            }
        }
        // Learnable layers off the loss path still get (zero) gradients.
        for (layer, ws, bs) in self.weight_shapes() {
            out.entry(layer).or_insert_with(|| LayerWeights { weight: Tensor::zeros(ws), bias: Tensor::zeros(bs) });
        }
        let dinput = grads[0].take().unwrap_or_else(|| Tensor::zeros(acts.slots[0].shape()));
        (out, dinput)
    }

    /// Loss and weight gradients of mean softmax cross-entropy on a batch.
    pub fn loss_and_gradients(
        &self,
        weights: &WeightMap,
        batch: &Tensor,
        labels: &[usize],
    ) -> Result<(f64, WeightMap, Activations), EngineError> {
        let classes = self.num_outputs();
        if labels.len() != batch.shape()[0] {
            return Err(EngineError::Net(format!("{} labels for a batch of {}", labels.len(), batch.shape()[0])));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(EngineError::LabelOutOfRange { label: bad, classes });
        }
        let acts = self.forward(weights, batch)?;
        let slot = self.logits_slot();
        let (loss, dlogits) = layers::softmax_loss(&acts.slots[slot], labels);
        let (grads, _) = self.backward_from(weights, &acts, slot, dlogits);
        Ok((loss, grads, acts))
    }
}
