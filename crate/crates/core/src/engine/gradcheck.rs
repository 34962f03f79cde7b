//! Central finite-difference checks of analytic gradients.

use crate::tensor::Tensor;

use super::{layers, EngineError, Network, WeightMap};

/// Comparison of one tensor's analytic and numeric gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    /// `<layer>.weight`, `<layer>.bias` or `input`.
    pub tensor: String,
    pub relative_error: f64,
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`, zero when both are zero.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
    let diff = norm(&mut a.iter().zip(b).map(|(x, y)| x - y));
    let scale = norm(&mut a.iter().copied()).max(norm(&mut b.iter().copied()));
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

/// Which scalar objective the check differentiates.
#[derive(Debug, Clone)]
pub enum Objective {
    /// Mean softmax cross-entropy on the logits slot.
    SoftmaxLoss(Vec<usize>),
    /// `Σ probe ⊙ output` on the final output slot.
    Probe(Tensor),
}

fn objective_value(net: &Network, weights: &WeightMap, batch: &Tensor, obj: &Objective) -> Result<f64, EngineError> {
    let acts = net.forward(weights, batch)?;
    Ok(match obj {
        Objective::SoftmaxLoss(labels) => layers::softmax_loss(acts.slot(net.logits_slot()), labels).0,
        Objective::Probe(probe) => {
            acts.slot(net.output_slot()).data().iter().zip(probe.data()).map(|(y, p)| y * p).sum()
        }
    })
}

fn part_mut<'a>(w: &'a mut WeightMap, layer: &str, part: &str) -> &'a mut [f64] {
    let lw = w.get_mut(layer).expect("layer present");
    if part == "weight" {
        lw.weight.data_mut()
    } else {
        lw.bias.data_mut()
    }
}

/// Checks every learnable tensor and the input gradient of `obj` against
/// central differences with step `eps`.
pub fn check_gradients(
    net: &Network,
    weights: &WeightMap,
    batch: &Tensor,
    obj: &Objective,
    eps: f64,
) -> Result<Vec<GradCheck>, EngineError> {
    let acts = net.forward(weights, batch)?;
    let (from, grad) = match obj {
        Objective::SoftmaxLoss(labels) => {
            let slot = net.logits_slot();
            (slot, layers::softmax_loss(acts.slot(slot), labels).1)
        }
        Objective::Probe(probe) => (net.output_slot(), probe.clone()),
    };
    let (analytic, dinput) = net.backward_from(weights, &acts, from, grad);

    let mut out = Vec::new();
    for (layer, lw) in weights {
        for (part, values) in [("weight", &lw.weight), ("bias", &lw.bias)] {
            let mut numeric = vec![0.0; values.len()];
            let mut w = weights.clone();
            for (i, slot) in numeric.iter_mut().enumerate() {
                let orig = part_mut(&mut w, layer, part)[i];
                part_mut(&mut w, layer, part)[i] = orig + eps;
                let plus = objective_value(net, &w, batch, obj)?;
                part_mut(&mut w, layer, part)[i] = orig - eps;
                let minus = objective_value(net, &w, batch, obj)?;
                part_mut(&mut w, layer, part)[i] = orig;
                *slot = (plus - minus) / (2.0 * eps);
            }
            let a = &analytic[layer];
            let a = if part == "weight" { &a.weight } else { &a.bias };
            out.push(GradCheck {
                tensor: format!("{layer}.{part}"),
                relative_error: relative_error(a.data(), &numeric),
            });
        }
    }

    let mut x = batch.clone();
    let mut numeric = vec![0.0; x.len()];
    for (i, slot) in numeric.iter_mut().enumerate() {
        let orig = x.data()[i];
        x.data_mut()[i] = orig + eps;
        let plus = objective_value(net, weights, &x, obj)?;
        x.data_mut()[i] = orig - eps;
        let minus = objective_value(net, weights, &x, obj)?;
        x.data_mut()[i] = orig;
        *slot = (plus - minus) / (2.0 * eps);
    }
    out.push(GradCheck { tensor: "input".into(), relative_error: relative_error(dinput.data(), &numeric) });
    Ok(out)
}
