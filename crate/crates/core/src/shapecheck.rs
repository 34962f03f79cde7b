//! Static shape inference over a validated net: response size of every
//! blob, learnable parameter counts, and a color class per layer kind.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::netspec::{Diagnostic, LayerKind, LayerParams, NetSpec, Stage};

/// (n, c, h, w)
pub type Shape4 = [usize; 4];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerShape {
    pub name: String,
    pub kind: LayerKind,
    pub color: u8,
    pub tops: Vec<Shape4>,
    pub params: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeReport {
    pub blob_shapes: BTreeMap<String, Shape4>,
    pub layer_colors: BTreeMap<String, u8>,
    pub param_counts: BTreeMap<String, usize>,
    /// Per-layer rows in net order, for rendering.
    pub layers: Vec<LayerShape>,
}

impl ShapeReport {
    pub fn blob(&self, name: &str) -> Option<Shape4> {
        self.blob_shapes.get(name).copied()
    }

    pub fn total_params(&self) -> usize {
        self.param_counts.values().sum()
    }
}

/// Stable color class per kind; the UI owns the actual palette.
pub fn color_class(kind: LayerKind) -> u8 {
    match kind {
        LayerKind::Data => 0,
        LayerKind::Convolution => 1,
        LayerKind::Pooling => 2,
        LayerKind::InnerProduct => 3,
        LayerKind::ReLU => 4,
        LayerKind::Softmax | LayerKind::SoftmaxWithLoss => 5,
        LayerKind::Accuracy => 6,
    }
}

/// Convolution output length: `floor((len + 2·pad − k)/stride) + 1`, or
/// `None` when no window fits.
pub fn conv_out_len(len: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = len + 2 * pad;
    if kernel == 0 || stride == 0 || padded < kernel {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

/// Pooling output length: `ceil((len + 2·pad − k)/stride) + 1`, dropping
/// every window that would start inside the trailing padding.
pub fn pool_out_len(len: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = len + 2 * pad;
    if kernel == 0 || stride == 0 || padded < kernel || len == 0 {
        return None;
    }
    let ceil_windows = (padded - kernel).div_ceil(stride) + 1;
    let starts_before_trailing_pad = (len + pad).div_ceil(stride);
    Some(ceil_windows.min(starts_before_trailing_pad))
}

fn shape_err(net: &NetSpec, idx: usize, msg: String) -> Diagnostic {
    Diagnostic::error(Stage::Shape, net.layer_span(idx), msg)
}

/// Computes every blob's shape for `input` (n, c, h, w). Declared inputs and
/// the first top of each Data layer take `input`; a Data layer's label top
/// is (n, 1, 1, 1).
pub fn infer_shapes(net: &NetSpec, input: Shape4) -> Result<ShapeReport, Diagnostic> {
    if input.contains(&0) {
        return Err(Diagnostic::error(Stage::Shape, Default::default(), "input dimensions must all be ≥ 1"));
    }
    let [n, _, _, _] = input;
    let mut blobs: HashMap<&str, Shape4> = HashMap::new();
    for name in &net.inputs {
        blobs.insert(name, input);
    }
    let mut report = ShapeReport {
        blob_shapes: BTreeMap::new(),
        layer_colors: BTreeMap::new(),
        param_counts: BTreeMap::new(),
        layers: Vec::new(),
    };

    for (idx, layer) in net.layers.iter().enumerate() {
        let bottom = |i: usize| -> Result<Shape4, Diagnostic> {
            layer
                .bottoms
                .get(i)
                .and_then(|b| blobs.get(b.as_str()).copied())
                .ok_or_else(|| shape_err(net, idx, format!("layer '{}' has an unresolved bottom blob", layer.name)))
        };
        let mut params = 0usize;
        let tops: Vec<Shape4> = match (&layer.kind, &layer.params) {
            (LayerKind::Data, _) => {
                let mut t = vec![input];
                if layer.tops.len() > 1 {
                    t.push([n, 1, 1, 1]);
                }
                t
            }
            (LayerKind::Convolution, LayerParams::Convolution(p)) => {
                let [bn, c, h, w] = bottom(0)?;
                let k = p.kernel_size as usize;
                let (s, pad) = (p.stride() as usize, p.pad() as usize);
                let oh = conv_out_len(h, k, s, pad).ok_or_else(|| {
                    shape_err(
                        net,
                        idx,
                        format!("output height ≤ 0 at layer '{}' (input height {h}, kernel {k})", layer.name),
                    )
                })?;
                let ow = conv_out_len(w, k, s, pad).ok_or_else(|| {
                    shape_err(
                        net,
                        idx,
                        format!("output width ≤ 0 at layer '{}' (input width {w}, kernel {k})", layer.name),
                    )
                })?;
                let out = p.num_output as usize;
                params = out * c * k * k + out;
                vec![[bn, out, oh, ow]]
            }
            (LayerKind::Pooling, LayerParams::Pooling(p)) => {
                let [bn, c, h, w] = bottom(0)?;
                let k = p.kernel_size as usize;
                let (s, pad) = (p.stride() as usize, p.pad() as usize);
                let oh = pool_out_len(h, k, s, pad).ok_or_else(|| {
                    shape_err(
                        net,
                        idx,
                        format!("output height ≤ 0 at layer '{}' (input height {h}, kernel {k})", layer.name),
                    )
                })?;
                let ow = pool_out_len(w, k, s, pad).ok_or_else(|| {
                    shape_err(
                        net,
                        idx,
                        format!("output width ≤ 0 at layer '{}' (input width {w}, kernel {k})", layer.name),
                    )
                })?;
                vec![[bn, c, oh, ow]]
            }
            (LayerKind::InnerProduct, LayerParams::InnerProduct(p)) => {
                let [bn, c, h, w] = bottom(0)?;
                let out = p.num_output as usize;
                params = out * c * h * w + out;
                vec![[bn, out, 1, 1]]
            }
            (LayerKind::ReLU | LayerKind::Softmax, _) => vec![bottom(0)?],
            (LayerKind::SoftmaxWithLoss | LayerKind::Accuracy, _) => {
                let logits = bottom(0)?;
                let labels = bottom(1)?;
                if labels[0] != logits[0] || labels[1] * labels[2] * labels[3] != 1 {
                    return Err(shape_err(
                        net,
                        idx,
                        format!("layer '{}' expects one label per sample, got label blob {labels:?}", layer.name),
                    ));
                }
                vec![[1, 1, 1, 1]]
            }
            (kind, _) => {
                return Err(shape_err(
                    net,
                    idx,
                    format!("layer '{}' has parameters that do not match {kind}", layer.name),
                ))
            }
        };
        for (name, shape) in layer.tops.iter().zip(&tops) {
            blobs.insert(name, *shape);
            report.blob_shapes.insert(name.clone(), *shape);
        }
        report.layer_colors.insert(layer.name.clone(), color_class(layer.kind));
        report.param_counts.insert(layer.name.clone(), params);
        report.layers.push(LayerShape {
            name: layer.name.clone(),
            kind: layer.kind,
            color: color_class(layer.kind),
            tops,
            params,
        });
    }
    for name in &net.inputs {
        report.blob_shapes.insert(name.clone(), input);
    }
    Ok(report)
}
