//! Model container:
//!
//! ```text
//! "ESPRMDL1"                      8-byte magic, format version 1
//! u64 LE  metadata length, then UTF-8 JSON metadata
//! u64 LE  net length, then UTF-8 deploy net text
//! f64 LE  tensor values, concatenated in metadata `tensors` order
//! ```
//!
//! Metadata holds `input_chw`, `meta` (training record) and `tensors`, a
//! list of `{name, shape}` with names `<layer>.weight` / `<layer>.bias`.

use serde::{Deserialize, Serialize};

use crate::netspec::{parse_net, serialize_net};
use crate::tensor::Tensor;

use super::{EngineError, LayerWeights, TrainedModel, TrainingMeta, WeightMap};

pub const MODEL_MAGIC: &[u8; 8] = b"ESPRMDL1";

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: [usize; 4],
}

#[derive(Serialize, Deserialize)]
struct Metadata {
    input_chw: [usize; 3],
    meta: TrainingMeta,
    tensors: Vec<TensorEntry>,
}

pub fn save_model(model: &TrainedModel) -> Vec<u8> {
    let mut tensors = Vec::new();
    let mut values: Vec<&Tensor> = Vec::new();
    for (layer, lw) in &model.weights {
        for (suffix, t) in [("weight", &lw.weight), ("bias", &lw.bias)] {
            tensors.push(TensorEntry { name: format!("{layer}.{suffix}"), shape: t.shape() });
            values.push(t);
        }
    }
    let meta = Metadata { input_chw: model.input_chw, meta: model.meta.clone(), tensors };
    let json = serde_json::to_vec(&meta).expect("metadata serializes");
    let net = serialize_net(&model.spec);

    let mut out = Vec::new();
    out.extend_from_slice(MODEL_MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&(net.len() as u64).to_le_bytes());
    out.extend_from_slice(net.as_bytes());
    for t in values {
        out.extend_from_slice(&t.to_le_bytes());
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], EngineError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| EngineError::ModelFile(format!("truncated: wanted {n} bytes at offset {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64, EngineError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn load_model(bytes: &[u8]) -> Result<TrainedModel, EngineError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8)? != MODEL_MAGIC {
        return Err(EngineError::ModelFile("bad magic header (expected ESPRMDL1)".into()));
    }
    let len = r.u64()? as usize;
    let meta: Metadata =
        serde_json::from_slice(r.take(len)?).map_err(|e| EngineError::ModelFile(format!("metadata: {e}")))?;
    let len = r.u64()? as usize;
    let text = std::str::from_utf8(r.take(len)?).map_err(|e| EngineError::ModelFile(format!("net text: {e}")))?;
    let spec = parse_net(text).map_err(|d| EngineError::ModelFile(format!("net text: {d}")))?;

    let mut weights = WeightMap::new();
    for entry in &meta.tensors {
        let count: usize = entry.shape.iter().product();
        let raw = r.take(count * 8)?;
        let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        let tensor = Tensor::from_vec(entry.shape, data).map_err(|e| EngineError::ModelFile(e.to_string()))?;
        let (layer, suffix) = entry
            .name
            .rsplit_once('.')
            .ok_or_else(|| EngineError::ModelFile(format!("bad tensor name '{}'", entry.name)))?;
        let slot = weights
            .entry(layer.to_string())
            .or_insert_with(|| LayerWeights { weight: Tensor::zeros([1, 1, 1, 1]), bias: Tensor::zeros([1, 1, 1, 1]) });
        match suffix {
            "weight" => slot.weight = tensor,
            "bias" => slot.bias = tensor,
            other => return Err(EngineError::ModelFile(format!("unknown tensor kind '{other}'"))),
        }
    }
    if r.pos != bytes.len() {
        return Err(EngineError::ModelFile(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    let model = TrainedModel { spec, input_chw: meta.input_chw, weights, meta: meta.meta };
    // Reject files whose tensors do not fit the net.
    let net = model.network()?;
    let probe = Tensor::zeros([1, meta.input_chw[0], meta.input_chw[1], meta.input_chw[2]]);
    net.forward(&model.weights, &probe)?;
    Ok(model)
}
