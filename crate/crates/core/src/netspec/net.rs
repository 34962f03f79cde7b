use std::collections::{HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use super::diagnostic::{Diagnostic, Diagnostics, Span, Stage};
use super::tree::{parse_tree, Entry, Scalar, ScalarKind, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum LayerKind {
    Data,
    Convolution,
    Pooling,
    InnerProduct,
    ReLU,
    SoftmaxWithLoss,
    Softmax,
    Accuracy,
}

impl LayerKind {
    pub const ALL: [LayerKind; 8] = [
        LayerKind::Data,
        LayerKind::Convolution,
        LayerKind::Pooling,
        LayerKind::InnerProduct,
        LayerKind::ReLU,
        LayerKind::SoftmaxWithLoss,
        LayerKind::Softmax,
        LayerKind::Accuracy,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            LayerKind::Data => "Data",
            LayerKind::Convolution => "Convolution",
            LayerKind::Pooling => "Pooling",
            LayerKind::InnerProduct => "InnerProduct",
            LayerKind::ReLU => "ReLU",
            LayerKind::SoftmaxWithLoss => "SoftmaxWithLoss",
            LayerKind::Softmax => "Softmax",
            LayerKind::Accuracy => "Accuracy",
        }
    }

    pub fn parse(s: &str) -> Option<LayerKind> {
        LayerKind::ALL.into_iter().find(|k| k.as_str() == s)
    }

    /// Name of the typed parameter block this kind accepts, if any.
    pub fn param_block(self) -> Option<&'static str> {
        match self {
            LayerKind::Data => Some("data_param"),
            LayerKind::Convolution => Some("convolution_param"),
            LayerKind::Pooling => Some("pooling_param"),
            LayerKind::InnerProduct => Some("inner_product_param"),
            _ => None,
        }
    }

    /// (bottoms, tops) the kind accepts; tops is an inclusive range.
    fn arity(self) -> (usize, (usize, usize)) {
        match self {
            LayerKind::Data => (0, (1, 2)),
            LayerKind::SoftmaxWithLoss | LayerKind::Accuracy => (2, (1, 1)),
            _ => (1, (1, 1)),
        }
    }

    pub fn has_weights(self) -> bool {
        matches!(self, LayerKind::Convolution | LayerKind::InnerProduct)
    }
}

impl fmt::Display for LayerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PoolMethod {
    #[serde(rename = "MAX")]
    Max,
    #[serde(rename = "AVE")]
    Ave,
}

impl PoolMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            PoolMethod::Max => "MAX",
            PoolMethod::Ave => "AVE",
        }
    }
}

/// Optional fields keep whether they were written, so serialization
/// reproduces the source; accessors apply defaults.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvParams {
    pub num_output: u32,
    pub kernel_size: u32,
    pub stride: Option<u32>,
    pub pad: Option<u32>,
}

impl ConvParams {
    pub fn new(num_output: u32, kernel_size: u32) -> Self {
        ConvParams { num_output, kernel_size, stride: None, pad: None }
    }
    pub fn stride(&self) -> u32 {
        self.stride.unwrap_or(1)
    }
    pub fn pad(&self) -> u32 {
        self.pad.unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolParams {
    pub pool: Option<PoolMethod>,
    pub kernel_size: u32,
    pub stride: Option<u32>,
    pub pad: Option<u32>,
}

impl PoolParams {
    pub fn new(pool: PoolMethod, kernel_size: u32, stride: u32) -> Self {
        PoolParams { pool: Some(pool), kernel_size, stride: Some(stride), pad: None }
    }
    pub fn method(&self) -> PoolMethod {
        self.pool.unwrap_or(PoolMethod::Max)
    }
    pub fn stride(&self) -> u32 {
        self.stride.unwrap_or(1)
    }
    pub fn pad(&self) -> u32 {
        self.pad.unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InnerProductParams {
    pub num_output: u32,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataParams {
    pub source: Option<String>,
    pub batch_size: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum LayerParams {
    None,
    Data(DataParams),
    Convolution(ConvParams),
    Pooling(PoolParams),
    InnerProduct(InnerProductParams),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub name: String,
    pub kind: LayerKind,
    pub bottoms: Vec<String>,
    pub tops: Vec<String>,
    pub params: LayerParams,
}

impl LayerSpec {
    /// A layer with the parameter block its kind needs left at defaults.
    /// Kinds that require parameters should use the typed constructors.
    pub fn simple(name: &str, kind: LayerKind, bottoms: &[&str], tops: &[&str]) -> Self {
        let params = match kind {
            LayerKind::Data => LayerParams::Data(DataParams::default()),
            _ => LayerParams::None,
        };
        LayerSpec {
            name: name.into(),
            kind,
            bottoms: bottoms.iter().map(|s| s.to_string()).collect(),
            tops: tops.iter().map(|s| s.to_string()).collect(),
            params,
        }
    }

    pub fn conv(name: &str, bottom: &str, top: &str, params: ConvParams) -> Self {
        LayerSpec {
            params: LayerParams::Convolution(params),
            ..LayerSpec::simple(name, LayerKind::Convolution, &[bottom], &[top])
        }
    }

    pub fn pool(name: &str, bottom: &str, top: &str, params: PoolParams) -> Self {
        LayerSpec {
            params: LayerParams::Pooling(params),
            ..LayerSpec::simple(name, LayerKind::Pooling, &[bottom], &[top])
        }
    }

    pub fn inner_product(name: &str, bottom: &str, top: &str, num_output: u32) -> Self {
        LayerSpec {
            params: LayerParams::InnerProduct(InnerProductParams { num_output }),
            ..LayerSpec::simple(name, LayerKind::InnerProduct, &[bottom], &[top])
        }
    }

    pub fn conv_params(&self) -> Option<&ConvParams> {
        match &self.params {
            LayerParams::Convolution(p) => Some(p),
            _ => None,
        }
    }

    pub fn pool_params(&self) -> Option<&PoolParams> {
        match &self.params {
            LayerParams::Pooling(p) => Some(p),
            _ => None,
        }
    }

    pub fn num_output(&self) -> Option<u32> {
        match &self.params {
            LayerParams::Convolution(p) => Some(p.num_output),
            LayerParams::InnerProduct(p) => Some(p.num_output),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LayerSpans {
    pub block: Span,
    pub name: Span,
    pub bottoms: Vec<Span>,
    pub tops: Vec<Span>,
}

/// Source locations recorded by the parser. Empty for nets built in code.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SourceSpans {
    pub name: Option<Span>,
    pub inputs: Vec<Span>,
    pub layers: Vec<LayerSpans>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct NetSpec {
    pub name: String,
    /// Declared input blobs (`input: "data"`); the batch dimension is left
    /// symbolic and supplied at shape-inference time.
    pub inputs: Vec<String>,
    pub layers: Vec<LayerSpec>,
    #[serde(skip)]
    pub spans: SourceSpans,
}

/// Structural equality: spans are ignored.
impl PartialEq for NetSpec {
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name && self.inputs == other.inputs && self.layers == other.layers
    }
}

impl NetSpec {
    pub fn new(name: &str) -> Self {
        NetSpec { name: name.into(), ..Default::default() }
    }

    pub fn layer(&self, name: &str) -> Option<&LayerSpec> {
        self.layers.iter().find(|l| l.name == name)
    }

    pub fn layer_span(&self, idx: usize) -> Span {
        self.spans.layers.get(idx).map(|s| s.name).unwrap_or_default()
    }

    /// Runs the graph-level checks. Parsed nets have already passed them.
    pub fn validate(&self) -> Result<(), Diagnostics> {
        let errors = graph_errors(self);
        if errors.is_empty() {
            Ok(())
        } else {
            Err(Diagnostics(errors))
        }
    }
}

pub fn parse_net(source: &str) -> Result<NetSpec, Diagnostics> {
    parse_net_with_warnings(source).map(|(net, _)| net)
}

/// Like [`parse_net`] but also returns warnings (e.g. duplicate keys).
pub fn parse_net_with_warnings(source: &str) -> Result<(NetSpec, Vec<Diagnostic>), Diagnostics> {
    let tree = parse_tree(source).map_err(Diagnostics)?;
    let mut b = Builder::default();
    let net = b.net(&tree);
    if b.errors.is_empty() {
        b.errors = graph_errors(&net);
    }
    if b.errors.is_empty() {
        Ok((net, b.warnings))
    } else {
        Err(Diagnostics(b.errors))
    }
}

#[derive(Default)]
pub(crate) struct Builder {
    pub errors: Vec<Diagnostic>,
    pub warnings: Vec<Diagnostic>,
}

const REPEATED_KEYS: [&str; 4] = ["layer", "input", "bottom", "top"];

impl Builder {
    fn err(&mut self, span: Span, msg: impl Into<String>) {
        self.errors.push(Diagnostic::error(Stage::Semantic, span, msg));
    }

    /// Emits a warning for each singular key that appears more than once.
    pub(crate) fn warn_duplicates(&mut self, entries: &[Entry]) {
        let mut seen = HashSet::new();
        for e in entries {
            if REPEATED_KEYS.contains(&e.key.as_str()) {
                continue;
            }
            if !seen.insert(e.key.as_str()) {
                self.warnings.push(Diagnostic::warning(
                    Stage::Semantic,
                    e.key_span,
                    format!("duplicate key '{}'; the last value is used", e.key),
                ));
            }
        }
    }

    pub(crate) fn string(&mut self, e: &Entry) -> Option<String> {
        match &e.value {
            Value::Scalar(Scalar { kind: ScalarKind::Str, text, .. }) => Some(text.clone()),
            _ => {
                self.err(e.value_span(), format!("'{}' expects a quoted string", e.key));
                None
            }
        }
    }

    pub(crate) fn uint(&mut self, e: &Entry, min: u32) -> Option<u32> {
        let Value::Scalar(Scalar { kind: ScalarKind::Number, text, span }) = &e.value else {
            self.err(e.value_span(), format!("'{}' expects an integer", e.key));
            return None;
        };
        match text.parse::<i64>() {
            Ok(v) if v < min as i64 => {
                self.err(*span, format!("{} must be ≥ {min}", e.key));
                None
            }
            Ok(v) if v > u32::MAX as i64 => {
                self.err(*span, format!("{} is too large", e.key));
                None
            }
            Ok(v) => Some(v as u32),
            Err(_) => {
                self.err(*span, format!("'{}' expects an integer, got '{text}'", e.key));
                None
            }
        }
    }

    fn block<'e>(&mut self, e: &'e Entry) -> Option<&'e [Entry]> {
        match &e.value {
            Value::Block(b) => Some(b),
            Value::Scalar(s) => {
                self.err(s.span, format!("'{}' expects a {{ ... }} scope", e.key));
                None
            }
        }
    }

    fn unknown_key(&mut self, e: &Entry, scope: &str) {
        self.err(e.key_span, format!("unknown key '{}' in {scope}", e.key));
    }

    fn net(&mut self, entries: &[Entry]) -> NetSpec {
        self.warn_duplicates(entries);
        let mut net = NetSpec::default();
        for e in entries {
            match e.key.as_str() {
                "name" => {
                    if let Some(s) = self.string(e) {
                        net.name = s;
                        net.spans.name = Some(e.value_span());
                    }
                }
                "input" => {
                    if let Some(s) = self.string(e) {
                        net.inputs.push(s);
                        net.spans.inputs.push(e.value_span());
                    }
                }
                "layer" => {
                    if let Some(block) = self.block(e) {
                        if let Some((layer, spans)) = self.layer(e, block) {
                            net.layers.push(layer);
                            net.spans.layers.push(spans);
                        }
                    }
                }
                _ => self.unknown_key(e, "net"),
            }
        }
        net
    }

    fn layer(&mut self, outer: &Entry, entries: &[Entry]) -> Option<(LayerSpec, LayerSpans)> {
        self.warn_duplicates(entries);
        let errors_before = self.errors.len();
        let mut name = None;
        let mut kind = None;
        let mut bottoms = Vec::new();
        let mut tops = Vec::new();
        let mut spans = LayerSpans { block: outer.span, name: outer.key_span, ..Default::default() };
        let mut param_entries: Vec<&Entry> = Vec::new();

        for e in entries {
            match e.key.as_str() {
                "name" => {
                    if let Some(s) = self.string(e) {
                        name = Some(s);
                        spans.name = e.value_span();
                    }
                }
                "type" => {
                    if let Some(s) = self.string(e) {
                        match LayerKind::parse(&s) {
                            Some(k) => kind = Some(k),
                            None => self.err(e.value_span(), format!("unsupported layer type '{s}'")),
                        }
                    }
                }
                "bottom" => {
                    if let Some(s) = self.string(e) {
                        bottoms.push(s);
                        spans.bottoms.push(e.value_span());
                    }
                }
                "top" => {
                    if let Some(s) = self.string(e) {
                        tops.push(s);
                        spans.tops.push(e.value_span());
                    }
                }
                k if k.ends_with("_param") => param_entries.push(e),
                _ => self.unknown_key(e, "layer"),
            }
        }

        let Some(name) = name else {
            self.err(outer.key_span, "layer is missing 'name'");
            return None;
        };
        let Some(kind) = kind else {
            if self.errors.len() == errors_before {
                self.err(spans.name, format!("layer '{name}' is missing 'type'"));
            }
            return None;
        };

        let mut params = None;
        for e in param_entries {
            if kind.param_block() != Some(e.key.as_str()) {
                let known = ["data_param", "convolution_param", "pooling_param", "inner_product_param"];
                if known.contains(&e.key.as_str()) {
                    self.err(e.key_span, format!("{} is not valid for {kind} layers", e.key));
                } else {
                    self.unknown_key(e, "layer");
                }
                continue;
            }
            if let Some(block) = self.block(e) {
                params = self.params(kind, block, e.key_span);
            }
        }
        let params = match (kind, params) {
            (_, Some(p)) => p,
            (LayerKind::Data, None) => LayerParams::Data(DataParams::default()),
            (LayerKind::Convolution | LayerKind::Pooling | LayerKind::InnerProduct, None) => {
                if self.errors.len() == errors_before {
                    self.err(
                        spans.name,
                        format!("{kind} layer '{name}' requires {}", kind.param_block().unwrap_or("")),
                    );
                }
                return None;
            }
            (_, None) => LayerParams::None,
        };
        if self.errors.len() != errors_before {
            return None;
        }
        Some((LayerSpec { name, kind, bottoms, tops, params }, spans))
    }

    fn params(&mut self, kind: LayerKind, entries: &[Entry], block_span: Span) -> Option<LayerParams> {
        self.warn_duplicates(entries);
        let scope = kind.param_block().unwrap_or("params");
        let mut num_output = None;
        let mut kernel_size = None;
        let mut stride = None;
        let mut pad = None;
        let mut pool = None;
        let mut source = None;
        let mut batch_size = None;
        for e in entries {
            let allowed = kind_param_keys(kind).contains(&e.key.as_str());
            if !allowed {
                self.unknown_key(e, scope);
                continue;
            }
            match e.key.as_str() {
                "num_output" => num_output = self.uint(e, 1),
                "kernel_size" => kernel_size = self.uint(e, 1),
                "stride" => stride = self.uint(e, 1),
                "pad" => pad = self.uint(e, 0),
                "batch_size" => batch_size = self.uint(e, 1),
                "source" => source = self.string(e),
                "pool" => match &e.value {
                    Value::Scalar(Scalar { kind: ScalarKind::Ident, text, span }) => match text.as_str() {
                        "MAX" => pool = Some(PoolMethod::Max),
                        "AVE" => pool = Some(PoolMethod::Ave),
                        other => self.err(*span, format!("unknown pool method '{other}' (expected MAX or AVE)")),
                    },
                    _ => self.err(e.value_span(), "'pool' expects MAX or AVE"),
                },
                _ => unreachable!("key table and match arms disagree"),
            }
        }
        let require = |b: &mut Builder, v: Option<u32>, key: &str| {
            if v.is_none() && !entries.iter().any(|e| e.key == key) {
                b.err(block_span, format!("{scope} requires '{key}'"));
            }
            v
        };
        match kind {
            LayerKind::Data => Some(LayerParams::Data(DataParams { source, batch_size })),
            LayerKind::Convolution => {
                let n = require(self, num_output, "num_output");
                let k = require(self, kernel_size, "kernel_size");
                Some(LayerParams::Convolution(ConvParams { num_output: n?, kernel_size: k?, stride, pad }))
            }
            LayerKind::Pooling => {
                let k = require(self, kernel_size, "kernel_size");
                Some(LayerParams::Pooling(PoolParams { pool, kernel_size: k?, stride, pad }))
            }
            LayerKind::InnerProduct => {
                let n = require(self, num_output, "num_output");
                Some(LayerParams::InnerProduct(InnerProductParams { num_output: n? }))
            }
            _ => None,
        }
    }
}

/// Keys legal inside each kind's parameter block.
pub fn kind_param_keys(kind: LayerKind) -> &'static [&'static str] {
    match kind {
        LayerKind::Data => &["batch_size", "source"],
        LayerKind::Convolution => &["kernel_size", "num_output", "pad", "stride"],
        LayerKind::Pooling => &["kernel_size", "pad", "pool", "stride"],
        LayerKind::InnerProduct => &["num_output"],
        _ => &[],
    }
}

/// Name uniqueness, connectivity, arity and parameter ranges.
fn graph_errors(net: &NetSpec) -> Vec<Diagnostic> {
    let mut errors = Vec::new();
    let mut err = |span: Span, msg: String| errors.push(Diagnostic::error(Stage::Semantic, span, msg));

    let mut produced: HashMap<&str, ()> = HashMap::new();
    for (i, input) in net.inputs.iter().enumerate() {
        let span = net.spans.inputs.get(i).copied().unwrap_or_default();
        if produced.insert(input, ()).is_some() {
            err(span, format!("input blob '{input}' declared twice"));
        }
    }

    let mut names = HashSet::new();
    for (i, layer) in net.layers.iter().enumerate() {
        let spans = net.spans.layers.get(i).cloned().unwrap_or_default();
        if !names.insert(layer.name.as_str()) {
            err(spans.name, format!("duplicate layer name '{}'", layer.name));
        }

        let (want_bottoms, (min_tops, max_tops)) = layer.kind.arity();
        if layer.bottoms.len() != want_bottoms {
            err(
                spans.name,
                format!(
                    "{} layer '{}' takes {want_bottoms} bottom blob(s), got {}",
                    layer.kind,
                    layer.name,
                    layer.bottoms.len()
                ),
            );
        }
        if layer.tops.len() < min_tops || layer.tops.len() > max_tops {
            let want = if min_tops == max_tops { min_tops.to_string() } else { format!("{min_tops}-{max_tops}") };
            err(
                spans.name,
                format!("{} layer '{}' produces {want} top blob(s), got {}", layer.kind, layer.name, layer.tops.len()),
            );
        }

        for (j, bottom) in layer.bottoms.iter().enumerate() {
            if !produced.contains_key(bottom.as_str()) {
                let span = spans.bottoms.get(j).copied().unwrap_or(spans.name);
                err(span, format!("layer '{}' reads blob '{bottom}' which no earlier layer produces", layer.name));
            }
        }
        for (j, top) in layer.tops.iter().enumerate() {
            let in_place = layer.bottoms.contains(top);
            let span = spans.tops.get(j).copied().unwrap_or(spans.name);
            if in_place {
                if layer.kind != LayerKind::ReLU {
                    err(span, format!("in-place computation of '{top}' is only supported for ReLU layers"));
                }
            } else if produced.insert(top, ()).is_some() {
                err(span, format!("blob '{top}' is produced more than once"));
            }
        }

        if let Some(msg) = param_kind_mismatch(layer) {
            err(spans.name, msg);
        }
        if let Some(msg) = param_range_error(layer) {
            err(spans.name, msg);
        }
    }
    errors
}

fn param_kind_mismatch(layer: &LayerSpec) -> Option<String> {
    let ok = matches!(
        (layer.kind, &layer.params),
        (LayerKind::Data, LayerParams::Data(_))
            | (LayerKind::Convolution, LayerParams::Convolution(_))
            | (LayerKind::Pooling, LayerParams::Pooling(_))
            | (LayerKind::InnerProduct, LayerParams::InnerProduct(_))
            | (
                LayerKind::ReLU | LayerKind::Softmax | LayerKind::SoftmaxWithLoss | LayerKind::Accuracy,
                LayerParams::None
            )
    );
    (!ok).then(|| format!("parameters of layer '{}' do not match its type {}", layer.name, layer.kind))
}

fn param_range_error(layer: &LayerSpec) -> Option<String> {
    let check = |key: &str, v: Option<u32>, min: u32| -> Option<String> {
        v.filter(|&v| v < min).map(|_| format!("{key} must be ≥ {min} in layer '{}'", layer.name))
    };
    match &layer.params {
        LayerParams::Convolution(p) => check("num_output", Some(p.num_output), 1)
            .or_else(|| check("kernel_size", Some(p.kernel_size), 1))
            .or_else(|| check("stride", p.stride, 1)),
        LayerParams::Pooling(p) => {
            check("kernel_size", Some(p.kernel_size), 1).or_else(|| check("stride", p.stride, 1))
        }
        LayerParams::InnerProduct(p) => check("num_output", Some(p.num_output), 1),
        LayerParams::Data(p) => check("batch_size", p.batch_size, 1),
        LayerParams::None => None,
    }
}
