use serde::{Deserialize, Serialize};

use super::diagnostic::{Diagnostic, Diagnostics, Span, Stage};
use super::net::Builder;
use super::serialize::quote;
use super::tree::{parse_tree, Entry, Scalar, ScalarKind, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LrPolicy {
    Fixed,
    Step,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub base_lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub lr_policy: LrPolicy,
    pub gamma: f64,
    pub step_size: u64,
    pub max_epochs: u64,
    pub batch_size: u64,
    pub seed: u64,
    pub snapshot_every: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            base_lr: 0.01,
            momentum: 0.9,
            weight_decay: 0.0,
            lr_policy: LrPolicy::Fixed,
            gamma: 0.1,
            step_size: 1000,
            max_epochs: 10,
            batch_size: 16,
            seed: 0,
            snapshot_every: 0,
        }
    }
}

impl SolverConfig {
    /// Learning rate at zero-based iteration `t`.
    pub fn learning_rate(&self, iteration: u64) -> f64 {
        match self.lr_policy {
            LrPolicy::Fixed => self.base_lr,
            LrPolicy::Step => {
                let drops = iteration / self.step_size.max(1);
                self.base_lr * self.gamma.powi(drops.min(i32::MAX as u64) as i32)
            }
        }
    }
}

/// Shortest decimal text that parses back to the same `f64`.
pub fn format_real(v: f64) -> String {
    let s = format!("{v:?}");
    match s.strip_suffix(".0") {
        Some(int) => int.to_string(),
        None => s,
    }
}

pub fn serialize_solver(cfg: &SolverConfig) -> String {
    let policy = match cfg.lr_policy {
        LrPolicy::Fixed => "fixed",
        LrPolicy::Step => "step",
    };
    format!(
        "base_lr: {}\nmomentum: {}\nweight_decay: {}\nlr_policy: {}\ngamma: {}\nstep_size: {}\nmax_epochs: {}\nbatch_size: {}\nseed: {}\nsnapshot_every: {}\n",
        format_real(cfg.base_lr),
        format_real(cfg.momentum),
        format_real(cfg.weight_decay),
        quote(policy),
        format_real(cfg.gamma),
        cfg.step_size,
        cfg.max_epochs,
        cfg.batch_size,
        cfg.seed,
        cfg.snapshot_every,
    )
}

pub fn parse_solver(source: &str) -> Result<SolverConfig, Diagnostics> {
    parse_solver_with_warnings(source).map(|(c, _)| c)
}

pub fn parse_solver_with_warnings(source: &str) -> Result<(SolverConfig, Vec<Diagnostic>), Diagnostics> {
    let tree = parse_tree(source).map_err(Diagnostics)?;
    let mut b = Builder::default();
    b.warn_duplicates(&tree);
    let mut cfg = SolverConfig::default();
    let mut errors = Vec::new();
    let mut err = |span: Span, msg: String| errors.push(Diagnostic::error(Stage::Semantic, span, msg));

    for e in &tree {
        match e.key.as_str() {
            "base_lr" => {
                if let Some(v) = real(e, &mut err) {
                    if v > 0.0 && v.is_finite() {
                        cfg.base_lr = v;
                    } else {
                        err(e.value_span(), "base_lr must be > 0".into());
                    }
                }
            }
            "momentum" => {
                if let Some(v) = real(e, &mut err) {
                    if (0.0..1.0).contains(&v) {
                        cfg.momentum = v;
                    } else {
                        err(e.value_span(), "momentum must be in [0,1)".into());
                    }
                }
            }
            "weight_decay" => {
                if let Some(v) = real(e, &mut err) {
                    if v >= 0.0 && v.is_finite() {
                        cfg.weight_decay = v;
                    } else {
                        err(e.value_span(), "weight_decay must be ≥ 0".into());
                    }
                }
            }
            "gamma" => {
                if let Some(v) = real(e, &mut err) {
                    if v > 0.0 && v <= 1.0 {
                        cfg.gamma = v;
                    } else {
                        err(e.value_span(), "gamma must be in (0,1]".into());
                    }
                }
            }
            "lr_policy" => match &e.value {
                Value::Scalar(Scalar { kind: ScalarKind::Str, text, span }) => match text.as_str() {
                    "fixed" => cfg.lr_policy = LrPolicy::Fixed,
                    "step" => cfg.lr_policy = LrPolicy::Step,
                    other => err(*span, format!("unknown lr_policy '{other}' (expected \"fixed\" or \"step\")")),
                },
                _ => err(e.value_span(), "lr_policy expects a quoted string".into()),
            },
            "step_size" => {
                if let Some(v) = integer(e, 1, &mut err) {
                    cfg.step_size = v;
                }
            }
            "max_epochs" => {
                if let Some(v) = integer(e, 1, &mut err) {
                    cfg.max_epochs = v;
                }
            }
            "batch_size" => {
                if let Some(v) = integer(e, 1, &mut err) {
                    cfg.batch_size = v;
                }
            }
            "seed" => {
                if let Some(v) = integer(e, 0, &mut err) {
                    cfg.seed = v;
                }
            }
            "snapshot_every" => {
                if let Some(v) = integer(e, 0, &mut err) {
                    cfg.snapshot_every = v;
                }
            }
            other => err(e.key_span, format!("unknown solver key '{other}'")),
        }
    }
    if errors.is_empty() {
        Ok((cfg, b.warnings))
    } else {
        Err(Diagnostics(errors))
    }
}

fn real(e: &Entry, err: &mut impl FnMut(Span, String)) -> Option<f64> {
    match &e.value {
        Value::Scalar(Scalar { kind: ScalarKind::Number, text, .. }) => text.parse().ok(),
        _ => {
            err(e.value_span(), format!("'{}' expects a number", e.key));
            None
        }
    }
}

fn integer(e: &Entry, min: u64, err: &mut impl FnMut(Span, String)) -> Option<u64> {
    let parsed = match &e.value {
        Value::Scalar(Scalar { kind: ScalarKind::Number, text, .. }) => text.parse::<u64>().ok(),
        _ => None,
    };
    match parsed {
        Some(v) if v >= min => Some(v),
        Some(_) => {
            err(e.value_span(), format!("{} must be ≥ {min}", e.key));
            None
        }
        None => {
            err(e.value_span(), format!("'{}' expects a non-negative integer", e.key));
            None
        }
    }
}
