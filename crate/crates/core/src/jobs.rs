//! The operations exposed to users, shared by the command line and the
//! HTTP service: long jobs (import, train, extract, test, export) that run
//! as tasks, and quick synchronous calls (net validation, completion,
//! deploy derivation, splitting, feature grids).

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::datastore::{split, DataError, Dataset, DatasetSummary, FormatRegistry, SplitSpec};
use crate::engine::{runnable_spec, train, EngineError, Network, RunStatus, TrainHooks, TrainProgress, TrainedModel};
use crate::experiment::{
    evaluate, extract_features, feature_grid, test_model, train_linear, ExperimentError, Grid, LinearParams,
};
use crate::netspec::{
    completion_context, derive_deploy, parse_net_with_warnings, parse_solver, serialize_net, Diagnostic, Diagnostics,
    LayerKind, NetSpec, SolverConfig,
};
use crate::par::Execution;
use crate::shapecheck::{color_class, infer_shapes, Shape4, ShapeReport};
use crate::taskhub::{Hub, Outcome, TaskKind, TaskRecord, WorkContext};
use crate::workspace::{FeatureSummary, ModelSummary, Workspace, WorkspaceError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    BadRequest,
    NotFound,
    Conflict,
    Internal,
}

/// The single error shape reported to callers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, thiserror::Error)]
#[error("{message}")]
pub struct ApiError {
    pub code: ErrorCode,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub details: Option<Value>,
}

impl ApiError {
    pub fn new(code: ErrorCode, message: impl Into<String>) -> Self {
        ApiError { code, message: message.into(), details: None }
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        Self::new(ErrorCode::BadRequest, message)
    }

    pub fn with_details(mut self, details: Value) -> Self {
        self.details = Some(details);
        self
    }
}

impl From<WorkspaceError> for ApiError {
    fn from(e: WorkspaceError) -> Self {
        let code = match e {
            WorkspaceError::NotFound { .. } => ErrorCode::NotFound,
            _ => ErrorCode::Internal,
        };
        ApiError::new(code, e.to_string())
    }
}

impl From<DataError> for ApiError {
    fn from(e: DataError) -> Self {
        ApiError::bad_request(e.to_string())
    }
}

impl From<EngineError> for ApiError {
    fn from(e: EngineError) -> Self {
        let code = match e {
            EngineError::ClassCountMismatch { .. } => ErrorCode::Conflict,
            EngineError::ModelFile(_) => ErrorCode::Internal,
            _ => ErrorCode::BadRequest,
        };
        ApiError::new(code, e.to_string())
    }
}

impl From<ExperimentError> for ApiError {
    fn from(e: ExperimentError) -> Self {
        match e {
            ExperimentError::Engine(inner) => inner.into(),
            ExperimentError::ClassCountMismatch { .. } => ApiError::new(ErrorCode::Conflict, e.to_string()),
            other => ApiError::bad_request(other.to_string()),
        }
    }
}

impl From<Diagnostics> for ApiError {
    fn from(d: Diagnostics) -> Self {
        let first = d.iter().next().map(|x| x.message.clone()).unwrap_or_default();
        ApiError::bad_request(first).with_details(json!({ "diagnostics": d.into_vec() }))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierSpec {
    /// Blob whose activations feed the classifier.
    pub layer: String,
    /// Dataset the classifier is fitted on.
    pub train_dataset_id: String,
    #[serde(default)]
    pub params: LinearParams,
}

/// A long-running job request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum JobSpec {
    Import {
        path: String,
        #[serde(default)]
        format: Option<String>,
    },
    Train {
        #[serde(default)]
        net_id: Option<String>,
        #[serde(default)]
        net_text: Option<String>,
        #[serde(default)]
        solver: Option<SolverConfig>,
        #[serde(default)]
        solver_text: Option<String>,
        dataset_id: String,
    },
    Extract {
        model_id: String,
        dataset_id: String,
        layers: Vec<String>,
    },
    Test {
        model_id: String,
        dataset_id: String,
        #[serde(default)]
        classifier: Option<ClassifierSpec>,
    },
    Export {
        features_id: String,
        path: String,
    },
}

impl JobSpec {
    pub fn task_kind(&self) -> TaskKind {
        match self {
            JobSpec::Import { .. } => TaskKind::Import,
            JobSpec::Train { .. } => TaskKind::Train,
            JobSpec::Extract { .. } => TaskKind::Extract,
            JobSpec::Test { .. } => TaskKind::Test,
            JobSpec::Export { .. } => TaskKind::Export,
        }
    }
}

/// A validated job with its inputs loaded.
pub struct Job {
    spec: JobSpec,
    plan: Plan,
}

enum Plan {
    Import { path: PathBuf, tag: String },
    Train { net: NetSpec, solver: SolverConfig, dataset: Dataset },
    Extract { model: TrainedModel, dataset: Dataset, layers: Vec<String> },
    Test { model: TrainedModel, dataset: Dataset, classifier: Option<(ClassifierSpec, Dataset)> },
    Export { features: PathBuf, dest: PathBuf },
}

/// How a job ended when it did not fail.
#[derive(Debug, Clone, PartialEq)]
pub enum JobResult {
    Done(Value),
    Stopped(Value),
}

impl Job {
    pub fn spec(&self) -> &JobSpec {
        &self.spec
    }
}

fn parse_net_text(text: &str) -> Result<NetSpec, ApiError> {
    Ok(parse_net_with_warnings(text)?.0)
}

fn check_input(model: &TrainedModel, dataset: &Dataset) -> Result<(), ApiError> {
    match dataset.sample_shape() {
        None => Err(ApiError::bad_request("dataset is empty")),
        Some(s) if s != model.input_chw => Err(ApiError::new(
            ErrorCode::Conflict,
            format!("dataset samples are {s:?} but the model expects {:?}", model.input_chw),
        )),
        Some(_) => Ok(()),
    }
}

fn check_blob(model: &TrainedModel, blob: &str) -> Result<(), ApiError> {
    let net = model.network()?;
    if net.blob_slot(blob).is_none() {
        let names: Vec<&str> = net.blob_names().collect();
        return Err(ApiError::bad_request(format!("unknown blob '{blob}' (available: {})", names.join(", "))));
    }
    Ok(())
}

/// Checks a request and loads what it needs, without side effects.
pub fn prepare(ws: &Workspace, spec: JobSpec) -> Result<Job, ApiError> {
    let plan = match &spec {
        JobSpec::Import { path, format } => {
            if path.trim().is_empty() {
                return Err(ApiError::bad_request("path must not be empty"));
            }
            let p = PathBuf::from(path);
            let registry = FormatRegistry::default();
            let plugin = registry.resolve(&p, format.as_deref())?;
            if plugin.tag() != "synthetic" && !p.exists() {
                return Err(ApiError::bad_request(format!("'{path}' does not exist")));
            }
            Plan::Import { path: p, tag: plugin.tag().to_string() }
        }
        JobSpec::Train { net_id, net_text, solver, solver_text, dataset_id } => {
            let net = match (net_id, net_text) {
                (Some(id), None) => ws.net(id)?,
                (None, Some(text)) => parse_net_text(text)?,
                _ => return Err(ApiError::bad_request("give exactly one of net_id and net_text")),
            };
            let solver = match (solver, solver_text) {
                (Some(s), None) => s.clone(),
                (None, Some(text)) => parse_solver(text)?,
                (None, None) => SolverConfig::default(),
                _ => return Err(ApiError::bad_request("give at most one of solver and solver_text")),
            };
            let dataset = ws.dataset(dataset_id)?;
            let shape = dataset.sample_shape().ok_or_else(|| ApiError::bad_request("dataset is empty"))?;
            let compiled = Network::compile(&runnable_spec(&net)?, shape)?;
            if compiled.num_outputs() != dataset.num_classes() {
                return Err(EngineError::ClassCountMismatch {
                    dataset: dataset.num_classes(),
                    net: compiled.num_outputs(),
                }
                .into());
            }
            Plan::Train { net, solver, dataset }
        }
        JobSpec::Extract { model_id, dataset_id, layers } => {
            let model = ws.model(model_id)?;
            let dataset = ws.dataset(dataset_id)?;
            check_input(&model, &dataset)?;
            if layers.is_empty() {
                return Err(ApiError::bad_request("no layers requested"));
            }
            for l in layers {
                check_blob(&model, l)?;
            }
            Plan::Extract { model, dataset, layers: layers.clone() }
        }
        JobSpec::Test { model_id, dataset_id, classifier } => {
            let model = ws.model(model_id)?;
            let dataset = ws.dataset(dataset_id)?;
            check_input(&model, &dataset)?;
            let classifier = match classifier {
                None => {
                    let outputs = model.num_classes()?;
                    if outputs != dataset.num_classes() {
                        return Err(ExperimentError::ClassCountMismatch {
                            dataset: dataset.num_classes(),
                            model: outputs,
                        }
                        .into());
                    }
                    None
                }
                Some(c) => {
                    check_blob(&model, &c.layer)?;
                    let train_set = ws.dataset(&c.train_dataset_id)?;
                    check_input(&model, &train_set)?;
                    if train_set.class_names() != dataset.class_names() {
                        return Err(ApiError::new(
                            ErrorCode::Conflict,
                            "train and test datasets have different classes",
                        ));
                    }
                    Some((c.clone(), train_set))
                }
            };
            Plan::Test { model, dataset, classifier }
        }
        JobSpec::Export { features_id, path } => {
            let features = ws.features_libsvm_path(features_id)?;
            let dest = PathBuf::from(path);
            let parent = dest.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
            if !parent.is_dir() {
                return Err(ApiError::bad_request(format!("directory '{}' does not exist", parent.display())));
            }
            Plan::Export { features, dest }
        }
    };
    Ok(Job { spec, plan })
}

struct TrainAdapter<'a> {
    ctx: &'a dyn WorkContext,
    ws: &'a Workspace,
}

impl TrainHooks for TrainAdapter<'_> {
    fn progress(&mut self, p: &TrainProgress) {
        let fraction = if p.total_iterations == 0 { 1.0 } else { p.iteration as f64 / p.total_iterations as f64 };
        self.ctx.report_progress(fraction, Some(p.eta_seconds), serde_json::to_value(p).expect("progress serializes"));
    }

    fn should_stop(&mut self) -> bool {
        self.ctx.is_cancelled()
    }

    fn snapshot(&mut self, epoch: u64, model: &TrainedModel) {
        if let Ok(s) = self.ws.put_model(model) {
            // Progress never moves backwards, so 0 leaves it where it is.
            self.ctx.report_progress(0.0, None, json!({ "snapshot_model_id": s.id, "epoch": epoch }));
        }
    }
}

fn train_result(summary: &ModelSummary) -> Value {
    json!({
        "model_id": summary.id,
        "status": summary.meta.status,
        "final_loss": summary.meta.final_loss,
        "train_accuracy": summary.meta.train_accuracy,
        "epochs_completed": summary.meta.epochs_completed,
        "iterations": summary.meta.iterations,
        "model": summary,
    })
}

/// Runs a prepared job to completion on the calling thread.
pub fn run(job: Job, ws: &Workspace, ctx: &dyn WorkContext) -> Result<JobResult, ApiError> {
    if ctx.is_cancelled() {
        return Ok(JobResult::Stopped(Value::Null));
    }
    match job.plan {
        Plan::Import { path, tag } => {
            let registry = FormatRegistry::default();
            let plugin = registry.get(&tag).expect("resolved during prepare");
            let mut on_unit = |done: usize, total: usize| {
                if ctx.is_cancelled() {
                    return false;
                }
                if total > 0 {
                    ctx.report_progress(
                        done as f64 / total as f64,
                        None,
                        json!({ "files_read": done, "files": total }),
                    );
                }
                true
            };
            match plugin.read_with(&path, &mut on_unit) {
                Ok(ds) => {
                    let summary = ws.put_dataset(&ds)?;
                    Ok(JobResult::Done(json!({ "dataset_id": summary.id, "dataset": summary })))
                }
                Err(DataError::Cancelled) => Ok(JobResult::Stopped(Value::Null)),
                Err(e) => Err(e.into()),
            }
        }
        Plan::Train { net, solver, dataset } => {
            let mut hooks = TrainAdapter { ctx, ws };
            let model = train(&net, &solver, &dataset, &mut hooks)?;
            let summary = ws.put_model(&model)?;
            let result = train_result(&summary);
            Ok(match model.meta.status {
                RunStatus::Stopped => JobResult::Stopped(result),
                _ => JobResult::Done(result),
            })
        }
        Plan::Extract { model, dataset, layers } => {
            let sets = extract_features(&model, &dataset, &layers, Execution::default())?;
            let mut out: Vec<FeatureSummary> = Vec::new();
            for (i, fs) in sets.iter().enumerate() {
                out.push(ws.put_features(fs)?);
                ctx.report_progress((i + 1) as f64 / sets.len() as f64, None, json!({ "layer": fs.layer_name }));
            }
            let ids: Vec<&str> = out.iter().map(|f| f.id.as_str()).collect();
            Ok(JobResult::Done(json!({ "features_ids": ids, "features": out })))
        }
        Plan::Test { model, dataset, classifier } => match classifier {
            None => {
                let metrics = test_model(&model, &dataset, Execution::default())?;
                Ok(JobResult::Done(
                    json!({ "method": "softmax", "class_names": dataset.class_names(), "metrics": metrics }),
                ))
            }
            Some((spec, train_set)) => {
                let layer = vec![spec.layer.clone()];
                let tr = extract_features(&model, &train_set, &layer, Execution::default())?.remove(0);
                ctx.report_progress(0.3, None, json!({ "stage": "features" }));
                if ctx.is_cancelled() {
                    return Ok(JobResult::Stopped(Value::Null));
                }
                let te = extract_features(&model, &dataset, &layer, Execution::default())?.remove(0);
                let svm = train_linear(&tr, spec.params)?;
                ctx.report_progress(0.9, None, json!({ "stage": "classifier" }));
                let metrics = evaluate(&svm.predict_all(&te)?, &te.labels, dataset.num_classes())?;
                Ok(JobResult::Done(json!({
                    "method": "svm",
                    "layer": spec.layer,
                    "params": spec.params,
                    "class_names": dataset.class_names(),
                    "metrics": metrics,
                })))
            }
        },
        Plan::Export { features, dest } => {
            let bytes = std::fs::copy(&features, &dest)
                .map_err(|e| ApiError::bad_request(format!("cannot write '{}': {e}", dest.display())))?;
            Ok(JobResult::Done(json!({ "path": dest.display().to_string(), "bytes": bytes })))
        }
    }
}

/// Prepare and run on the calling thread.
pub fn execute(ws: &Workspace, spec: JobSpec, ctx: &dyn WorkContext) -> Result<JobResult, ApiError> {
    run(prepare(ws, spec)?, ws, ctx)
}

/// Validates `spec` and queues it on `hub`. Invalid requests fail here and
/// create no task.
pub fn submit(hub: &Hub, ws: Arc<Workspace>, spec: JobSpec) -> Result<TaskRecord, ApiError> {
    let description = serde_json::to_value(&spec).expect("spec serializes");
    let kind = spec.task_kind();
    let job = prepare(&ws, spec)?;
    Ok(hub.submit(kind, description, move |ctx| match run(job, &ws, ctx) {
        Ok(JobResult::Done(v)) => Outcome::Succeeded(v),
        Ok(JobResult::Stopped(v)) => Outcome::Stopped(v),
        Err(e) => Outcome::Failed(e.message),
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerInfo {
    pub name: String,
    #[serde(rename = "type")]
    pub kind: LayerKind,
    pub color: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidateReport {
    pub valid: bool,
    /// Set when the net parsed; the net is stored under this id.
    pub net_id: Option<String>,
    pub diagnostics: Vec<Diagnostic>,
    pub layers: Vec<LayerInfo>,
    /// Present when an input shape was given and inference succeeded.
    pub shape_report: Option<ShapeReport>,
}

/// Parses and checks net text; with `input` also infers shapes.
pub fn validate_net(ws: Option<&Workspace>, text: &str, input: Option<Shape4>) -> Result<ValidateReport, ApiError> {
    let (net, warnings) = match parse_net_with_warnings(text) {
        Ok(ok) => ok,
        Err(errs) => {
            return Ok(ValidateReport {
                valid: false,
                net_id: None,
                diagnostics: errs.into_vec(),
                layers: Vec::new(),
                shape_report: None,
            })
        }
    };
    let layers = net
        .layers
        .iter()
        .map(|l| LayerInfo { name: l.name.clone(), kind: l.kind, color: color_class(l.kind) })
        .collect();
    let mut diagnostics = warnings;
    let mut shape_report = None;
    if let Some(input) = input {
        match infer_shapes(&net, input) {
            Ok(r) => shape_report = Some(r),
            Err(d) => diagnostics.push(d),
        }
    }
    let net_id = match ws {
        Some(ws) => Some(ws.put_net(&net)?),
        None => None,
    };
    Ok(ValidateReport {
        valid: !diagnostics.iter().any(Diagnostic::is_error),
        net_id,
        diagnostics,
        layers,
        shape_report,
    })
}

/// Completion candidates at a 1-based (line, column) cursor.
pub fn complete(text: &str, line: u32, column: u32) -> Vec<String> {
    completion_context(text, (line.max(1), column.max(1)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeployResult {
    pub net_id: String,
    pub text: String,
}

pub fn deploy(ws: &Workspace, net_id: &str) -> Result<DeployResult, ApiError> {
    let net = ws.net(net_id)?;
    let d = derive_deploy(&net).map_err(EngineError::from)?;
    Ok(DeployResult { net_id: ws.put_net(&d)?, text: serialize_net(&d) })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitResult {
    pub train: DatasetSummary,
    pub test: DatasetSummary,
}

pub fn split_dataset(ws: &Workspace, dataset_id: &str, spec: &SplitSpec) -> Result<SplitResult, ApiError> {
    let ds = ws.dataset(dataset_id)?;
    if ds.len() < 2 {
        return Err(ApiError::bad_request(format!("cannot split {} sample(s)", ds.len())));
    }
    let (tr, te) = split(&ds, spec)?;
    Ok(SplitResult { train: ws.put_dataset(&tr)?, test: ws.put_dataset(&te)? })
}

/// Grid image of one stored feature row.
pub fn grid(ws: &Workspace, features_id: &str, sample: usize) -> Result<Grid, ApiError> {
    let fs = ws.features(features_id)?;
    let row = fs.vectors.get(sample).ok_or_else(|| {
        ApiError::new(ErrorCode::NotFound, format!("sample {sample} out of range ({} samples)", fs.len()))
    })?;
    Ok(feature_grid(row, fs.blob_shape))
}
