//! Command-line front end. Subcommands call the same job functions as the
//! HTTP routes and print their results, as JSON with `--json`.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use cnnlab_core::datastore::SplitSpec;
use cnnlab_core::experiment::LinearParams;
use cnnlab_core::jobs::{self, ApiError, ClassifierSpec, ErrorCode, JobResult, JobSpec};
use cnnlab_core::shapecheck::Shape4;
use cnnlab_core::taskhub::{Detached, Hub, HubConfig};
use cnnlab_core::workspace::Workspace;

use crate::http::{serve, AppState};

/// Environment variable naming the workspace directory.
pub const WORKSPACE_ENV: &str = "CNNLAB_WORKSPACE";
pub const DEFAULT_WORKSPACE: &str = "cnnlab-workspace";

#[derive(Parser, Debug)]
#[command(name = "cnnlab", version, about = "Design, train and probe small convolutional nets")]
#[command(arg_required_else_help = true)]
pub struct Cli {
    /// Workspace directory holding datasets, nets, models and tasks.
    #[arg(long, global = true, env = WORKSPACE_ENV, default_value = DEFAULT_WORKSPACE)]
    pub workspace: PathBuf,
    /// Print machine-readable JSON (errors go to stderr as JSON too).
    #[arg(long, global = true)]
    pub json: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Import a dataset (image folder, CSV, libsvm, or synthetic:blobs:<n>:<size>:<seed>).
    Import {
        path: String,
        /// Format tag; detected from the path when omitted.
        #[arg(long)]
        format: Option<String>,
    },
    /// Split a stored dataset into train and test parts.
    Split {
        dataset: String,
        #[arg(long, default_value_t = 0.8)]
        fraction: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        stratified: bool,
    },
    /// Check a net file and, given an input shape, infer blob shapes.
    Validate {
        net: PathBuf,
        /// Input shape as n,c,h,w.
        #[arg(long, value_parser = parse_shape)]
        input: Option<Shape4>,
    },
    /// Train a net on a stored dataset (or a path, imported first).
    Train {
        #[arg(long)]
        net: PathBuf,
        #[arg(long)]
        solver: Option<PathBuf>,
        #[arg(long)]
        dataset: String,
    },
    /// Store activations of chosen blobs for every sample.
    Extract {
        #[arg(long)]
        model: String,
        #[arg(long)]
        dataset: String,
        /// Blob to tap; repeat for several.
        #[arg(long = "layer", required = true)]
        layers: Vec<String>,
    },
    /// Score a model on a dataset, by its own output or a linear SVM.
    Test {
        #[arg(long)]
        model: String,
        #[arg(long)]
        dataset: String,
        #[command(flatten)]
        svm: SvmArgs,
    },
    /// Write stored features as a libsvm file.
    Export {
        features: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the HTTP service.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        bind: String,
        /// Worker threads for tasks (default: cores − 1, at least 1).
        #[arg(long)]
        workers: Option<usize>,
    },
}

#[derive(Args, Debug)]
pub struct SvmArgs {
    /// Fit a linear SVM on this blob instead of using the net's output.
    #[arg(long = "svm-layer")]
    pub layer: Option<String>,
    /// Dataset the SVM is fitted on.
    #[arg(long = "svm-train", requires = "layer")]
    pub train: Option<String>,
    #[arg(long = "svm-c", default_value_t = 1.0)]
    pub c: f64,
    #[arg(long = "svm-epochs", default_value_t = 50)]
    pub epochs: u64,
    #[arg(long = "svm-seed", default_value_t = 0)]
    pub seed: u64,
}

fn parse_shape(s: &str) -> Result<Shape4, String> {
    let dims: Vec<usize> = s
        .split(',')
        .map(|d| d.trim().parse::<usize>().map_err(|_| format!("'{d}' is not a dimension")))
        .collect::<Result<_, _>>()?;
    <[usize; 4]>::try_from(dims).map_err(|_| "expected four dimensions n,c,h,w".to_string())
}

struct Io<'a> {
    out: &'a mut dyn Write,
    err: &'a mut dyn Write,
    json: bool,
}

impl Io<'_> {
    fn emit(&mut self, value: &Value, human: impl FnOnce(&Value) -> String) {
        let text = if self.json { serde_json::to_string_pretty(value).expect("json") } else { human(value) };
        let _ = writeln!(self.out, "{text}");
    }

    fn fail(&mut self, e: &ApiError) -> i32 {
        if self.json {
            let _ = writeln!(self.err, "{}", serde_json::to_string(e).expect("json"));
        } else {
            let _ = writeln!(self.err, "error: {}", e.message);
            if let Some(diags) = e.details.as_ref().and_then(|d| d["diagnostics"].as_array()) {
                for d in diags {
                    let _ = writeln!(
                        self.err,
                        "  {}:{}: {}",
                        d["span"]["start"]["line"],
                        d["span"]["start"]["column"],
                        d["message"].as_str().unwrap_or("")
                    );
                }
            }
        }
        1
    }
}

/// Parses `args` and runs the command, returning the exit code: 0 on
/// success, 1 on a domain error, 2 on a usage error.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let rendered = e.render().to_string();
            if e.use_stderr() {
                let _ = write!(err, "{rendered}");
            } else {
                let _ = write!(out, "{rendered}");
            }
            return code;
        }
    };
    let mut io = Io { out, err, json: cli.json };
    match dispatch(cli, &mut io) {
        Ok(()) => 0,
        Err(e) => io.fail(&e),
    }
}

fn read_file(path: &Path, what: &str) -> Result<String, ApiError> {
    fs::read_to_string(path)
        .map_err(|e| ApiError::bad_request(format!("cannot read {what} file '{}': {e}", path.display())))
}

fn open_workspace(path: &Path) -> Result<Workspace, ApiError> {
    Ok(Workspace::open(path)?)
}

fn finished(r: JobResult) -> Result<Value, ApiError> {
    match r {
        JobResult::Done(v) => Ok(v),
        JobResult::Stopped(_) => Err(ApiError::new(ErrorCode::Internal, "job stopped")),
    }
}

/// A dataset argument: a stored id, or anything importable.
fn resolve_dataset(ws: &Workspace, arg: &str) -> Result<String, ApiError> {
    if ws.dataset_summary(arg).is_ok() {
        return Ok(arg.to_string());
    }
    let v = finished(jobs::execute(ws, JobSpec::Import { path: arg.to_string(), format: None }, &Detached::silent())?)?;
    Ok(v["dataset_id"].as_str().expect("import yields an id").to_string())
}

fn dataset_line(d: &Value) -> String {
    let classes: Vec<&str> = d["class_names"].as_array().into_iter().flatten().filter_map(Value::as_str).collect();
    format!(
        "dataset {}: {} samples, shape {}, classes [{}]",
        d["id"].as_str().unwrap_or("?"),
        d["samples"],
        d["sample_shape"],
        classes.join(", ")
    )
}

fn metrics_text(v: &Value) -> String {
    let m = &v["metrics"];
    let mut s = format!("accuracy {} ({} of {})", m["global_accuracy"], m["correct"], m["total"]);
    let k = m["num_classes"].as_u64().unwrap_or(0) as usize;
    let cells: Vec<u64> = m["confusion"].as_array().into_iter().flatten().filter_map(Value::as_u64).collect();
    for (i, row) in cells.chunks(k.max(1)).enumerate() {
        let name = v["class_names"][i].as_str().unwrap_or("?");
        let accuracy = &m["per_class_accuracy"][i];
        s.push_str(&format!("\n  {name:>12}: {row:?}  accuracy {accuracy}"));
    }
    s
}

fn dispatch(cli: Cli, io: &mut Io<'_>) -> Result<(), ApiError> {
    match cli.command {
        Command::Import { path, format } => {
            let ws = open_workspace(&cli.workspace)?;
            let v = finished(jobs::execute(&ws, JobSpec::Import { path, format }, &Detached::silent())?)?;
            io.emit(&v, |v| dataset_line(&v["dataset"]));
        }
        Command::Split { dataset, fraction, seed, stratified } => {
            let ws = open_workspace(&cli.workspace)?;
            let r = jobs::split_dataset(&ws, &dataset, &SplitSpec { train_fraction: fraction, seed, stratified })?;
            let v = json!(r);
            io.emit(&v, |v| format!("train {}\ntest  {}", dataset_line(&v["train"]), dataset_line(&v["test"])));
        }
        Command::Validate { net, input } => {
            let ws = open_workspace(&cli.workspace)?;
            let text = read_file(&net, "net")?;
            let report = jobs::validate_net(Some(&ws), &text, input)?;
            let invalid = || {
                ApiError::bad_request(format!("net '{}' is invalid", net.display()))
                    .with_details(json!({ "diagnostics": report.diagnostics }))
            };
            if !report.valid && !io.json {
                return Err(invalid());
            }
            let v = json!(report);
            io.emit(&v, |_| {
                let mut s = String::new();
                match &report.shape_report {
                    Some(r) => {
                        for l in &r.layers {
                            s.push_str(&format!("{:<12} {:<16} {:?}\n", l.name, l.kind.as_str(), l.tops));
                        }
                        s.push_str(&format!("{} learnable parameters", r.total_params()));
                    }
                    None => s.push_str(&format!("ok: {} layers", report.layers.len())),
                }
                s
            });
            if !report.valid {
                return Err(invalid());
            }
        }
        Command::Train { net, solver, dataset } => {
            let ws = open_workspace(&cli.workspace)?;
            let net_text = read_file(&net, "net")?;
            let solver_text = solver.as_deref().map(|p| read_file(p, "solver")).transpose()?;
            let dataset_id = resolve_dataset(&ws, &dataset)?;
            let spec = JobSpec::Train { net_id: None, net_text: Some(net_text), solver: None, solver_text, dataset_id };
            let quiet = io.json;
            let progress = Detached(move |_: f64, eta: Option<f64>, d: &Value| {
                if !quiet && d.get("epoch").is_some() && d.get("loss").is_some() {
                    eprintln!(
                        "epoch {}  loss {:.6}  accuracy {:.4}  eta {:.1}s",
                        d["epoch"],
                        d["loss"].as_f64().unwrap_or(f64::NAN),
                        d["accuracy"].as_f64().unwrap_or(f64::NAN),
                        eta.unwrap_or(0.0)
                    );
                }
            });
            let v = finished(jobs::execute(&ws, spec, &progress)?)?;
            io.emit(&v, |v| {
                format!(
                    "model {}: {} epochs, final loss {}, training accuracy {}",
                    v["model_id"].as_str().unwrap_or("?"),
                    v["epochs_completed"],
                    v["final_loss"],
                    v["train_accuracy"]
                )
            });
        }
        Command::Extract { model, dataset, layers } => {
            let ws = open_workspace(&cli.workspace)?;
            let dataset_id = resolve_dataset(&ws, &dataset)?;
            let v = finished(jobs::execute(
                &ws,
                JobSpec::Extract { model_id: model, dataset_id, layers },
                &Detached::silent(),
            )?)?;
            io.emit(&v, |v| {
                v["features"]
                    .as_array()
                    .into_iter()
                    .flatten()
                    .map(|f| {
                        format!(
                            "features {}: blob {} shape {} × {} samples",
                            f["id"].as_str().unwrap_or("?"),
                            f["layer_name"],
                            f["blob_shape"],
                            f["samples"]
                        )
                    })
                    .collect::<Vec<_>>()
                    .join("\n")
            });
        }
        Command::Test { model, dataset, svm } => {
            let ws = open_workspace(&cli.workspace)?;
            let dataset_id = resolve_dataset(&ws, &dataset)?;
            let classifier = match (svm.layer, svm.train) {
                (None, _) => None,
                (Some(layer), Some(train)) => Some(ClassifierSpec {
                    layer,
                    train_dataset_id: resolve_dataset(&ws, &train)?,
                    params: LinearParams { c: svm.c, epochs: svm.epochs, seed: svm.seed },
                }),
                (Some(_), None) => return Err(ApiError::bad_request("--svm-layer needs --svm-train")),
            };
            let v = finished(jobs::execute(
                &ws,
                JobSpec::Test { model_id: model, dataset_id, classifier },
                &Detached::silent(),
            )?)?;
            io.emit(&v, metrics_text);
        }
        Command::Export { features, out } => {
            let ws = open_workspace(&cli.workspace)?;
            let path = out.to_string_lossy().into_owned();
            let v =
                finished(jobs::execute(&ws, JobSpec::Export { features_id: features, path }, &Detached::silent())?)?;
            io.emit(&v, |v| format!("wrote {} bytes to {}", v["bytes"], out.display()));
        }
        Command::Serve { bind, workers } => {
            let ws = Arc::new(open_workspace(&cli.workspace)?);
            let mut config = HubConfig { store: Some(ws.tasks_dir()), ..HubConfig::default() };
            if let Some(w) = workers {
                config.workers = w.max(1);
            }
            let hub = Arc::new(Hub::open(config).map_err(|e| ApiError::new(ErrorCode::Internal, e.to_string()))?);
            let runtime =
                tokio::runtime::Runtime::new().map_err(|e| ApiError::new(ErrorCode::Internal, e.to_string()))?;
            runtime
                .block_on(serve(AppState { ws, hub }, &bind))
                .map_err(|e| ApiError::new(ErrorCode::Internal, format!("cannot serve on {bind}: {e}")))?;
        }
    }
    Ok(())
}
