//! On-disk artifact store. Datasets, nets, models and feature sets are
//! addressed by content-derived ids, so storing the same thing twice
//! yields the same id.
//!
//! Layout under the root:
//!
//! ```text
//! datasets/<id>.json  <id>.csv
//! nets/<id>.prototxt
//! models/<id>.model   <id>.json
//! features/<id>.json  <id>.libsvm
//! tasks/<task id>.json
//! ```

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{de::DeserializeOwned, Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::datastore::{parse_text_with_classes, write_csv, write_libsvm, DataError, Dataset, DatasetSummary};
use crate::engine::{load_model, save_model, EngineError, TrainedModel, TrainingMeta};
use crate::experiment::{model_checksum, FeatureSet};
use crate::netspec::{parse_net, serialize_net, NetSpec};
use crate::shapecheck::Shape4;

/// Version of the JSON sidecar layouts.
pub const ARTIFACT_SCHEMA_VERSION: u32 = 1;

const ID_LEN: usize = 16;

#[derive(Debug, thiserror::Error)]
pub enum WorkspaceError {
    #[error("{kind} '{id}' not found")]
    NotFound { kind: &'static str, id: String },
    #[error("{path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("corrupt artifact {path}: {message}")]
    Corrupt { path: String, message: String },
}

fn short_hash(bytes: &[u8]) -> String {
    let mut s = hex::encode(Sha256::digest(bytes));
    s.truncate(ID_LEN);
    s
}

/// Overview of a stored model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub id: String,
    pub net_name: String,
    pub input_chw: [usize; 3],
    pub meta: TrainingMeta,
    pub blob_shapes: Vec<(String, Shape4)>,
    pub checksum: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSummary {
    pub id: String,
    pub layer_name: String,
    pub blob_shape: [usize; 3],
    pub samples: usize,
    pub class_names: Vec<String>,
    pub model_checksum: String,
    pub dataset_checksum: String,
}

#[derive(Serialize, Deserialize)]
struct Sidecar<T> {
    schema_version: u32,
    #[serde(flatten)]
    body: T,
}

pub struct Workspace {
    root: PathBuf,
}

impl Workspace {
    pub const DIRS: [&'static str; 5] = ["datasets", "nets", "models", "features", "tasks"];

    pub fn open(root: impl Into<PathBuf>) -> Result<Workspace, WorkspaceError> {
        let root = root.into();
        for d in Self::DIRS {
            let p = root.join(d);
            fs::create_dir_all(&p).map_err(io_at(&p))?;
        }
        Ok(Workspace { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn tasks_dir(&self) -> PathBuf {
        self.root.join("tasks")
    }

    fn path(&self, dir: &str, id: &str, ext: &str) -> PathBuf {
        self.root.join(dir).join(format!("{id}.{ext}"))
    }

    fn existing(&self, kind: &'static str, dir: &str, id: &str, ext: &str) -> Result<PathBuf, WorkspaceError> {
        // Ids are hex; anything else cannot name an artifact.
        let p = self.path(dir, id, ext);
        if id.is_empty() || !id.bytes().all(|b| b.is_ascii_hexdigit()) || !p.is_file() {
            return Err(WorkspaceError::NotFound { kind, id: id.to_string() });
        }
        Ok(p)
    }

    pub fn put_dataset(&self, dataset: &Dataset) -> Result<DatasetSummary, WorkspaceError> {
        let summary = dataset.summary();
        write_atomic(&self.path("datasets", &summary.id, "csv"), write_csv(dataset).as_bytes())?;
        write_json(&self.path("datasets", &summary.id, "json"), &summary)?;
        Ok(summary)
    }

    pub fn dataset_summary(&self, id: &str) -> Result<DatasetSummary, WorkspaceError> {
        read_json(&self.existing("dataset", "datasets", id, "json")?)
    }

    pub fn dataset(&self, id: &str) -> Result<Dataset, WorkspaceError> {
        let summary = self.dataset_summary(id)?;
        let path = self.existing("dataset", "datasets", id, "csv")?;
        let text = fs::read_to_string(&path).map_err(io_at(&path))?;
        parse_text_with_classes(&text, summary.provenance, summary.class_names, Some(summary.checksum))
            .map_err(|e: DataError| corrupt(&path, e))
    }

    pub fn datasets(&self) -> Result<Vec<DatasetSummary>, WorkspaceError> {
        self.list("datasets", "json", |id| self.dataset_summary(id))
    }

    /// Stores the canonical text of `net`; the id hashes that text.
    pub fn put_net(&self, net: &NetSpec) -> Result<String, WorkspaceError> {
        let text = serialize_net(net);
        let id = short_hash(text.as_bytes());
        write_atomic(&self.path("nets", &id, "prototxt"), text.as_bytes())?;
        Ok(id)
    }

    pub fn net(&self, id: &str) -> Result<NetSpec, WorkspaceError> {
        let path = self.existing("net", "nets", id, "prototxt")?;
        let text = fs::read_to_string(&path).map_err(io_at(&path))?;
        parse_net(&text).map_err(|e| corrupt(&path, e))
    }

    pub fn put_model(&self, model: &TrainedModel) -> Result<ModelSummary, WorkspaceError> {
        let bytes = save_model(model);
        let checksum = hex::encode(Sha256::digest(&bytes));
        let id = checksum[..ID_LEN].to_string();
        let net = model.network().map_err(|e| corrupt(Path::new(&id), e))?;
        let summary = ModelSummary {
            id: id.clone(),
            net_name: model.spec.name.clone(),
            input_chw: model.input_chw,
            meta: model.meta.clone(),
            blob_shapes: net.shape_report().blob_shapes.iter().map(|(k, v)| (k.clone(), *v)).collect(),
            checksum,
        };
        write_atomic(&self.path("models", &id, "model"), &bytes)?;
        write_json(&self.path("models", &id, "json"), &summary)?;
        Ok(summary)
    }

    pub fn model_summary(&self, id: &str) -> Result<ModelSummary, WorkspaceError> {
        read_json(&self.existing("model", "models", id, "json")?)
    }

    pub fn model(&self, id: &str) -> Result<TrainedModel, WorkspaceError> {
        let path = self.existing("model", "models", id, "model")?;
        let bytes = fs::read(&path).map_err(io_at(&path))?;
        load_model(&bytes).map_err(|e: EngineError| corrupt(&path, e))
    }

    pub fn models(&self) -> Result<Vec<ModelSummary>, WorkspaceError> {
        self.list("models", "json", |id| self.model_summary(id))
    }

    /// Stores the feature set as JSON plus a libsvm export next to it.
    pub fn put_features(&self, fs_: &FeatureSet) -> Result<FeatureSummary, WorkspaceError> {
        let key = format!("{}\n{}\n{}", fs_.model_checksum, fs_.dataset_checksum, fs_.layer_name);
        let id = short_hash(key.as_bytes());
        let summary = FeatureSummary {
            id: id.clone(),
            layer_name: fs_.layer_name.clone(),
            blob_shape: fs_.blob_shape,
            samples: fs_.len(),
            class_names: fs_.class_names.clone(),
            model_checksum: fs_.model_checksum.clone(),
            dataset_checksum: fs_.dataset_checksum.clone(),
        };
        let libsvm_path = self.path("features", &id, "libsvm");
        let text = write_libsvm(&fs_.libsvm_rows()).map_err(|e| corrupt(&libsvm_path, e))?;
        write_atomic(&libsvm_path, text.as_bytes())?;
        write_json(&self.path("features", &id, "json"), fs_)?;
        Ok(summary)
    }

    pub fn features(&self, id: &str) -> Result<FeatureSet, WorkspaceError> {
        read_json(&self.existing("feature set", "features", id, "json")?)
    }

    pub fn features_libsvm_path(&self, id: &str) -> Result<PathBuf, WorkspaceError> {
        self.existing("feature set", "features", id, "libsvm")
    }

    fn list<T>(
        &self,
        dir: &str,
        ext: &str,
        load: impl Fn(&str) -> Result<T, WorkspaceError>,
    ) -> Result<Vec<T>, WorkspaceError> {
        let d = self.root.join(dir);
        let mut ids: Vec<String> = fs::read_dir(&d)
            .map_err(io_at(&d))?
            .filter_map(|e| e.ok())
            .filter_map(|e| {
                let p = e.path();
                if p.extension()? != ext {
                    return None;
                }
                Some(p.file_stem()?.to_string_lossy().into_owned())
            })
            .collect();
        ids.sort();
        ids.iter().map(|id| load(id)).collect()
    }
}

/// Checksum of a model as used in feature-set provenance.
pub fn model_id(model: &TrainedModel) -> String {
    model_checksum(model)[..ID_LEN].to_string()
}

fn io_at(path: &Path) -> impl FnOnce(io::Error) -> WorkspaceError + '_ {
    move |source| WorkspaceError::Io { path: path.display().to_string(), source }
}

fn corrupt(path: &Path, e: impl std::fmt::Display) -> WorkspaceError {
    WorkspaceError::Corrupt { path: path.display().to_string(), message: e.to_string() }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), WorkspaceError> {
    let tmp = path.with_extension(format!("tmp{}", std::process::id()));
    fs::write(&tmp, bytes).and_then(|_| fs::rename(&tmp, path)).map_err(io_at(path))
}

fn write_json<T: Serialize>(path: &Path, body: &T) -> Result<(), WorkspaceError> {
    let doc = Sidecar { schema_version: ARTIFACT_SCHEMA_VERSION, body };
    write_atomic(path, &serde_json::to_vec_pretty(&doc).expect("artifact serializes"))
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, WorkspaceError> {
    let bytes = fs::read(path).map_err(io_at(path))?;
    let doc: Sidecar<T> = serde_json::from_slice(&bytes).map_err(|e| corrupt(path, e))?;
    if doc.schema_version != ARTIFACT_SCHEMA_VERSION {
        return Err(corrupt(path, format!("unsupported schema_version {}", doc.schema_version)));
    }
    Ok(doc.body)
}
