//! Dataset import (image folders, CSV text), format plugins, train/test
//! splitting and export (libsvm sparse text, CSV).

mod dataset;
mod folder;
mod libsvm;
mod plugin;
mod split;
pub mod synthetic;
mod text;

use std::io;
use std::path::Path;

pub use dataset::{file_checksum, sorted_class_names, Dataset, DatasetSummary, Provenance, Sample};
pub use folder::{import_folder, import_folder_with};
pub use libsvm::{export_libsvm, format_libsvm_line, parse_libsvm_line, read_libsvm, write_libsvm};
pub use plugin::{FormatPlugin, FormatRegistry};
pub use split::{split, SplitSpec};
pub use text::{export_csv, import_text, parse_text, parse_text_with_classes, write_csv};

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("'{0}' contains no class directories")]
    EmptyRoot(String),
    #[error("class '{0}' has no samples")]
    EmptyClass(String),
    #[error("mixed sample shapes: (c,h,w) {first:?} vs {other:?} at {at}")]
    MixedShapes { first: [usize; 3], other: [usize; 3], at: String },
    #[error("cannot read '{path}': {reason}")]
    Unreadable { path: String, reason: String },
    #[error("row {row}: {message}")]
    Row { row: usize, message: String },
    #[error("format '{0}' is not built into this binary")]
    FormatNotBuilt(String),
    #[error("no format plugin recognizes '{0}'")]
    UnknownFormat(String),
    #[error("format tag '{0}' is already registered")]
    DuplicateFormat(String),
    #[error("split is infeasible: {0}")]
    SplitInfeasible(String),
    #[error("{0}")]
    Invalid(String),
    #[error("import cancelled")]
    Cancelled,
}

pub(crate) fn io_err(path: &Path) -> impl FnOnce(io::Error) -> DataError + '_ {
    move |source| DataError::Io { path: path.display().to_string(), source }
}
