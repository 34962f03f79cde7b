use std::fs;
use std::path::Path;

use super::dataset::{file_checksum, Dataset, Provenance, Sample};
use super::{folder, io_err, libsvm, text, DataError};
use crate::tensor::Tensor;

/// A dataset reader selectable by tag or by probing a path.
pub trait FormatPlugin: Send + Sync {
    fn tag(&self) -> &str;
    fn probe(&self, path: &Path) -> bool;
    fn read(&self, path: &Path) -> Result<Dataset, DataError>;

    /// [`read`](Self::read) with a per-file callback `(done, total)`;
    /// returning `false` cancels. Single-file formats call it once.
    fn read_with(&self, path: &Path, on_unit: &mut dyn FnMut(usize, usize) -> bool) -> Result<Dataset, DataError> {
        if !on_unit(0, 1) {
            return Err(DataError::Cancelled);
        }
        self.read(path)
    }
}

fn has_extension(path: &Path, exts: &[&str]) -> bool {
    path.extension().and_then(|e| e.to_str()).is_some_and(|e| exts.iter().any(|x| e.eq_ignore_ascii_case(x)))
}

struct FolderFormat;

impl FormatPlugin for FolderFormat {
    fn tag(&self) -> &str {
        "folder"
    }
    fn probe(&self, path: &Path) -> bool {
        path.is_dir()
    }
    fn read(&self, path: &Path) -> Result<Dataset, DataError> {
        folder::import_folder(path)
    }
    fn read_with(&self, path: &Path, on_unit: &mut dyn FnMut(usize, usize) -> bool) -> Result<Dataset, DataError> {
        folder::import_folder_with(path, on_unit)
    }
}

struct TextFormat;

impl FormatPlugin for TextFormat {
    fn tag(&self) -> &str {
        "text"
    }
    fn probe(&self, path: &Path) -> bool {
        path.is_file() && has_extension(path, &["csv", "txt"])
    }
    fn read(&self, path: &Path) -> Result<Dataset, DataError> {
        text::import_text(path)
    }
}

/// Labels in numeric order become class names; samples are (dim, 1, 1) vectors.
struct LibsvmFormat;

impl FormatPlugin for LibsvmFormat {
    fn tag(&self) -> &str {
        "libsvm"
    }
    fn probe(&self, path: &Path) -> bool {
        path.is_file() && has_extension(path, &["libsvm", "svm", "svmlight"])
    }
    fn read(&self, path: &Path) -> Result<Dataset, DataError> {
        let bytes = fs::read(path).map_err(io_err(path))?;
        let content = String::from_utf8_lossy(&bytes);
        let rows = libsvm::read_libsvm(&content, None)?;
        let mut numeric: Vec<i64> = rows.iter().map(|r| r.0).collect();
        numeric.sort_unstable();
        numeric.dedup();
        let class_names: Vec<String> = numeric.iter().map(i64::to_string).collect();
        let dim = rows.first().map_or(0, |r| r.1.len());
        let samples = rows
            .into_iter()
            .map(|(label, dense)| Sample {
                image: Tensor::from_vec([1, dim, 1, 1], dense).expect("dense row"),
                label: class_names.iter().position(|n| *n == label.to_string()).expect("label in table"),
            })
            .collect();
        let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        Dataset::new(
            samples,
            class_names,
            Provenance { path: path.display().to_string(), format: "libsvm".into() },
            Some(file_checksum(vec![(name, bytes)])),
        )
    }
}

/// Generated data addressed as `synthetic:blobs:<n>:<size>:<seed>`.
struct SyntheticFormat;

impl FormatPlugin for SyntheticFormat {
    fn tag(&self) -> &str {
        "synthetic"
    }
    fn probe(&self, path: &Path) -> bool {
        path.to_str().is_some_and(|p| p.starts_with("synthetic:"))
    }
    fn read(&self, path: &Path) -> Result<Dataset, DataError> {
        let text = path.to_string_lossy();
        let bad = || DataError::Invalid(format!("expected synthetic:blobs:<n>:<size>:<seed>, got '{text}'"));
        let parts: Vec<&str> = text.split(':').collect();
        let [_, "blobs", n, size, seed] = parts.as_slice() else { return Err(bad()) };
        let (n, size, seed) =
            (n.parse().map_err(|_| bad())?, size.parse().map_err(|_| bad())?, seed.parse().map_err(|_| bad())?);
        if !(6..=256).contains(&size) || n == 0 {
            return Err(DataError::Invalid(format!("blobs need n ≥ 1 and 6 ≤ size ≤ 256, got n={n} size={size}")));
        }
        Ok(super::synthetic::blobs(n, size, seed))
    }
}

/// Placeholder for a recognized format whose reader is not compiled in.
struct NotBuilt {
    tag: &'static str,
    detect: fn(&Path) -> bool,
}

impl FormatPlugin for NotBuilt {
    fn tag(&self) -> &str {
        self.tag
    }
    fn probe(&self, path: &Path) -> bool {
        (self.detect)(path)
    }
    fn read(&self, _path: &Path) -> Result<Dataset, DataError> {
        Err(DataError::FormatNotBuilt(self.tag.to_string()))
    }
}

fn looks_like_leveldb(path: &Path) -> bool {
    path.is_dir() && path.join("CURRENT").is_file() && path.join("LOCK").exists()
}

/// Ordered set of plugins with unique tags. Detection tries plugins in
/// registration order.
pub struct FormatRegistry {
    plugins: Vec<Box<dyn FormatPlugin>>,
}

impl Default for FormatRegistry {
    fn default() -> Self {
        let mut r = FormatRegistry::empty();
        let builtin: Vec<Box<dyn FormatPlugin>> = vec![
            Box::new(NotBuilt { tag: "leveldb", detect: looks_like_leveldb }),
            Box::new(FolderFormat),
            Box::new(TextFormat),
            Box::new(LibsvmFormat),
            Box::new(SyntheticFormat),
            Box::new(NotBuilt { tag: "mat", detect: |p| has_extension(p, &["mat"]) }),
            Box::new(NotBuilt { tag: "hdf5", detect: |p| has_extension(p, &["h5", "hdf5"]) }),
        ];
        for p in builtin {
            r.register(p).expect("builtin tags are unique");
        }
        r
    }
}

impl FormatRegistry {
    pub fn empty() -> Self {
        FormatRegistry { plugins: Vec::new() }
    }

    pub fn register(&mut self, plugin: Box<dyn FormatPlugin>) -> Result<(), DataError> {
        if self.get(plugin.tag()).is_some() {
            return Err(DataError::DuplicateFormat(plugin.tag().to_string()));
        }
        self.plugins.push(plugin);
        Ok(())
    }

    pub fn get(&self, tag: &str) -> Option<&dyn FormatPlugin> {
        self.plugins.iter().find(|p| p.tag() == tag).map(|p| p.as_ref())
    }

    pub fn tags(&self) -> Vec<&str> {
        self.plugins.iter().map(|p| p.tag()).collect()
    }

    pub fn detect(&self, path: &Path) -> Option<&dyn FormatPlugin> {
        self.plugins.iter().find(|p| p.probe(path)).map(|p| p.as_ref())
    }

    /// The plugin for `tag`, or the first that probes `path`.
    pub fn resolve(&self, path: &Path, tag: Option<&str>) -> Result<&dyn FormatPlugin, DataError> {
        match tag {
            Some(t) => self.get(t).ok_or_else(|| DataError::UnknownFormat(t.to_string())),
            None => self.detect(path).ok_or_else(|| DataError::UnknownFormat(path.display().to_string())),
        }
    }

    pub fn import(&self, path: &Path, tag: Option<&str>) -> Result<Dataset, DataError> {
        self.resolve(path, tag)?.read(path)
    }
}
