use std::fs;
use std::path::{Path, PathBuf};

use image::{DynamicImage, ImageFormat};

use crate::tensor::Tensor;

use super::dataset::{file_checksum, Dataset, Provenance, Sample};
use super::{io_err, DataError};

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>, DataError> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .map(|e| e.map(|e| e.path()).map_err(io_err(dir)))
        .collect::<Result<_, _>>()?;
    out.retain(|p| !p.file_name().is_some_and(|n| n.to_string_lossy().starts_with('.')));
    out.sort();
    Ok(out)
}

fn is_png(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("png"))
}

/// Decodes an 8-bit gray or RGB PNG into a (1, c, h, w) tensor in [0, 1].
pub(crate) fn decode_png(bytes: &[u8], name: &str) -> Result<Tensor, DataError> {
    let unreadable = |reason: String| DataError::Unreadable { path: name.to_string(), reason };
    let img = image::load_from_memory_with_format(bytes, ImageFormat::Png).map_err(|e| unreadable(e.to_string()))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let (c, raw) = match img {
        DynamicImage::ImageLuma8(buf) => (1, buf.into_raw()),
        DynamicImage::ImageRgb8(buf) => (3, buf.into_raw()),
        other => {
            return Err(unreadable(format!("unsupported pixel format {:?} (need 8-bit gray or RGB)", other.color())))
        }
    };
    let mut data = vec![0.0; c * h * w];
    for (i, &px) in raw.iter().enumerate() {
        let (pixel, channel) = (i / c, i % c);
        data[channel * h * w + pixel] = f64::from(px) / 255.0;
    }
    Ok(Tensor::from_vec([1, c, h, w], data).expect("sized from image"))
}

/// One subdirectory per class (sorted names give label order), PNG files
/// inside, samples ordered by (class, filename).
pub fn import_folder(root: &Path) -> Result<Dataset, DataError> {
    import_folder_with(root, &mut |_, _| true)
}

/// [`import_folder`] calling `on_file(done, total)` before each file; a
/// `false` return abandons the import with [`DataError::Cancelled`].
pub fn import_folder_with(root: &Path, on_file: &mut dyn FnMut(usize, usize) -> bool) -> Result<Dataset, DataError> {
    let classes: Vec<PathBuf> = sorted_entries(root)?.into_iter().filter(|p| p.is_dir()).collect();
    if classes.is_empty() {
        return Err(DataError::EmptyRoot(root.display().to_string()));
    }
    let mut listing = Vec::new();
    for dir in &classes {
        let class = dir.file_name().expect("directory entry").to_string_lossy().into_owned();
        let files: Vec<PathBuf> = sorted_entries(dir)?.into_iter().filter(|p| p.is_file() && is_png(p)).collect();
        if files.is_empty() {
            return Err(DataError::EmptyClass(class));
        }
        listing.push((class, files));
    }
    let total = listing.iter().map(|(_, f)| f.len()).sum();
    let mut done = 0;
    let mut class_names = Vec::new();
    let mut samples = Vec::new();
    let mut hashed = Vec::new();
    let mut shape: Option<[usize; 3]> = None;
    for (label, (class, files)) in listing.into_iter().enumerate() {
        for file in files {
            if !on_file(done, total) {
                return Err(DataError::Cancelled);
            }
            let rel = format!("{class}/{}", file.file_name().expect("file entry").to_string_lossy());
            let bytes = fs::read(&file).map_err(io_err(&file))?;
            let image = decode_png(&bytes, &rel)?;
            let [_, c, h, w] = image.shape();
            match shape {
                None => shape = Some([c, h, w]),
                Some(first) if first != [c, h, w] => {
                    return Err(DataError::MixedShapes { first, other: [c, h, w], at: rel })
                }
                _ => {}
            }
            hashed.push((rel, bytes));
            samples.push(Sample { image, label });
            done += 1;
        }
        class_names.push(class);
    }
    let checksum = file_checksum(hashed);
    Dataset::new(
        samples,
        class_names,
        Provenance { path: root.display().to_string(), format: "folder".into() },
        Some(checksum),
    )
}
