//! Readers and writers for every on-disk artifact.
//!
//! Each format has a pure byte-level codec (`encode_*` / `decode_*`) plus a
//! thin path-based wrapper. All writers go through [`write_atomic`] so an
//! interrupted run never leaves a truncated file behind.

mod calib;
mod class_map;
mod cloud_bin;
mod labels;
mod tables;
mod tensor;

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

pub use calib::{decode_calib, encode_calib, read_calib, write_calib};
pub use class_map::{read_class_map, read_label_remap, ClassMap, LabelRemap};
pub use cloud_bin::{decode_cloud, encode_cloud, read_cloud_bin, write_cloud_bin, CLOUD_RECORD_BYTES};
pub use labels::{
    decode_label_words, encode_labels, read_labels, read_labels_raw, write_labels, RawLabels, LABEL_RECORD_BYTES,
};
pub use tables::{
    decode_histogram, decode_thresholds, encode_histogram, encode_thresholds, read_histogram, read_thresholds,
};
pub use tensor::{decode_tensor, encode_tensor, read_tensor, write_tensor, TensorData, TensorFile, DTYPE_F32, DTYPE_U8, PTNS_MAGIC, PTNS_VERSION};

pub use crate::config::read_config;

/// Reads a whole file, attaching the path to any I/O error.
pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Writes `bytes` to a temporary file next to `path`, then renames it over
/// `path`. Parent directories are created as needed.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let parent = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(parent).map_err(|e| Error::io(parent, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(tmp.path(), e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(tmp.path(), e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}
