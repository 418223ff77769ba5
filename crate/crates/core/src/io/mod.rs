//! Tensor containers (NPY / NPZ), dataset manifests and atomic file output.

mod manifest;
mod npy;
mod npz;

use std::io::Write;
use std::path::Path;

pub use manifest::{DatasetManifest, ManifestEntry, Needs};
pub use npy::{read_header, read_tensor, read_tensor_bytes, write_tensor, DType, TensorData, TensorFile};
pub use npz::{read_archive, read_archive_bytes, read_archive_text, write_archive};

use crate::error::{Error, Result};

/// Writes `bytes` to a temp file beside `path`, then renames it into place.
/// A failure never leaves a partially written `path` behind.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.flush().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Serialises `value` as pretty JSON with a trailing newline.
pub fn to_json_bytes<T: serde::Serialize>(value: &T) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(value).expect("plain data serialises");
    out.push(b'\n');
    out
}
