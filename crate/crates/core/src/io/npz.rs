//! NPZ archives: zip containers of `.npy` members.

use std::collections::BTreeMap;
use std::io::{Cursor, Read, Write};
use std::path::Path;

use zip::write::SimpleFileOptions;
use zip::{CompressionMethod, DateTime, ZipArchive, ZipWriter};

use super::npy::{read_tensor_bytes, TensorFile};
use crate::error::{Error, Result};

fn open(bytes: &[u8]) -> Result<ZipArchive<Cursor<&[u8]>>> {
    ZipArchive::new(Cursor::new(bytes)).map_err(|e| Error::parse(format!("corrupt archive: {e}")))
}

/// Parses every `.npy` member; keys are member names without the extension.
/// Members with other extensions are skipped.
pub fn read_archive_bytes(bytes: &[u8]) -> Result<BTreeMap<String, TensorFile>> {
    let mut zip = open(bytes)?;
    let mut out = BTreeMap::new();
    for i in 0..zip.len() {
        let mut member = zip
            .by_index(i)
            .map_err(|e| Error::parse(format!("corrupt archive member {i}: {e}")))?;
        if member.is_dir() {
            continue;
        }
        let name = member.name().to_string();
        let Some(stem) = name.strip_suffix(".npy") else {
            continue;
        };
        let mut buf = Vec::with_capacity(member.size() as usize);
        member.read_to_end(&mut buf).map_err(|e| Error::Member {
            member: stem.to_string(),
            source: Box::new(Error::parse(format!("cannot inflate: {e}"))),
        })?;
        let tensor = read_tensor_bytes(&buf).map_err(|e| Error::Member {
            member: stem.to_string(),
            source: Box::new(e),
        })?;
        out.insert(stem.to_string(), tensor);
    }
    Ok(out)
}

pub fn read_archive(path: &Path) -> Result<BTreeMap<String, TensorFile>> {
    read_archive_bytes(&super::read_file(path)?)
}

/// Returns the raw contents of a non-tensor member, if present.
pub fn read_archive_text(bytes: &[u8], member: &str) -> Result<Option<String>> {
    let mut zip = open(bytes)?;
    let mut file = match zip.by_name(member) {
        Ok(f) => f,
        Err(zip::result::ZipError::FileNotFound) => return Ok(None),
        Err(e) => return Err(Error::parse(format!("corrupt archive: {e}"))),
    };
    let mut s = String::new();
    file.read_to_string(&mut s).map_err(|e| Error::Member {
        member: member.to_string(),
        source: Box::new(Error::parse(e.to_string())),
    })?;
    Ok(Some(s))
}

/// Builds an archive with stored (uncompressed) members and fixed timestamps,
/// so identical inputs always produce identical bytes.
pub fn write_archive(tensors: &[(&str, &TensorFile)], extras: &[(&str, &[u8])]) -> Result<Vec<u8>> {
    let opts = SimpleFileOptions::default()
        .compression_method(CompressionMethod::Stored)
        .last_modified_time(DateTime::default());
    let mut zip = ZipWriter::new(Cursor::new(Vec::new()));
    let zip_err = |e: zip::result::ZipError| Error::parse(format!("archive write failed: {e}"));
    for (name, t) in tensors {
        zip.start_file(format!("{name}.npy"), opts).map_err(zip_err)?;
        zip.write_all(&t.to_bytes())
            .map_err(|e| Error::parse(format!("archive write failed: {e}")))?;
    }
    for (name, bytes) in extras {
        zip.start_file(*name, opts).map_err(zip_err)?;
        zip.write_all(bytes)
            .map_err(|e| Error::parse(format!("archive write failed: {e}")))?;
    }
    Ok(zip.finish().map_err(zip_err)?.into_inner())
}
