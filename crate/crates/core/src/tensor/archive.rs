//! Zip archives of `.npy` members (the `.npz` convention).
//!
//! Archives are written uncompressed with a fixed timestamp so identical
//! contents always produce identical bytes. Stored and deflate members are
//! both accepted on read.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Cursor, Read, Write};
use std::path::Path;

use zip::write::SimpleFileOptions;
use zip::{CompressionMethod, DateTime, ZipArchive, ZipWriter};

use super::{npy, Tensor};
use crate::error::{Error, Result};

/// Tensors decoded from an archive, keyed by member name without `.npy`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TensorMap {
    tensors: BTreeMap<String, Tensor>,
}

impl TensorMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) {
        self.tensors.insert(name.into(), tensor);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    /// Returns the member or a [`Error::MissingMember`] naming it.
    pub fn require(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::MissingMember(name.to_string()))
    }

    pub fn take(&mut self, name: &str) -> Result<Tensor> {
        self.tensors
            .remove(name)
            .ok_or_else(|| Error::MissingMember(name.to_string()))
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }
}

/// Raw archive contents: decoded tensors plus any non-tensor members.
#[derive(Debug, Clone, Default)]
pub struct ArchiveContents {
    pub tensors: TensorMap,
    pub files: BTreeMap<String, Vec<u8>>,
}

/// Reads every `.npy` member of a zip archive.
pub fn read_archive(path: impl AsRef<Path>) -> Result<TensorMap> {
    Ok(read_archive_contents(path)?.tensors)
}

/// Reads an archive and checks that each of `required` is present.
pub fn read_archive_requiring(path: impl AsRef<Path>, required: &[&str]) -> Result<TensorMap> {
    let map = read_archive(path)?;
    for name in required {
        map.require(name)?;
    }
    Ok(map)
}

pub fn read_archive_contents(path: impl AsRef<Path>) -> Result<ArchiveContents> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_archive(&bytes)
}

pub fn decode_archive(bytes: &[u8]) -> Result<ArchiveContents> {
    let mut zip =
        ZipArchive::new(Cursor::new(bytes)).map_err(|e| Error::CorruptArchive(e.to_string()))?;
    let mut contents = ArchiveContents::default();
    for i in 0..zip.len() {
        let mut member = zip
            .by_index(i)
            .map_err(|e| Error::CorruptArchive(e.to_string()))?;
        if member.is_dir() {
            continue;
        }
        let name = member.name().to_string();
        let mut buf = Vec::with_capacity(member.size() as usize);
        member
            .read_to_end(&mut buf)
            .map_err(|e| Error::CorruptArchive(format!("member {name:?}: {e}")))?;
        match name.strip_suffix(".npy") {
            Some(stem) => {
                let tensor = npy::decode(&buf).map_err(|e| {
                    Error::CorruptArchive(format!("member {name:?}: {e}"))
                })?;
                contents.tensors.insert(stem, tensor);
            }
            None => {
                contents.files.insert(name, buf);
            }
        }
    }
    Ok(contents)
}

/// Writes tensors (as `<name>.npy`) followed by raw files into one archive.
pub fn write_archive(
    path: impl AsRef<Path>,
    tensors: &[(&str, &Tensor)],
    files: &[(&str, &[u8])],
) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_archive(tensors, files)?;
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn encode_archive(tensors: &[(&str, &Tensor)], files: &[(&str, &[u8])]) -> Result<Vec<u8>> {
    let options = SimpleFileOptions::default()
        .compression_method(CompressionMethod::Stored)
        .last_modified_time(DateTime::default())
        .unix_permissions(0o644);
    let mut zip = ZipWriter::new(Cursor::new(Vec::new()));
    let wrap = |e: zip::result::ZipError| Error::CorruptArchive(e.to_string());
    for (name, tensor) in tensors {
        zip.start_file(format!("{name}.npy"), options).map_err(wrap)?;
        zip.write_all(&npy::encode(tensor))
            .map_err(|e| Error::CorruptArchive(e.to_string()))?;
    }
    for (name, data) in files {
        zip.start_file(*name, options).map_err(wrap)?;
        zip.write_all(data)
            .map_err(|e| Error::CorruptArchive(e.to_string()))?;
    }
    Ok(zip.finish().map_err(wrap)?.into_inner())
}
