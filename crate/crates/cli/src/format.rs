//! On-disk artifacts: a JSON manifest `<name>.json` plus one raw
//! little-endian blob per array, `<name>.<blob>.bin`. Blobs are checked
//! against the length and SHA-256 recorded in the manifest when loaded.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

pub const FORMAT: &str = "hcnn-artifact";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    F64,
    I64,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Blob {
    F64 { shape: Vec<usize>, data: Vec<f64> },
    I64 { shape: Vec<usize>, data: Vec<i64> },
}

impl Blob {
    pub fn f64(shape: &[usize], data: Vec<f64>) -> Blob {
        Blob::F64 { shape: shape.to_vec(), data }
    }

    pub fn i64(shape: &[usize], data: Vec<i64>) -> Blob {
        Blob::I64 { shape: shape.to_vec(), data }
    }

    fn parts(&self) -> (Dtype, &[usize], usize, Vec<u8>) {
        match self {
            Blob::F64 { shape, data } => {
                (Dtype::F64, shape, data.len(), data.iter().flat_map(|v| v.to_le_bytes()).collect())
            }
            Blob::I64 { shape, data } => {
                (Dtype::I64, shape, data.len(), data.iter().flat_map(|v| v.to_le_bytes()).collect())
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlobEntry {
    pub name: String,
    pub file: String,
    pub dtype: Dtype,
    pub shape: Vec<usize>,
    pub len: usize,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArtifactManifest {
    pub format: String,
    pub version: u32,
    pub kind: String,
    pub meta: Value,
    pub blobs: Vec<BlobEntry>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn file_sha256(path: &Path) -> CliResult<String> {
    Ok(sha256_hex(&read(path)?))
}

fn read(path: &Path) -> CliResult<Vec<u8>> {
    fs::read(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

/// Writes `bytes` to a temporary file next to `path`, then renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| CliError::Io(format!("{}: {}", path.display(), e.error)))?;
    Ok(())
}

pub fn manifest_path(dir: &Path, name: &str) -> PathBuf {
    dir.join(format!("{name}.json"))
}

/// Writes every blob, then the manifest, and returns the files written.
pub fn write_artifact(dir: &Path, name: &str, kind: &str, meta: Value, blobs: &[(&str, Blob)]) -> CliResult<Vec<PathBuf>> {
    let mut entries = Vec::with_capacity(blobs.len());
    let mut files = Vec::with_capacity(blobs.len() + 1);
    for (blob_name, blob) in blobs {
        let (dtype, shape, len, bytes) = blob.parts();
        if shape.iter().product::<usize>() != len {
            return Err(CliError::Usage(format!("blob {blob_name}: shape {shape:?} does not hold {len} values")));
        }
        let file = format!("{name}.{blob_name}.bin");
        let path = dir.join(&file);
        write_atomic(&path, &bytes)?;
        files.push(path);
        entries.push(BlobEntry {
            name: blob_name.to_string(),
            file,
            dtype,
            shape: shape.to_vec(),
            len,
            sha256: sha256_hex(&bytes),
        });
    }
    let manifest = ArtifactManifest {
        format: FORMAT.into(),
        version: FORMAT_VERSION,
        kind: kind.into(),
        meta,
        blobs: entries,
    };
    let path = manifest_path(dir, name);
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::Io(e.to_string()))?;
    write_atomic(&path, format!("{text}\n").as_bytes())?;
    files.push(path);
    Ok(files)
}

/// A loaded manifest; blobs are read on demand.
#[derive(Clone, Debug)]
pub struct Artifact {
    pub dir: PathBuf,
    pub name: String,
    pub manifest: ArtifactManifest,
    /// SHA-256 of the manifest file, which pins every blob by hash.
    pub hash: String,
}

impl Artifact {
    pub fn exists(dir: &Path, name: &str) -> bool {
        manifest_path(dir, name).exists()
    }

    pub fn open(dir: &Path, name: &str, kind: &str) -> CliResult<Artifact> {
        let path = manifest_path(dir, name);
        if !path.exists() {
            return Err(CliError::Io(format!("missing {kind} artifact {}", path.display())));
        }
        let bytes = read(&path)?;
        let manifest: ArtifactManifest = serde_json::from_slice(&bytes)
            .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        if manifest.format != FORMAT || manifest.version != FORMAT_VERSION {
            return Err(CliError::Io(format!(
                "{}: unsupported format {} v{}",
                path.display(),
                manifest.format,
                manifest.version
            )));
        }
        if manifest.kind != kind {
            return Err(CliError::Io(format!("{}: expected a {kind} artifact, found {}", path.display(), manifest.kind)));
        }
        Ok(Artifact { dir: dir.to_path_buf(), name: name.into(), manifest, hash: sha256_hex(&bytes) })
    }

    pub fn meta<T: serde::de::DeserializeOwned>(&self, key: &str) -> CliResult<T> {
        let v = self
            .manifest
            .meta
            .get(key)
            .ok_or_else(|| CliError::Io(format!("{}: metadata lacks {key}", self.name)))?;
        serde_json::from_value(v.clone()).map_err(|e| CliError::Io(format!("{}: metadata {key}: {e}", self.name)))
    }

    fn raw(&self, blob: &str, dtype: Dtype) -> CliResult<(Vec<usize>, Vec<[u8; 8]>)> {
        let entry = self
            .manifest
            .blobs
            .iter()
            .find(|b| b.name == blob)
            .ok_or_else(|| CliError::Io(format!("{}: no blob named {blob}", self.name)))?;
        if entry.dtype != dtype {
            return Err(CliError::Io(format!("{}: blob {blob} holds {:?}", self.name, entry.dtype)));
        }
        if entry.file.contains(['/', '\\']) {
            return Err(CliError::Io(format!("{}: blob path {} leaves the artifact directory", self.name, entry.file)));
        }
        let bytes = read(&self.dir.join(&entry.file))?;
        if bytes.len() != 8 * entry.len || entry.shape.iter().product::<usize>() != entry.len {
            return Err(CliError::Io(format!(
                "{}: blob {blob} has {} bytes, manifest says {} values of shape {:?}",
                self.name,
                bytes.len(),
                entry.len,
                entry.shape
            )));
        }
        if sha256_hex(&bytes) != entry.sha256 {
            return Err(CliError::Io(format!("{}: blob {blob} fails its checksum", self.name)));
        }
        let words = bytes.chunks_exact(8).map(|c| c.try_into().expect("8-byte chunks")).collect();
        Ok((entry.shape.clone(), words))
    }

    pub fn f64(&self, blob: &str) -> CliResult<(Vec<usize>, Vec<f64>)> {
        let (shape, words) = self.raw(blob, Dtype::F64)?;
        Ok((shape, words.into_iter().map(f64::from_le_bytes).collect()))
    }

    pub fn i64(&self, blob: &str) -> CliResult<(Vec<usize>, Vec<i64>)> {
        let (shape, words) = self.raw(blob, Dtype::I64)?;
        Ok((shape, words.into_iter().map(i64::from_le_bytes).collect()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let x = vec![1.0, -0.0, f64::MIN_POSITIVE, 1.0 / 3.0, 1e300, -2.5];
        let blobs = [("x", Blob::f64(&[2, 3], x.clone())), ("y", Blob::i64(&[2], vec![-1, i64::MAX]))];
        write_artifact(dir.path(), "a", "test", json!({"k": 1}), &blobs).unwrap();
        let a = Artifact::open(dir.path(), "a", "test").unwrap();
        let (shape, back) = a.f64("x").unwrap();
        assert_eq!(shape, vec![2, 3]);
        assert!(back.iter().zip(&x).all(|(a, b)| a.to_bits() == b.to_bits()));
        assert_eq!(a.i64("y").unwrap().1, vec![-1, i64::MAX]);
        assert_eq!(a.meta::<u32>("k").unwrap(), 1);
        assert!(a.f64("y").is_err());
        assert!(Artifact::open(dir.path(), "a", "other").is_err());
    }

    #[test]
    fn truncated_or_altered_blobs_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        write_artifact(dir.path(), "a", "test", json!({}), &[("x", Blob::f64(&[3], vec![1.0, 2.0, 3.0]))]).unwrap();
        let path = dir.path().join("a.x.bin");
        let mut bytes = fs::read(&path).unwrap();
        bytes[0] ^= 1;
        fs::write(&path, &bytes).unwrap();
        let a = Artifact::open(dir.path(), "a", "test").unwrap();
        assert!(matches!(a.f64("x"), Err(CliError::Io(m)) if m.contains("checksum")));
        fs::write(&path, &bytes[..16]).unwrap();
        assert!(matches!(a.f64("x"), Err(CliError::Io(m)) if m.contains("bytes")));
    }

    #[test]
    fn shape_must_match_length() {
        let dir = tempfile::tempdir().unwrap();
        assert!(write_artifact(dir.path(), "a", "t", json!({}), &[("x", Blob::f64(&[2], vec![1.0]))]).is_err());
    }
}
