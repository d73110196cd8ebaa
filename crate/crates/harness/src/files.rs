//! File loading and writing shared by the commands.

use std::fs;
use std::path::{Path, PathBuf};

use coe_core::dataset::{CandidateDocument, CandidateSetLine, Rejection};
use coe_core::record::RecordLine;
use coe_core::{jsonl, DocumentPool, QaRecord};
use image::RgbaImage;
use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{HarnessError, Result};

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| HarnessError::io(path, e))
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent().filter(|p| !p.as_os_str().is_empty()) {
        Some(parent) => fs::create_dir_all(parent).map_err(|e| HarnessError::io(parent, e)),
        None => Ok(()),
    }
}

/// Writes `contents`, creating parent directories as needed.
pub fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    ensure_parent(path)?;
    fs::write(path, contents).map_err(|e| HarnessError::io(path, e))
}

pub fn create(path: &Path) -> Result<fs::File> {
    ensure_parent(path)?;
    fs::File::create(path).map_err(|e| HarnessError::io(path, e))
}

pub fn save_png(path: &Path, img: &RgbaImage) -> Result<()> {
    ensure_parent(path)?;
    img.save(path).map_err(|e| HarnessError::Image {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = read_text(path)?;
    jsonl::from_str(&text).map_err(|e| match e {
        coe_core::Error::Schema { path: at, message } => HarnessError::ConfigInvalid(format!("{}: {at}: {message}", path.display())),
        other => other.into(),
    })
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    write(path, jsonl::to_string(items)?)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| HarnessError::json(path.display().to_string(), e))?;
    text.push('\n');
    write(path, text)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Document pool with image paths resolved against the pool file's directory.
#[derive(Debug, Clone)]
pub struct PoolFile {
    pub pool: DocumentPool,
    pub base_dir: PathBuf,
}

impl PoolFile {
    pub fn load(path: &Path) -> Result<Self> {
        let docs: Vec<CandidateDocument> = read_jsonl(path)?;
        let pool = DocumentPool::new(docs)?;
        let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Self { pool, base_dir })
    }

    pub fn image_path(&self, doc_id: &str) -> Result<PathBuf> {
        let doc = self
            .pool
            .get(doc_id)
            .ok_or_else(|| HarnessError::MissingImage(doc_id.to_owned()))?;
        Ok(self.base_dir.join(&doc.image_path))
    }

    pub fn image_bytes(&self, doc_id: &str) -> Result<Vec<u8>> {
        let path = self.image_path(doc_id)?;
        fs::read(&path).map_err(|_| HarnessError::MissingImage(doc_id.to_owned()))
    }

    pub fn raster(&self, doc_id: &str) -> Result<RgbaImage> {
        let path = self.image_path(doc_id)?;
        let img = image::open(&path).map_err(|e| HarnessError::Image {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Ok(img.to_rgba8())
    }
}

/// Loads and validates a dataset file. Invalid lines come back as rejections.
pub fn load_dataset(path: &Path, pool: &DocumentPool) -> Result<(Vec<QaRecord>, Vec<Rejection>)> {
    let lines: Vec<RecordLine> = read_jsonl(path)?;
    Ok(coe_core::dataset::validate_dataset(&lines, pool))
}

pub fn load_candidates(path: &Path) -> Result<Vec<CandidateSetLine>> {
    read_jsonl(path)
}
