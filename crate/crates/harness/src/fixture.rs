//! Synthetic dataset, pool and page rasters for demos and end-to-end checks.

use std::collections::BTreeMap;
use std::path::Path;

use coe_core::dataset::CandidateDocument;
use coe_core::record::RecordLine;
use coe_core::synth::{self, PAGE_HEIGHT, PAGE_WIDTH};
use coe_core::BoundingBox;
use image::Rgba;

use crate::error::Result;
use crate::files;

pub const FIXTURE_RECORDS: usize = 60;
pub const FIXTURE_DOCS: usize = 40;
pub const FIXTURE_SEED: u64 = 7;

/// Writes `dataset.jsonl`, `pool.jsonl` and `pages/*.png` into `dir`.
/// Each page shows every gold box placed on it as a filled block.
pub fn write_synthetic(dir: &Path, n_records: usize, n_docs: usize, seed: u64) -> Result<()> {
    let corpus = synth::corpus(n_records, n_docs, seed)?;
    let mut boxes: BTreeMap<&str, Vec<BoundingBox>> = BTreeMap::new();
    for r in &corpus.records {
        for hop in &r.gold_chain {
            boxes.entry(hop.doc_id.as_str()).or_default().extend(hop.boxes.iter().copied());
        }
    }
    let docs: Vec<CandidateDocument> = corpus.pool.documents().cloned().collect();
    for doc in &docs {
        let page = synth::page_raster(
            PAGE_WIDTH,
            PAGE_HEIGHT,
            boxes.get(doc.doc_id.as_str()).map_or(&[][..], Vec::as_slice),
            Rgba([170, 195, 235, 255]),
        );
        files::save_png(&dir.join(&doc.image_path), &page)?;
    }
    let lines: Vec<RecordLine> = corpus.records.iter().map(RecordLine::from).collect();
    files::write_jsonl(&dir.join("dataset.jsonl"), &lines)?;
    files::write_jsonl(&dir.join("pool.jsonl"), &docs)
}

/// The bundled fixture under `fixtures/synthetic` in this crate.
pub fn bundled_dir() -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join("synthetic")
}
