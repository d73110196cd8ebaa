//! Seeded synthetic corpora: screenshot pools, multi-hop records and page
//! element layouts. Used for fixtures, demos and end-to-end checks.

use image::{Rgba, RgbaImage};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::{CandidateDocument, DocumentPool};
use crate::error::Result;
use crate::geometry::BoundingBox;
use crate::record::{default_chain_key, GoldHop, QaRecord, QuestionType};
use crate::snapshot::{ElementKind, RenderedElement};

pub const PAGE_WIDTH: u32 = 320;
pub const PAGE_HEIGHT: u32 = 480;

const WORDS: &[&str] = &[
    "river", "capital", "founded", "director", "born", "studied", "award", "population", "museum", "railway",
    "composer", "island", "bridge", "festival", "university", "painter", "harbor", "senate", "valley", "novel",
    "cathedral", "league", "orchestra", "province", "dynasty", "observatory", "glacier", "treaty", "stadium", "archive",
];

#[derive(Debug, Clone)]
pub struct Corpus {
    pub pool: DocumentPool,
    pub records: Vec<QaRecord>,
}

/// Synthetic pool and records.
///
/// Records alternate 2 and 4 hops and cycle through all question types.
/// Each hop has 1 to 3 boxes inside a `PAGE_WIDTH` x `PAGE_HEIGHT` page.
pub fn corpus(n_records: usize, n_docs: usize, seed: u64) -> Result<Corpus> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let docs: Vec<CandidateDocument> = (0..n_docs)
        .map(|i| CandidateDocument {
            doc_id: format!("doc{i:04}"),
            image_path: format!("pages/doc{i:04}.png"),
            width: PAGE_WIDTH,
            height: PAGE_HEIGHT,
            group_id: Some(format!("deck{}", i / 10)),
            source_meta: Default::default(),
        })
        .collect();
    let ids: Vec<String> = docs.iter().map(|d| d.doc_id.clone()).collect();
    let pool = DocumentPool::new(docs)?;

    let mut records = Vec::with_capacity(n_records);
    for i in 0..n_records {
        let hops = if i % 2 == 0 { 2 } else { 4 };
        let question_type = QuestionType::ALL[i % 4];
        let chosen: Vec<String> = ids.choose_multiple(&mut rng, hops).cloned().collect();
        let gold_chain = chosen
            .iter()
            .map(|doc_id| {
                let n_boxes = rng.random_range(1..=3);
                let boxes = (0..n_boxes).map(|_| random_box(&mut rng, PAGE_WIDTH, PAGE_HEIGHT)).collect();
                GoldHop {
                    doc_id: doc_id.clone(),
                    boxes,
                }
            })
            .collect();
        let answer_words: Vec<&str> = (0..rng.random_range(1..=3)).map(|_| *WORDS.choose(&mut rng).unwrap()).collect();
        let question_words: Vec<&str> = (0..rng.random_range(6..=14)).map(|_| *WORDS.choose(&mut rng).unwrap()).collect();
        records.push(QaRecord {
            question_id: format!("q{i:05}"),
            question: format!("Which {}?", question_words.join(" ")),
            gold_answers: vec![answer_words.join(" ")],
            question_type,
            hop_count: hops,
            entity_chain_key: default_chain_key(chosen.iter().map(String::as_str)),
            gold_chain,
        });
    }
    Ok(Corpus { pool, records })
}

/// Integer-cornered box at least 8 px on each side inside the frame.
pub fn random_box(rng: &mut impl Rng, width: u32, height: u32) -> BoundingBox {
    let w = rng.random_range(8..=width / 2);
    let h = rng.random_range(8..=height / 4);
    let x = rng.random_range(0..=width - w);
    let y = rng.random_range(0..=height - h);
    BoundingBox::new(f64::from(x), f64::from(y), f64::from(x + w), f64::from(y + h)).expect("positive size")
}

/// White page with each box filled in a solid color.
pub fn page_raster(width: u32, height: u32, boxes: &[BoundingBox], color: Rgba<u8>) -> RgbaImage {
    let mut img = RgbaImage::from_pixel(width, height, Rgba([255, 255, 255, 255]));
    for b in boxes {
        let (x1, y1) = (b.x1().max(0.0) as u32, b.y1().max(0.0) as u32);
        let (x2, y2) = ((b.x2().ceil() as u32).min(width), (b.y2().ceil() as u32).min(height));
        for y in y1..y2 {
            for x in x1..x2 {
                img.put_pixel(x, y, color);
            }
        }
    }
    img
}

/// Twenty-odd single-line elements with distinct sentences, stacked down a page.
pub fn element_page(n: usize, seed: u64) -> Vec<RenderedElement> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let kinds = [
        ElementKind::Paragraph,
        ElementKind::ListItem,
        ElementKind::TableCell,
        ElementKind::Caption,
        ElementKind::InfoboxText,
    ];
    (0..n)
        .map(|i| {
            let words: Vec<&str> = (0..rng.random_range(8..=16)).map(|_| *WORDS.choose(&mut rng).unwrap()).collect();
            let mut text = words.join(" ");
            text[..1].make_ascii_uppercase();
            text.push('.');
            let top = 10.0 + 22.0 * i as f64;
            RenderedElement {
                element_id: format!("el{i:02}"),
                text,
                kind: kinds[i % kinds.len()],
                line_rects: vec![BoundingBox::new(12.0, top, 300.0, top + 18.0).expect("fixed layout")],
            }
        })
        .collect()
}

/// Replaces `round(len * rate)` distinct character positions with random
/// lowercase letters.
pub fn add_char_noise(text: &str, rate: f64, seed: u64) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chars: Vec<char> = text.chars().collect();
    let n = (chars.len() as f64 * rate).round() as usize;
    let positions: Vec<usize> = (0..chars.len()).collect();
    for &p in positions.choose_multiple(&mut rng, n) {
        chars[p] = char::from(b'a' + rng.random_range(0..26u8));
    }
    chars.into_iter().collect()
}
