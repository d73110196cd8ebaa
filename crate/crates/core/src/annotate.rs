//! Maps supporting-fact sentences onto rendered elements to produce gold boxes.
//!
//! Exact containment of the normalized sentence wins outright. Otherwise the
//! best-scoring element is accepted when its similarity reaches
//! `min_overlap_score`. Similarity is the larger of token-multiset F1 and
//! character-bigram Dice; for short strings only Dice is used.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{clip_to_frame, BoundingBox};
use crate::metrics::normalize_text;
use crate::record::{default_chain_key, GoldHop, QaRecord, QuestionType};
use crate::snapshot::{PageSnapshot, RenderedElement};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnnotatorConfig {
    pub min_overlap_score: f64,
    pub min_token_count: usize,
}

impl Default for AnnotatorConfig {
    fn default() -> Self {
        Self {
            min_overlap_score: 0.75,
            min_token_count: 3,
        }
    }
}

impl AnnotatorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.min_overlap_score > 0.0 && self.min_overlap_score <= 1.0 {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "min_overlap_score must be in (0, 1], got {}",
                self.min_overlap_score
            )))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchMethod {
    Exact,
    Overlap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    pub element_id: String,
    pub method: MatchMethod,
    pub score: f64,
    /// Union of the element's line rects, clipped to the frame when known.
    pub bbox: BoundingBox,
}

fn tokens(text: &str) -> Vec<String> {
    normalize_text(text, false)
        .split_whitespace()
        .map(str::to_owned)
        .collect()
}

/// F1 between token multisets.
pub fn token_f1(a: &str, b: &str) -> f64 {
    let (ta, tb) = (tokens(a), tokens(b));
    if ta.is_empty() || tb.is_empty() {
        return 0.0;
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for t in &ta {
        *counts.entry(t).or_default() += 1;
    }
    let mut shared = 0;
    for t in &tb {
        if let Some(c) = counts.get_mut(t.as_str()) {
            if *c > 0 {
                *c -= 1;
                shared += 1;
            }
        }
    }
    2.0 * shared as f64 / (ta.len() + tb.len()) as f64
}

fn bigrams(text: &str) -> BTreeSet<(char, char)> {
    let chars: Vec<char> = normalize_text(text, false).chars().collect();
    chars.windows(2).map(|w| (w[0], w[1])).collect()
}

/// Dice coefficient between character-bigram sets of the normalized texts.
pub fn bigram_dice(a: &str, b: &str) -> f64 {
    let (ba, bb) = (bigrams(a), bigrams(b));
    if ba.is_empty() || bb.is_empty() {
        let (na, nb) = (normalize_text(a, false), normalize_text(b, false));
        return if !na.is_empty() && na == nb { 1.0 } else { 0.0 };
    }
    let shared = ba.intersection(&bb).count();
    2.0 * shared as f64 / (ba.len() + bb.len()) as f64
}

/// Symmetric similarity in `[0, 1]`.
pub fn text_similarity(a: &str, b: &str, min_token_count: usize) -> f64 {
    let dice = bigram_dice(a, b);
    if tokens(a).len() < min_token_count || tokens(b).len() < min_token_count {
        dice
    } else {
        dice.max(token_f1(a, b))
    }
}

fn segments(text: &str) -> Vec<&str> {
    text.split_inclusive(['.', '!', '?'])
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .collect()
}

/// Best similarity between `sentence` and the element text or any sentence
/// segment inside it.
fn element_score(sentence: &str, element: &RenderedElement, min_token_count: usize) -> f64 {
    let mut best = text_similarity(sentence, &element.text, min_token_count);
    let parts = segments(&element.text);
    if parts.len() > 1 {
        for part in parts {
            best = best.max(text_similarity(sentence, part, min_token_count));
        }
    }
    best
}

/// Tight union of the element's line rects, clipped to the frame.
pub fn element_box(element: &RenderedElement, width: f64, height: f64) -> Result<BoundingBox> {
    let union = BoundingBox::enclosing(&element.line_rects)
        .ok_or_else(|| Error::invariant("line_rects", format!("element {} has no line rects", element.element_id)))?;
    clip_to_frame(&union, width, height)
}

/// Finds the element a sentence came from; `None` when nothing is close enough.
///
/// The returned box is the unclipped union of line rects; frame clipping
/// happens in [`annotate_record`].
pub fn match_sentence(sentence: &str, elements: &[RenderedElement], cfg: &AnnotatorConfig) -> Option<MatchResult> {
    let needle = normalize_text(sentence, false);
    if needle.is_empty() {
        return None;
    }
    let union = |e: &RenderedElement| BoundingBox::enclosing(&e.line_rects);

    for e in elements {
        if normalize_text(&e.text, false).contains(&needle) {
            if let Some(bbox) = union(e) {
                return Some(MatchResult {
                    element_id: e.element_id.clone(),
                    method: MatchMethod::Exact,
                    score: 1.0,
                    bbox,
                });
            }
        }
    }

    let mut best: Option<(f64, &RenderedElement)> = None;
    for e in elements.iter().filter(|e| !e.line_rects.is_empty()) {
        let score = element_score(sentence, e, cfg.min_token_count);
        if best.is_none_or(|(s, _)| score > s) {
            best = Some((score, e));
        }
    }
    let (score, e) = best?;
    (score >= cfg.min_overlap_score).then(|| MatchResult {
        element_id: e.element_id.clone(),
        method: MatchMethod::Overlap,
        score,
        bbox: union(e).expect("filtered to non-empty rects"),
    })
}

/// A question awaiting evidence boxes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PendingRecord {
    pub question_id: String,
    pub question: String,
    pub gold_answers: Vec<String>,
    pub question_type: QuestionType,
    #[serde(default)]
    pub entity_chain_key: Option<String>,
    /// `(doc_id, sentence)` pairs in source order.
    pub supporting_facts: Vec<(String, String)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatedRecord {
    pub record: QaRecord,
    /// One entry per supporting fact, in fact order.
    pub matches: Vec<(String, MatchResult)>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RejectReason {
    NoMatch,
    OutOfFrame,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRejection {
    pub question_id: String,
    pub doc_id: String,
    pub sentence: String,
    pub reason: RejectReason,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum AnnotationOutcome {
    Accepted(AnnotatedRecord),
    Rejected(AnnotationRejection),
}

/// Resolves every supporting fact to a box or rejects the whole record.
///
/// Hops are the distinct fact documents in first-appearance order; a hop's
/// boxes follow fact order, one per matched element.
pub fn annotate_record(
    pending: &PendingRecord,
    snapshots: &BTreeMap<String, PageSnapshot>,
    cfg: &AnnotatorConfig,
) -> Result<AnnotationOutcome> {
    cfg.validate()?;
    for (doc_id, _) in &pending.supporting_facts {
        if !snapshots.contains_key(doc_id) {
            return Err(Error::MissingSnapshot(doc_id.clone()));
        }
    }

    let reject = |doc_id: &str, sentence: &str, reason| {
        Ok(AnnotationOutcome::Rejected(AnnotationRejection {
            question_id: pending.question_id.clone(),
            doc_id: doc_id.to_owned(),
            sentence: sentence.to_owned(),
            reason,
        }))
    };

    let mut hops: Vec<(String, Vec<String>, Vec<BoundingBox>)> = Vec::new();
    let mut matches = Vec::with_capacity(pending.supporting_facts.len());
    for (doc_id, sentence) in &pending.supporting_facts {
        let snap = &snapshots[doc_id];
        let Some(mut m) = match_sentence(sentence, &snap.elements, cfg) else {
            return reject(doc_id, sentence, RejectReason::NoMatch);
        };
        let Ok(clipped) = clip_to_frame(&m.bbox, f64::from(snap.width), f64::from(snap.height)) else {
            return reject(doc_id, sentence, RejectReason::OutOfFrame);
        };
        m.bbox = clipped;

        let slot = match hops.iter().position(|(d, _, _)| d == doc_id) {
            Some(i) => i,
            None => {
                hops.push((doc_id.clone(), Vec::new(), Vec::new()));
                hops.len() - 1
            }
        };
        let (_, seen, boxes) = &mut hops[slot];
        if !seen.contains(&m.element_id) {
            seen.push(m.element_id.clone());
            boxes.push(clipped);
        }
        matches.push((doc_id.clone(), m));
    }

    let gold_chain: Vec<GoldHop> = hops
        .into_iter()
        .map(|(doc_id, _, boxes)| GoldHop { doc_id, boxes })
        .collect();
    let entity_chain_key = pending
        .entity_chain_key
        .clone()
        .unwrap_or_else(|| default_chain_key(gold_chain.iter().map(|h| h.doc_id.as_str())));
    let record = QaRecord {
        question_id: pending.question_id.clone(),
        question: pending.question.clone(),
        gold_answers: pending.gold_answers.clone(),
        question_type: pending.question_type,
        hop_count: gold_chain.len(),
        entity_chain_key,
        gold_chain,
    };
    record.check()?;
    Ok(AnnotationOutcome::Accepted(AnnotatedRecord { record, matches }))
}
