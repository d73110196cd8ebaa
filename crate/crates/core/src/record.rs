//! Question records with their gold evidence chains.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BoundingBox;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuestionType {
    Comparison,
    Inference,
    Compositional,
    BridgeComparison,
}

impl QuestionType {
    pub const ALL: [QuestionType; 4] = [
        QuestionType::Comparison,
        QuestionType::Inference,
        QuestionType::Compositional,
        QuestionType::BridgeComparison,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            QuestionType::Comparison => "comparison",
            QuestionType::Inference => "inference",
            QuestionType::Compositional => "compositional",
            QuestionType::BridgeComparison => "bridge_comparison",
        }
    }
}

impl fmt::Display for QuestionType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for QuestionType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        QuestionType::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| Error::schema("question_type", format!("unknown question type {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoldHop {
    pub doc_id: String,
    pub boxes: Vec<BoundingBox>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaRecord {
    pub question_id: String,
    pub question: String,
    pub gold_answers: Vec<String>,
    pub question_type: QuestionType,
    pub hop_count: usize,
    pub entity_chain_key: String,
    pub gold_chain: Vec<GoldHop>,
}

impl QaRecord {
    /// Checks hop count, per-hop boxes, and answers.
    pub fn check(&self) -> Result<()> {
        if self.gold_answers.is_empty() {
            return Err(Error::invariant("gold_answers", "at least one gold answer is required"));
        }
        if self.hop_count != self.gold_chain.len() {
            return Err(Error::invariant(
                "hop_count",
                format!("hop_count {} but gold_chain has {} hops", self.hop_count, self.gold_chain.len()),
            ));
        }
        if self.gold_chain.is_empty() {
            return Err(Error::invariant("gold_chain", "empty gold chain"));
        }
        for (i, hop) in self.gold_chain.iter().enumerate() {
            if hop.boxes.is_empty() {
                return Err(Error::invariant(format!("gold_chain[{i}].boxes"), "hop has no boxes"));
            }
        }
        Ok(())
    }

    /// Gold document ids in logical order, duplicates removed.
    pub fn gold_docs(&self) -> Vec<&str> {
        let mut seen = Vec::new();
        for hop in &self.gold_chain {
            if !seen.contains(&hop.doc_id.as_str()) {
                seen.push(hop.doc_id.as_str());
            }
        }
        seen
    }

    pub fn total_boxes(&self) -> usize {
        self.gold_chain.iter().map(|h| h.boxes.len()).sum()
    }
}

/// Chain key derived from the ordered gold documents, used when a corpus
/// provides no explicit entity-chain key.
pub fn default_chain_key<'a>(doc_ids: impl IntoIterator<Item = &'a str>) -> String {
    doc_ids.into_iter().collect::<Vec<_>>().join("|")
}

/// A dataset line before validation. Unknown question types and malformed
/// boxes survive parsing here so they can be rejected with a reason.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordLine {
    pub question_id: String,
    pub question: String,
    pub gold_answers: Vec<String>,
    pub question_type: String,
    pub hop_count: usize,
    #[serde(default)]
    pub entity_chain_key: Option<String>,
    pub gold_chain: Vec<RawGoldHop>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawGoldHop {
    pub doc_id: String,
    pub boxes: Vec<[f64; 4]>,
}

impl From<&QaRecord> for RecordLine {
    fn from(r: &QaRecord) -> Self {
        RecordLine {
            question_id: r.question_id.clone(),
            question: r.question.clone(),
            gold_answers: r.gold_answers.clone(),
            question_type: r.question_type.as_str().to_owned(),
            hop_count: r.hop_count,
            entity_chain_key: Some(r.entity_chain_key.clone()),
            gold_chain: r
                .gold_chain
                .iter()
                .map(|h| RawGoldHop {
                    doc_id: h.doc_id.clone(),
                    boxes: h.boxes.iter().map(BoundingBox::to_array).collect(),
                })
                .collect(),
        }
    }
}
