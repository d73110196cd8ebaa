//! Evidence chains and the evidence-chain document format.
//!
//! A document is a single JSON object:
//!
//! ```text
//! { "answer": "...",
//!   "chain": [ { "hop": 1, "image_id": "img_3", "boxes": [[x1,y1,x2,y2], ...], "sub_question": "..." }, ... ] }
//! ```
//!
//! Hops are listed in logical reasoning order, which is independent of the
//! order the candidate images were presented in. The same document is the
//! model output contract and the assistant target written for training.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::geometry::BoundingBox;

/// Candidate label `img_<k>`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ImageLabel(pub usize);

impl ImageLabel {
    pub fn index(&self) -> usize {
        self.0
    }
}

impl fmt::Display for ImageLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "img_{}", self.0)
    }
}

impl FromStr for ImageLabel {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let digits = s
            .strip_prefix("img_")
            .ok_or_else(|| format!("expected img_<k>, got {s:?}"))?;
        let canonical = !digits.is_empty()
            && digits.bytes().all(|b| b.is_ascii_digit())
            && (digits == "0" || !digits.starts_with('0'));
        if !canonical {
            return Err(format!("expected img_<k>, got {s:?}"));
        }
        digits
            .parse()
            .map(ImageLabel)
            .map_err(|_| format!("label index out of range in {s:?}"))
    }
}

impl Serialize for ImageLabel {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ImageLabel {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvidenceHop {
    /// 1-based position in the logical chain.
    pub hop_index: usize,
    pub image_id: ImageLabel,
    pub boxes: Vec<BoundingBox>,
    pub sub_question: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvidenceChain {
    hops: Vec<EvidenceHop>,
}

impl EvidenceChain {
    /// Checks that hop indices run 1..=T and every hop has a box.
    pub fn new(hops: Vec<EvidenceHop>) -> Result<Self> {
        if hops.is_empty() {
            return Err(Error::invariant("chain", "a chain needs at least one hop"));
        }
        for (i, hop) in hops.iter().enumerate() {
            if hop.hop_index != i + 1 {
                return Err(Error::invariant(
                    format!("chain[{i}].hop"),
                    format!("expected hop {}, found {}", i + 1, hop.hop_index),
                ));
            }
            if hop.boxes.is_empty() {
                return Err(Error::invariant(format!("chain[{i}].boxes"), "hop has no boxes"));
            }
        }
        Ok(Self { hops })
    }

    /// Builds a chain from `(label, boxes, sub_question)` triples, numbering hops in order.
    pub fn from_hops(hops: impl IntoIterator<Item = (ImageLabel, Vec<BoundingBox>, String)>) -> Result<Self> {
        Self::new(
            hops.into_iter()
                .enumerate()
                .map(|(i, (image_id, boxes, sub_question))| EvidenceHop {
                    hop_index: i + 1,
                    image_id,
                    boxes,
                    sub_question,
                })
                .collect(),
        )
    }

    pub fn hops(&self) -> &[EvidenceHop] {
        &self.hops
    }

    pub fn len(&self) -> usize {
        self.hops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hops.is_empty()
    }

    /// Rewrites every hop's label through `f`, keeping hop order.
    pub fn relabel(&self, mut f: impl FnMut(ImageLabel) -> Option<ImageLabel>) -> Result<Self> {
        let hops = self
            .hops
            .iter()
            .enumerate()
            .map(|(i, h)| {
                let image_id = f(h.image_id).ok_or_else(|| {
                    Error::Inconsistent(format!("chain[{i}].image_id {} has no mapping", h.image_id))
                })?;
                Ok(EvidenceHop {
                    image_id,
                    ..h.clone()
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { hops })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelOutput {
    pub answer: String,
    pub chain: EvidenceChain,
}

impl ModelOutput {
    pub fn new(answer: impl Into<String>, chain: EvidenceChain) -> Result<Self> {
        let answer = answer.into();
        if answer.trim().is_empty() {
            return Err(Error::invariant("answer", "answer is empty"));
        }
        Ok(Self { answer, chain })
    }
}

#[derive(Serialize)]
struct HopDoc<'a> {
    hop: usize,
    image_id: ImageLabel,
    boxes: Vec<[f64; 4]>,
    sub_question: &'a str,
}

#[derive(Serialize)]
struct ChainDoc<'a> {
    answer: &'a str,
    chain: Vec<HopDoc<'a>>,
}

/// Serializes `out` as a single-line document.
///
/// Coordinates use shortest round-trip formatting, so parsing the result
/// gives back bit-identical values.
pub fn emit_chain(out: &ModelOutput) -> Result<String> {
    if out.answer.trim().is_empty() {
        return Err(Error::invariant("answer", "answer is empty"));
    }
    let doc = ChainDoc {
        answer: &out.answer,
        chain: out
            .chain
            .hops()
            .iter()
            .map(|h| HopDoc {
                hop: h.hop_index,
                image_id: h.image_id,
                boxes: h.boxes.iter().map(BoundingBox::to_array).collect(),
                sub_question: &h.sub_question,
            })
            .collect(),
    };
    serde_json::to_string(&doc).map_err(|e| Error::schema("$", e.to_string()))
}

/// Parses and validates an evidence-chain document.
///
/// Errors carry the JSON path of the offending field, e.g. `chain[0].boxes`.
pub fn parse_chain(text: &str) -> Result<ModelOutput> {
    let value: Value =
        serde_json::from_str(text).map_err(|e| Error::schema("$", format!("not valid JSON: {e}")))?;
    parse_chain_value(&value)
}

pub fn parse_chain_value(value: &Value) -> Result<ModelOutput> {
    let root = value
        .as_object()
        .ok_or_else(|| Error::schema("$", "expected an object"))?;
    let answer = required(root, "answer", "answer")?
        .as_str()
        .ok_or_else(|| Error::schema("answer", "expected a string"))?;
    let hops_value = required(root, "chain", "chain")?
        .as_array()
        .ok_or_else(|| Error::schema("chain", "expected an array"))?;
    if hops_value.is_empty() {
        return Err(Error::schema("chain", "chain has no hops"));
    }

    let mut hops = Vec::with_capacity(hops_value.len());
    for (i, hop) in hops_value.iter().enumerate() {
        hops.push(parse_hop(hop, i)?);
    }
    let chain = EvidenceChain::new(hops)?;
    ModelOutput::new(answer, chain)
}

fn required<'a>(obj: &'a Map<String, Value>, key: &str, path: &str) -> Result<&'a Value> {
    obj.get(key)
        .ok_or_else(|| Error::schema(path, "missing field"))
}

fn parse_hop(value: &Value, i: usize) -> Result<EvidenceHop> {
    let at = |field: &str| format!("chain[{i}].{field}");
    let obj = value
        .as_object()
        .ok_or_else(|| Error::schema(format!("chain[{i}]"), "expected an object"))?;

    let hop_index = required(obj, "hop", &at("hop"))?
        .as_u64()
        .ok_or_else(|| Error::schema(at("hop"), "expected a positive integer"))?;
    if hop_index == 0 {
        return Err(Error::schema(at("hop"), "hop numbers start at 1"));
    }

    let image_id = required(obj, "image_id", &at("image_id"))?
        .as_str()
        .ok_or_else(|| Error::schema(at("image_id"), "expected a string"))?
        .parse::<ImageLabel>()
        .map_err(|msg| Error::schema(at("image_id"), msg))?;

    let boxes_value = required(obj, "boxes", &at("boxes"))?
        .as_array()
        .ok_or_else(|| Error::schema(at("boxes"), "expected an array of [x1,y1,x2,y2]"))?;
    if boxes_value.is_empty() {
        return Err(Error::schema(at("boxes"), "hop has no boxes"));
    }
    let mut boxes = Vec::with_capacity(boxes_value.len());
    for (j, b) in boxes_value.iter().enumerate() {
        boxes.push(parse_box(b, &format!("chain[{i}].boxes[{j}]"))?);
    }

    let sub_question = required(obj, "sub_question", &at("sub_question"))?
        .as_str()
        .ok_or_else(|| Error::schema(at("sub_question"), "expected a string"))?
        .to_owned();

    Ok(EvidenceHop {
        hop_index: hop_index as usize,
        image_id,
        boxes,
        sub_question,
    })
}

pub(crate) fn parse_box(value: &Value, path: &str) -> Result<BoundingBox> {
    let coords = value
        .as_array()
        .filter(|a| a.len() == 4)
        .ok_or_else(|| Error::schema(path, "expected four coordinates"))?;
    let mut c = [0.0; 4];
    for (k, v) in coords.iter().enumerate() {
        c[k] = v
            .as_f64()
            .ok_or_else(|| Error::schema(format!("{path}[{k}]"), "expected a number"))?;
    }
    BoundingBox::new(c[0], c[1], c[2], c[3])
        .map_err(|_| Error::invariant(path, "box needs x1 < x2 and y1 < y2"))
}
