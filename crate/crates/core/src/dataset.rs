//! Document pools, candidate sets, splitting, validation and statistics.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::chain::ImageLabel;
use crate::error::{Error, Result};
use crate::geometry::BoundingBox;
use crate::record::{default_chain_key, GoldHop, QaRecord, QuestionType, RecordLine};

/// Candidate-set size used by the evaluation protocol.
pub const DEFAULT_K: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateDocument {
    pub doc_id: String,
    pub image_path: String,
    pub width: u32,
    pub height: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group_id: Option<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub source_meta: BTreeMap<String, String>,
}

/// The screenshot corpus candidates are drawn from.
#[derive(Debug, Clone, Default)]
pub struct DocumentPool {
    documents: BTreeMap<String, CandidateDocument>,
    groups: BTreeMap<String, Vec<String>>,
}

impl DocumentPool {
    pub fn new(docs: impl IntoIterator<Item = CandidateDocument>) -> Result<Self> {
        let mut documents = BTreeMap::new();
        let mut groups: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for doc in docs {
            if doc.width == 0 || doc.height == 0 {
                return Err(Error::Config(format!("document {} has zero size", doc.doc_id)));
            }
            if let Some(g) = &doc.group_id {
                groups.entry(g.clone()).or_default().push(doc.doc_id.clone());
            }
            let id = doc.doc_id.clone();
            if documents.insert(id.clone(), doc).is_some() {
                return Err(Error::Config(format!("duplicate doc_id {id}")));
            }
        }
        for members in groups.values_mut() {
            members.sort();
        }
        Ok(Self { documents, groups })
    }

    pub fn get(&self, doc_id: &str) -> Option<&CandidateDocument> {
        self.documents.get(doc_id)
    }

    pub fn contains(&self, doc_id: &str) -> bool {
        self.documents.contains_key(doc_id)
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn documents(&self) -> impl Iterator<Item = &CandidateDocument> {
        self.documents.values()
    }

    pub fn group(&self, group_id: &str) -> Option<&[String]> {
        self.groups.get(group_id).map(Vec::as_slice)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DistractorPolicy {
    /// Distractors come from the gold documents' group (e.g. one slide deck).
    SameGroup,
    /// Distractors come from the whole pool.
    GlobalPool,
}

impl fmt::Display for DistractorPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DistractorPolicy::SameGroup => "same-group",
            DistractorPolicy::GlobalPool => "global-pool",
        })
    }
}

impl FromStr for DistractorPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "same-group" => Ok(DistractorPolicy::SameGroup),
            "global-pool" => Ok(DistractorPolicy::GlobalPool),
            other => Err(Error::Config(format!("unknown distractor policy {other:?}"))),
        }
    }
}

/// Labeled top-k candidates for one question.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSet {
    pub question_id: String,
    ordered: Vec<String>,
    gold_map: BTreeMap<String, ImageLabel>,
}

impl CandidateSet {
    /// Labels `docs` positionally and maps every gold doc to its label.
    pub fn new<'a>(
        question_id: impl Into<String>,
        docs: Vec<String>,
        gold_docs: impl IntoIterator<Item = &'a str>,
    ) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for d in &docs {
            if !seen.insert(d.as_str()) {
                return Err(Error::Inconsistent(format!("duplicate candidate {d}")));
            }
        }
        let mut gold_map = BTreeMap::new();
        for g in gold_docs {
            let pos = docs
                .iter()
                .position(|d| d == g)
                .ok_or_else(|| Error::Inconsistent(format!("gold document {g} is not a candidate")))?;
            gold_map.insert(g.to_owned(), ImageLabel(pos));
        }
        Ok(Self {
            question_id: question_id.into(),
            ordered: docs,
            gold_map,
        })
    }

    pub fn k(&self) -> usize {
        self.ordered.len()
    }

    /// `(label, doc_id)` pairs in presentation order.
    pub fn ordered(&self) -> impl Iterator<Item = (ImageLabel, &str)> {
        self.ordered
            .iter()
            .enumerate()
            .map(|(i, d)| (ImageLabel(i), d.as_str()))
    }

    pub fn docs(&self) -> &[String] {
        &self.ordered
    }

    pub fn gold_map(&self) -> &BTreeMap<String, ImageLabel> {
        &self.gold_map
    }

    pub fn gold_label(&self, doc_id: &str) -> Option<ImageLabel> {
        self.gold_map.get(doc_id).copied()
    }

    pub fn doc_for(&self, label: ImageLabel) -> Option<&str> {
        self.ordered.get(label.index()).map(String::as_str)
    }

    /// Reorders candidates so new position `i` holds old position `perm[i]`.
    ///
    /// Returns the permuted set and the old-label to new-label map.
    pub fn permuted(&self, perm: &[usize]) -> Result<(CandidateSet, BTreeMap<ImageLabel, ImageLabel>)> {
        let mut check = perm.to_vec();
        check.sort_unstable();
        if check != (0..self.k()).collect::<Vec<_>>() {
            return Err(Error::Inconsistent("not a permutation of candidate positions".into()));
        }
        let docs = perm.iter().map(|&old| self.ordered[old].clone()).collect();
        let relabel = perm
            .iter()
            .enumerate()
            .map(|(new, &old)| (ImageLabel(old), ImageLabel(new)))
            .collect();
        let set = CandidateSet::new(self.question_id.clone(), docs, self.gold_map.keys().map(String::as_str))?;
        Ok((set, relabel))
    }

    pub fn to_line(&self, seed: u64, policy: DistractorPolicy) -> CandidateSetLine {
        CandidateSetLine {
            question_id: self.question_id.clone(),
            ordered: self
                .ordered()
                .map(|(label, doc_id)| LabeledDoc {
                    label,
                    doc_id: doc_id.to_owned(),
                })
                .collect(),
            seed,
            policy,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledDoc {
    pub label: ImageLabel,
    pub doc_id: String,
}

/// Candidate-set file line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSetLine {
    pub question_id: String,
    pub ordered: Vec<LabeledDoc>,
    pub seed: u64,
    pub policy: DistractorPolicy,
}

impl CandidateSetLine {
    /// Rebuilds the set, deriving the gold map from `record`.
    pub fn to_set(&self, record: &QaRecord) -> Result<CandidateSet> {
        for (i, entry) in self.ordered.iter().enumerate() {
            if entry.label != ImageLabel(i) {
                return Err(Error::Inconsistent(format!(
                    "ordered[{i}] is labeled {} for question {}",
                    entry.label, self.question_id
                )));
            }
        }
        CandidateSet::new(
            self.question_id.clone(),
            self.ordered.iter().map(|e| e.doc_id.clone()).collect(),
            record.gold_docs(),
        )
    }
}

/// Stable 64-bit FNV-1a, used to derive per-question seeds.
pub fn stable_hash(text: &str) -> u64 {
    text.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3)
    })
}

/// Per-question seed from a run seed.
pub fn question_seed(run_seed: u64, question_id: &str) -> u64 {
    run_seed ^ stable_hash(question_id).rotate_left(17)
}

/// Gold documents plus uniformly sampled distractors, in shuffled order.
pub fn build_candidate_set(
    record: &QaRecord,
    pool: &DocumentPool,
    k: usize,
    seed: u64,
    policy: DistractorPolicy,
) -> Result<CandidateSet> {
    let gold = record.gold_docs();
    for g in &gold {
        if !pool.contains(g) {
            return Err(Error::GoldMissing((*g).to_owned()));
        }
    }
    if k < gold.len() {
        return Err(Error::Config(format!("k={k} is smaller than {} gold documents", gold.len())));
    }
    let needed = k - gold.len();

    let eligible: Vec<&str> = match policy {
        DistractorPolicy::GlobalPool => pool.documents().map(|d| d.doc_id.as_str()).collect(),
        DistractorPolicy::SameGroup => {
            let groups: BTreeSet<&str> = gold
                .iter()
                .filter_map(|g| pool.get(g).and_then(|d| d.group_id.as_deref()))
                .collect();
            groups
                .into_iter()
                .flat_map(|g| pool.group(g).unwrap_or_default())
                .map(String::as_str)
                .collect()
        }
    };
    let eligible: Vec<&str> = eligible.into_iter().filter(|d| !gold.contains(d)).collect();
    if eligible.len() < needed {
        return Err(Error::InsufficientPool {
            needed,
            available: eligible.len(),
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut docs: Vec<String> = gold.iter().map(|g| (*g).to_owned()).collect();
    docs.extend(eligible.choose_multiple(&mut rng, needed).map(|d| (*d).to_owned()));
    docs.shuffle(&mut rng);
    CandidateSet::new(record.question_id.clone(), docs, gold)
}

/// Gold documents ranked by the number of distinct questions citing them.
/// Ties are broken alphabetically.
pub fn rank_entities(records: &[QaRecord]) -> Vec<(String, usize)> {
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for r in records {
        for doc in r.gold_docs() {
            *counts.entry(doc).or_default() += 1;
        }
    }
    let mut ranked: Vec<(String, usize)> = counts.into_iter().map(|(d, c)| (d.to_owned(), c)).collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked
}

/// Splits so that no entity-chain key lands on both sides.
///
/// Keys are shuffled with `seed` and assigned to the test side while they
/// fit under `round(test_fraction * n)` records. Input order is kept within
/// each side.
pub fn split_entity_chain(records: &[QaRecord], test_fraction: f64, seed: u64) -> (Vec<QaRecord>, Vec<QaRecord>) {
    let mut sizes: BTreeMap<&str, usize> = BTreeMap::new();
    for r in records {
        *sizes.entry(r.entity_chain_key.as_str()).or_default() += 1;
    }
    let mut keys: Vec<&str> = sizes.keys().copied().collect();
    keys.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let target = (test_fraction.clamp(0.0, 1.0) * records.len() as f64).round() as usize;
    let mut test_keys = BTreeSet::new();
    let mut taken = 0;
    for key in keys {
        let size = sizes[key];
        if taken + size <= target {
            taken += size;
            test_keys.insert(key);
        }
    }
    records
        .iter()
        .cloned()
        .partition(|r| !test_keys.contains(r.entity_chain_key.as_str()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Share {
    pub count: usize,
    pub percent: f64,
}

/// Dataset statistics, one field per row of the release statistics table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub questions: usize,
    pub avg_question_tokens: f64,
    pub avg_answer_tokens: f64,
    pub unique_screenshots: usize,
    pub total_boxes: usize,
    pub avg_boxes: f64,
    pub hop_distribution: BTreeMap<usize, Share>,
    pub type_distribution: BTreeMap<String, Share>,
}

/// Token lengths count whitespace-delimited units; answer length uses the
/// first gold answer.
pub fn compute_stats(records: &[QaRecord]) -> Result<DatasetStats> {
    if records.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let n = records.len();
    let tokens = |s: &str| s.split_whitespace().count();
    let q_tokens: usize = records.iter().map(|r| tokens(&r.question)).sum();
    let a_tokens: usize = records
        .iter()
        .map(|r| r.gold_answers.first().map_or(0, |a| tokens(a)))
        .sum();
    let screenshots: BTreeSet<&str> = records
        .iter()
        .flat_map(|r| r.gold_chain.iter().map(|h| h.doc_id.as_str()))
        .collect();
    let total_boxes: usize = records.iter().map(QaRecord::total_boxes).sum();

    let share = |count: usize| Share {
        count,
        percent: 100.0 * count as f64 / n as f64,
    };
    let mut hops: BTreeMap<usize, usize> = BTreeMap::new();
    let mut types: BTreeMap<String, usize> = QuestionType::ALL.iter().map(|t| (t.to_string(), 0)).collect();
    for r in records {
        *hops.entry(r.hop_count).or_default() += 1;
        *types.entry(r.question_type.to_string()).or_default() += 1;
    }

    Ok(DatasetStats {
        questions: n,
        avg_question_tokens: q_tokens as f64 / n as f64,
        avg_answer_tokens: a_tokens as f64 / n as f64,
        unique_screenshots: screenshots.len(),
        total_boxes,
        avg_boxes: total_boxes as f64 / n as f64,
        hop_distribution: hops.into_iter().map(|(h, c)| (h, share(c))).collect(),
        type_distribution: types.into_iter().map(|(t, c)| (t, share(c))).collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RejectCode {
    InvalidBox,
    OutOfFrame,
    MissingDocument,
    HopCountMismatch,
    UnknownQuestionType,
    EmptyChain,
    EmptyHop,
    NoGoldAnswer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rejection {
    pub question_id: String,
    pub code: RejectCode,
    pub detail: String,
}

/// Filters dataset lines down to records that satisfy every evidence
/// invariant against `pool`. Missing entity-chain keys are filled from the
/// ordered gold documents.
pub fn validate_dataset(lines: &[RecordLine], pool: &DocumentPool) -> (Vec<QaRecord>, Vec<Rejection>) {
    let mut accepted = Vec::new();
    let mut rejected = Vec::new();
    for line in lines {
        match validate_line(line, pool) {
            Ok(r) => accepted.push(r),
            Err((code, detail)) => rejected.push(Rejection {
                question_id: line.question_id.clone(),
                code,
                detail,
            }),
        }
    }
    (accepted, rejected)
}

fn validate_line(line: &RecordLine, pool: &DocumentPool) -> std::result::Result<QaRecord, (RejectCode, String)> {
    let question_type = line
        .question_type
        .parse::<QuestionType>()
        .map_err(|_| (RejectCode::UnknownQuestionType, line.question_type.clone()))?;
    if line.gold_answers.is_empty() {
        return Err((RejectCode::NoGoldAnswer, "gold_answers is empty".into()));
    }
    if line.gold_chain.is_empty() {
        return Err((RejectCode::EmptyChain, "gold_chain is empty".into()));
    }
    if line.hop_count != line.gold_chain.len() {
        return Err((
            RejectCode::HopCountMismatch,
            format!("hop_count {} vs {} hops", line.hop_count, line.gold_chain.len()),
        ));
    }
    let mut chain = Vec::with_capacity(line.gold_chain.len());
    for (i, hop) in line.gold_chain.iter().enumerate() {
        let doc = pool
            .get(&hop.doc_id)
            .ok_or_else(|| (RejectCode::MissingDocument, hop.doc_id.clone()))?;
        if hop.boxes.is_empty() {
            return Err((RejectCode::EmptyHop, format!("gold_chain[{i}] has no boxes")));
        }
        let mut boxes = Vec::with_capacity(hop.boxes.len());
        for (j, raw) in hop.boxes.iter().enumerate() {
            let b = BoundingBox::try_from(*raw)
                .map_err(|_| (RejectCode::InvalidBox, format!("gold_chain[{i}].boxes[{j}] = {raw:?}")))?;
            if !b.within_frame(f64::from(doc.width), f64::from(doc.height)) {
                return Err((
                    RejectCode::OutOfFrame,
                    format!("gold_chain[{i}].boxes[{j}] = {raw:?} outside {}x{}", doc.width, doc.height),
                ));
            }
            boxes.push(b);
        }
        chain.push(GoldHop {
            doc_id: hop.doc_id.clone(),
            boxes,
        });
    }
    let entity_chain_key = line
        .entity_chain_key
        .clone()
        .unwrap_or_else(|| default_chain_key(line.gold_chain.iter().map(|h| h.doc_id.as_str())));
    Ok(QaRecord {
        question_id: line.question_id.clone(),
        question: line.question.clone(),
        gold_answers: line.gold_answers.clone(),
        question_type,
        hop_count: line.hop_count,
        entity_chain_key,
        gold_chain: chain,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(id: &str, group: Option<&str>) -> CandidateDocument {
        CandidateDocument {
            doc_id: id.into(),
            image_path: format!("{id}.png"),
            width: 100,
            height: 200,
            group_id: group.map(Into::into),
            source_meta: BTreeMap::new(),
        }
    }

    fn rec(id: &str, docs: &[&str], key: &str) -> QaRecord {
        QaRecord {
            question_id: id.into(),
            question: "what is it".into(),
            gold_answers: vec!["it".into()],
            question_type: QuestionType::Compositional,
            hop_count: docs.len(),
            entity_chain_key: key.into(),
            gold_chain: docs
                .iter()
                .map(|d| GoldHop {
                    doc_id: (*d).into(),
                    boxes: vec![BoundingBox::new(1.0, 1.0, 10.0, 10.0).unwrap()],
                })
                .collect(),
        }
    }

    fn pool(n: usize) -> DocumentPool {
        DocumentPool::new((0..n).map(|i| doc(&format!("d{i:02}"), Some(if i < 6 { "deckA" } else { "deckB" })))).unwrap()
    }

    #[test]
    fn two_gold_five_candidates() {
        let r = rec("q", &["d01", "d07"], "k");
        let set = build_candidate_set(&r, &pool(20), 5, 7, DistractorPolicy::GlobalPool).unwrap();
        assert_eq!(set.k(), 5);
        let labels: Vec<String> = set.ordered().map(|(l, _)| l.to_string()).collect();
        assert_eq!(labels, ["img_0", "img_1", "img_2", "img_3", "img_4"]);
        for g in ["d01", "d07"] {
            let label = set.gold_label(g).unwrap();
            assert_eq!(set.doc_for(label), Some(g));
        }
    }

    #[test]
    fn no_room_for_distractors() {
        let r = rec("q", &["d01", "d02"], "k");
        let set = build_candidate_set(&r, &pool(20), 2, 3, DistractorPolicy::GlobalPool).unwrap();
        let mut docs = set.docs().to_vec();
        docs.sort();
        assert_eq!(docs, ["d01", "d02"]);
    }

    #[test]
    fn same_seed_same_set() {
        let r = rec("q", &["d01", "d02"], "k");
        let p = pool(20);
        let a = build_candidate_set(&r, &p, 5, 99, DistractorPolicy::GlobalPool).unwrap();
        let b = build_candidate_set(&r, &p, 5, 99, DistractorPolicy::GlobalPool).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn same_group_stays_in_deck() {
        let r = rec("q", &["d01", "d02"], "k");
        let p = pool(20);
        for seed in 0..50 {
            let set = build_candidate_set(&r, &p, 5, seed, DistractorPolicy::SameGroup).unwrap();
            assert!(set.docs().iter().all(|d| p.get(d).unwrap().group_id.as_deref() == Some("deckA")));
        }
        let err = build_candidate_set(&r, &p, 7, 1, DistractorPolicy::SameGroup).unwrap_err();
        assert_eq!(err, Error::InsufficientPool { needed: 5, available: 4 });
    }

    #[test]
    fn gold_missing() {
        let r = rec("q", &["zz"], "k");
        assert_eq!(
            build_candidate_set(&r, &pool(5), 5, 1, DistractorPolicy::GlobalPool).unwrap_err(),
            Error::GoldMissing("zz".into())
        );
    }

    #[test]
    fn line_round_trip() {
        let r = rec("q", &["d01", "d07"], "k");
        let set = build_candidate_set(&r, &pool(20), 5, 11, DistractorPolicy::GlobalPool).unwrap();
        let line = set.to_line(11, DistractorPolicy::GlobalPool);
        let text = serde_json::to_string(&line).unwrap();
        assert!(text.contains(r#""policy":"global-pool""#));
        let back: CandidateSetLine = serde_json::from_str(&text).unwrap();
        assert_eq!(back.to_set(&r).unwrap(), set);
    }

    #[test]
    fn ranking_by_frequency_then_name() {
        let records = vec![
            rec("1", &["b", "a"], "x"),
            rec("2", &["b", "c"], "y"),
            rec("3", &["b", "a", "b"], "z"),
            rec("4", &["c"], "w"),
            rec("5", &["d"], "v"),
        ];
        let ranked = rank_entities(&records);
        assert_eq!(
            ranked,
            vec![("b".into(), 3), ("a".into(), 2), ("c".into(), 2), ("d".into(), 1)]
        );
    }

    #[test]
    fn split_keeps_keys_together() {
        let records = vec![rec("1", &["a"], "k1"), rec("2", &["b"], "k1"), rec("3", &["c"], "k2"), rec("4", &["d"], "k3")];
        for seed in 0..20 {
            let (train, test) = split_entity_chain(&records, 0.5, seed);
            assert_eq!(train.len() + test.len(), 4);
            let together = train.iter().filter(|r| r.entity_chain_key == "k1").count();
            assert!(together == 0 || together == 2);
        }
    }

    #[test]
    fn singleton_keys_split_exactly() {
        let records: Vec<_> = (0..100).map(|i| rec(&i.to_string(), &["a"], &format!("k{i}"))).collect();
        let (train, test) = split_entity_chain(&records, 0.5, 4);
        assert_eq!((train.len(), test.len()), (50, 50));
    }

    #[test]
    fn stats_examples() {
        let a = rec("1", &["x", "y"], "k");
        let mut b = rec("2", &["x", "z"], "k");
        let extra = b.gold_chain[1].boxes[0];
        b.gold_chain[1].boxes.push(extra);
        assert_eq!((a.total_boxes(), b.total_boxes()), (2, 3));
        let stats = compute_stats(&[a, b]).unwrap();
        assert_eq!(stats.total_boxes, 5);
        assert_eq!(stats.avg_boxes, 2.5);
        assert_eq!(stats.unique_screenshots, 3);
        assert_eq!(compute_stats(&[]).unwrap_err(), Error::EmptyDataset);
    }

    #[test]
    fn type_distribution() {
        let mut records: Vec<_> = (0..4).map(|i| rec(&i.to_string(), &["a"], "k")).collect();
        records[3].question_type = QuestionType::Comparison;
        let stats = compute_stats(&records).unwrap();
        assert_eq!(stats.type_distribution["compositional"].percent, 75.0);
        assert_eq!(stats.type_distribution["comparison"].percent, 25.0);
        assert_eq!(stats.type_distribution["inference"].count, 0);
    }

    #[test]
    fn validation_codes() {
        let p = pool(10);
        let good = RecordLine::from(&rec("ok", &["d01"], "k"));
        let mut wide = good.clone();
        wide.question_id = "wide".into();
        wide.gold_chain[0].boxes[0] = [50.0, 0.0, 150.0, 10.0];
        let mut absent = good.clone();
        absent.question_id = "absent".into();
        absent.gold_chain[0].doc_id = "nope".into();
        let mut flat = good.clone();
        flat.question_id = "flat".into();
        flat.gold_chain[0].boxes[0] = [5.0, 5.0, 5.0, 9.0];
        let mut typed = good.clone();
        typed.question_id = "typed".into();
        typed.question_type = "yes_no".into();
        let mut hops = good.clone();
        hops.question_id = "hops".into();
        hops.hop_count = 2;

        let (accepted, rejected) = validate_dataset(&[good, wide, absent, flat, typed, hops], &p);
        assert_eq!(accepted.len(), 1);
        let codes: Vec<_> = rejected.iter().map(|r| (r.question_id.as_str(), r.code)).collect();
        assert_eq!(
            codes,
            vec![
                ("wide", RejectCode::OutOfFrame),
                ("absent", RejectCode::MissingDocument),
                ("flat", RejectCode::InvalidBox),
                ("typed", RejectCode::UnknownQuestionType),
                ("hops", RejectCode::HopCountMismatch),
            ]
        );
    }

    #[test]
    fn validation_fills_missing_key() {
        let mut line = RecordLine::from(&rec("q", &["d01", "d02"], "k"));
        line.entity_chain_key = None;
        let (accepted, _) = validate_dataset(&[line], &pool(10));
        assert_eq!(accepted[0].entity_chain_key, "d01|d02");
    }

    #[test]
    fn permutation_relabels() {
        let r = rec("q", &["d01", "d07"], "k");
        let set = CandidateSet::new("q", vec!["d01".into(), "d03".into(), "d05".into(), "d07".into()], r.gold_docs()).unwrap();
        let (p, map) = set.permuted(&[3, 1, 2, 0]).unwrap();
        assert_eq!(p.gold_label("d07"), Some(ImageLabel(0)));
        assert_eq!(p.gold_label("d01"), Some(ImageLabel(3)));
        assert_eq!(map[&ImageLabel(0)], ImageLabel(3));
        assert!(set.permuted(&[0, 0, 1, 2]).is_err());
    }
}
