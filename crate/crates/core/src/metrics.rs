//! Answer, chain, and localization scoring.
//!
//! * EM compares normalized answer strings.
//! * Chain accuracy requires the predicted label sequence to equal the gold
//!   documents' labels, hop for hop, with the same length.
//! * Localization accuracy additionally requires every gold box at every hop
//!   to be covered by a matching predicted box. A box matches when
//!   IoU reaches the threshold or its center lies inside the gold box.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::chain::{EvidenceChain, EvidenceHop, ImageLabel, ModelOutput};
use crate::dataset::CandidateSet;
use crate::error::{Error, Result};
use crate::geometry::{center_inside, iou, BoundingBox};
use crate::record::{QaRecord, QuestionType};

/// Identifier of the answer normalization, written into report headers.
pub const NORMALIZATION_ID: &str = "lower|strip-punct|strip-articles|collapse-ws";

/// How a hop's gold boxes must be covered.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoxCoverage {
    /// Every gold box needs its own matching predicted box.
    #[default]
    AllGold,
    /// At least one gold box needs a matching predicted box.
    AnyGold,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MatchConfig {
    pub iou_threshold: f64,
    pub center_rule_enabled: bool,
    pub threshold_inclusive: bool,
    #[serde(default)]
    pub coverage: BoxCoverage,
}

impl Default for MatchConfig {
    fn default() -> Self {
        Self {
            iou_threshold: 0.3,
            center_rule_enabled: true,
            threshold_inclusive: true,
            coverage: BoxCoverage::AllGold,
        }
    }
}

impl MatchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iou_threshold > 0.0 && self.iou_threshold <= 1.0 {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "iou_threshold must be in (0, 1], got {}",
                self.iou_threshold
            )))
        }
    }
}

/// Lowercase, drop punctuation, drop the articles a/an/the, collapse spaces.
pub fn normalize_answer(text: &str) -> String {
    normalize_text(text, true)
}

/// Shared normalizer; sentence matching keeps articles.
pub fn normalize_text(text: &str, strip_articles: bool) -> String {
    let lowered: String = text
        .to_lowercase()
        .chars()
        .filter(|c| c.is_alphanumeric() || c.is_whitespace())
        .collect();
    lowered
        .split_whitespace()
        .filter(|w| !(strip_articles && matches!(*w, "a" | "an" | "the")))
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn exact_match(pred: &str, golds: &[String]) -> bool {
    let p = normalize_answer(pred);
    golds.iter().any(|g| normalize_answer(g) == p)
}

pub fn box_match(pred: &BoundingBox, gold: &BoundingBox, cfg: &MatchConfig) -> bool {
    let overlap = iou(pred, gold);
    let by_iou = if cfg.threshold_inclusive {
        overlap >= cfg.iou_threshold
    } else {
        overlap > cfg.iou_threshold
    };
    by_iou || (cfg.center_rule_enabled && center_inside(pred, gold))
}

/// One-to-one greedy pairing: highest IoU first, ties by lower pred index
/// then lower gold index. Returns the gold index paired with each pred box.
pub fn greedy_assignment(preds: &[BoundingBox], golds: &[BoundingBox]) -> Vec<Option<usize>> {
    let mut pairs: Vec<(f64, usize, usize)> = preds
        .iter()
        .enumerate()
        .flat_map(|(i, p)| golds.iter().enumerate().map(move |(j, g)| (iou(p, g), i, j)))
        .collect();
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

    let mut pred_to_gold = vec![None; preds.len()];
    let mut gold_used = vec![false; golds.len()];
    for (_, i, j) in pairs {
        if pred_to_gold[i].is_none() && !gold_used[j] {
            pred_to_gold[i] = Some(j);
            gold_used[j] = true;
        }
    }
    pred_to_gold
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HopScore {
    pub image_correct: bool,
    pub boxes_correct: bool,
}

pub fn hop_localized(pred: &EvidenceHop, gold_image_id: ImageLabel, gold_boxes: &[BoundingBox], cfg: &MatchConfig) -> HopScore {
    let image_correct = pred.image_id == gold_image_id;
    if !image_correct || gold_boxes.is_empty() {
        return HopScore {
            image_correct,
            boxes_correct: false,
        };
    }
    let assignment = greedy_assignment(&pred.boxes, gold_boxes);
    let mut covered = vec![false; gold_boxes.len()];
    for (i, gold_idx) in assignment.iter().enumerate() {
        if let Some(j) = *gold_idx {
            if box_match(&pred.boxes[i], &gold_boxes[j], cfg) {
                covered[j] = true;
            }
        }
    }
    let boxes_correct = match cfg.coverage {
        BoxCoverage::AllGold => covered.iter().all(|&c| c),
        BoxCoverage::AnyGold => covered.iter().any(|&c| c),
    };
    HopScore {
        image_correct,
        boxes_correct,
    }
}

/// Gold labels in logical order, `None` where a gold doc is not a candidate.
fn gold_labels(gold: &QaRecord, candset: &CandidateSet) -> Vec<Option<ImageLabel>> {
    gold.gold_chain
        .iter()
        .map(|h| candset.gold_label(&h.doc_id))
        .collect()
}

pub fn chain_accuracy(pred: &EvidenceChain, gold: &QaRecord, candset: &CandidateSet) -> bool {
    let labels = gold_labels(gold, candset);
    pred.len() == gold.hop_count
        && labels.len() == pred.len()
        && pred
            .hops()
            .iter()
            .zip(&labels)
            .all(|(h, g)| Some(h.image_id) == *g)
}

/// Sub-question written for gold hop `hop` (1-based) when the source data has none.
pub fn template_sub_question(hop: usize) -> String {
    format!("Which evidence in this document supports hop {hop} of the question?")
}

/// The perfect prediction for `record` under `candset`: gold answer, gold
/// boxes, labels taken from the candidate set's gold map.
pub fn gold_replay(record: &QaRecord, candset: &CandidateSet) -> Result<ModelOutput> {
    let answer = record
        .gold_answers
        .first()
        .ok_or_else(|| Error::invariant("gold_answers", "no gold answer"))?;
    let hops = record
        .gold_chain
        .iter()
        .enumerate()
        .map(|(i, h)| {
            let label = candset
                .gold_label(&h.doc_id)
                .ok_or_else(|| Error::Inconsistent(format!("gold document {} is not a candidate", h.doc_id)))?;
            Ok((label, h.boxes.clone(), template_sub_question(i + 1)))
        })
        .collect::<Result<Vec<_>>>()?;
    ModelOutput::new(answer.clone(), EvidenceChain::from_hops(hops)?)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExampleScore {
    pub question_id: String,
    pub em: bool,
    pub chain_correct: bool,
    pub loc_correct: bool,
    pub joint_correct: bool,
    pub parse_failed: bool,
    pub per_hop: Vec<HopScore>,
}

impl ExampleScore {
    pub fn failed(question_id: impl Into<String>) -> Self {
        Self {
            question_id: question_id.into(),
            em: false,
            chain_correct: false,
            loc_correct: false,
            joint_correct: false,
            parse_failed: true,
            per_hop: Vec::new(),
        }
    }
}

/// Scores one prediction; `None` stands for an unparseable model output.
pub fn score_example(record: &QaRecord, candset: &CandidateSet, out: Option<&ModelOutput>, cfg: &MatchConfig) -> ExampleScore {
    let Some(out) = out else {
        return ExampleScore::failed(&record.question_id);
    };
    let em = exact_match(&out.answer, &record.gold_answers);
    let chain_correct = chain_accuracy(&out.chain, record, candset);
    let per_hop: Vec<HopScore> = out
        .chain
        .hops()
        .iter()
        .zip(record.gold_chain.iter().zip(gold_labels(record, candset)))
        .map(|(pred, (gold, label))| match label {
            Some(label) => hop_localized(pred, label, &gold.boxes, cfg),
            None => HopScore {
                image_correct: false,
                boxes_correct: false,
            },
        })
        .collect();
    let loc_correct = chain_correct && per_hop.iter().all(|h| h.boxes_correct);
    ExampleScore {
        question_id: record.question_id.clone(),
        em,
        chain_correct,
        loc_correct,
        joint_correct: loc_correct,
        parse_failed: false,
        per_hop,
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Breakdown {
    pub n: usize,
    pub em: f64,
    pub chain: f64,
    pub loc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportHeader {
    pub match_config: MatchConfig,
    pub normalization: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub header: ReportHeader,
    pub n_examples: usize,
    pub n_failed_parses: usize,
    pub em_rate: f64,
    pub chain_acc: f64,
    pub loc_acc: f64,
    pub joint_acc: f64,
    /// Per-hop diagnostics over all scored hops; not part of the headline rates.
    pub hop_image_acc: f64,
    pub hop_box_acc: f64,
    pub by_question_type: BTreeMap<String, Breakdown>,
    pub by_hop_count: BTreeMap<usize, Breakdown>,
}

#[derive(Default)]
struct Tally {
    n: usize,
    em: usize,
    chain: usize,
    loc: usize,
}

impl Tally {
    fn add(&mut self, s: &ExampleScore) {
        self.n += 1;
        self.em += usize::from(s.em);
        self.chain += usize::from(s.chain_correct);
        self.loc += usize::from(s.loc_correct);
    }

    fn breakdown(&self) -> Breakdown {
        let rate = |c: usize| if self.n == 0 { 0.0 } else { c as f64 / self.n as f64 };
        Breakdown {
            n: self.n,
            em: rate(self.em),
            chain: rate(self.chain),
            loc: rate(self.loc),
        }
    }
}

/// Folds example scores into rates and the per-type / per-depth breakdowns.
pub fn aggregate(scores: &[ExampleScore], records: &[QaRecord], cfg: &MatchConfig) -> Result<Report> {
    if scores.is_empty() {
        return Err(Error::EmptyEvaluation);
    }
    let by_id: HashMap<&str, &QaRecord> = records.iter().map(|r| (r.question_id.as_str(), r)).collect();

    let mut total = Tally::default();
    let mut joint = 0;
    let mut failed = 0;
    let mut hops = (0usize, 0usize, 0usize);
    let mut by_type: BTreeMap<QuestionType, Tally> = QuestionType::ALL.iter().map(|t| (*t, Tally::default())).collect();
    let mut by_depth: BTreeMap<usize, Tally> = BTreeMap::new();

    for s in scores {
        let record = by_id
            .get(s.question_id.as_str())
            .ok_or_else(|| Error::Inconsistent(format!("score for unknown question {}", s.question_id)))?;
        total.add(s);
        joint += usize::from(s.joint_correct);
        failed += usize::from(s.parse_failed);
        for h in &s.per_hop {
            hops.0 += 1;
            hops.1 += usize::from(h.image_correct);
            hops.2 += usize::from(h.boxes_correct);
        }
        by_type.entry(record.question_type).or_default().add(s);
        by_depth.entry(record.hop_count).or_default().add(s);
    }

    let overall = total.breakdown();
    let hop_rate = |c: usize| if hops.0 == 0 { 0.0 } else { c as f64 / hops.0 as f64 };
    Ok(Report {
        header: ReportHeader {
            match_config: *cfg,
            normalization: NORMALIZATION_ID.to_owned(),
        },
        n_examples: total.n,
        n_failed_parses: failed,
        em_rate: overall.em,
        chain_acc: overall.chain,
        loc_acc: overall.loc,
        joint_acc: joint as f64 / total.n as f64,
        hop_image_acc: hop_rate(hops.1),
        hop_box_acc: hop_rate(hops.2),
        by_question_type: by_type.into_iter().map(|(t, v)| (t.to_string(), v.breakdown())).collect(),
        by_hop_count: by_depth.into_iter().map(|(d, v)| (d, v.breakdown())).collect(),
    })
}

impl Report {
    /// Plain-text summary table.
    pub fn summary(&self) -> String {
        let mut out = String::new();
        let c = &self.header.match_config;
        out.push_str(&format!(
            "match: iou>={}{} center_rule={} coverage={:?}; normalization={}\n",
            c.iou_threshold,
            if c.threshold_inclusive { "" } else { " (exclusive)" },
            c.center_rule_enabled,
            c.coverage,
            self.header.normalization
        ));
        out.push_str(&format!(
            "examples: {}  failed parses: {}\n\n",
            self.n_examples, self.n_failed_parses
        ));
        out.push_str(&format!("{:<22}{:>6}{:>9}{:>11}{:>9}\n", "slice", "n", "EM", "Chain-Acc", "Loc-Acc"));
        let row = |name: &str, b: &Breakdown| {
            format!(
                "{:<22}{:>6}{:>9.3}{:>11.3}{:>9.3}\n",
                name, b.n, b.em, b.chain, b.loc
            )
        };
        out.push_str(&row(
            "all",
            &Breakdown {
                n: self.n_examples,
                em: self.em_rate,
                chain: self.chain_acc,
                loc: self.loc_acc,
            },
        ));
        for (t, b) in &self.by_question_type {
            out.push_str(&row(&format!("type={t}"), b));
        }
        for (d, b) in &self.by_hop_count {
            out.push_str(&row(&format!("hops={d}"), b));
        }
        out.push_str(&format!(
            "\njoint: {:.3}  per-hop image: {:.3}  per-hop boxes: {:.3}\n",
            self.joint_acc, self.hop_image_acc, self.hop_box_acc
        ));
        out
    }
}
