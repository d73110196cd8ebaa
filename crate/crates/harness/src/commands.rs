//! The operator commands. Each reads its inputs from a [`RunConfig`] and
//! writes its outputs plus a `manifest.json` into `output_dir`.

use std::collections::{BTreeMap, HashMap};
use std::io::{BufWriter, Write as _};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{mpsc, Mutex};
use std::thread;

use coe_core::annotate::{annotate_record, AnnotationOutcome, PendingRecord};
use coe_core::augment::{emit_phase1, emit_phase2, EmittedSample, TrainingSample};
use coe_core::dataset::{
    build_candidate_set, compute_stats, question_seed, split_entity_chain, CandidateDocument, CandidateSetLine,
    DatasetStats, Rejection,
};
use coe_core::metrics::{aggregate, hop_localized, score_example, ExampleScore, Report};
use coe_core::record::RecordLine;
use coe_core::snapshot::PageSnapshot;
use coe_core::{CandidateSet, ModelOutput, QaRecord};
use image::RgbaImage;

use crate::capture::{load_snapshots, snapshot_batch};
use crate::client::{ModelClient, Outcome, PredictionLine};
use crate::config::{Phase, RunConfig};
use crate::error::{HarnessError, Result};
use crate::files::{self, PoolFile};
use crate::manifest::Manifest;
use crate::overlay;

struct Inputs {
    pool: PoolFile,
    records: Vec<QaRecord>,
    rejected: Vec<Rejection>,
}

fn load_inputs(cfg: &RunConfig, manifest: &mut Manifest) -> Result<Inputs> {
    cfg.validate()?;
    let dataset = cfg.require("dataset", &cfg.dataset)?;
    let pool_path = cfg.require("pool", &cfg.pool)?;
    let pool = PoolFile::load(&pool_path)?;
    let (records, rejected) = files::load_dataset(&dataset, &pool.pool)?;
    if records.is_empty() {
        return Err(HarnessError::ConfigInvalid(format!(
            "dataset {} has no valid records ({} rejected)",
            dataset.display(),
            rejected.len()
        )));
    }
    manifest.input(&dataset)?;
    manifest.input(&pool_path)?;
    manifest.count("records", records.len());
    manifest.count("rejected", rejected.len());
    Ok(Inputs { pool, records, rejected })
}

fn write_rejections(dir: &Path, rejected: &[Rejection], manifest: &mut Manifest) -> Result<()> {
    if !rejected.is_empty() {
        files::write_jsonl(&dir.join("rejections.jsonl"), rejected)?;
        manifest.output("rejections.jsonl");
    }
    Ok(())
}

/// Candidate sets from `cfg.candidates` when given, otherwise built from
/// the run seed. Returned in record order.
fn candidate_sets(cfg: &RunConfig, inputs: &Inputs, manifest: &mut Manifest) -> Result<Vec<CandidateSet>> {
    let mut stored: HashMap<String, CandidateSetLine> = HashMap::new();
    if cfg.candidates.is_some() {
        let path = cfg.require("candidates", &cfg.candidates)?;
        for line in files::load_candidates(&path)? {
            stored.insert(line.question_id.clone(), line);
        }
        manifest.input(&path)?;
    }
    inputs
        .records
        .iter()
        .map(|r| match stored.get(&r.question_id) {
            Some(line) => Ok(line.to_set(r)?),
            None => {
                let seed = question_seed(cfg.candidate_seed, &r.question_id);
                Ok(build_candidate_set(r, &inputs.pool.pool, cfg.k, seed, cfg.policy)?)
            }
        })
        .collect()
}

fn candidate_lines(cfg: &RunConfig, records: &[QaRecord], sets: &[CandidateSet]) -> Vec<CandidateSetLine> {
    records
        .iter()
        .zip(sets)
        .map(|(r, s)| s.to_line(question_seed(cfg.candidate_seed, &r.question_id), cfg.policy))
        .collect()
}

/// Writes scores, report and summary; shared by evaluate and score.
fn write_report(dir: &Path, scores: &[ExampleScore], records: &[QaRecord], cfg: &RunConfig, manifest: &mut Manifest) -> Result<Report> {
    let report = aggregate(scores, records, &cfg.matching)?;
    files::write_jsonl(&dir.join("scores.jsonl"), scores)?;
    files::write_json(&dir.join("report.json"), &report)?;
    files::write(&dir.join("summary.txt"), report.summary())?;
    for name in ["scores.jsonl", "report.json", "summary.txt"] {
        manifest.output(name);
    }
    manifest.count("failed_parses", report.n_failed_parses);
    Ok(report)
}

pub fn cmd_stats(cfg: &RunConfig) -> Result<DatasetStats> {
    let mut manifest = Manifest::new("stats", cfg);
    let inputs = load_inputs(cfg, &mut manifest)?;
    let stats = compute_stats(&inputs.records)?;
    let dir = &cfg.output_dir;
    files::write_json(&dir.join("stats.json"), &stats)?;
    files::write(&dir.join("stats.txt"), stats_table(&stats))?;
    write_rejections(dir, &inputs.rejected, &mut manifest)?;
    manifest.output("stats.json");
    manifest.output("stats.txt");
    manifest.write(dir)?;
    Ok(stats)
}

/// Plain-text statistics table, one row per quantity.
pub fn stats_table(s: &DatasetStats) -> String {
    let mut out = String::new();
    let mut row = |k: &str, v: String| out.push_str(&format!("{k:<28}{v}\n"));
    row("Questions", s.questions.to_string());
    row("Avg. question tokens", format!("{:.2}", s.avg_question_tokens));
    row("Avg. answer tokens", format!("{:.2}", s.avg_answer_tokens));
    row("Unique screenshots", s.unique_screenshots.to_string());
    row("Total boxes", s.total_boxes.to_string());
    row("Avg. boxes", format!("{:.2}", s.avg_boxes));
    for (hops, share) in &s.hop_distribution {
        row(&format!("{hops}-hop questions"), format!("{} ({:.1}%)", share.count, share.percent));
    }
    for (t, share) in &s.type_distribution {
        row(&format!("Type {t}"), format!("{} ({:.1}%)", share.count, share.percent));
    }
    out
}

pub fn cmd_candidates(cfg: &RunConfig) -> Result<usize> {
    let mut manifest = Manifest::new("candidates", cfg).seed("candidate_seed", cfg.candidate_seed);
    let inputs = load_inputs(cfg, &mut manifest)?;
    let run_cfg = RunConfig {
        candidates: None,
        ..cfg.clone()
    };
    let sets = candidate_sets(&run_cfg, &inputs, &mut manifest)?;
    let dir = &cfg.output_dir;
    files::write_jsonl(&dir.join("candidates.jsonl"), &candidate_lines(cfg, &inputs.records, &sets))?;
    write_rejections(dir, &inputs.rejected, &mut manifest)?;
    manifest.output("candidates.jsonl");
    manifest.count("candidate_sets", sets.len());
    manifest.write(dir)?;
    Ok(sets.len())
}

/// Writes lines as they complete, in input order, from a single thread.
struct OrderedSink<W: std::io::Write> {
    next: usize,
    pending: BTreeMap<usize, Vec<u8>>,
    out: W,
}

impl<W: std::io::Write> OrderedSink<W> {
    fn push(&mut self, index: usize, line: Vec<u8>) -> std::io::Result<()> {
        self.pending.insert(index, line);
        while let Some(line) = self.pending.remove(&self.next) {
            self.out.write_all(&line)?;
            self.next += 1;
        }
        Ok(())
    }
}

fn json_line<T: serde::Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut line = serde_json::to_vec(value).map_err(|e| HarnessError::json("output line", e))?;
    line.push(b'\n');
    Ok(line)
}

/// Runs inference and scoring over the dataset. Model failures are scored
/// as wrong; only infrastructure errors (unreachable endpoint, bad auth,
/// missing inputs) return `Err`.
pub fn cmd_evaluate(cfg: &RunConfig) -> Result<Report> {
    let mut manifest = Manifest::new("evaluate", cfg).seed("candidate_seed", cfg.candidate_seed);
    let inputs = load_inputs(cfg, &mut manifest)?;
    let sets = candidate_sets(cfg, &inputs, &mut manifest)?;
    let client = ModelClient::new(cfg.endpoint.clone())?;
    let dir = &cfg.output_dir;
    let pred_path = dir.join("predictions.jsonl");
    let pred_file = files::create(&pred_path)?;

    let n = inputs.records.len();
    let next = AtomicUsize::new(0);
    let abort = AtomicBool::new(false);
    let failure: Mutex<Option<HarnessError>> = Mutex::new(None);
    let mut scores: Vec<Option<ExampleScore>> = vec![None; n];
    let (tx, rx) = mpsc::channel::<(usize, PredictionLine, ExampleScore)>();

    thread::scope(|scope| -> Result<()> {
        for _ in 0..cfg.concurrency.min(n) {
            let tx = tx.clone();
            let (client, inputs, sets, next, abort, failure) = (&client, &inputs, &sets, &next, &abort, &failure);
            scope.spawn(move || {
                while !abort.load(Ordering::SeqCst) {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    let Some(record) = inputs.records.get(i) else { break };
                    let result = evaluate_one(client, &inputs.pool, record, &sets[i], cfg);
                    match result {
                        Ok((line, score)) => {
                            let _ = tx.send((i, line, score));
                        }
                        Err(e) => {
                            abort.store(true, Ordering::SeqCst);
                            failure.lock().expect("failure slot").get_or_insert(e);
                        }
                    }
                }
            });
        }
        drop(tx);
        let mut sink = OrderedSink {
            next: 0,
            pending: BTreeMap::new(),
            out: BufWriter::new(pred_file),
        };
        for (i, line, score) in rx {
            sink.push(i, json_line(&line)?).map_err(|e| HarnessError::io(&pred_path, e))?;
            scores[i] = Some(score);
        }
        sink.out.flush().map_err(|e| HarnessError::io(&pred_path, e))
    })?;

    if let Some(e) = failure.into_inner().expect("failure slot") {
        return Err(e);
    }
    let scores: Vec<ExampleScore> = scores.into_iter().map(|s| s.expect("every record scored")).collect();
    files::write_jsonl(&dir.join("candidates.jsonl"), &candidate_lines(cfg, &inputs.records, &sets))?;
    manifest.output("predictions.jsonl");
    manifest.output("candidates.jsonl");
    let report = write_report(dir, &scores, &inputs.records, cfg, &mut manifest)?;
    write_rejections(dir, &inputs.rejected, &mut manifest)?;
    manifest.write(dir)?;
    Ok(report)
}

fn evaluate_one(
    client: &ModelClient,
    pool: &PoolFile,
    record: &QaRecord,
    set: &CandidateSet,
    cfg: &RunConfig,
) -> Result<(PredictionLine, ExampleScore)> {
    let mut images = BTreeMap::new();
    for doc_id in set.docs() {
        images.insert(doc_id.clone(), pool.image_bytes(doc_id)?);
    }
    let result = client.infer(&record.question_id, &record.question, set, &images)?;
    let prediction = match &result.outcome {
        Outcome::Parsed(out) => Some(out),
        Outcome::Failed { .. } => None,
    };
    let score = score_example(record, set, prediction, &cfg.matching);
    Ok((PredictionLine::from_result(&result)?, score))
}

/// Outcome of offline scoring.
#[derive(Debug, Clone)]
pub struct ScoreRun {
    pub report: Report,
    /// Prediction lines whose question is not in the dataset.
    pub unknown_questions: Vec<String>,
}

/// Scores stored predictions exactly as `evaluate` would.
pub fn cmd_score(cfg: &RunConfig) -> Result<ScoreRun> {
    let mut manifest = Manifest::new("score", cfg).seed("candidate_seed", cfg.candidate_seed);
    let inputs = load_inputs(cfg, &mut manifest)?;
    let sets = candidate_sets(cfg, &inputs, &mut manifest)?;
    let pred_path = cfg.require("predictions", &cfg.predictions)?;
    manifest.input(&pred_path)?;
    let lines: Vec<PredictionLine> = files::read_jsonl(&pred_path)?;

    let known: HashMap<&str, usize> = inputs
        .records
        .iter()
        .enumerate()
        .map(|(i, r)| (r.question_id.as_str(), i))
        .collect();
    let mut preds: Vec<Option<ModelOutput>> = vec![None; inputs.records.len()];
    let mut unknown_questions = Vec::new();
    for line in &lines {
        match known.get(line.question_id.as_str()) {
            Some(&i) => preds[i] = line.prediction(),
            None => unknown_questions.push(line.question_id.clone()),
        }
    }
    let scores: Vec<ExampleScore> = inputs
        .records
        .iter()
        .zip(&sets)
        .zip(&preds)
        .map(|((r, s), p)| score_example(r, s, p.as_ref(), &cfg.matching))
        .collect();
    let dir = &cfg.output_dir;
    let report = write_report(dir, &scores, &inputs.records, cfg, &mut manifest)?;
    if !unknown_questions.is_empty() {
        files::write(&dir.join("unknown_questions.txt"), unknown_questions.join("\n") + "\n")?;
        manifest.output("unknown_questions.txt");
    }
    manifest.count("unknown_questions", unknown_questions.len());
    write_rejections(dir, &inputs.rejected, &mut manifest)?;
    manifest.write(dir)?;
    Ok(ScoreRun {
        report,
        unknown_questions,
    })
}

/// Writes `overlay_<question_id>/hop_<t>.png` for each gold hop plus an
/// `index.html` listing the chain. Returns the image paths.
pub fn cmd_overlay(cfg: &RunConfig, question_id: &str) -> Result<Vec<PathBuf>> {
    let mut manifest = Manifest::new("overlay", cfg);
    let inputs = load_inputs(cfg, &mut manifest)?;
    let index = inputs
        .records
        .iter()
        .position(|r| r.question_id == question_id)
        .ok_or_else(|| HarnessError::MissingQuestion(question_id.to_owned()))?;
    let record = &inputs.records[index];
    let sets = candidate_sets(cfg, &inputs, &mut manifest)?;
    let set = &sets[index];
    let prediction = match &cfg.predictions {
        Some(_) => {
            let path = cfg.require("predictions", &cfg.predictions)?;
            manifest.input(&path)?;
            let lines: Vec<PredictionLine> = files::read_jsonl(&path)?;
            let line = lines
                .iter()
                .find(|l| l.question_id == question_id)
                .ok_or_else(|| HarnessError::MissingQuestion(format!("{question_id} (predictions)")))?;
            line.prediction()
        }
        None => None,
    };

    let safe: String = question_id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect();
    let out_dir = cfg.output_dir.join(format!("overlay_{safe}"));
    let mut written = Vec::new();
    let mut rows = String::new();
    for (t, gold_hop) in record.gold_chain.iter().enumerate() {
        let gold_label = set
            .gold_label(&gold_hop.doc_id)
            .ok_or_else(|| coe_core::Error::GoldMissing(gold_hop.doc_id.clone()))?;
        let pred_hop = prediction.as_ref().and_then(|p| p.chain.hops().get(t));
        let shown_label = pred_hop.map_or(gold_label, |h| h.image_id);
        let shown_doc = set.doc_for(shown_label).unwrap_or(&gold_hop.doc_id).to_owned();
        let base: RgbaImage = inputs.pool.raster(&shown_doc)?;
        let gold_boxes = if shown_doc == gold_hop.doc_id { &gold_hop.boxes[..] } else { &[] };
        let pred_boxes = pred_hop.map_or(&[][..], |h| &h.boxes[..]);
        let img = overlay::render_hop(&base, t + 1, gold_boxes, pred_boxes);
        let name = format!("hop_{}.png", t + 1);
        let path = out_dir.join(&name);
        files::save_png(&path, &img)?;
        let verdict = match pred_hop {
            Some(h) => {
                let s = hop_localized(h, gold_label, &gold_hop.boxes, &cfg.matching);
                format!("image {} / boxes {}", ok(s.image_correct), ok(s.boxes_correct))
            }
            None => "no predicted hop".to_owned(),
        };
        rows.push_str(&format!(
            "<tr><td>{}</td><td>{gold_label} ({})</td><td>{}</td><td>{verdict}</td><td><img src=\"{name}\" width=\"320\"></td></tr>\n",
            t + 1,
            html_escape(&gold_hop.doc_id),
            pred_hop.map_or_else(|| "-".to_owned(), |h| h.image_id.to_string()),
        ));
        written.push(path);
        manifest.output(&format!("overlay_{safe}/{name}"));
    }
    let answer = prediction.as_ref().map_or("-", |p| p.answer.as_str());
    let html = format!(
        "<!doctype html>\n<meta charset=\"utf-8\">\n<title>{qid}</title>\n\
         <h1>{qid}</h1>\n<p>{question}</p>\n<p>gold answer: {gold} | predicted: {pred}</p>\n\
         <p>gold boxes: solid green; predicted boxes: dashed red</p>\n\
         <table border=\"1\">\n<tr><th>hop</th><th>gold image</th><th>predicted image</th><th>match</th><th>overlay</th></tr>\n{rows}</table>\n",
        qid = html_escape(question_id),
        question = html_escape(&record.question),
        gold = html_escape(&record.gold_answers.join(" / ")),
        pred = html_escape(answer),
    );
    files::write(&out_dir.join("index.html"), html)?;
    manifest.output(&format!("overlay_{safe}/index.html"));
    manifest.write(&cfg.output_dir)?;
    Ok(written)
}

fn ok(b: bool) -> &'static str {
    if b {
        "ok"
    } else {
        "wrong"
    }
}

fn html_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Counts from a build run.
#[derive(Debug, Clone, Default)]
pub struct BuildRun {
    pub captured: usize,
    pub capture_failures: usize,
    pub accepted: usize,
    pub rejected: usize,
}

/// Optionally captures pages, then grounds pending records' supporting
/// facts in the snapshots and writes a dataset and pool.
pub fn cmd_build(cfg: &RunConfig) -> Result<BuildRun> {
    cfg.validate()?;
    let mut manifest = Manifest::new("build", cfg).seed("split_seed", cfg.build.split_seed);
    let mut run = BuildRun::default();
    let snap_dir = cfg
        .build
        .snapshots
        .clone()
        .ok_or_else(|| HarnessError::ConfigInvalid("build.snapshots is required".into()))?;
    let dir = &cfg.output_dir;

    if cfg.build.urls.is_some() {
        let urls_path = cfg.require("build.urls", &cfg.build.urls)?;
        manifest.input(&urls_path)?;
        let targets = parse_url_list(&files::read_text(&urls_path)?)?;
        let (captures, failures) = snapshot_batch(&targets, cfg.concurrency, &cfg.capture);
        for c in &captures {
            c.persist(&snap_dir)?;
        }
        run.captured = captures.len();
        run.capture_failures = failures.len();
        if !failures.is_empty() {
            files::write_jsonl(&dir.join("capture_failures.jsonl"), &failures)?;
            manifest.output("capture_failures.jsonl");
        }
    }

    let pending_path = cfg.require("build.pending", &cfg.build.pending)?;
    manifest.input(&pending_path)?;
    let pending: Vec<PendingRecord> = files::read_jsonl(&pending_path)?;
    let snapshots: BTreeMap<String, PageSnapshot> = load_snapshots(&snap_dir)?
        .into_iter()
        .map(|s| (s.doc_id.clone(), s))
        .collect();

    let mut lines = Vec::new();
    let mut rejections = Vec::new();
    for p in &pending {
        match annotate_record(p, &snapshots, &cfg.annotator) {
            Ok(AnnotationOutcome::Accepted(a)) => lines.push(RecordLine::from(&a.record)),
            Ok(AnnotationOutcome::Rejected(r)) => rejections.push(serde_json::to_value(&r).map_err(|e| HarnessError::json("rejection", e))?),
            Err(e) => rejections.push(serde_json::json!({"question_id": p.question_id, "error": e.to_string()})),
        }
    }

    let mut docs = Vec::new();
    for snap in snapshots.values() {
        let image_path = format!("pages/{}.png", snap.doc_id);
        let png = files::read_bytes(&snap_dir.join(format!("{}.png", snap.doc_id)))?;
        files::write(&dir.join(&image_path), png)?;
        docs.push(CandidateDocument {
            doc_id: snap.doc_id.clone(),
            image_path,
            width: snap.width,
            height: snap.height,
            group_id: None,
            source_meta: BTreeMap::from([("url".to_owned(), snap.url.clone())]),
        });
    }
    let pool = coe_core::DocumentPool::new(docs.clone())?;
    let (records, invalid) = coe_core::dataset::validate_dataset(&lines, &pool);
    let records_out: Vec<RecordLine> = records.iter().map(RecordLine::from).collect();
    files::write_jsonl(&dir.join("dataset.jsonl"), &records_out)?;
    files::write_jsonl(&dir.join("pool.jsonl"), &docs)?;
    files::write_jsonl(&dir.join("rejections.jsonl"), &rejections)?;
    for name in ["dataset.jsonl", "pool.jsonl", "rejections.jsonl"] {
        manifest.output(name);
    }
    if !invalid.is_empty() {
        files::write_jsonl(&dir.join("invalid.jsonl"), &invalid)?;
        manifest.output("invalid.jsonl");
    }
    if let Some(fraction) = cfg.build.test_fraction {
        let (train, test) = split_entity_chain(&records, fraction, cfg.build.split_seed);
        let to_lines = |rs: &[QaRecord]| rs.iter().map(RecordLine::from).collect::<Vec<_>>();
        files::write_jsonl(&dir.join("train.jsonl"), &to_lines(&train))?;
        files::write_jsonl(&dir.join("test.jsonl"), &to_lines(&test))?;
        manifest.output("train.jsonl");
        manifest.output("test.jsonl");
        manifest.count("train", train.len());
        manifest.count("test", test.len());
    }
    run.accepted = records.len();
    run.rejected = rejections.len() + invalid.len();
    manifest.count("accepted", run.accepted);
    manifest.count("rejected", run.rejected);
    manifest.write(dir)?;
    Ok(run)
}

/// Parses `doc_id<TAB>url` lines; blank lines and `#` comments are skipped.
pub fn parse_url_list(text: &str) -> Result<Vec<(String, String)>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
        .map(|(i, l)| {
            let (id, url) = l
                .split_once('\t')
                .ok_or_else(|| HarnessError::ConfigInvalid(format!("url list line {}: expected doc_id<TAB>url", i + 1)))?;
            Ok((id.trim().to_owned(), url.trim().to_owned()))
        })
        .collect()
}

/// Emits phase-1 and/or phase-2 training samples and the rasters they
/// reference. Image paths in the samples are relative to the working
/// directory, like the configured input paths.
pub fn cmd_emit_training(cfg: &RunConfig) -> Result<Vec<TrainingSample>> {
    let mut manifest = Manifest::new("emit-training", cfg)
        .seed("candidate_seed", cfg.candidate_seed)
        .seed("training_seed", cfg.training.seed);
    let inputs = load_inputs(cfg, &mut manifest)?;
    let dir = &cfg.output_dir;
    let source = |doc_id: &str| inputs.pool.raster(doc_id).map_err(|e| coe_core::Error::Image(e.to_string()));
    let sets = match cfg.training.phase {
        Phase::One => Vec::new(),
        Phase::Two | Phase::Both => candidate_sets(cfg, &inputs, &mut manifest)?,
    };

    let mut emitted: Vec<EmittedSample> = Vec::new();
    for (i, record) in inputs.records.iter().enumerate() {
        let seed = question_seed(cfg.training.seed, &record.question_id);
        if matches!(cfg.training.phase, Phase::One | Phase::Both) {
            emitted.extend(emit_phase1(record, &inputs.pool.pool, &source, seed, &cfg.augment)?);
        }
        if matches!(cfg.training.phase, Phase::Two | Phase::Both) {
            emitted.push(emit_phase2(record, &sets[i], &inputs.pool.pool, &source, seed, &cfg.augment)?);
            for &side in &cfg.training.resolutions {
                let mut aug = cfg.augment.clone();
                aug.resolution = Some(side);
                aug.image_dir = format!("{}/r{side}", cfg.augment.image_dir);
                emitted.push(emit_phase2(record, &sets[i], &inputs.pool.pool, &source, seed, &aug)?);
            }
        }
    }

    let mut samples = Vec::with_capacity(emitted.len());
    let mut fallbacks = 0;
    for e in emitted {
        let rendered: HashMap<&str, &RgbaImage> = e.rendered.iter().map(|(p, img)| (p.as_str(), img)).collect();
        for (path, img) in &rendered {
            files::save_png(&dir.join(path), img)?;
        }
        let mut sample = e.sample.clone();
        for r in &mut sample.image_refs {
            r.image_path = if rendered.contains_key(r.image_path.as_str()) {
                dir.join(&r.image_path)
            } else {
                inputs.pool.base_dir.join(&r.image_path)
            }
            .display()
            .to_string();
        }
        fallbacks += usize::from(sample.provenance.fell_back);
        samples.push(sample);
    }
    files::write_jsonl(&dir.join("training.jsonl"), &samples)?;
    manifest.output("training.jsonl");
    manifest.count("samples", samples.len());
    manifest.count("augmentation_fallbacks", fallbacks);
    write_rejections(dir, &inputs.rejected, &mut manifest)?;
    manifest.write(dir)?;
    Ok(samples)
}
