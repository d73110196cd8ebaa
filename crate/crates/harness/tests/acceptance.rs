//! Acceptance checks. Prints one PASS / FAIL / SKIP line per criterion and
//! exits non-zero if any criterion fails.
//!
//! Run with `cargo test -p coe-harness --test acceptance`. Criterion 10 needs
//! a WebDriver endpoint in `COE_WEBDRIVER_URL` and is skipped otherwise.

mod common;

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use coe_core::annotate::{element_box, match_sentence, AnnotatorConfig, MatchMethod};
use coe_core::augment::{augment_sample, emit_phase1, emit_phase2, AugConfig, EmittedSample};
use coe_core::chain::{emit_chain, parse_chain, EvidenceChain, ImageLabel, ModelOutput};
use coe_core::dataset::{build_candidate_set, split_entity_chain, DistractorPolicy};
use coe_core::geometry::{iou, BoundingBox};
use coe_core::metrics::{aggregate, box_match, gold_replay, score_example, ExampleScore, MatchConfig, Report};
use coe_core::record::QaRecord;
use coe_core::{synth, CandidateSet, Error};
use coe_harness::client::PredictionLine;
use coe_harness::commands::{cmd_evaluate, cmd_score, cmd_stats};
use coe_harness::files;
use coe_harness::RunConfig;
use common::{bundled, candidate_sets, gold_document, replay_endpoint, Fixture};
use image::{Rgba, RgbaImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const RUNTIME_LIMIT: Duration = Duration::from_secs(30);
const IOU_TOL: f64 = 1e-9;
const EDGE_TOL_PX: f64 = 1.0;
const NOISY_RECALL_MIN: f64 = 0.95;
const NOISE_RATE: f64 = 0.10;
const ROUND_TRIPS: usize = 10_000;
const SPLIT_RECORDS: usize = 10_000;
const SPLIT_SEEDS: u64 = 100;
const AUGMENTATIONS: usize = 500;
const RELABEL_TRIALS: usize = 1000;
const FIXTURE_PAGE_COLOR: Rgba<u8> = Rgba([170, 195, 235, 255]);
const RUN_SEED: u64 = 11;

enum Verdict {
    Pass(String),
    Fail(String),
    Skip(String),
}

type Check = fn() -> Verdict;

fn ensure(ok: bool, detail: String) -> Verdict {
    if ok {
        Verdict::Pass(detail)
    } else {
        Verdict::Fail(detail)
    }
}

fn fixture_cfg(out: &Path) -> RunConfig {
    let fx = bundled();
    let mut cfg = RunConfig {
        dataset: Some(fx.dataset.clone()),
        pool: Some(fx.pool_path.clone()),
        output_dir: out.to_path_buf(),
        candidate_seed: RUN_SEED,
        ..RunConfig::default()
    };
    cfg.endpoint.retry_backoff_base = 0.01;
    cfg.endpoint.timeout_secs = 10.0;
    cfg
}

fn rates(r: &Report) -> String {
    format!("EM={:.3} Chain={:.3} Loc={:.3}", r.em_rate, r.chain_acc, r.loc_acc)
}

fn prediction_file(dir: &Path, fx: &Fixture, sets: &[CandidateSet], f: impl Fn(&ModelOutput) -> ModelOutput) -> std::path::PathBuf {
    let lines: Vec<PredictionLine> = fx
        .records
        .iter()
        .zip(sets)
        .map(|(r, s)| {
            let out = f(&gold_replay(r, s).unwrap());
            PredictionLine {
                question_id: r.question_id.clone(),
                status: "ok".into(),
                output: Some(serde_json::from_str(&emit_chain(&out).unwrap()).unwrap()),
                reason: None,
                raw_text: String::new(),
                attempts: 1,
                latency_secs: 0.0,
            }
        })
        .collect();
    let path = dir.join("predictions.jsonl");
    files::write_jsonl(&path, &lines).unwrap();
    path
}

fn c1_gold_replay() -> Verdict {
    let tmp = tempfile::tempdir().unwrap();
    let fx = bundled();
    let hops: BTreeSet<usize> = fx.records.iter().map(|r| r.hop_count).collect();
    let types: BTreeSet<_> = fx.records.iter().map(|r| r.question_type).collect();
    let mut cfg = fixture_cfg(tmp.path());
    cfg.concurrency = 1;
    cfg.endpoint.max_in_flight = 1;
    let sets = candidate_sets(&fx.records, &fx.pool, cfg.k, cfg.candidate_seed);
    let stub = replay_endpoint(&fx.records, &sets, gold_document, 1);
    cfg.endpoint.base_url = stub.url.clone();

    let start = Instant::now();
    let report = cmd_evaluate(&cfg).unwrap();
    let took = start.elapsed();
    let perfect = report.em_rate == 1.0 && report.chain_acc == 1.0 && report.loc_acc == 1.0;
    let shape = fx.records.len() >= 50 && hops == BTreeSet::from([2, 4]) && types.len() == 4 && cfg.k == 5;
    ensure(
        perfect && shape && took < RUNTIME_LIMIT && report.n_examples == fx.records.len(),
        format!(
            "{} on {} records (hops {hops:?}, {} types, k={}) in {:.2} s (limit {} s)",
            rates(&report),
            fx.records.len(),
            types.len(),
            cfg.k,
            took.as_secs_f64(),
            RUNTIME_LIMIT.as_secs()
        ),
    )
}

fn c2_perturbations() -> Verdict {
    let tmp = tempfile::tempdir().unwrap();
    let fx = bundled();
    let sets = candidate_sets(&fx.records, &fx.pool, 5, RUN_SEED);
    let shifted = prediction_file(tmp.path(), &fx, &sets, |gold| {
        let hops = gold.chain.hops().iter().map(|h| {
            let boxes = h.boxes.iter().map(|b| b.translated(b.width(), 0.0).unwrap()).collect();
            (h.image_id, boxes, h.sub_question.clone())
        });
        ModelOutput::new(gold.answer.clone(), EvidenceChain::from_hops(hops).unwrap()).unwrap()
    });
    let mut cfg = fixture_cfg(&tmp.path().join("shifted"));
    cfg.predictions = Some(shifted);
    let report = cmd_score(&cfg).unwrap().report;
    let shift_ok = report.loc_acc == 0.0 && report.chain_acc == 1.0 && report.em_rate == 1.0;

    let match_cfg = MatchConfig::default();
    let mut multi = 0;
    let mut reversed_correct = 0;
    for (r, s) in fx.records.iter().zip(&sets) {
        let gold = gold_replay(r, s).unwrap();
        let hops: Vec<_> = gold.chain.hops().iter().rev().map(|h| (h.image_id, h.boxes.clone(), h.sub_question.clone())).collect();
        let out = ModelOutput::new(gold.answer.clone(), EvidenceChain::from_hops(hops).unwrap()).unwrap();
        if r.hop_count > 1 {
            multi += 1;
            reversed_correct += usize::from(score_example(r, s, Some(&out), &match_cfg).chain_correct);
        }
    }
    ensure(
        shift_ok && multi > 0 && reversed_correct == 0,
        format!(
            "shift by width: {}; reversed hops: Chain={:.3} over {multi} multi-hop records",
            rates(&report),
            reversed_correct as f64 / multi.max(1) as f64
        ),
    )
}

fn int_box(rng: &mut ChaCha8Rng, max: u32) -> BoundingBox {
    loop {
        let (a, b, c, d) = (
            rng.random_range(0..=max),
            rng.random_range(0..=max),
            rng.random_range(0..=max),
            rng.random_range(0..=max),
        );
        if let Ok(bx) = BoundingBox::new(f64::from(a.min(c)), f64::from(b.min(d)), f64::from(a.max(c)), f64::from(b.max(d))) {
            return bx;
        }
    }
}

fn pixel_iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let inside = |bx: &BoundingBox, x: u32, y: u32| {
        let (x, y) = (f64::from(x) + 0.5, f64::from(y) + 0.5);
        x > bx.x1() && x < bx.x2() && y > bx.y1() && y < bx.y2()
    };
    let (mut inter, mut union) = (0u32, 0u32);
    for x in 0..64 {
        for y in 0..64 {
            let (p, q) = (inside(a, x, y), inside(b, x, y));
            inter += u32::from(p && q);
            union += u32::from(p || q);
        }
    }
    f64::from(inter) / f64::from(union)
}

fn c3_iou_oracle() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let (a, b) = (int_box(&mut rng, 64), int_box(&mut rng, 64));
        worst = worst.max((iou(&a, &b) - pixel_iou(&a, &b)).abs());
    }
    let pred = BoundingBox::new(0.0, 0.0, 10.0, 3.0).unwrap();
    let gold = BoundingBox::new(0.0, 0.0, 10.0, 10.0).unwrap();
    // The center of the nested box is inside gold, so the threshold itself
    // is only observable with the center alternative off.
    let at = |tau| MatchConfig {
        iou_threshold: tau,
        center_rule_enabled: false,
        ..MatchConfig::default()
    };
    let pass_03 = box_match(&pred, &gold, &at(0.3));
    let pass_031 = box_match(&pred, &gold, &at(0.31));
    let with_center = box_match(&pred, &gold, &MatchConfig { iou_threshold: 0.31, ..MatchConfig::default() });
    ensure(
        worst <= IOU_TOL && pass_03 && !pass_031 && with_center,
        format!(
            "max |iou - pixel count| = {worst:.1e} over 1000 pairs (tol {IOU_TOL:.0e}); nested pair IoU={:.3}: tau=0.3 {}, tau=0.31 {}, center rule at 0.31 {}",
            iou(&pred, &gold),
            if pass_03 { "match" } else { "no match" },
            if pass_031 { "match" } else { "no match" },
            if with_center { "match" } else { "no match" },
        ),
    )
}

fn noisy_prediction(record: &QaRecord, set: &CandidateSet, rng: &mut ChaCha8Rng) -> ModelOutput {
    let gold = gold_replay(record, set).unwrap();
    let hops: Vec<_> = gold
        .chain
        .hops()
        .iter()
        .map(|h| {
            let label = if rng.random_bool(0.2) { ImageLabel(rng.random_range(0..set.k())) } else { h.image_id };
            let boxes = h
                .boxes
                .iter()
                .map(|b| {
                    if rng.random_bool(0.3) {
                        let d = rng.random_range(0..40) as f64;
                        b.translated(d, d / 2.0).unwrap()
                    } else {
                        *b
                    }
                })
                .collect();
            (label, boxes, h.sub_question.clone())
        })
        .collect();
    let answer = if rng.random_bool(0.3) { "something else".to_owned() } else { gold.answer.clone() };
    ModelOutput::new(answer, EvidenceChain::from_hops(hops).unwrap()).unwrap()
}

fn c4_monotone_invariant() -> Verdict {
    let corpus = synth::corpus(60, 80, 21).unwrap();
    let cfg = MatchConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let sets: Vec<CandidateSet> = corpus
        .records
        .iter()
        .enumerate()
        .map(|(i, r)| build_candidate_set(r, &corpus.pool, 5, i as u64, DistractorPolicy::GlobalPool).unwrap())
        .collect();

    let mut reports = 0;
    let mut loc_above_chain = 0;
    for _ in 0..20 {
        let scores: Vec<ExampleScore> = corpus
            .records
            .iter()
            .zip(&sets)
            .map(|(r, s)| score_example(r, s, Some(&noisy_prediction(r, s, &mut rng)), &cfg))
            .collect();
        let report = aggregate(&scores, &corpus.records, &cfg).unwrap();
        reports += 1;
        loc_above_chain += usize::from(report.loc_acc > report.chain_acc);
        loc_above_chain += report.by_question_type.values().filter(|b| b.loc > b.chain).count();
    }

    let mut relabel_diffs = 0;
    for trial in 0..RELABEL_TRIALS {
        let i = trial % corpus.records.len();
        let (record, set) = (&corpus.records[i], &sets[i]);
        let pred = noisy_prediction(record, set, &mut rng);
        let before = score_example(record, set, Some(&pred), &cfg);
        let mut perm: Vec<usize> = (0..set.k()).collect();
        rand::seq::SliceRandom::shuffle(perm.as_mut_slice(), &mut rng);
        let (permuted, relabel) = set.permuted(&perm).unwrap();
        let moved = pred.chain.relabel(|l| relabel.get(&l).copied()).unwrap();
        let after = score_example(record, &permuted, Some(&ModelOutput::new(pred.answer.clone(), moved).unwrap()), &cfg);
        relabel_diffs += usize::from(after != before);
    }

    let mut scale_diffs = 0;
    for (record, set) in corpus.records.iter().zip(&sets) {
        let pred = noisy_prediction(record, set, &mut rng);
        let base = score_example(record, set, Some(&pred), &cfg);
        for s in [0.5, 2.0, 3.0] {
            let mut scaled = record.clone();
            for h in &mut scaled.gold_chain {
                h.boxes = h.boxes.iter().map(|b| b.scaled(s, s).unwrap()).collect();
            }
            let hops = pred
                .chain
                .hops()
                .iter()
                .map(|h| (h.image_id, h.boxes.iter().map(|b| b.scaled(s, s).unwrap()).collect(), h.sub_question.clone()));
            let spred = ModelOutput::new(pred.answer.clone(), EvidenceChain::from_hops(hops).unwrap()).unwrap();
            scale_diffs += usize::from(score_example(&scaled, set, Some(&spred), &cfg) != base);
        }
    }
    ensure(
        loc_above_chain == 0 && relabel_diffs == 0 && scale_diffs == 0,
        format!(
            "Loc>Chain in {loc_above_chain} of {reports} reports (incl. type slices); {relabel_diffs} of {RELABEL_TRIALS} relabelings changed a score; {scale_diffs} of {} scalings changed a score",
            corpus.records.len() * 3
        ),
    )
}

fn content_extent(img: &RgbaImage) -> Option<[f64; 4]> {
    let mut ext: Option<[u32; 4]> = None;
    for (x, y, p) in img.enumerate_pixels() {
        if p.0 != [255, 255, 255, 255] {
            ext = Some(match ext {
                None => [x, y, x, y],
                Some([a, b, c, d]) => [a.min(x), b.min(y), c.max(x), d.max(y)],
            });
        }
    }
    ext.map(|[a, b, c, d]| [f64::from(a), f64::from(b), f64::from(c + 1), f64::from(d + 1)])
}

/// Rebuilds the record a sample's target describes and replays it.
fn replay_sample(record: &QaRecord, emitted: &EmittedSample, fx: &Fixture) -> Result<(), String> {
    let target = parse_chain(&emitted.sample.target).map_err(|e| e.to_string())?;
    let image_of = |label: ImageLabel| -> RgbaImage {
        let path = &emitted.sample.image_refs.iter().find(|r| r.label == label).unwrap().image_path;
        match emitted.rendered.iter().find(|(p, _)| p == path) {
            Some((_, img)) => img.clone(),
            None => image::open(fx.pool.base_dir.join(path)).unwrap().to_rgba8(),
        }
    };
    for hop in target.chain.hops() {
        let img = image_of(hop.image_id);
        for b in &hop.boxes {
            let (cx, cy) = b.center();
            if *img.get_pixel(cx as u32, cy as u32) != FIXTURE_PAGE_COLOR {
                return Err(format!("{}: box {:?} center is off the content", record.question_id, b.to_array()));
            }
        }
    }

    let (candset, hop_offset) = match &emitted.candidates {
        Some(set) => (set.clone(), 0),
        None => {
            // A single-image target covers one hop against a one-document set.
            let hop = emitted.sample.provenance.hop.unwrap() - 1;
            let doc = &record.gold_chain[hop].doc_id;
            let pool = coe_core::DocumentPool::new(fx.pool.pool.get(doc).cloned()).unwrap();
            let mut single = record.clone();
            single.gold_chain = vec![record.gold_chain[hop].clone()];
            single.hop_count = 1;
            let set = build_candidate_set(&single, &pool, 1, 0, DistractorPolicy::GlobalPool).map_err(|e| e.to_string())?;
            (set, hop)
        }
    };
    let mut rebuilt = record.clone();
    rebuilt.gold_chain = target
        .chain
        .hops()
        .iter()
        .enumerate()
        .map(|(i, h)| {
            let mut g = record.gold_chain[i + hop_offset].clone();
            assert_eq!(candset.doc_for(h.image_id), Some(g.doc_id.as_str()), "label points at the wrong document");
            g.boxes = h.boxes.clone();
            g
        })
        .collect();
    rebuilt.hop_count = rebuilt.gold_chain.len();
    let replay = gold_replay(&rebuilt, &candset).map_err(|e| e.to_string())?;
    let s = score_example(&rebuilt, &candset, Some(&replay), &MatchConfig::default());
    let labels_agree = replay.chain.hops().iter().zip(target.chain.hops()).all(|(a, b)| a.image_id == b.image_id);
    if s.em && s.chain_correct && s.loc_correct && labels_agree {
        Ok(())
    } else {
        Err(format!("{}: replay scored {s:?}", record.question_id))
    }
}

fn c5_augmentation() -> Verdict {
    let cfg = AugConfig {
        min_crop_keep: 0.8,
        scale_jitter: 0.3,
        aspect_jitter: 0.3,
        max_translate: 0.1,
        ..AugConfig::none()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut done, mut dropped, mut worst) = (0, 0, 0.0f64);
    let mut seed = 0u64;
    while done < AUGMENTATIONS {
        seed += 1;
        let b = synth::random_box(&mut rng, 160, 120);
        let img = synth::page_raster(160, 120, &[b], Rgba([200, 30, 30, 255]));
        let Some(out) = augment_sample(&img, &[b], seed, &cfg).unwrap() else {
            dropped += 1;
            continue;
        };
        let Some(got) = content_extent(&out.image) else {
            return Verdict::Fail(format!("seed {seed}: content vanished but the box was kept"));
        };
        for (edge, want) in got.iter().zip(out.boxes[0].to_array()) {
            worst = worst.max((edge - want).abs());
        }
        done += 1;
    }

    let fx = bundled();
    let rasters: BTreeMap<String, RgbaImage> = fx
        .pool
        .pool
        .documents()
        .map(|d| (d.doc_id.clone(), fx.pool.raster(&d.doc_id).unwrap()))
        .collect();
    let source = |doc: &str| -> coe_core::Result<RgbaImage> { rasters.get(doc).cloned().ok_or_else(|| Error::GoldMissing(doc.to_owned())) };
    let sets = candidate_sets(&fx.records, &fx.pool, 5, RUN_SEED);
    let mut samples = 0;
    let mut failures = Vec::new();
    for (i, (record, set)) in fx.records.iter().zip(&sets).enumerate() {
        let seed = 1000 + i as u64;
        let permuted = AugConfig {
            permute_candidates: true,
            ..AugConfig::default()
        };
        let mut emitted = emit_phase1(record, &fx.pool.pool, &source, seed, &AugConfig::default()).unwrap();
        emitted.push(emit_phase2(record, set, &fx.pool.pool, &source, seed, &AugConfig::default()).unwrap());
        emitted.push(emit_phase2(record, set, &fx.pool.pool, &source, seed, &permuted).unwrap());
        for e in &emitted {
            samples += 1;
            if let Err(msg) = replay_sample(record, e, &fx) {
                failures.push(msg);
            }
        }
    }
    ensure(
        worst <= EDGE_TOL_PX && failures.is_empty(),
        format!(
            "{done} augmentations ({dropped} dropped by retention), worst edge error {worst:.2} px (tol {EDGE_TOL_PX}); {} of {samples} emitted samples replay at 100%{}",
            samples - failures.len(),
            failures.first().map(|f| format!("; first failure: {f}")).unwrap_or_default()
        ),
    )
}

fn c6_annotator() -> Verdict {
    let cfg = AnnotatorConfig::default();
    let (w, h) = (f64::from(synth::PAGE_WIDTH), f64::from(synth::PAGE_HEIGHT));
    let page = synth::element_page(20, 0);
    let exact = page
        .iter()
        .filter(|el| {
            matches!(match_sentence(&el.text, &page, &cfg), Some(m) if m.element_id == el.element_id && m.method == MatchMethod::Exact)
        })
        .count();

    let (mut noisy_hits, mut noisy_total, mut bad_boxes) = (0, 0, 0);
    for p in 0..20u64 {
        let page = synth::element_page(20, p);
        for (i, el) in page.iter().enumerate() {
            let sentence = synth::add_char_noise(&el.text, NOISE_RATE, p * 100 + i as u64);
            noisy_total += 1;
            if let Some(m) = match_sentence(&sentence, &page, &cfg) {
                noisy_hits += usize::from(m.element_id == el.element_id);
                bad_boxes += usize::from(!(m.bbox.area() > 0.0 && m.bbox.within_frame(w, h)));
            }
            let b = element_box(el, w, h).unwrap();
            bad_boxes += usize::from(!(b.area() > 0.0 && b.within_frame(w, h)));
        }
    }
    let recall = noisy_hits as f64 / noisy_total as f64;
    ensure(
        exact == page.len() && recall >= NOISY_RECALL_MIN && bad_boxes == 0,
        format!(
            "exact recall {exact}/{}; {:.0}% noise recall {recall:.3} over {noisy_total} sentences (min {NOISY_RECALL_MIN}, overlap >= {}); {bad_boxes} invalid boxes",
            page.len(),
            NOISE_RATE * 100.0,
            cfg.min_overlap_score
        ),
    )
}

fn random_chain(rng: &mut ChaCha8Rng) -> ModelOutput {
    let text = |rng: &mut ChaCha8Rng, n: usize| -> String { (0..n).map(|_| char::from(rng.random_range(b' '..=b'~'))).collect() };
    let hops: Vec<_> = (0..rng.random_range(1..=6))
        .map(|_| {
            let boxes = (0..rng.random_range(1..=4))
                .map(|_| {
                    let (x, y) = (rng.random_range(-1e3..1e3), rng.random_range(-1e3..1e3));
                    BoundingBox::new(x, y, x + rng.random_range(0.01..500.0), y + rng.random_range(0.01..500.0)).unwrap()
                })
                .collect();
            let len = rng.random_range(0..30);
            (ImageLabel(rng.random_range(0..50)), boxes, text(rng, len))
        })
        .collect();
    let len = rng.random_range(0..20);
    let answer = format!("{}a{}", text(rng, len), text(rng, 3));
    ModelOutput::new(answer, EvidenceChain::from_hops(hops).unwrap()).unwrap()
}

fn c7_round_trip() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mismatches = (0..ROUND_TRIPS)
        .filter(|_| {
            let x = random_chain(&mut rng);
            parse_chain(&emit_chain(&x).unwrap()).as_ref() != Ok(&x)
        })
        .count();
    let malformed = [
        ("[]", "$"),
        ("not json", "$"),
        (r#"{"chain":[]}"#, "answer"),
        (r#"{"answer":"a"}"#, "chain"),
        (r#"{"answer":"a","chain":[]}"#, "chain"),
        (r#"{"answer":"a","chain":[{"hop":1,"image_id":"img_0","boxes":[],"sub_question":"q"}]}"#, "chain[0].boxes"),
        (r#"{"answer":"a","chain":[{"hop":1,"image_id":"img_0","boxes":[[0,0,"x",1]],"sub_question":"q"}]}"#, "chain[0].boxes[0][2]"),
        (r#"{"answer":"a","chain":[{"hop":1,"image_id":"img_0","boxes":[[0,0,1]],"sub_question":"q"}]}"#, "chain[0].boxes[0]"),
        (r#"{"answer":"a","chain":[{"image_id":"img_0","boxes":[[0,0,1,1]],"sub_question":"q"}]}"#, "chain[0].hop"),
        (r#"{"answer":"a","chain":[{"hop":1,"image_id":"img_0","boxes":[[0,0,1,1]]}]}"#, "chain[0].sub_question"),
        (r#"{"answer":"a","chain":[{"hop":1,"image_id":"photo","boxes":[[0,0,1,1]],"sub_question":"q"}]}"#, "chain[0].image_id"),
        (r#"{"answer":"a","chain":[{"hop":1,"image_id":"img_0","boxes":[[0,0,1,1]],"sub_question":"q"},{"hop":2,"image_id":"img_1","sub_question":"q"}]}"#, "chain[1].boxes"),
    ];
    let wrong: Vec<&str> = malformed
        .iter()
        .filter(|(doc, path)| {
            let err = parse_chain(doc).unwrap_err();
            !(matches!(err, Error::Schema { .. }) && err.path() == Some(path))
        })
        .map(|(doc, _)| *doc)
        .collect();
    ensure(
        mismatches == 0 && wrong.is_empty(),
        format!(
            "{} of {ROUND_TRIPS} random chains round-trip; {} of {} malformed documents give the expected field path{}",
            ROUND_TRIPS - mismatches,
            malformed.len() - wrong.len(),
            malformed.len(),
            wrong.first().map(|d| format!("; first miss: {d}")).unwrap_or_default()
        ),
    )
}

fn c8_stats() -> Verdict {
    let tmp = tempfile::tempdir().unwrap();
    let fx = bundled();
    let stats = cmd_stats(&fixture_cfg(tmp.path())).unwrap();
    let lines: Vec<serde_json::Value> = files::read_jsonl(&fx.dataset).unwrap();
    let n = lines.len() as f64;
    let (mut boxes, mut q_tokens, mut a_tokens) = (0usize, 0usize, 0usize);
    let mut shots = HashSet::new();
    let mut hops: BTreeMap<usize, usize> = BTreeMap::new();
    let mut types: BTreeMap<String, usize> = BTreeMap::new();
    for l in &lines {
        for hop in l["gold_chain"].as_array().unwrap() {
            boxes += hop["boxes"].as_array().unwrap().len();
            shots.insert(hop["doc_id"].as_str().unwrap().to_owned());
        }
        *hops.entry(l["hop_count"].as_u64().unwrap() as usize).or_default() += 1;
        *types.entry(l["question_type"].as_str().unwrap().to_owned()).or_default() += 1;
        q_tokens += l["question"].as_str().unwrap().split_whitespace().count();
        a_tokens += l["gold_answers"][0].as_str().unwrap().split_whitespace().count();
    }
    let mut mismatches = Vec::new();
    let mut check = |name: &str, ok: bool| {
        if !ok {
            mismatches.push(name.to_owned());
        }
    };
    check("questions", stats.questions == lines.len());
    check("total_boxes", stats.total_boxes == boxes);
    check("unique_screenshots", stats.unique_screenshots == shots.len());
    check("avg_boxes", stats.avg_boxes == boxes as f64 / n);
    check("avg_question_tokens", stats.avg_question_tokens == q_tokens as f64 / n);
    check("avg_answer_tokens", stats.avg_answer_tokens == a_tokens as f64 / n);
    check("hop_distribution", hops.iter().all(|(h, c)| stats.hop_distribution.get(h).map(|s| s.count) == Some(*c)));
    check("type_distribution", types.iter().all(|(t, c)| stats.type_distribution.get(t).map(|s| s.count) == Some(*c)));

    let json: serde_json::Value = serde_json::from_slice(&std::fs::read(tmp.path().join("stats.json")).unwrap()).unwrap();
    let keys = [
        "questions",
        "avg_question_tokens",
        "avg_answer_tokens",
        "unique_screenshots",
        "total_boxes",
        "avg_boxes",
        "hop_distribution",
        "type_distribution",
    ];
    let missing: Vec<&str> = keys.iter().copied().filter(|k| json.get(k).is_none()).collect();
    ensure(
        mismatches.is_empty() && missing.is_empty(),
        format!(
            "{} of 8 statistics match the hand count{}; {} of {} report keys present (full-release avg-boxes check not applicable: no release data)",
            8 - mismatches.len(),
            if mismatches.is_empty() { String::new() } else { format!(" (off: {})", mismatches.join(", ")) },
            keys.len() - missing.len(),
            keys.len()
        ),
    )
}

fn c9_split() -> Verdict {
    let corpus = synth::corpus(SPLIT_RECORDS, 400, 9).unwrap();
    let mut overlaps = 0;
    let mut lost = 0;
    for seed in 0..SPLIT_SEEDS {
        let (train, test) = split_entity_chain(&corpus.records, 0.2, seed);
        let keys: HashSet<&str> = train.iter().map(|r| r.entity_chain_key.as_str()).collect();
        overlaps += test.iter().filter(|r| keys.contains(r.entity_chain_key.as_str())).count();
        lost += usize::from(train.len() + test.len() != corpus.records.len());
    }
    ensure(
        overlaps == 0 && lost == 0,
        format!("{overlaps} shared entity-chain keys over {SPLIT_SEEDS} seeds on {SPLIT_RECORDS} records; {lost} splits lost records"),
    )
}

const CAPTURE_PAGE: &str = r#"<!doctype html>
<html><head><style>
html, body { margin: 0; background: #fff; }
#target { position: absolute; left: 40px; top: 30px; width: 100px; height: 50px; margin: 0;
  background: rgb(255, 0, 0); color: rgb(255, 0, 0); font: 16px/16px monospace; overflow: hidden; }
</style></head>
<body><p id="target">evidence box</p></body></html>"#;

fn c10_capture() -> Verdict {
    use coe_harness::capture::{capture_page, SessionConfig, WebDriverSession};

    let Ok(webdriver_url) = std::env::var("COE_WEBDRIVER_URL") else {
        return Verdict::Skip("no browser endpoint (set COE_WEBDRIVER_URL to a WebDriver server)".into());
    };
    let server = tiny_http::Server::http("127.0.0.1:0").unwrap();
    let url = format!("http://127.0.0.1:{}/page.html", server.server_addr().to_ip().unwrap().port());
    let serving = std::thread::spawn(move || {
        for req in server.incoming_requests() {
            let header = tiny_http::Header::from_bytes("Content-Type", "text/html; charset=utf-8").unwrap();
            let _ = req.respond(tiny_http::Response::from_string(CAPTURE_PAGE).with_header(header));
        }
    });

    let cfg = SessionConfig {
        webdriver_url,
        ..SessionConfig::default()
    };
    let result = (|| -> coe_harness::Result<Verdict> {
        let session = WebDriverSession::start(&cfg)?;
        let capture = capture_page(&session, "fixture", &url, &cfg)?;
        let css = session.execute("const r = document.getElementById('target').getBoundingClientRect(); return [r.left + scrollX, r.top + scrollY, r.right + scrollX, r.bottom + scrollY];")?;
        let css: [f64; 4] = serde_json::from_value(css).map_err(|e| coe_harness::HarnessError::ScriptFailure(e.to_string()))?;
        let dpr = capture.snapshot.device_pixel_ratio;
        let expected = [40.0 * dpr, 30.0 * dpr, 140.0 * dpr, 80.0 * dpr];
        let measured = css.map(|v| v * dpr);

        let png = image::load_from_memory(&capture.png).unwrap().to_rgba8();
        let red = |p: &Rgba<u8>| p.0[0] > 200 && p.0[1] < 60 && p.0[2] < 60;
        let mut ext: Option<[u32; 4]> = None;
        for (x, y, p) in png.enumerate_pixels() {
            if red(p) {
                ext = Some(match ext {
                    None => [x, y, x + 1, y + 1],
                    Some([a, b, c, d]) => [a.min(x), b.min(y), c.max(x + 1), d.max(y + 1)],
                });
            }
        }
        let Some(ext) = ext else {
            return Ok(Verdict::Fail("element not visible in the screenshot".into()));
        };
        let ext = ext.map(f64::from);
        let rect_err = measured.iter().zip(&expected).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let raster_err = ext.iter().zip(&expected).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);

        let region = BoundingBox::new(expected[0], expected[1], expected[2], expected[3]).unwrap();
        let line_inside = capture.snapshot.elements.iter().find(|e| e.text == "evidence box").is_some_and(|e| {
            e.line_rects.iter().all(|r| {
                r.x1() >= region.x1() - EDGE_TOL_PX
                    && r.y1() >= region.y1() - EDGE_TOL_PX
                    && r.x2() <= region.x2() + EDGE_TOL_PX
                    && r.y2() <= region.y2() + EDGE_TOL_PX
            })
        });
        Ok(ensure(
            rect_err <= EDGE_TOL_PX && raster_err <= EDGE_TOL_PX && line_inside,
            format!(
                "dpr {dpr}: rect error {rect_err:.2} px, rendered-pixel error {raster_err:.2} px (tol {EDGE_TOL_PX}); extracted line inside element region: {line_inside}"
            ),
        ))
    })();
    drop(serving);
    result.unwrap_or_else(|e| Verdict::Fail(format!("capture failed: {e}")))
}

fn main() -> ExitCode {
    let checks: [(&str, Check); 10] = [
        ("gold-replay oracle", c1_gold_replay),
        ("perturbation oracle", c2_perturbations),
        ("IoU oracle and threshold", c3_iou_oracle),
        ("metric monotonicity and invariance", c4_monotone_invariant),
        ("augmentation safety", c5_augmentation),
        ("annotator fidelity", c6_annotator),
        ("chain round trip", c7_round_trip),
        ("statistics consistency", c8_stats),
        ("split hygiene", c9_split),
        ("capture correctness", c10_capture),
    ];
    let mut failed = 0;
    for (i, (name, check)) in checks.iter().enumerate() {
        let start = Instant::now();
        let verdict = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|panic| {
            let msg = panic
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| panic.downcast_ref::<&str>().map(|s| (*s).to_owned()))
                .unwrap_or_default();
            Verdict::Fail(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        let (tag, detail) = match verdict {
            Verdict::Pass(d) => ("PASS", d),
            Verdict::Fail(d) => {
                failed += 1;
                ("FAIL", d)
            }
            Verdict::Skip(d) => ("SKIP", d),
        };
        println!("{tag} {:>2} {name}: {detail} [{secs:.2} s]", i + 1);
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
