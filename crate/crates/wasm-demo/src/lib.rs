//! Browser bindings over `coe-core`: box matching, box augmentation and
//! chain scoring. Each export returns a JSON string for the page to render.

use coe_core::augment::{random_transform, transform_box, AugConfig};
use coe_core::dataset::{validate_dataset, CandidateDocument};
use coe_core::metrics::{box_match, score_example, MatchConfig};
use coe_core::record::RecordLine;
use coe_core::{center_inside, iou, parse_chain, BoundingBox, CandidateSet, DocumentPool};
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

fn bbox(v: &[f64], what: &str) -> Result<BoundingBox, String> {
    let arr: [f64; 4] = v.try_into().map_err(|_| format!("{what}: expected four numbers"))?;
    BoundingBox::try_from(arr).map_err(|e| format!("{what}: {e}"))
}

fn match_cfg(tau: f64, center_rule: bool, inclusive: bool) -> Result<MatchConfig, String> {
    let cfg = MatchConfig {
        iou_threshold: tau,
        center_rule_enabled: center_rule,
        threshold_inclusive: inclusive,
        ..MatchConfig::default()
    };
    cfg.validate().map_err(|e| e.to_string())?;
    Ok(cfg)
}

/// IoU, center test and match decision for one predicted/gold pair.
pub fn explain_match(pred: &[f64], gold: &[f64], tau: f64, center_rule: bool, inclusive: bool) -> Result<Value, String> {
    let (p, g) = (bbox(pred, "predicted box")?, bbox(gold, "gold box")?);
    let cfg = match_cfg(tau, center_rule, inclusive)?;
    let overlap = iou(&p, &g);
    let by_iou = if inclusive { overlap >= tau } else { overlap > tau };
    Ok(json!({
        "iou": overlap,
        "intersection": p.intersection_area(&g),
        "union": p.area() + g.area() - p.intersection_area(&g),
        "center": [p.center().0, p.center().1],
        "center_inside": center_inside(&p, &g),
        "by_iou": by_iou,
        "matched": box_match(&p, &g, &cfg),
    }))
}

/// Draws one seeded transform for a `width` x `height` page and maps `b` through it.
#[allow(clippy::too_many_arguments)]
pub fn explain_augment(
    b: &[f64],
    width: u32,
    height: u32,
    seed: u64,
    min_crop_keep: f64,
    scale_jitter: f64,
    aspect_jitter: f64,
    max_translate: f64,
) -> Result<Value, String> {
    let b = bbox(b, "box")?;
    if !b.within_frame(f64::from(width), f64::from(height)) {
        return Err(format!("box lies outside the {width}x{height} page"));
    }
    let cfg = AugConfig {
        min_crop_keep,
        scale_jitter,
        aspect_jitter,
        max_translate,
        ..AugConfig::none()
    };
    cfg.validate().map_err(|e| e.to_string())?;
    let t = random_transform((width, height), seed, &cfg).map_err(|e| e.to_string())?;
    let dst = t.output_dims((width, height));
    let (x1, y1) = t.map_point(b.x1(), b.y1());
    let (x2, y2) = t.map_point(b.x2(), b.y2());
    let kept = transform_box(&b, &t, (width, height), dst).map_err(|e| e.to_string())?;
    let mapped_area = (x2 - x1) * (y2 - y1);
    Ok(json!({
        "transform": t,
        "summary": t.summary(),
        "output_size": [dst.0, dst.1],
        "mapped": [x1, y1, x2, y2],
        "box": kept.map(|k| k.to_array()),
        "kept_fraction": kept.map_or(0.0, |k| k.area() / mapped_area),
    }))
}

/// Scores a chain document against one dataset line and a candidate order.
///
/// `candidates` is a JSON array of doc ids; position i is label `img_i`.
/// Every candidate is treated as a `page_width` x `page_height` page.
pub fn explain_score(
    record_line: &str,
    candidates: &str,
    prediction: &str,
    page_width: u32,
    page_height: u32,
    tau: f64,
    center_rule: bool,
) -> Result<Value, String> {
    let line: RecordLine = serde_json::from_str(record_line).map_err(|e| format!("record: {e}"))?;
    let docs: Vec<String> = serde_json::from_str(candidates).map_err(|e| format!("candidates: {e}"))?;
    let pool = DocumentPool::new(docs.iter().map(|d| CandidateDocument {
        doc_id: d.clone(),
        image_path: String::new(),
        width: page_width,
        height: page_height,
        group_id: None,
        source_meta: Default::default(),
    }))
    .map_err(|e| format!("candidates: {e}"))?;
    let (mut records, rejected) = validate_dataset(std::slice::from_ref(&line), &pool);
    let Some(record) = records.pop() else {
        let r = &rejected[0];
        return Err(format!("record rejected ({:?}): {}", r.code, r.detail));
    };
    let set = CandidateSet::new(record.question_id.clone(), docs, record.gold_docs()).map_err(|e| e.to_string())?;
    let cfg = match_cfg(tau, center_rule, true)?;
    let gold_labels: Vec<String> = record
        .gold_chain
        .iter()
        .map(|h| set.gold_label(&h.doc_id).map(|l| l.to_string()).unwrap_or_default())
        .collect();
    match parse_chain(prediction) {
        Ok(out) => Ok(json!({
            "parsed": true,
            "gold_labels": gold_labels,
            "score": score_example(&record, &set, Some(&out), &cfg),
        })),
        Err(e) => Ok(json!({
            "parsed": false,
            "gold_labels": gold_labels,
            "error": e.to_string(),
            "path": e.path(),
            "score": score_example(&record, &set, None, &cfg),
        })),
    }
}

fn to_js(r: Result<Value, String>) -> Result<String, JsError> {
    r.map(|v| v.to_string()).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = boxMatch)]
pub fn box_match_js(pred: Vec<f64>, gold: Vec<f64>, tau: f64, center_rule: bool, inclusive: bool) -> Result<String, JsError> {
    to_js(explain_match(&pred, &gold, tau, center_rule, inclusive))
}

#[wasm_bindgen(js_name = augmentBox)]
#[allow(clippy::too_many_arguments)]
pub fn augment_box_js(
    b: Vec<f64>,
    width: u32,
    height: u32,
    seed: u32,
    min_crop_keep: f64,
    scale_jitter: f64,
    aspect_jitter: f64,
    max_translate: f64,
) -> Result<String, JsError> {
    to_js(explain_augment(&b, width, height, u64::from(seed), min_crop_keep, scale_jitter, aspect_jitter, max_translate))
}

#[wasm_bindgen(js_name = scoreChain)]
pub fn score_chain_js(
    record_line: &str,
    candidates: &str,
    prediction: &str,
    page_width: u32,
    page_height: u32,
    tau: f64,
    center_rule: bool,
) -> Result<String, JsError> {
    to_js(explain_score(record_line, candidates, prediction, page_width, page_height, tau, center_rule))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nested_box_at_threshold() {
        let v = explain_match(&[0.0, 0.0, 10.0, 3.0], &[0.0, 0.0, 10.0, 10.0], 0.3, false, true).unwrap();
        assert_eq!(v["matched"], true);
        let v = explain_match(&[0.0, 0.0, 10.0, 3.0], &[0.0, 0.0, 10.0, 10.0], 0.31, false, true).unwrap();
        assert_eq!(v["matched"], false);
        assert_eq!(v["center_inside"], true);
        assert!(explain_match(&[0.0, 0.0, 1.0], &[0.0, 0.0, 1.0, 1.0], 0.3, true, true).is_err());
    }

    #[test]
    fn identity_augmentation_keeps_the_box() {
        let v = explain_augment(&[10.0, 20.0, 50.0, 40.0], 200, 100, 3, 1.0, 0.0, 0.0, 0.0).unwrap();
        assert_eq!(v["box"], json!([10.0, 20.0, 50.0, 40.0]));
        assert_eq!(v["output_size"], json!([200, 100]));
        assert_eq!(v["kept_fraction"], 1.0);
    }

    #[test]
    fn augmentation_is_seeded() {
        let a = explain_augment(&[10.0, 20.0, 50.0, 40.0], 200, 100, 9, 0.8, 0.2, 0.2, 0.1).unwrap();
        let b = explain_augment(&[10.0, 20.0, 50.0, 40.0], 200, 100, 9, 0.8, 0.2, 0.2, 0.1).unwrap();
        assert_eq!(a, b);
        if let Some(kept) = a["box"].as_array() {
            let k: Vec<f64> = kept.iter().map(|v| v.as_f64().unwrap()).collect();
            let [w, h] = [a["output_size"][0].as_f64().unwrap(), a["output_size"][1].as_f64().unwrap()];
            assert!(k[0] >= 0.0 && k[1] >= 0.0 && k[2] <= w && k[3] <= h);
            assert!(a["kept_fraction"].as_f64().unwrap() >= 0.7);
        }
    }

    const RECORD: &str = r#"{"question_id":"q1","question":"Where?","gold_answers":["Paris"],"question_type":"compositional","hop_count":2,
        "gold_chain":[{"doc_id":"a","boxes":[[10,10,50,30]]},{"doc_id":"b","boxes":[[0,0,20,20]]}]}"#;
    const CANDIDATES: &str = r#"["x","b","a"]"#;

    #[test]
    fn scores_a_correct_chain() {
        let pred = r#"{"answer":"paris","chain":[
            {"hop":1,"image_id":"img_2","boxes":[[12,10,50,31]],"sub_question":""},
            {"hop":2,"image_id":"img_1","boxes":[[0,0,20,19]],"sub_question":""}]}"#;
        let v = explain_score(RECORD, CANDIDATES, pred, 100, 100, 0.3, true).unwrap();
        assert_eq!(v["gold_labels"], json!(["img_2", "img_1"]));
        assert_eq!(v["score"]["em"], true);
        assert_eq!(v["score"]["chain_correct"], true);
        assert_eq!(v["score"]["loc_correct"], true);
    }

    #[test]
    fn reports_parse_errors_and_bad_records() {
        let v = explain_score(RECORD, CANDIDATES, r#"{"answer":"x","chain":[{"hop":1}]}"#, 100, 100, 0.3, true).unwrap();
        assert_eq!(v["parsed"], false);
        assert_eq!(v["path"], "chain[0].image_id");
        assert_eq!(v["score"]["parse_failed"], true);

        let err = explain_score(RECORD, r#"["x","a"]"#, "{}", 100, 100, 0.3, true).unwrap_err();
        assert!(err.contains("rejected"), "{err}");
    }
}
