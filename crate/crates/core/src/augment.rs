//! Box-consistent geometric augmentation and curriculum target emission.
//!
//! A transform crops (optional), scales per axis, then translates. The output
//! canvas is the scaled crop size; content shifted off the canvas is lost and
//! exposed area is filled white. Boxes follow the same mapping and are
//! dropped when clipping keeps less than [`BOX_RETENTION`] of their area.

use image::{imageops, Rgba, RgbaImage};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::chain::{emit_chain, EvidenceChain, ImageLabel, ModelOutput};
use crate::dataset::{CandidateSet, DocumentPool};
use crate::error::{Error, Result};
use crate::geometry::BoundingBox;
use crate::metrics::{gold_replay, template_sub_question};
use crate::record::QaRecord;

/// Minimum fraction of a transformed box's area that must stay in frame.
pub const BOX_RETENTION: f64 = 0.7;

const FILL: Rgba<u8> = Rgba([255, 255, 255, 255]);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineTransform {
    pub sx: f64,
    pub sy: f64,
    pub dx: f64,
    pub dy: f64,
    /// Source-space crop applied before scaling.
    pub crop: Option<BoundingBox>,
}

impl AffineTransform {
    pub fn identity() -> Self {
        Self {
            sx: 1.0,
            sy: 1.0,
            dx: 0.0,
            dy: 0.0,
            crop: None,
        }
    }

    pub fn validate(&self, src_dims: (u32, u32)) -> Result<()> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.sx) || !positive(self.sy) {
            return Err(Error::InvalidTransform(format!("scales must be positive, got {} and {}", self.sx, self.sy)));
        }
        if !self.dx.is_finite() || !self.dy.is_finite() {
            return Err(Error::InvalidTransform("non-finite translation".into()));
        }
        if let Some(c) = self.crop {
            if !c.within_frame(f64::from(src_dims.0), f64::from(src_dims.1)) {
                return Err(Error::InvalidTransform(format!("crop {:?} leaves the source frame", c.to_array())));
            }
        }
        Ok(())
    }

    fn origin(&self) -> (f64, f64) {
        self.crop.map_or((0.0, 0.0), |c| (c.x1(), c.y1()))
    }

    /// Canvas size produced from a `src_dims` source.
    pub fn output_dims(&self, src_dims: (u32, u32)) -> (u32, u32) {
        let (w, h) = self
            .crop
            .map_or((f64::from(src_dims.0), f64::from(src_dims.1)), |c| (c.width(), c.height()));
        (
            ((w * self.sx).round() as u32).max(1),
            ((h * self.sy).round() as u32).max(1),
        )
    }

    pub fn map_point(&self, x: f64, y: f64) -> (f64, f64) {
        let (ox, oy) = self.origin();
        ((x - ox) * self.sx + self.dx, (y - oy) * self.sy + self.dy)
    }

    pub fn summary(&self) -> String {
        let crop = self
            .crop
            .map_or_else(|| "none".to_owned(), |c| format!("{:?}", c.to_array()));
        format!("crop={crop} sx={} sy={} dx={} dy={}", self.sx, self.sy, self.dx, self.dy)
    }
}

/// Maps `b` through `t` and clips it to `dst_dims`.
///
/// `Ok(None)` means the box was dropped: it left the frame or kept less than
/// [`BOX_RETENTION`] of its transformed area.
pub fn transform_box(b: &BoundingBox, t: &AffineTransform, src_dims: (u32, u32), dst_dims: (u32, u32)) -> Result<Option<BoundingBox>> {
    t.validate(src_dims)?;
    let (x1, y1) = t.map_point(b.x1(), b.y1());
    let (x2, y2) = t.map_point(b.x2(), b.y2());
    let mapped = BoundingBox::new(x1, y1, x2, y2).map_err(|e| Error::InvalidTransform(e.to_string()))?;
    let frame = BoundingBox::new(0.0, 0.0, f64::from(dst_dims.0), f64::from(dst_dims.1))
        .map_err(|_| Error::InvalidTransform("empty destination frame".into()))?;
    // Source pixels outside the crop never reach the canvas.
    let visible = match t.crop {
        Some(c) => {
            let (vx1, vy1) = t.map_point(c.x1(), c.y1());
            let (vx2, vy2) = t.map_point(c.x2(), c.y2());
            BoundingBox::new(vx1, vy1, vx2, vy2)
                .ok()
                .and_then(|v| v.intersection(&frame))
        }
        None => {
            let (vx2, vy2) = t.map_point(f64::from(src_dims.0), f64::from(src_dims.1));
            BoundingBox::new(t.dx, t.dy, vx2, vy2).ok().and_then(|v| v.intersection(&frame))
        }
    };
    Ok(visible
        .and_then(|v| mapped.intersection(&v))
        .filter(|kept| kept.area() >= BOX_RETENTION * mapped.area()))
}

/// Nearest-neighbour warp sampled at destination pixel centers.
pub fn warp_image(image: &RgbaImage, t: &AffineTransform) -> Result<RgbaImage> {
    let src_dims = image.dimensions();
    t.validate(src_dims)?;
    let (w, h) = t.output_dims(src_dims);
    let (ox, oy) = t.origin();
    let (cx2, cy2) = t
        .crop
        .map_or((f64::from(src_dims.0), f64::from(src_dims.1)), |c| (c.x2(), c.y2()));
    let mut out = RgbaImage::from_pixel(w, h, FILL);
    for v in 0..h {
        let sy = (f64::from(v) + 0.5 - t.dy) / t.sy + oy;
        if sy < oy || sy >= cy2 {
            continue;
        }
        let row = sy.floor() as u32;
        for u in 0..w {
            let sx = (f64::from(u) + 0.5 - t.dx) / t.sx + ox;
            if sx < ox || sx >= cx2 {
                continue;
            }
            let col = sx.floor() as u32;
            if col < src_dims.0 && row < src_dims.1 {
                out.put_pixel(u, v, *image.get_pixel(col, row));
            }
        }
    }
    Ok(out)
}

/// Ranges for random geometric augmentation. All-zero strengths give the identity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugConfig {
    /// Smallest fraction of each side a crop keeps, in (0, 1]. 1 disables cropping.
    pub min_crop_keep: f64,
    /// Uniform scale drawn from `[1 - scale_jitter, 1 + scale_jitter]`.
    pub scale_jitter: f64,
    /// Aspect-ratio change drawn from `[-aspect_jitter, aspect_jitter]`.
    pub aspect_jitter: f64,
    /// Translation bound as a fraction of the canvas size.
    pub max_translate: f64,
    /// Optional longest side applied after the geometric transform.
    #[serde(default)]
    pub resolution: Option<u32>,
    /// Shuffle candidate order in phase-2 samples.
    #[serde(default)]
    pub permute_candidates: bool,
    /// Directory prefix for rendered (augmented) images.
    #[serde(default = "default_image_dir")]
    pub image_dir: String,
}

fn default_image_dir() -> String {
    "images".to_owned()
}

impl AugConfig {
    pub fn none() -> Self {
        Self {
            min_crop_keep: 1.0,
            scale_jitter: 0.0,
            aspect_jitter: 0.0,
            max_translate: 0.0,
            resolution: None,
            permute_candidates: false,
            image_dir: default_image_dir(),
        }
    }

    pub fn is_identity(&self) -> bool {
        self.min_crop_keep >= 1.0 && self.scale_jitter == 0.0 && self.aspect_jitter == 0.0 && self.max_translate == 0.0
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.min_crop_keep > 0.0
            && self.min_crop_keep <= 1.0
            && (0.0..1.0).contains(&self.scale_jitter)
            && (0.0..1.0).contains(&self.aspect_jitter)
            && (0.0..0.5).contains(&self.max_translate)
            && self.resolution != Some(0);
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("augmentation ranges out of bounds: {self:?}")))
        }
    }
}

impl Default for AugConfig {
    fn default() -> Self {
        Self {
            min_crop_keep: 0.9,
            scale_jitter: 0.1,
            aspect_jitter: 0.1,
            max_translate: 0.03,
            ..Self::none()
        }
    }
}

/// Draws a transform for a `src_dims` image. Crop corners and offsets are
/// whole pixels.
pub fn random_transform(src_dims: (u32, u32), seed: u64, cfg: &AugConfig) -> Result<AffineTransform> {
    cfg.validate()?;
    if cfg.is_identity() {
        return Ok(AffineTransform::identity());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (f64::from(src_dims.0), f64::from(src_dims.1));
    let mut draw = |lo: f64, hi: f64| if hi > lo { rng.random_range(lo..=hi) } else { lo };

    let keep_w = draw(cfg.min_crop_keep, 1.0);
    let keep_h = draw(cfg.min_crop_keep, 1.0);
    let cw = (w * keep_w).round().clamp(1.0, w);
    let ch = (h * keep_h).round().clamp(1.0, h);
    let cx = draw(0.0, w - cw).round();
    let cy = draw(0.0, h - ch).round();
    let crop = (cw < w || ch < h).then(|| BoundingBox::new(cx, cy, cx + cw, cy + ch)).transpose()?;

    let scale = draw(1.0 - cfg.scale_jitter, 1.0 + cfg.scale_jitter);
    let aspect = 1.0 + draw(-cfg.aspect_jitter, cfg.aspect_jitter);
    let (sx, sy) = (scale * aspect.sqrt(), scale / aspect.sqrt());
    let dx = draw(-cfg.max_translate, cfg.max_translate) * cw * sx;
    let dy = draw(-cfg.max_translate, cfg.max_translate) * ch * sy;
    Ok(AffineTransform {
        sx,
        sy,
        dx: dx.round(),
        dy: dy.round(),
        crop,
    })
}

#[derive(Debug, Clone)]
pub struct Augmented {
    pub image: RgbaImage,
    pub boxes: Vec<BoundingBox>,
    pub transform: AffineTransform,
}

/// Applies one seeded random transform to the raster and all boxes.
///
/// Returns `None` when any box is dropped.
pub fn augment_sample(image: &RgbaImage, boxes: &[BoundingBox], seed: u64, cfg: &AugConfig) -> Result<Option<Augmented>> {
    let src_dims = image.dimensions();
    let transform = random_transform(src_dims, seed, cfg)?;
    let dst_dims = transform.output_dims(src_dims);
    let mut moved = Vec::with_capacity(boxes.len());
    for b in boxes {
        match transform_box(b, &transform, src_dims, dst_dims)? {
            Some(m) => moved.push(m),
            None => return Ok(None),
        }
    }
    let image = if transform == AffineTransform::identity() {
        image.clone()
    } else {
        warp_image(image, &transform)?
    };
    Ok(Some(Augmented {
        image,
        boxes: moved,
        transform,
    }))
}

/// Output size for a uniform rescale to `longest_side`.
pub fn resized_dims(src_dims: (u32, u32), longest_side: u32) -> (u32, u32) {
    let (w, h) = src_dims;
    let scale = f64::from(longest_side) / f64::from(w.max(h));
    (
        ((f64::from(w) * scale).round() as u32).max(1),
        ((f64::from(h) * scale).round() as u32).max(1),
    )
}

/// Scales boxes from `src_dims` to `dst_dims` per axis.
pub fn rescale_boxes(boxes: &[BoundingBox], src_dims: (u32, u32), dst_dims: (u32, u32)) -> Result<Vec<BoundingBox>> {
    let sx = f64::from(dst_dims.0) / f64::from(src_dims.0);
    let sy = f64::from(dst_dims.1) / f64::from(src_dims.1);
    boxes.iter().map(|b| b.scaled(sx, sy)).collect()
}

/// Uniformly rescales so the longer side equals `longest_side`.
pub fn resize_resolution(image: &RgbaImage, boxes: &[BoundingBox], longest_side: u32) -> Result<(RgbaImage, Vec<BoundingBox>)> {
    if longest_side == 0 {
        return Err(Error::Config("longest_side must be positive".into()));
    }
    let src = image.dimensions();
    let dst = resized_dims(src, longest_side);
    if dst == src {
        return Ok((image.clone(), boxes.to_vec()));
    }
    let resized = imageops::resize(image, dst.0, dst.1, imageops::FilterType::Triangle);
    Ok((resized, rescale_boxes(boxes, src, dst)?))
}

/// One variant per entry of `sides`.
pub fn resolution_variants(image: &RgbaImage, boxes: &[BoundingBox], sides: &[u32]) -> Result<Vec<(u32, RgbaImage, Vec<BoundingBox>)>> {
    sides
        .iter()
        .map(|&s| resize_resolution(image, boxes, s).map(|(i, b)| (s, i, b)))
        .collect()
}

/// Shuffles candidate positions and rewrites the target's labels to match.
/// Hop order is untouched.
pub fn permute_candidates(candset: &CandidateSet, target: &EvidenceChain, seed: u64) -> Result<(CandidateSet, EvidenceChain)> {
    for (i, hop) in target.hops().iter().enumerate() {
        if !candset.gold_map().values().any(|l| *l == hop.image_id) {
            return Err(Error::Inconsistent(format!(
                "chain[{i}].image_id {} does not resolve to a gold document",
                hop.image_id
            )));
        }
    }
    let mut perm: Vec<usize> = (0..candset.k()).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    permute_with(candset, target, &perm)
}

/// Applies an explicit permutation: new position `i` holds old position `perm[i]`.
pub fn permute_with(candset: &CandidateSet, target: &EvidenceChain, perm: &[usize]) -> Result<(CandidateSet, EvidenceChain)> {
    let (set, relabel) = candset.permuted(perm)?;
    let chain = target.relabel(|l| relabel.get(&l).copied())?;
    Ok((set, chain))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRef {
    pub label: ImageLabel,
    pub image_path: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub question_id: String,
    pub seed: u64,
    /// Per-image transform summaries, `None` for untouched images.
    pub transforms: Vec<Option<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hop: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resolution: Option<u32>,
    pub permuted: bool,
    /// True when augmentation was rejected and the clean sample was used.
    pub fell_back: bool,
}

/// One training example. `prompt_text` is the user turn and `target` the
/// assistant turn; only the target is supervised.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSample {
    pub phase: u8,
    pub prompt_text: String,
    pub image_refs: Vec<ImageRef>,
    pub target: String,
    pub provenance: Provenance,
}

/// A sample plus any rasters it references that must be written out.
#[derive(Debug, Clone)]
pub struct EmittedSample {
    pub sample: TrainingSample,
    pub rendered: Vec<(String, RgbaImage)>,
    /// Candidate set the phase-2 target's labels refer to.
    pub candidates: Option<CandidateSet>,
}

/// Source of document rasters for augmentation.
pub trait RasterSource {
    fn load(&self, doc_id: &str) -> Result<RgbaImage>;
}

impl<F> RasterSource for F
where
    F: Fn(&str) -> Result<RgbaImage>,
{
    fn load(&self, doc_id: &str) -> Result<RgbaImage> {
        self(doc_id)
    }
}

/// Output schema description embedded in prompts.
pub const OUTPUT_SCHEMA: &str = r#"{"answer": <string>, "chain": [{"hop": <int>, "image_id": "img_<k>", "boxes": [[x1, y1, x2, y2], ...], "sub_question": <string>}, ...]}"#;

pub fn phase1_prompt(question: &str, hop: usize, sub_question: &str) -> String {
    format!(
        "You are given one document screenshot labeled img_0.\n\
         Question: {question}\n\
         Hop {hop}: {sub_question}\n\
         Return the evidence region for this hop as pixel boxes [x1, y1, x2, y2] in JSON: {OUTPUT_SCHEMA}"
    )
}

pub fn phase2_prompt(question: &str, labels: &[ImageLabel]) -> String {
    let listed = labels.iter().map(ToString::to_string).collect::<Vec<_>>().join(", ");
    format!(
        "You are given {} candidate document screenshots labeled {listed}.\n\
         Question: {question}\n\
         Answer the question and list the evidence chain in logical reasoning order. \
         Each hop names the image_id it uses, one or more pixel boxes [x1, y1, x2, y2], and a short sub-question. \
         Respond with JSON only: {OUTPUT_SCHEMA}",
        labels.len()
    )
}

fn safe_name(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

fn mix(seed: u64, a: u64, b: u64) -> u64 {
    seed ^ a.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ b.wrapping_mul(0xc2b2_ae3d_27d4_eb4f)
}

/// Augments (and optionally resizes) one image with its boxes.
fn render(
    source: &dyn RasterSource,
    doc_id: &str,
    boxes: &[BoundingBox],
    seed: u64,
    cfg: &AugConfig,
) -> Result<Option<(RgbaImage, Vec<BoundingBox>, String)>> {
    let image = source.load(doc_id)?;
    let Some(aug) = augment_sample(&image, boxes, seed, cfg)? else {
        return Ok(None);
    };
    let mut summary = aug.transform.summary();
    let (image, boxes) = match cfg.resolution {
        Some(side) => {
            summary.push_str(&format!(" longest={side}"));
            resize_resolution(&aug.image, &aug.boxes, side)?
        }
        None => (aug.image, aug.boxes),
    };
    Ok(Some((image, boxes, summary)))
}

/// Phase-1 samples: one single-image localization target per gold hop.
///
/// When augmentation drops a box the hop falls back to the clean image.
pub fn emit_phase1(
    record: &QaRecord,
    pool: &DocumentPool,
    source: &dyn RasterSource,
    seed: u64,
    cfg: &AugConfig,
) -> Result<Vec<EmittedSample>> {
    record.check()?;
    let answer = record.gold_answers[0].clone();
    let mut out = Vec::with_capacity(record.hop_count);
    for (i, hop) in record.gold_chain.iter().enumerate() {
        let doc = pool
            .get(&hop.doc_id)
            .ok_or_else(|| Error::GoldMissing(hop.doc_id.clone()))?;
        let sub_question = template_sub_question(i + 1);
        let hop_seed = mix(seed, i as u64 + 1, 1);

        let transformed = if cfg.is_identity() && cfg.resolution.is_none() {
            None
        } else {
            render(source, &hop.doc_id, &hop.boxes, hop_seed, cfg)?
        };
        let fell_back = transformed.is_none() && !(cfg.is_identity() && cfg.resolution.is_none());
        let (path, boxes, summary, rendered) = match transformed {
            Some((image, boxes, summary)) => {
                let path = format!("{}/{}_p1_h{}.png", cfg.image_dir, safe_name(&record.question_id), i + 1);
                (path.clone(), boxes, Some(summary), vec![(path, image)])
            }
            None => (doc.image_path.clone(), hop.boxes.clone(), None, Vec::new()),
        };

        let chain = EvidenceChain::from_hops([(ImageLabel(0), boxes, sub_question.clone())])?;
        let target = emit_chain(&ModelOutput::new(answer.clone(), chain)?)?;
        out.push(EmittedSample {
            sample: TrainingSample {
                phase: 1,
                prompt_text: phase1_prompt(&record.question, i + 1, &sub_question),
                image_refs: vec![ImageRef {
                    label: ImageLabel(0),
                    image_path: path,
                }],
                target,
                provenance: Provenance {
                    question_id: record.question_id.clone(),
                    seed: hop_seed,
                    transforms: vec![summary],
                    hop: Some(i + 1),
                    resolution: cfg.resolution,
                    permuted: false,
                    fell_back,
                },
            },
            rendered,
            candidates: None,
        });
    }
    Ok(out)
}

/// Phase-2 sample: every candidate in presentation order, full gold chain as target.
///
/// With augmentation, each candidate image is transformed independently; if
/// any gold box drops the whole sample falls back to clean images.
pub fn emit_phase2(
    record: &QaRecord,
    candset: &CandidateSet,
    pool: &DocumentPool,
    source: &dyn RasterSource,
    seed: u64,
    cfg: &AugConfig,
) -> Result<EmittedSample> {
    record.check()?;
    let gold = gold_replay(record, candset)?;
    let (candset, chain) = if cfg.permute_candidates {
        permute_candidates(candset, &gold.chain, mix(seed, 0, 2))?
    } else {
        (candset.clone(), gold.chain.clone())
    };

    let augmenting = !(cfg.is_identity() && cfg.resolution.is_none());
    let mut rendered = Vec::new();
    let mut transforms = vec![None; candset.k()];
    let mut chain_boxes: Vec<Vec<BoundingBox>> = chain.hops().iter().map(|h| h.boxes.clone()).collect();
    let mut fell_back = false;

    if augmenting {
        let mut staged = Vec::new();
        let mut new_boxes = chain_boxes.clone();
        for (label, doc_id) in candset.ordered() {
            let hop_ids: Vec<usize> = chain
                .hops()
                .iter()
                .enumerate()
                .filter(|(_, h)| h.image_id == label)
                .map(|(i, _)| i)
                .collect();
            let flat: Vec<BoundingBox> = hop_ids.iter().flat_map(|&i| chain_boxes[i].iter().copied()).collect();
            let Some((image, moved, summary)) = render(source, doc_id, &flat, mix(seed, label.index() as u64 + 1, 3), cfg)? else {
                fell_back = true;
                break;
            };
            let mut cursor = moved.into_iter();
            for &i in &hop_ids {
                new_boxes[i] = cursor.by_ref().take(chain_boxes[i].len()).collect();
            }
            let path = format!("{}/{}_p2_{}.png", cfg.image_dir, safe_name(&record.question_id), label);
            staged.push((label, path, image, summary));
        }
        if !fell_back {
            chain_boxes = new_boxes;
            for (label, path, image, summary) in staged {
                transforms[label.index()] = Some(summary);
                rendered.push((path, image));
            }
        }
    }

    let image_refs = candset
        .ordered()
        .map(|(label, doc_id)| {
            let image_path = if augmenting && !fell_back {
                format!("{}/{}_p2_{}.png", cfg.image_dir, safe_name(&record.question_id), label)
            } else {
                pool.get(doc_id)
                    .map(|d| d.image_path.clone())
                    .ok_or_else(|| Error::GoldMissing(doc_id.to_owned()))?
            };
            Ok(ImageRef { label, image_path })
        })
        .collect::<Result<Vec<_>>>()?;

    let hops = chain
        .hops()
        .iter()
        .zip(chain_boxes)
        .map(|(h, boxes)| (h.image_id, boxes, h.sub_question.clone()));
    let target = emit_chain(&ModelOutput::new(gold.answer.clone(), EvidenceChain::from_hops(hops)?)?)?;
    let labels: Vec<ImageLabel> = candset.ordered().map(|(l, _)| l).collect();
    Ok(EmittedSample {
        sample: TrainingSample {
            phase: 2,
            prompt_text: phase2_prompt(&record.question, &labels),
            image_refs,
            target,
            provenance: Provenance {
                question_id: record.question_id.clone(),
                seed,
                transforms,
                hop: None,
                resolution: cfg.resolution,
                permuted: cfg.permute_candidates,
                fell_back,
            },
        },
        rendered,
        candidates: Some(candset),
    })
}
