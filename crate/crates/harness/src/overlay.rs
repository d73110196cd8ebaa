//! Static overlays of gold and predicted boxes on candidate screenshots.

use coe_core::geometry::BoundingBox;
use image::{Rgba, RgbaImage};

pub const GOLD: Rgba<u8> = Rgba([0, 170, 60, 255]);
pub const PRED: Rgba<u8> = Rgba([220, 30, 30, 255]);

/// Solid stroke of `width` pixels drawn inside the box edges.
pub fn stroke_solid(img: &mut RgbaImage, b: &BoundingBox, width: u32, color: Rgba<u8>) {
    stroke(img, b, width, color, |_| true);
}

/// Dashed stroke: 6 pixels on, 4 off along each edge.
pub fn stroke_dashed(img: &mut RgbaImage, b: &BoundingBox, width: u32, color: Rgba<u8>) {
    stroke(img, b, width, color, |t| t % 10 < 6);
}

fn stroke(img: &mut RgbaImage, b: &BoundingBox, width: u32, color: Rgba<u8>, on: impl Fn(u32) -> bool) {
    let (w, h) = img.dimensions();
    if w == 0 || h == 0 {
        return;
    }
    let clamp = |v: f64, hi: u32| (v.max(0.0) as u32).min(hi - 1);
    let (x1, y1) = (clamp(b.x1(), w), clamp(b.y1(), h));
    let (x2, y2) = (clamp(b.x2().ceil() - 1.0, w), clamp(b.y2().ceil() - 1.0, h));
    for k in 0..width {
        for x in x1..=x2 {
            if on(x - x1) {
                img.put_pixel(x, (y1 + k).min(y2), color);
                img.put_pixel(x, y2.saturating_sub(k).max(y1), color);
            }
        }
        for y in y1..=y2 {
            if on(y - y1) {
                img.put_pixel((x1 + k).min(x2), y, color);
                img.put_pixel(x2.saturating_sub(k).max(x1), y, color);
            }
        }
    }
}

/// Hop marker: `hop` small filled squares along the top-left corner.
pub fn hop_marker(img: &mut RgbaImage, hop: usize, color: Rgba<u8>) {
    let (w, h) = img.dimensions();
    for i in 0..hop as u32 {
        let x0 = 4 + i * 10;
        for y in 4..10u32.min(h) {
            for x in x0..(x0 + 6).min(w) {
                img.put_pixel(x, y, color);
            }
        }
    }
}

/// Gold boxes solid and thick, predicted boxes dashed and thin.
pub fn render_hop(base: &RgbaImage, hop: usize, gold: &[BoundingBox], pred: &[BoundingBox]) -> RgbaImage {
    let mut img = base.clone();
    for b in gold {
        stroke_solid(&mut img, b, 3, GOLD);
    }
    for b in pred {
        stroke_dashed(&mut img, b, 1, PRED);
    }
    hop_marker(&mut img, hop, Rgba([30, 30, 200, 255]));
    img
}
