//! Rendered page data shared by capture and annotation.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::geometry::BoundingBox;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ElementKind {
    Paragraph,
    ListItem,
    TableCell,
    Caption,
    InfoboxText,
}

impl fmt::Display for ElementKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ElementKind::Paragraph => "paragraph",
            ElementKind::ListItem => "list_item",
            ElementKind::TableCell => "table_cell",
            ElementKind::Caption => "caption",
            ElementKind::InfoboxText => "infobox_text",
        })
    }
}

/// A visible text-bearing element with one rectangle per rendered line,
/// in raster pixel coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderedElement {
    pub element_id: String,
    pub text: String,
    pub kind: ElementKind,
    pub line_rects: Vec<BoundingBox>,
}

impl RenderedElement {
    pub fn is_valid(&self) -> bool {
        !self.text.trim().is_empty() && !self.line_rects.is_empty()
    }
}

/// Sidecar metadata for a captured page. The raster lives next to it as PNG.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PageSnapshot {
    pub doc_id: String,
    pub url: String,
    pub width: u32,
    pub height: u32,
    pub device_pixel_ratio: f64,
    /// Milliseconds since the Unix epoch.
    pub captured_at: u64,
    pub elements: Vec<RenderedElement>,
}
