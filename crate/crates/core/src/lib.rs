//! Chain-of-evidence toolkit core: evidence chains with pixel boxes over
//! labeled candidate screenshots, the joint image-and-box metrics, and the
//! dataset, annotation and augmentation machinery around them.

pub mod annotate;
pub mod augment;
pub mod chain;
pub mod dataset;
pub mod error;
pub mod geometry;
pub mod jsonl;
pub mod metrics;
pub mod record;
pub mod snapshot;
pub mod synth;

pub use chain::{emit_chain, parse_chain, EvidenceChain, EvidenceHop, ImageLabel, ModelOutput};
pub use dataset::{CandidateSet, DocumentPool};
pub use error::{Error, Result};
pub use geometry::{center_inside, clip_to_frame, iou, BoundingBox};
pub use metrics::MatchConfig;
pub use record::{QaRecord, QuestionType};
