//! Toolkit for grounded visual chat (GVC) data construction and benchmark
//! scoring.
//!
//! The crate splits into:
//! - [`geometry`]: normalized boxes, RLE masks, IoU and aggregate statistics,
//! - [`format`]: parsers/serializers for grounded-response text formats,
//! - [`dataset`]: COCO instance and conversation ingestion, JSONL persistence,
//! - [`builder`]: the GVC data-creation pipeline (annotation prompts, token
//!   insertion, referring rewrites, mark planning, instruction templates),
//! - [`evaluator`]: grounded recall/precision/F1, chat scores, and the classic
//!   REC/RES/phrase-grounding metrics,
//! - [`judge`]: the pluggable LLM judge (remote client, offline stub, cache).

pub mod builder;
pub mod dataset;
pub mod format;
pub mod geometry;

pub use format::{
    parse_gvc, parse_indexed_refs, parse_inline_boxes, parse_marks, serialize_gvc,
    strip_grounding, FormatError, GroundedResponse, GroundedSpan, GroundingRef, Parsed, ParseMode,
    ParseWarning, ResponseFormat, TokenSet,
};
pub use geometry::{
    aggregate_iou, box_iou, mask_centroid, mask_iou, BoundingBox, GeometryError, IoUStats,
    SegmentMask,
};
