//! Parsers and serializers for every grounded-response surface format,
//! normalizing each into a single [`GroundedResponse`] structure.
//!
//! Four surfaces are supported:
//! - GVC token text: `<g_s> phrase <g_e> <seg>` groups (plus `<obj>`
//!   placeholders on the question side),
//! - inline box coordinates: `phrase[[x0,y0,x1,y1]]`,
//! - indexed instance references: `(phrase) [1.person, 2.person]` or the bare
//!   `phrase [1.person]` form,
//! - numbered marks: `phrase <k>`.
//!
//! Parsing is deterministic and offers strict and lenient modes; lenient mode
//! never fails and instead degrades malformed structure to warnings, so
//! arbitrary model output can always be scored.

mod gvc;
mod indexed;
mod inline;
mod marks;
mod phrase;

pub use gvc::parse_gvc;
pub use indexed::parse_indexed_refs;
pub use inline::parse_inline_boxes;
pub use marks::parse_marks;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::BoundingBox;

#[derive(Debug, Error, PartialEq)]
pub enum FormatError {
    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },
    #[error("unsupported format: {0}")]
    Unsupported(String),
    #[error("invalid response: {0}")]
    InvalidResponse(String),
}

impl FormatError {
    pub(crate) fn parse(offset: usize, message: impl Into<String>) -> Self {
        FormatError::Parse {
            offset,
            message: message.into(),
        }
    }

    /// Byte offset for parse errors, if this is one.
    pub fn offset(&self) -> Option<usize> {
        match self {
            FormatError::Parse { offset, .. } => Some(*offset),
            _ => None,
        }
    }
}

/// Non-fatal issue found while parsing in lenient mode.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseWarning {
    pub offset: usize,
    pub message: String,
}

impl std::fmt::Display for ParseWarning {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "byte {}: {}", self.offset, self.message)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ParseMode {
    Strict,
    #[default]
    Lenient,
}

/// Configurable spellings for the grounding tokens. Defaults are the ASCII
/// forms used by real model vocabularies.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSet {
    pub g_start: String,
    pub g_end: String,
    pub seg: String,
    pub obj: String,
    pub mark_open: String,
    pub mark_close: String,
}

impl Default for TokenSet {
    fn default() -> Self {
        Self {
            g_start: "<g_s>".to_string(),
            g_end: "<g_e>".to_string(),
            seg: "<seg>".to_string(),
            obj: "<obj>".to_string(),
            mark_open: "<".to_string(),
            mark_close: ">".to_string(),
        }
    }
}

/// One grounding target attached to a span.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GroundingRef {
    /// The i-th `<seg>` slot of a GVC response (0-based).
    SegSlot { slot: usize },
    /// A box carried inline in the response text (or attached to a seg slot).
    InlineBox {
        #[serde(rename = "box")]
        bbox: BoundingBox,
    },
    /// A numbered ground-truth instance, e.g. `1.person`.
    InstanceId { number: u32, category: String },
    /// A Set-of-Mark number, e.g. `<2>`.
    Mark { mark: u32 },
}

/// A grounded noun phrase: its extent in the plain text plus its targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundedSpan {
    pub phrase: String,
    /// Byte offset into the plain text.
    pub start: usize,
    /// Byte offset into the plain text (exclusive).
    pub end: usize,
    pub refs: Vec<GroundingRef>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResponseFormat {
    Gvc,
    InlineBoxes,
    IndexedRefs,
    Marks,
}

impl std::fmt::Display for ResponseFormat {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            ResponseFormat::Gvc => "gvc",
            ResponseFormat::InlineBoxes => "inline_boxes",
            ResponseFormat::IndexedRefs => "indexed_refs",
            ResponseFormat::Marks => "marks",
        };
        f.write_str(s)
    }
}

/// Model output decomposed into plain text plus grounded spans.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundedResponse {
    #[serde(rename = "text")]
    pub plain_text: String,
    pub spans: Vec<GroundedSpan>,
    pub format: ResponseFormat,
}

impl GroundedResponse {
    /// Builds a response, checking the span invariants: spans are ordered and
    /// non-overlapping, offsets slice the plain text to exactly the phrase,
    /// and every span carries at least one ref.
    pub fn new(
        plain_text: String,
        spans: Vec<GroundedSpan>,
        format: ResponseFormat,
    ) -> Result<Self, FormatError> {
        let mut prev_end = 0usize;
        for (i, span) in spans.iter().enumerate() {
            if span.start < prev_end {
                return Err(FormatError::InvalidResponse(format!(
                    "span {i} overlaps or precedes the previous span"
                )));
            }
            if span.start >= span.end || span.end > plain_text.len() {
                return Err(FormatError::InvalidResponse(format!(
                    "span {i} has bad extent {}..{}",
                    span.start, span.end
                )));
            }
            if plain_text.get(span.start..span.end) != Some(span.phrase.as_str()) {
                return Err(FormatError::InvalidResponse(format!(
                    "span {i} phrase does not match the plain-text slice"
                )));
            }
            if span.refs.is_empty() {
                return Err(FormatError::InvalidResponse(format!("span {i} has no refs")));
            }
            prev_end = span.end;
        }
        Ok(Self {
            plain_text,
            spans,
            format,
        })
    }
}

/// Result of a parse: the normalized response plus any lenient-mode warnings.
#[derive(Debug, Clone, PartialEq)]
pub struct Parsed {
    pub response: GroundedResponse,
    pub warnings: Vec<ParseWarning>,
}

/// Returns the grounding-free text of a response. Stripping happens at parse
/// time, so this is exactly the plain text.
pub fn strip_grounding(response: &GroundedResponse) -> &str {
    &response.plain_text
}

/// Re-emits canonical GVC token text for a response whose spans are bound to
/// seg slots. Inline boxes attached to slots are permitted and ignored (they
/// are re-suppliable at parse time); instance or mark refs are not
/// representable in this format.
pub fn serialize_gvc(response: &GroundedResponse, tokens: &TokenSet) -> Result<String, FormatError> {
    let mut out = String::new();
    let mut cursor = 0usize;
    for (i, span) in response.spans.iter().enumerate() {
        let mut slot = None;
        for r in &span.refs {
            match r {
                GroundingRef::SegSlot { slot: s } => {
                    if slot.is_some() {
                        return Err(FormatError::Unsupported(format!(
                            "span {i} carries more than one seg slot"
                        )));
                    }
                    slot = Some(*s);
                }
                GroundingRef::InlineBox { .. } => {}
                other => {
                    return Err(FormatError::Unsupported(format!(
                        "span {i} carries a non-seg ref {other:?}"
                    )));
                }
            }
        }
        if slot != Some(i) {
            return Err(FormatError::Unsupported(format!(
                "span {i} must carry seg slot {i}, found {slot:?}"
            )));
        }
        out.push_str(&response.plain_text[cursor..span.start]);
        out.push_str(&tokens.g_start);
        out.push(' ');
        out.push_str(&span.phrase);
        out.push(' ');
        out.push_str(&tokens.g_end);
        out.push(' ');
        out.push_str(&tokens.seg);
        cursor = span.end;
    }
    out.push_str(&response.plain_text[cursor..]);
    Ok(out)
}

/// Punctuation that never takes a space before it.
const NO_SPACE_BEFORE: &[char] = &['.', ',', ';', ':', '!', '?', ')', ']', '}', '%', '\''];
/// Openers that never take a space after them.
const NO_SPACE_AFTER: &[char] = &['(', '[', '{'];

/// Accumulates normalized plain text: whitespace runs collapse to a single
/// space, edges are trimmed, and removed tokens leave no stray space before
/// sentence punctuation. Tracks span extents over the emitted text.
#[derive(Debug, Default)]
pub(crate) struct PlainTextBuilder {
    out: String,
    pending_space: bool,
    span_open: bool,
    span_start: Option<usize>,
    span_end: usize,
}

impl PlainTextBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn append(&mut self, text: &str) {
        for ch in text.chars() {
            if ch.is_whitespace() {
                self.pending_space = true;
                continue;
            }
            if self.pending_space
                && !self.out.is_empty()
                && !NO_SPACE_BEFORE.contains(&ch)
                && !self.out.ends_with(NO_SPACE_AFTER)
            {
                self.out.push(' ');
            }
            self.pending_space = false;
            if self.span_open && self.span_start.is_none() {
                self.span_start = Some(self.out.len());
            }
            self.out.push(ch);
            if self.span_open {
                self.span_end = self.out.len();
            }
        }
    }

    /// Subsequent emitted characters belong to a span; the extent is recorded
    /// lazily at the first emitted character.
    pub fn begin_span(&mut self) {
        self.span_open = true;
        self.span_start = None;
        self.span_end = 0;
    }

    /// Closes the current span, returning its extent over the emitted text.
    /// Returns `None` when the span produced no characters.
    pub fn end_span(&mut self) -> Option<(usize, usize)> {
        self.span_open = false;
        self.span_start.take().map(|start| (start, self.span_end))
    }

    /// Forgets the current span; its characters stay in the plain text.
    pub fn abort_span(&mut self) {
        self.span_open = false;
        self.span_start = None;
    }

    pub fn finish(self) -> String {
        self.out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builder_collapses_whitespace_and_trims() {
        let mut b = PlainTextBuilder::new();
        b.append("  The man ");
        b.append("  is  using ");
        b.append(" .");
        assert_eq!(b.finish(), "The man is using.");
    }

    #[test]
    fn builder_tracks_span_extents() {
        let mut b = PlainTextBuilder::new();
        b.append("start ");
        b.begin_span();
        b.append(" the phrase ");
        let extent = b.end_span().unwrap();
        b.append(" end.");
        let text = b.finish();
        assert_eq!(&text[extent.0..extent.1], "the phrase");
        assert_eq!(text, "start the phrase end.");
    }

    #[test]
    fn builder_drops_empty_spans() {
        let mut b = PlainTextBuilder::new();
        b.append("x");
        b.begin_span();
        b.append("   ");
        assert_eq!(b.end_span(), None);
    }

    #[test]
    fn builder_no_space_inside_brackets() {
        let mut b = PlainTextBuilder::new();
        b.append("a ( b ) c");
        assert_eq!(b.finish(), "a (b) c");
    }

    #[test]
    fn response_validation_rejects_bad_spans() {
        let span = GroundedSpan {
            phrase: "nope".into(),
            start: 0,
            end: 4,
            refs: vec![GroundingRef::SegSlot { slot: 0 }],
        };
        let err = GroundedResponse::new("mismatch".into(), vec![span], ResponseFormat::Gvc);
        assert!(matches!(err, Err(FormatError::InvalidResponse(_))));
    }

    #[test]
    fn serialize_rejects_non_seg_refs() {
        let r = GroundedResponse::new(
            "a cat sat".into(),
            vec![GroundedSpan {
                phrase: "a cat".into(),
                start: 0,
                end: 5,
                refs: vec![GroundingRef::Mark { mark: 1 }],
            }],
            ResponseFormat::Marks,
        )
        .unwrap();
        assert!(matches!(
            serialize_gvc(&r, &TokenSet::default()),
            Err(FormatError::Unsupported(_))
        ));
    }

    #[test]
    fn json_shape_is_stable() {
        let r = GroundedResponse::new(
            "a cat".into(),
            vec![GroundedSpan {
                phrase: "a cat".into(),
                start: 0,
                end: 5,
                refs: vec![GroundingRef::SegSlot { slot: 0 }],
            }],
            ResponseFormat::Gvc,
        )
        .unwrap();
        let json = serde_json::to_string(&r).unwrap();
        assert_eq!(
            json,
            r#"{"text":"a cat","spans":[{"phrase":"a cat","start":0,"end":5,"refs":[{"kind":"seg_slot","slot":0}]}],"format":"gvc"}"#
        );
        let back: GroundedResponse = serde_json::from_str(&json).unwrap();
        assert_eq!(back, r);
    }
}
