//! Parser for GVC token text: `<g_s> phrase <g_e> <seg>` grounding groups and
//! `<obj>` placeholders.

use super::{
    FormatError,GroundedResponse, GroundedSpan, GroundingRef, Parsed, ParseMode, ParseWarning,
    PlainTextBuilder, ResponseFormat, TokenSet,
};
use crate::geometry::BoundingBox;

#[derive(Debug, Clone, Copy, PartialEq)]
enum Token {
    GStart,
    GEnd,
    Seg,
    Obj,
}

#[derive(Debug)]
enum Item<'a> {
    Text(&'a str),
    Token(Token, usize),
}

fn tokenize<'a>(raw: &'a str, tokens: &TokenSet) -> Vec<Item<'a>> {
    let literals = [
        (Token::GStart, tokens.g_start.as_str()),
        (Token::GEnd, tokens.g_end.as_str()),
        (Token::Seg, tokens.seg.as_str()),
        (Token::Obj, tokens.obj.as_str()),
    ];
    let mut items = Vec::new();
    let mut cursor = 0usize;
    while cursor < raw.len() {
        let next = literals
            .iter()
            .filter_map(|&(tok, lit)| raw[cursor..].find(lit).map(|p| (cursor + p, tok, lit.len())))
            .min_by_key(|&(pos, _, len)| (pos, usize::MAX - len));
        match next {
            Some((pos, tok, len)) => {
                if pos > cursor {
                    items.push(Item::Text(&raw[cursor..pos]));
                }
                items.push(Item::Token(tok, pos));
                cursor = pos + len;
            }
            None => {
                items.push(Item::Text(&raw[cursor..]));
                break;
            }
        }
    }
    items
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum State {
    Outside,
    /// Inside a `<g_s>`..`<g_e>` phrase; carries the `<g_s>` offset.
    InPhrase(usize),
    /// Phrase closed, awaiting `<seg>`; carries the `<g_e>` offset and the
    /// recorded extent.
    AwaitingSeg(usize, Option<(usize, usize)>),
}

/// Parses GVC token text. Each `<g_s> phrase <g_e> <seg>` group becomes one
/// span; the i-th `<seg>` binds slot ordinal i, plus an inline box from
/// `seg_boxes[i]` when boxes are supplied. All tokens are removed from the
/// plain text and whitespace is collapsed.
pub fn parse_gvc(
    raw: &str,
    seg_boxes: &[BoundingBox],
    tokens: &TokenSet,
    mode: ParseMode,
) -> Result<Parsed, FormatError> {
    let mut warnings = Vec::new();
    let mut builder = PlainTextBuilder::new();
    let mut extents: Vec<(usize, usize)> = Vec::new();
    let mut state = State::Outside;

    let fail = |offset: usize, message: String, warnings: &mut Vec<ParseWarning>| {
        if mode == ParseMode::Strict {
            Err(FormatError::parse(offset, message))
        } else {
            warnings.push(ParseWarning { offset, message });
            Ok(())
        }
    };

    for item in tokenize(raw, tokens) {
        match item {
            Item::Text(text) => match state {
                State::Outside | State::InPhrase(_) => builder.append(text),
                State::AwaitingSeg(g_end_offset, _) => {
                    if text.trim().is_empty() {
                        // Token separation only; becomes pending whitespace.
                        builder.append(text);
                    } else {
                        fail(
                            g_end_offset,
                            format!("{} group not followed by {}", tokens.g_start, tokens.seg),
                            &mut warnings,
                        )?;
                        builder.append(text);
                        state = State::Outside;
                    }
                }
            },
            Item::Token(tok, offset) => match (tok, state) {
                (Token::GStart, State::Outside) => {
                    builder.begin_span();
                    state = State::InPhrase(offset);
                }
                (Token::GStart, State::InPhrase(start)) => {
                    fail(
                        start,
                        format!("unbalanced {} before byte {offset}", tokens.g_start),
                        &mut warnings,
                    )?;
                    builder.abort_span();
                    builder.begin_span();
                    state = State::InPhrase(offset);
                }
                (Token::GStart, State::AwaitingSeg(g_end_offset, _)) => {
                    fail(
                        g_end_offset,
                        format!("{} group not followed by {}", tokens.g_start, tokens.seg),
                        &mut warnings,
                    )?;
                    builder.begin_span();
                    state = State::InPhrase(offset);
                }
                (Token::GEnd, State::InPhrase(_)) => {
                    let extent = builder.end_span();
                    state = State::AwaitingSeg(offset, extent);
                }
                (Token::GEnd, _) => {
                    fail(
                        offset,
                        format!("{} without matching {}", tokens.g_end, tokens.g_start),
                        &mut warnings,
                    )?;
                }
                (Token::Seg, State::AwaitingSeg(g_end_offset, extent)) => {
                    match extent {
                        Some(extent) => extents.push(extent),
                        None => fail(
                            g_end_offset,
                            "grounding group wraps an empty phrase".to_string(),
                            &mut warnings,
                        )?,
                    }
                    state = State::Outside;
                }
                (Token::Seg, _) => {
                    fail(
                        offset,
                        format!("{} not following {}", tokens.seg, tokens.g_end),
                        &mut warnings,
                    )?;
                }
                // Placeholder for a visual prompt; stripped from plain text.
                (Token::Obj, State::Outside) => {}
                (Token::Obj, _) => {
                    fail(
                        offset,
                        format!("{} inside a grounding group", tokens.obj),
                        &mut warnings,
                    )?;
                }
            },
        }
    }

    match state {
        State::Outside => {}
        State::InPhrase(start) => {
            fail(
                start,
                format!("unbalanced {} at end of input", tokens.g_start),
                &mut warnings,
            )?;
            builder.abort_span();
        }
        State::AwaitingSeg(g_end_offset, _) => {
            fail(
                g_end_offset,
                format!("{} group not followed by {}", tokens.g_start, tokens.seg),
                &mut warnings,
            )?;
        }
    }

    if !seg_boxes.is_empty() && seg_boxes.len() != extents.len() {
        let message = format!(
            "{} seg boxes supplied for {} {} tokens",
            seg_boxes.len(),
            extents.len(),
            tokens.seg
        );
        if mode == ParseMode::Strict {
            return Err(FormatError::parse(raw.len(), message));
        }
        warnings.push(ParseWarning {
            offset: raw.len(),
            message,
        });
    }

    let plain = builder.finish();
    let spans = extents
        .into_iter()
        .enumerate()
        .map(|(slot, (start, end))| {
            let mut refs = vec![GroundingRef::SegSlot { slot }];
            if let Some(&bbox) = seg_boxes.get(slot) {
                refs.push(GroundingRef::InlineBox { bbox });
            }
            GroundedSpan {
                phrase: plain[start..end].to_string(),
                start,
                end,
                refs,
            }
        })
        .collect();

    let response = GroundedResponse::new(plain, spans, ResponseFormat::Gvc)
        .map_err(|e| FormatError::InvalidResponse(format!("internal span bug: {e}")))?;
    Ok(Parsed { response, warnings })
}

#[cfg(test)]
mod tests {
    use super::*;

    const TAXI_RAW: &str = "<g_s> The man <g_e> <seg> is using <g_s> a clothing iron <g_e> <seg> on the back of <g_s> a yellow taxi <g_e> <seg>.";
    const TAXI_PLAIN: &str = "The man is using a clothing iron on the back of a yellow taxi.";

    fn parse(raw: &str, mode: ParseMode) -> Result<Parsed, FormatError> {
        parse_gvc(raw, &[], &TokenSet::default(), mode)
    }

    #[test]
    fn taxi_example() {
        let parsed = parse(TAXI_RAW, ParseMode::Strict).unwrap();
        assert_eq!(parsed.response.plain_text, TAXI_PLAIN);
        assert!(parsed.warnings.is_empty());
        let phrases: Vec<&str> = parsed
            .response
            .spans
            .iter()
            .map(|s| s.phrase.as_str())
            .collect();
        assert_eq!(phrases, ["The man", "a clothing iron", "a yellow taxi"]);
        for (i, span) in parsed.response.spans.iter().enumerate() {
            assert_eq!(span.refs, vec![GroundingRef::SegSlot { slot: i }]);
        }
    }

    #[test]
    fn taxi_example_with_boxes() {
        let boxes = [
            BoundingBox::new(0.0, 0.0, 0.3, 1.0).unwrap(),
            BoundingBox::new(0.3, 0.2, 0.5, 0.6).unwrap(),
            BoundingBox::new(0.5, 0.1, 1.0, 0.9).unwrap(),
        ];
        let parsed = parse_gvc(TAXI_RAW, &boxes, &TokenSet::default(), ParseMode::Strict).unwrap();
        for (i, span) in parsed.response.spans.iter().enumerate() {
            assert_eq!(
                span.refs,
                vec![
                    GroundingRef::SegSlot { slot: i },
                    GroundingRef::InlineBox { bbox: boxes[i] },
                ]
            );
        }
    }

    #[test]
    fn plain_text_passthrough() {
        let parsed = parse("no grounding here", ParseMode::Strict).unwrap();
        assert_eq!(parsed.response.plain_text, "no grounding here");
        assert!(parsed.response.spans.is_empty());
    }

    #[test]
    fn dangling_g_start_is_strict_error() {
        let err = parse("<g_s> dangling", ParseMode::Strict).unwrap_err();
        assert_eq!(err.offset(), Some(0));
    }

    #[test]
    fn dangling_g_start_is_lenient_warning() {
        let parsed = parse("<g_s> dangling", ParseMode::Lenient).unwrap();
        assert_eq!(parsed.response.plain_text, "dangling");
        assert!(parsed.response.spans.is_empty());
        assert_eq!(parsed.warnings.len(), 1);
    }

    #[test]
    fn seg_without_group_is_error() {
        let err = parse("text <seg> more", ParseMode::Strict).unwrap_err();
        assert_eq!(err.offset(), Some(5));
        let parsed = parse("text <seg> more", ParseMode::Lenient).unwrap();
        assert_eq!(parsed.response.plain_text, "text more");
    }

    #[test]
    fn group_without_seg() {
        let raw = "<g_s> a cat <g_e> sat";
        assert!(parse(raw, ParseMode::Strict).is_err());
        let parsed = parse(raw, ParseMode::Lenient).unwrap();
        assert_eq!(parsed.response.plain_text, "a cat sat");
        assert!(parsed.response.spans.is_empty());
    }

    #[test]
    fn obj_placeholder_is_stripped() {
        let parsed = parse("What is the object <obj> doing?", ParseMode::Strict).unwrap();
        assert_eq!(parsed.response.plain_text, "What is the object doing?");
        assert!(parsed.response.spans.is_empty());
    }

    #[test]
    fn box_count_mismatch() {
        let boxes = [BoundingBox::new(0.0, 0.0, 1.0, 1.0).unwrap()];
        let err = parse_gvc(TAXI_RAW, &boxes, &TokenSet::default(), ParseMode::Strict).unwrap_err();
        assert!(matches!(err, FormatError::Parse { .. }));
        let parsed = parse_gvc(TAXI_RAW, &boxes, &TokenSet::default(), ParseMode::Lenient).unwrap();
        assert_eq!(parsed.warnings.len(), 1);
        assert_eq!(parsed.response.spans[0].refs.len(), 2);
        assert_eq!(parsed.response.spans[1].refs.len(), 1);
    }

    #[test]
    fn span_offsets_slice_plain_text() {
        let parsed = parse(TAXI_RAW, ParseMode::Strict).unwrap();
        for span in &parsed.response.spans {
            assert_eq!(&parsed.response.plain_text[span.start..span.end], span.phrase);
        }
    }

    #[test]
    fn unicode_token_set() {
        let tokens = TokenSet {
            g_start: "\u{27e8}g_s\u{27e9}".into(),
            g_end: "\u{27e8}g_e\u{27e9}".into(),
            seg: "\u{27e8}seg\u{27e9}".into(),
            obj: "\u{27e8}obj\u{27e9}".into(),
            mark_open: "\u{27e8}".into(),
            mark_close: "\u{27e9}".into(),
        };
        let raw = "\u{27e8}g_s\u{27e9} The man \u{27e8}g_e\u{27e9} \u{27e8}seg\u{27e9} waves.";
        let parsed = parse_gvc(raw, &[], &tokens, ParseMode::Strict).unwrap();
        assert_eq!(parsed.response.plain_text, "The man waves.");
        assert_eq!(parsed.response.spans[0].phrase, "The man");
    }
}
