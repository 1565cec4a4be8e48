//! Parser for inline box coordinates: `phrase[[x0,y0,x1,y1]]`, with extra
//! boxes for the same phrase joined by `;`.

use super::{
    phrase::last_word_start, FormatError, GroundedResponse, GroundedSpan, GroundingRef, Parsed,
    ParseMode, ParseWarning, PlainTextBuilder, ResponseFormat,
};
use crate::geometry::BoundingBox;

/// Grid denominator for integer coordinates: values above 1.0 are read as
/// positions on a 0-999 grid.
const COORD_GRID: f64 = 999.0;

struct Group {
    /// Raw extent including the delimiters.
    start: usize,
    end: usize,
    bbox: Option<BoundingBox>,
}

/// Parses one `[[a,b,c,d]]` group starting at `open` (which points at "[[").
/// Returns the group extent and the box when the payload is well formed.
fn parse_group(raw: &str, open: usize) -> Option<Group> {
    let payload_start = open + 2;
    let close = raw[payload_start..].find("]]")? + payload_start;
    let payload = &raw[payload_start..close];
    let end = close + 2;
    let nums: Vec<Option<f64>> = payload
        .split(',')
        .map(|s| s.trim().parse::<f64>().ok())
        .collect();
    let bbox = if nums.len() == 4 && nums.iter().all(Option::is_some) {
        let mut v = [0f64; 4];
        for (slot, n) in v.iter_mut().zip(&nums) {
            *slot = n.unwrap();
        }
        if v.iter().any(|&n| n > 1.0) {
            for n in v.iter_mut() {
                *n /= COORD_GRID;
            }
        }
        BoundingBox::new(v[0], v[1], v[2], v[3]).ok()
    } else {
        None
    };
    Some(Group {
        start: open,
        end,
        bbox,
    })
}

/// Consumes a run of groups joined by `;` starting at `open`.
fn parse_group_run(raw: &str, open: usize) -> Vec<Group> {
    let mut groups = Vec::new();
    let mut cursor = open;
    loop {
        let Some(group) = parse_group(raw, cursor) else {
            break;
        };
        let end = group.end;
        groups.push(group);
        let rest = &raw[end..];
        let sep = rest.len() - rest.trim_start().len();
        let after = rest.trim_start();
        if let Some(stripped) = after.strip_prefix(';') {
            let pad = stripped.len() - stripped.trim_start().len();
            let next = end + sep + 1 + pad;
            if raw[next..].starts_with("[[") {
                cursor = next;
                continue;
            }
        }
        break;
    }
    groups
}

/// Parses inline-coordinate text. Each bracket-group run becomes a span whose
/// phrase is the word immediately preceding it; coordinates above 1.0 are
/// interpreted on a 0-999 integer grid.
pub fn parse_inline_boxes(raw: &str, mode: ParseMode) -> Result<Parsed, FormatError> {
    let mut warnings = Vec::new();
    let mut builder = PlainTextBuilder::new();
    let mut spans: Vec<(usize, usize, Vec<GroundingRef>)> = Vec::new();
    let mut cursor = 0usize;

    while let Some(found) = raw[cursor..].find("[[") {
        let open = cursor + found;
        let groups = parse_group_run(raw, open);
        if groups.is_empty() {
            // "[[" with no closing "]]": treat the rest as plain text.
            let message = "unterminated [[ coordinate group".to_string();
            if mode == ParseMode::Strict {
                return Err(FormatError::parse(open, message));
            }
            warnings.push(ParseWarning {
                offset: open,
                message,
            });
            builder.append(&raw[cursor..]);
            cursor = raw.len();
            break;
        }

        let run_end = groups.last().unwrap().end;
        let before = &raw[cursor..open];
        let phrase_rel = last_word_start(before);
        let refs: Vec<GroundingRef> = groups
            .iter()
            .filter_map(|g| g.bbox)
            .map(|bbox| GroundingRef::InlineBox { bbox })
            .collect();
        for g in &groups {
            if g.bbox.is_none() {
                let message = format!(
                    "malformed coordinate group {:?}",
                    &raw[g.start..g.end.min(g.start + 40)]
                );
                if mode == ParseMode::Strict {
                    return Err(FormatError::parse(g.start, message));
                }
                warnings.push(ParseWarning {
                    offset: g.start,
                    message,
                });
            }
        }

        if refs.is_empty() || phrase_rel == before.len() {
            if !refs.is_empty() {
                warnings.push(ParseWarning {
                    offset: open,
                    message: "coordinate group with no preceding phrase".to_string(),
                });
            }
            builder.append(before);
        } else {
            builder.append(&before[..phrase_rel]);
            builder.begin_span();
            builder.append(&before[phrase_rel..]);
            match builder.end_span() {
                Some((start, end)) => spans.push((start, end, refs)),
                None => {}
            }
        }
        cursor = run_end;
    }
    builder.append(&raw[cursor..]);

    let plain = builder.finish();
    let spans = spans
        .into_iter()
        .map(|(start, end, refs)| GroundedSpan {
            phrase: plain[start..end].to_string(),
            start,
            end,
            refs,
        })
        .collect();
    let response = GroundedResponse::new(plain, spans, ResponseFormat::InlineBoxes)
        .map_err(|e| FormatError::InvalidResponse(format!("internal span bug: {e}")))?;
    Ok(Parsed { response, warnings })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(raw: &str) -> Parsed {
        parse_inline_boxes(raw, ParseMode::Strict).unwrap()
    }

    #[test]
    fn single_group() {
        let parsed = parse("A group of people[[0.1,0.2,0.9,0.8]] are sitting");
        assert_eq!(parsed.response.plain_text, "A group of people are sitting");
        assert_eq!(parsed.response.spans.len(), 1);
        let span = &parsed.response.spans[0];
        assert_eq!(span.phrase, "people");
        assert_eq!(
            span.refs,
            vec![GroundingRef::InlineBox {
                bbox: BoundingBox::new(0.1, 0.2, 0.9, 0.8).unwrap()
            }]
        );
    }

    #[test]
    fn empty_input() {
        let parsed = parse("");
        assert_eq!(parsed.response.plain_text, "");
        assert!(parsed.response.spans.is_empty());
    }

    #[test]
    fn semicolon_joins_boxes_into_one_span() {
        let parsed = parse("cats[[0.0,0.0,1.0,1.0]];[[0.5,0.5,1.0,1.0]]");
        assert_eq!(parsed.response.plain_text, "cats");
        assert_eq!(parsed.response.spans.len(), 1);
        assert_eq!(parsed.response.spans[0].phrase, "cats");
        assert_eq!(parsed.response.spans[0].refs.len(), 2);
    }

    #[test]
    fn integer_grid_coordinates_divide_by_999() {
        let parsed = parse("dog[[0,0,999,999]] runs");
        let GroundingRef::InlineBox { bbox } = parsed.response.spans[0].refs[0] else {
            panic!("expected inline box");
        };
        assert_eq!(bbox.corners(), [0.0, 0.0, 1.0, 1.0]);
    }

    #[test]
    fn malformed_group_lenient_vs_strict() {
        let raw = "dog[[0.1,0.2]] runs";
        assert!(parse_inline_boxes(raw, ParseMode::Strict).is_err());
        let parsed = parse_inline_boxes(raw, ParseMode::Lenient).unwrap();
        assert_eq!(parsed.response.plain_text, "dog runs");
        assert!(parsed.response.spans.is_empty());
        assert_eq!(parsed.warnings.len(), 1);
    }

    #[test]
    fn plain_never_contains_brackets() {
        let parsed = parse("a[[0.1,0.1,0.2,0.2]] b[[0.2,0.2,0.5,0.5]];[[0.1,0.1,0.9,0.9]] c");
        assert!(!parsed.response.plain_text.contains("[["));
        assert_eq!(parsed.response.plain_text, "a b c");
        assert_eq!(parsed.response.spans.len(), 2);
    }
}
