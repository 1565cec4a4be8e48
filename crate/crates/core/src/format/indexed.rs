//! Parser for indexed instance references: `(phrase) [1.person, 2.person]`
//! in the annotation-response form, or the bare `phrase [9.car]` form used by
//! predicted grounded responses.

use super::{
    phrase::phrase_start, FormatError, GroundedResponse, GroundedSpan, GroundingRef, Parsed,
    ParseMode, ParseWarning, PlainTextBuilder, ResponseFormat,
};

/// Parses one `k.category` item. Categories may contain internal spaces
/// ("sports ball") but not brackets or newlines.
fn parse_item(item: &str) -> Option<(u32, String)> {
    let (num, cat) = item.trim().split_once('.')?;
    let number: u32 = num.trim().parse().ok()?;
    if number == 0 {
        return None;
    }
    let category = cat.trim();
    if category.is_empty() || category.contains(['[', ']', '\n']) {
        return None;
    }
    Some((number, category.to_string()))
}

struct Group {
    open: usize,
    end: usize,
    refs: Vec<GroundingRef>,
    bad_items: Vec<(usize, String)>,
}

/// Tries to read `[k.cat, k.cat, ...]` starting at `open` (pointing at `[`).
/// Returns `None` when the bracket does not look like a reference list at all.
fn parse_group(raw: &str, open: usize) -> Option<Group> {
    let close = raw[open + 1..].find(']')? + open + 1;
    let payload = &raw[open + 1..close];
    if payload.contains('[') {
        return None;
    }
    let mut refs = Vec::new();
    let mut bad_items = Vec::new();
    let mut any_shape = false;
    for item in payload.split(',') {
        if item.trim().is_empty() {
            continue;
        }
        any_shape = true;
        match parse_item(item) {
            Some((number, category)) => refs.push(GroundingRef::InstanceId { number, category }),
            None => bad_items.push((open, item.trim().to_string())),
        }
    }
    // Require at least one well-shaped item so ordinary bracketed prose is
    // left alone.
    if !any_shape || refs.is_empty() {
        return None;
    }
    Some(Group {
        open,
        end: close + 1,
        refs,
        bad_items,
    })
}

/// Looks immediately before `open` for a parenthesized phrase `(...)`.
/// Returns (paren_open, phrase_start, phrase_end) in raw offsets.
fn preceding_parens(raw: &str, open: usize) -> Option<(usize, usize, usize)> {
    let before = raw[..open].trim_end();
    if !before.ends_with(')') {
        return None;
    }
    let close = before.len() - 1;
    let start = raw[..close].rfind('(')?;
    // A ')' between start and close would mean nesting we don't attempt.
    if raw[start + 1..close].contains(')') {
        return None;
    }
    Some((start, start + 1, close))
}

/// Parses indexed-reference text. Each `(phrase) [k.cat, ...]` or bare
/// `phrase [k.cat, ...]` group becomes one span; grouping parentheses are
/// removed from the plain text.
pub fn parse_indexed_refs(raw: &str, mode: ParseMode) -> Result<Parsed, FormatError> {
    let mut warnings = Vec::new();
    let mut builder = PlainTextBuilder::new();
    let mut spans: Vec<(usize, usize, Vec<GroundingRef>)> = Vec::new();
    let mut cursor = 0usize;

    while let Some(found) = raw[cursor..].find('[') {
        let open = cursor + found;
        let Some(group) = parse_group(raw, open) else {
            // Not a reference list; emit the bracket as ordinary text.
            builder.append(&raw[cursor..open + 1]);
            cursor = open + 1;
            continue;
        };
        for (offset, item) in &group.bad_items {
            let message = format!("reference {item:?} does not match the k.category shape");
            if mode == ParseMode::Strict {
                return Err(FormatError::parse(*offset, message));
            }
            warnings.push(ParseWarning {
                offset: *offset,
                message,
            });
        }

        if let Some((paren_open, p_start, p_end)) = preceding_parens(raw, group.open) {
            builder.append(&raw[cursor..paren_open]);
            builder.begin_span();
            builder.append(&raw[p_start..p_end]);
            if let Some((start, end)) = builder.end_span() {
                spans.push((start, end, group.refs));
            }
        } else {
            let before = &raw[cursor..group.open];
            let rel = phrase_start(before);
            builder.append(&before[..rel]);
            builder.begin_span();
            builder.append(&before[rel..]);
            match builder.end_span() {
                Some((start, end)) => spans.push((start, end, group.refs)),
                None => warnings.push(ParseWarning {
                    offset: group.open,
                    message: "reference group with no preceding phrase".to_string(),
                }),
            }
        }
        cursor = group.end;
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
    let response = GroundedResponse::new(plain, spans, ResponseFormat::IndexedRefs)
        .map_err(|e| FormatError::InvalidResponse(format!("internal span bug: {e}")))?;
    Ok(Parsed { response, warnings })
}
