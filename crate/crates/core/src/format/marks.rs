//! Parser for Set-of-Mark text: `phrase <k>` where `<k>` names a numbered
//! mark overlaid on the image.

use super::{
    phrase::phrase_start, FormatError, GroundedResponse, GroundedSpan, GroundingRef, Parsed,
    ParseMode, ParseWarning, PlainTextBuilder, ResponseFormat, TokenSet,
};

/// Finds the next `<k>` mark token at or after `from`. Returns
/// (token_start, token_end, mark_number).
fn next_mark(raw: &str, from: usize, tokens: &TokenSet) -> Option<(usize, usize, u32)> {
    let mut cursor = from;
    while let Some(found) = raw[cursor..].find(&tokens.mark_open) {
        let start = cursor + found;
        let digits_at = start + tokens.mark_open.len();
        let digits_len = raw[digits_at..]
            .char_indices()
            .take_while(|(_, c)| c.is_ascii_digit())
            .count();
        if digits_len > 0 {
            let close_at = digits_at + digits_len;
            if raw[close_at..].starts_with(&tokens.mark_close) {
                if let Ok(mark) = raw[digits_at..close_at].parse::<u32>() {
                    return Some((start, close_at + tokens.mark_close.len(), mark));
                }
            }
        }
        cursor = start + tokens.mark_open.len();
    }
    None
}

/// Parses mark text. Each `phrase <k>` becomes a span with a mark ref; the
/// phrase extends back to the previous mark or sentence boundary, anchored at
/// the last determiner. Absent marks simply yield zero spans, so this parser
/// never fails.
pub fn parse_marks(raw: &str, tokens: &TokenSet, _mode: ParseMode) -> Result<Parsed, FormatError> {
    let mut warnings = Vec::new();
    let mut builder = PlainTextBuilder::new();
    let mut spans: Vec<(usize, usize, Vec<GroundingRef>)> = Vec::new();
    let mut cursor = 0usize;

    while let Some((tok_start, tok_end, mark)) = next_mark(raw, cursor, tokens) {
        let before = &raw[cursor..tok_start];
        let rel = phrase_start(before);
        builder.append(&before[..rel]);
        builder.begin_span();
        builder.append(&before[rel..]);
        match builder.end_span() {
            Some((start, end)) => {
                spans.push((start, end, vec![GroundingRef::Mark { mark }]));
            }
            None => warnings.push(ParseWarning {
                offset: tok_start,
                message: format!("mark {mark} has no preceding phrase"),
            }),
        }
        cursor = tok_end;
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
    let response = GroundedResponse::new(plain, spans, ResponseFormat::Marks)
        .map_err(|e| FormatError::InvalidResponse(format!("internal span bug: {e}")))?;
    Ok(Parsed { response, warnings })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(raw: &str) -> Parsed {
        parse_marks(raw, &TokenSet::default(), ParseMode::Lenient).unwrap()
    }

    fn marks_of(parsed: &Parsed) -> Vec<(String, u32)> {
        parsed
            .response
            .spans
            .iter()
            .map(|s| {
                let GroundingRef::Mark { mark } = s.refs[0] else {
                    panic!("expected mark ref");
                };
                (s.phrase.clone(), mark)
            })
            .collect()
    }

    #[test]
    fn taxi_marks() {
        let parsed =
            parse("The man <1> is using a clothing iron <2> on the back of a yellow taxi <3>.");
        assert_eq!(
            parsed.response.plain_text,
            "The man is using a clothing iron on the back of a yellow taxi."
        );
        assert_eq!(
            marks_of(&parsed),
            vec![
                ("The man".to_string(), 1),
                ("a clothing iron".to_string(), 2),
                ("a yellow taxi".to_string(), 3),
            ]
        );
    }

    #[test]
    fn out_of_order_marks() {
        let parsed = parse(
            "a little girl <2> is sitting on a rug with a guitar-shaped toy <1> in her hands",
        );
        assert_eq!(
            marks_of(&parsed),
            vec![
                ("a little girl".to_string(), 2),
                ("a guitar-shaped toy".to_string(), 1),
            ]
        );
    }

    #[test]
    fn no_marks_no_spans() {
        let parsed = parse("text without marks at all");
        assert!(parsed.response.spans.is_empty());
        assert_eq!(parsed.response.plain_text, "text without marks at all");
    }

    #[test]
    fn comparison_operator_is_not_a_mark() {
        let parsed = parse("x <y> and a < b");
        assert!(parsed.response.spans.is_empty());
        assert_eq!(parsed.response.plain_text, "x <y> and a < b");
    }

    #[test]
    fn leading_mark_warns() {
        let parsed = parse("<1> leads the text");
        assert!(parsed.response.spans.is_empty());
        assert_eq!(parsed.warnings.len(), 1);
        assert_eq!(parsed.response.plain_text, "leads the text");
    }
}
