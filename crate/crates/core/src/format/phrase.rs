//! Phrase-extent heuristic shared by the bare indexed-ref and mark parsers.
//!
//! Given the text window between the previous boundary (mark, bracket group,
//! or start of input) and a grounding token, pick where the grounded noun
//! phrase begins: cut at the last hard punctuation boundary, then anchor at
//! the last determiner or quantifier; failing that, trim leading stop words.

/// Hard boundaries a phrase never crosses.
const HARD_BOUNDARY: &[char] = &['.', ';', ':', '!', '?', ']', ')', '"'];

const DETERMINERS: &[&str] = &[
    "a", "an", "the", "this", "that", "these", "those", "its", "his", "her", "their", "my",
    "your", "our", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten",
    "eleven", "twelve", "some", "several", "many", "few", "both", "all", "another", "each",
    "every",
];

const STOP_WORDS: &[&str] = &[
    "and", "or", "but", "is", "are", "was", "were", "be", "been", "being", "with", "of", "on",
    "in", "at", "to", "for", "by", "as", "from", "into", "near", "over", "under", "while",
    "where", "which", "who", "it", "they", "he", "she", "we", "you", "there", "here", "also",
    "then", "now", "using",
];

fn word_matches(word: &str, list: &[&str]) -> bool {
    let w = word
        .trim_matches(|c: char| !c.is_alphanumeric())
        .to_lowercase();
    list.contains(&w.as_str())
}

/// Byte offset in `window` where the phrase begins. Returns `window.len()`
/// when the window holds no usable words.
pub(crate) fn phrase_start(window: &str) -> usize {
    let base = match window.rfind(HARD_BOUNDARY) {
        Some(pos) => pos + window[pos..].chars().next().map_or(1, char::len_utf8),
        None => 0,
    };
    let scope = &window[base..];

    let words: Vec<(usize, &str)> = scope
        .split_whitespace()
        .map(|w| (w.as_ptr() as usize - scope.as_ptr() as usize, w))
        .collect();
    if words.is_empty() {
        return window.len();
    }

    if let Some(&(off, _)) = words
        .iter()
        .rev()
        .find(|(_, w)| word_matches(w, DETERMINERS))
    {
        return base + off;
    }

    if let Some(&(off, _)) = words.iter().find(|(_, w)| !word_matches(w, STOP_WORDS)) {
        return base + off;
    }

    // All stop words: fall back to the last one.
    base + words.last().unwrap().0
}

/// Byte offset in `window` where the single word immediately preceding a
/// bracket group begins. Used by the inline-coordinate format, where the box
/// follows the head noun directly.
pub(crate) fn last_word_start(window: &str) -> usize {
    let trimmed_end = window.trim_end();
    if trimmed_end.is_empty() {
        return window.len();
    }
    let is_word_char = |c: char| c.is_alphanumeric() || c == '\'' || c == '-' || c == '_';
    let mut start = trimmed_end.len();
    for (idx, ch) in trimmed_end.char_indices().rev() {
        if is_word_char(ch) {
            start = idx;
        } else {
            break;
        }
    }
    if start == trimmed_end.len() {
        window.len()
    } else {
        start
    }
}
