//! The GVC data-creation pipeline: annotation-judge prompts, token insertion
//! over judge matches, referring (`<obj>`) question rewrites, Set-of-Mark
//! placement planning, mark-text conversion, and instruction-template
//! sampling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::InstanceAnnotation;
use crate::format::{parse_gvc, parse_indexed_refs, GroundingRef, ParseMode, TokenSet};
use crate::geometry::mask_centroid;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error, PartialEq)]
pub enum BuildError {
    #[error("matches at {0}..{1} and {2}..{3} overlap or are out of order")]
    OverlappingMatches(usize, usize, usize, usize),
    #[error("match {start}..{end} does not slice the sentence to {phrase:?}")]
    MatchSliceMismatch {
        start: usize,
        end: usize,
        phrase: String,
    },
    #[error("match has no instance ids")]
    EmptyMatch,
    #[error("a referring prompt denotes one instance, got {0} ids")]
    MultiInstanceReferring(usize),
    #[error("instance {0} has no mark in the plan")]
    MissingMark(u32),
    #[error("record invariant violated: {0} {1} tokens vs {2} targets")]
    TokenCountMismatch(String, usize, usize),
    #[error("seg target list {0} is empty")]
    EmptyTargets(usize),
    #[error("mask alpha {0} is not a fraction in [0, 1]")]
    BadAlpha(f64),
    #[error("no instances to build a prompt from")]
    NoInstances,
    #[error(transparent)]
    Format(#[from] crate::format::FormatError),
}

/// A judge-confirmed phrase-to-instances match within one sentence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhraseMatch {
    /// Byte offset into the source sentence.
    pub start: usize,
    /// Byte offset into the source sentence (exclusive).
    pub end: usize,
    pub phrase: String,
    pub instance_ids: Vec<u32>,
}

impl PhraseMatch {
    fn check_against(&self, sentence: &str) -> Result<(), BuildError> {
        if sentence.get(self.start..self.end) != Some(self.phrase.as_str()) {
            return Err(BuildError::MatchSliceMismatch {
                start: self.start,
                end: self.end,
                phrase: self.phrase.clone(),
            });
        }
        if self.instance_ids.is_empty() {
            return Err(BuildError::EmptyMatch);
        }
        Ok(())
    }
}

/// One training/benchmark conversation turn in GVC token form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GvcRecord {
    pub image_id: String,
    /// May contain `<obj>` placeholders.
    pub question: String,
    /// GVC token text.
    pub answer: String,
    /// Instance ids per `<seg>` token, in token order.
    pub seg_targets: Vec<Vec<u32>>,
    /// Instance id per `<obj>` placeholder, in placeholder order.
    pub obj_targets: Vec<u32>,
    pub schema_version: u32,
}

fn count_occurrences(haystack: &str, needle: &str) -> usize {
    if needle.is_empty() {
        return 0;
    }
    let mut count = 0;
    let mut cursor = 0;
    while let Some(found) = haystack[cursor..].find(needle) {
        count += 1;
        cursor += found + needle.len();
    }
    count
}

impl GvcRecord {
    pub fn new(
        image_id: impl Into<String>,
        question: impl Into<String>,
        answer: impl Into<String>,
        seg_targets: Vec<Vec<u32>>,
        obj_targets: Vec<u32>,
    ) -> Self {
        Self {
            image_id: image_id.into(),
            question: question.into(),
            answer: answer.into(),
            seg_targets,
            obj_targets,
            schema_version: SCHEMA_VERSION,
        }
    }

    /// Re-checks the structural invariants: one seg target list per `<seg>`
    /// token, one obj target per `<obj>` token, no empty target lists.
    pub fn validate(&self, tokens: &TokenSet) -> Result<(), BuildError> {
        let segs = count_occurrences(&self.answer, &tokens.seg);
        if segs != self.seg_targets.len() {
            return Err(BuildError::TokenCountMismatch(
                tokens.seg.clone(),
                segs,
                self.seg_targets.len(),
            ));
        }
        let objs = count_occurrences(&self.question, &tokens.obj);
        if objs != self.obj_targets.len() {
            return Err(BuildError::TokenCountMismatch(
                tokens.obj.clone(),
                objs,
                self.obj_targets.len(),
            ));
        }
        for (i, targets) in self.seg_targets.iter().enumerate() {
            if targets.is_empty() {
                return Err(BuildError::EmptyTargets(i));
            }
        }
        Ok(())
    }
}

/// Formats a coordinate Context-1 style: three decimals with trailing zeros
/// trimmed (0.63, 0.1, 0.774).
fn format_coord(v: f64) -> String {
    let mut s = format!("{v:.3}");
    while s.ends_with('0') {
        s.pop();
    }
    if s.ends_with('.') {
        s.push('0');
    }
    s
}

/// One instance line of a judge prompt: `k.category: [x0, y0, x1, y1]`.
pub fn format_instance_line(inst: &InstanceAnnotation) -> String {
    let [x0, y0, x1, y1] = inst.bbox.corners();
    format!(
        "{}.{}: [{}, {}, {}, {}]",
        inst.instance_id,
        inst.category,
        format_coord(x0),
        format_coord(y0),
        format_coord(x1),
        format_coord(y1)
    )
}

/// The full instance block, one line per instance in id order.
pub fn format_instance_block(instances: &[InstanceAnnotation]) -> String {
    let mut sorted: Vec<&InstanceAnnotation> = instances.iter().collect();
    sorted.sort_by_key(|i| i.instance_id);
    sorted
        .iter()
        .map(|i| format_instance_line(i))
        .collect::<Vec<_>>()
        .join("\n")
}

pub const DEFAULT_ANNOTATE_TEMPLATE: &str = include_str!("../templates/annotate_prompt.txt");

/// Builds the deterministic annotation-judge prompt: the instance block in id
/// order, then the sentence to ground.
pub fn build_annotation_prompt(
    instances: &[InstanceAnnotation],
    sentence: &str,
    template: &str,
) -> Result<String, BuildError> {
    if instances.is_empty() {
        return Err(BuildError::NoInstances);
    }
    Ok(template
        .replace("{instances}", &format_instance_block(instances))
        .replace("{sentence}", sentence))
}

/// Wraps each matched phrase as `<g_s> phrase <g_e> <seg>` and collects the
/// seg target lists. Unmatched text passes through unchanged.
pub fn apply_matches(
    sentence: &str,
    matches: &[PhraseMatch],
    tokens: &TokenSet,
) -> Result<(String, Vec<Vec<u32>>), BuildError> {
    let mut answer = String::new();
    let mut seg_targets = Vec::with_capacity(matches.len());
    let mut cursor = 0usize;
    for (i, m) in matches.iter().enumerate() {
        m.check_against(sentence)?;
        if m.start < cursor {
            let prev = &matches[i - 1];
            return Err(BuildError::OverlappingMatches(
                prev.start, prev.end, m.start, m.end,
            ));
        }
        answer.push_str(&sentence[cursor..m.start]);
        answer.push_str(&tokens.g_start);
        answer.push(' ');
        answer.push_str(&m.phrase);
        answer.push(' ');
        answer.push_str(&tokens.g_end);
        answer.push(' ');
        answer.push_str(&tokens.seg);
        seg_targets.push(m.instance_ids.clone());
        cursor = m.end;
    }
    answer.push_str(&sentence[cursor..]);
    Ok((answer, seg_targets))
}

/// Rewrites a referring phrase in a question to `the object <obj>` and
/// records the target instance. Multi-instance matches are rejected: a
/// referring prompt denotes one instance.
pub fn build_gvcr_question(
    question: &str,
    phrase_match: &PhraseMatch,
    tokens: &TokenSet,
) -> Result<(String, Vec<u32>), BuildError> {
    phrase_match.check_against(question)?;
    if phrase_match.instance_ids.len() != 1 {
        return Err(BuildError::MultiInstanceReferring(
            phrase_match.instance_ids.len(),
        ));
    }
    let article = if phrase_match.start == 0 {
        "The object "
    } else {
        "the object "
    };
    let mut rewritten = String::with_capacity(question.len());
    rewritten.push_str(&question[..phrase_match.start]);
    rewritten.push_str(article);
    rewritten.push_str(&tokens.obj);
    rewritten.push_str(&question[phrase_match.end..]);
    Ok((rewritten, phrase_match.instance_ids.clone()))
}

/// Placement of one numbered mark at the center of an instance's mask.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkPlacement {
    pub mark: u32,
    pub instance_id: u32,
    pub anchor_x: f64,
    pub anchor_y: f64,
    pub mark_size: u32,
    pub mask_alpha: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkPlan {
    pub image_id: String,
    pub placements: Vec<MarkPlacement>,
    pub schema_version: u32,
}

impl MarkPlan {
    pub fn mark_for(&self, instance_id: u32) -> Option<u32> {
        self.placements
            .iter()
            .find(|p| p.instance_id == instance_id)
            .map(|p| p.mark)
    }

    pub fn instance_for(&self, mark: u32) -> Option<u32> {
        self.placements
            .iter()
            .find(|p| p.mark == mark)
            .map(|p| p.instance_id)
    }
}

/// Assigns marks 1..N in instance-id order, anchored at mask centroids with a
/// box-center fallback for instances whose mask is absent or empty.
pub fn plan_marks(
    image_id: &str,
    instances: &[InstanceAnnotation],
    mask_alpha: f64,
    mark_size: u32,
) -> Result<MarkPlan, BuildError> {
    if !(0.0..=1.0).contains(&mask_alpha) {
        return Err(BuildError::BadAlpha(mask_alpha));
    }
    let mut sorted: Vec<&InstanceAnnotation> = instances.iter().collect();
    sorted.sort_by_key(|i| i.instance_id);
    let placements = sorted
        .iter()
        .enumerate()
        .map(|(idx, inst)| {
            let (anchor_x, anchor_y) = inst
                .mask
                .as_ref()
                .and_then(|m| mask_centroid(m).ok())
                .unwrap_or_else(|| inst.bbox.center());
            MarkPlacement {
                mark: (idx + 1) as u32,
                instance_id: inst.instance_id,
                anchor_x,
                anchor_y,
                mark_size,
                mask_alpha,
            }
        })
        .collect();
    Ok(MarkPlan {
        image_id: image_id.to_string(),
        placements,
        schema_version: SCHEMA_VERSION,
    })
}

fn mark_token(tokens: &TokenSet, mark: u32) -> String {
    format!("{}{}{}", tokens.mark_open, mark, tokens.mark_close)
}

/// Converts a GVC record plus a mark plan into the pure-text mark form:
/// `<obj>` placeholders become `<k>` and each grounding group collapses to
/// `phrase <k...>` with the marks of its targets.
pub fn build_grvc_pair(
    record: &GvcRecord,
    plan: &MarkPlan,
    tokens: &TokenSet,
) -> Result<(String, String), BuildError> {
    record.validate(tokens)?;

    let mut question = String::with_capacity(record.question.len());
    let mut cursor = 0usize;
    for &target in &record.obj_targets {
        let found = record.question[cursor..]
            .find(&tokens.obj)
            .expect("validated obj count");
        let at = cursor + found;
        let mark = plan.mark_for(target).ok_or(BuildError::MissingMark(target))?;
        question.push_str(&record.question[cursor..at]);
        question.push_str(&mark_token(tokens, mark));
        cursor = at + tokens.obj.len();
    }
    question.push_str(&record.question[cursor..]);

    let parsed = parse_gvc(&record.answer, &[], tokens, ParseMode::Strict)?;
    let plain = &parsed.response.plain_text;
    let mut answer = String::with_capacity(plain.len());
    let mut cursor = 0usize;
    for (span, targets) in parsed.response.spans.iter().zip(&record.seg_targets) {
        answer.push_str(&plain[cursor..span.end]);
        for &target in targets {
            let mark = plan.mark_for(target).ok_or(BuildError::MissingMark(target))?;
            answer.push(' ');
            answer.push_str(&mark_token(tokens, mark));
        }
        cursor = span.end;
    }
    answer.push_str(&plain[cursor..]);
    Ok((question, answer))
}

/// Decodes an annotation judge's indexed-ref rewrite back into matches over
/// the original sentence. Phrases that do not exactly slice the sentence are
/// aligned by case-insensitive first-occurrence search; matches that still
/// fail to align are dropped with a warning.
pub fn decode_matches(sentence: &str, rewrite: &str) -> (Vec<PhraseMatch>, Vec<String>) {
    let mut warnings = Vec::new();
    let parsed = match parse_indexed_refs(rewrite, ParseMode::Lenient) {
        Ok(p) => p,
        Err(_) => unreachable!("lenient indexed parsing never fails"),
    };
    for w in &parsed.warnings {
        warnings.push(format!("judge rewrite: {w}"));
    }

    let sentence_folded = sentence.to_ascii_lowercase();
    let mut matches: Vec<PhraseMatch> = Vec::new();
    for span in &parsed.response.spans {
        let ids: Vec<u32> = span
            .refs
            .iter()
            .filter_map(|r| match r {
                GroundingRef::InstanceId { number, .. } => Some(*number),
                _ => None,
            })
            .collect();
        if ids.is_empty() {
            continue;
        }
        let needle = span.phrase.to_ascii_lowercase();
        let mut from = 0usize;
        let mut placed = false;
        while let Some(found) = sentence_folded[from..].find(&needle) {
            let start = from + found;
            let end = start + needle.len();
            let overlaps = matches.iter().any(|m| start < m.end && m.start < end);
            if !overlaps {
                matches.push(PhraseMatch {
                    start,
                    end,
                    phrase: sentence[start..end].to_string(),
                    instance_ids: ids.clone(),
                });
                placed = true;
                break;
            }
            from = end;
        }
        if !placed {
            warnings.push(format!(
                "dropping match {:?}: not found in the sentence",
                span.phrase
            ));
        }
    }
    matches.sort_by_key(|m| m.start);
    (matches, warnings)
}

/// Instruction-template families from the appendix lists.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateKind {
    ReferSeg,
    BriefCaption,
    GroundingSuffix,
    RegionCaption,
}

fn template_list(kind: TemplateKind) -> &'static [&'static str] {
    use std::sync::OnceLock;
    static LISTS: OnceLock<[Vec<&'static str>; 4]> = OnceLock::new();
    let lists = LISTS.get_or_init(|| {
        let parse = |raw: &'static str| -> Vec<&'static str> {
            raw.lines().map(str::trim).filter(|l| !l.is_empty()).collect()
        };
        [
            parse(include_str!("../templates/refer_seg.txt")),
            parse(include_str!("../templates/brief_caption.txt")),
            parse(include_str!("../templates/grounding_suffix.txt")),
            parse(include_str!("../templates/region_caption.txt")),
        ]
    });
    match kind {
        TemplateKind::ReferSeg => &lists[0],
        TemplateKind::BriefCaption => &lists[1],
        TemplateKind::GroundingSuffix => &lists[2],
        TemplateKind::RegionCaption => &lists[3],
    }
}

/// Uniform, seed-deterministic choice from the template list for `kind`.
pub fn sample_template(kind: TemplateKind, seed: u64) -> &'static str {
    let list = template_list(kind);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    list[rng.gen_range(0..list.len())]
}
