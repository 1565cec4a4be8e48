//! Ingestion of COCO-style instance annotations and LLaVA-style conversation
//! records, benchmark assembly, and JSONL persistence.

mod coco;

pub use coco::load_coco_instances;

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::builder::GvcRecord;
use crate::geometry::{BoundingBox, GeometryError, SegmentMask};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: invalid JSON: {source}")]
    Json {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("{path} line {line}: {source}")]
    JsonLine {
        path: PathBuf,
        line: usize,
        source: serde_json::Error,
    },
    #[error("annotation {annotation_id} references unknown image {image_id}")]
    MissingImage { annotation_id: i64, image_id: i64 },
    #[error("annotation {annotation_id} references unknown category {category_id}")]
    MissingCategory {
        annotation_id: i64,
        category_id: i64,
    },
    #[error("annotation {annotation_id}: {reason}")]
    BadAnnotation { annotation_id: i64, reason: String },
    #[error("image {image_id}: {reason}")]
    BadImage { image_id: String, reason: String },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("record references unknown image {image_id}")]
    DanglingReference { image_id: String },
}

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// One ground-truth object with a per-image instance number.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceAnnotation {
    pub instance_id: u32,
    pub category: String,
    pub bbox: BoundingBox,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<SegmentMask>,
    #[serde(default)]
    pub is_crowd: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub image_id: String,
    pub width: u32,
    pub height: u32,
    pub instances: Vec<InstanceAnnotation>,
}

impl ImageRecord {
    /// Instances that count as groundable entities: crowd regions are kept in
    /// the record but excluded from ground-truth entity counts by default.
    pub fn evaluation_instances(&self) -> Vec<&InstanceAnnotation> {
        self.instances.iter().filter(|i| !i.is_crowd).collect()
    }

    pub fn instance(&self, instance_id: u32) -> Option<&InstanceAnnotation> {
        self.instances.iter().find(|i| i.instance_id == instance_id)
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        if self.width == 0 || self.height == 0 {
            return Err(DatasetError::BadImage {
                image_id: self.image_id.clone(),
                reason: format!("non-positive dimensions {}x{}", self.width, self.height),
            });
        }
        let mut seen = std::collections::BTreeSet::new();
        for inst in &self.instances {
            if inst.instance_id == 0 || !seen.insert(inst.instance_id) {
                return Err(DatasetError::BadImage {
                    image_id: self.image_id.clone(),
                    reason: format!("duplicate or zero instance id {}", inst.instance_id),
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Human,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Turn {
    pub role: Role,
    pub text: String,
}

/// A conversation about one image: alternating turns starting with a human.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConversationRecord {
    pub image_id: String,
    pub turns: Vec<Turn>,
}

impl ConversationRecord {
    pub fn validate(&self) -> Result<(), String> {
        if self.turns.is_empty() {
            return Err("conversation has no turns".to_string());
        }
        for (i, turn) in self.turns.iter().enumerate() {
            let expected = if i % 2 == 0 {
                Role::Human
            } else {
                Role::Assistant
            };
            if turn.role != expected {
                return Err(format!(
                    "turn {i} has role {:?}, expected {:?} (roles must alternate starting with human)",
                    turn.role, expected
                ));
            }
        }
        Ok(())
    }

    /// (question, answer) pairs in order.
    pub fn qa_pairs(&self) -> Vec<(&str, &str)> {
        self.turns
            .chunks(2)
            .filter_map(|pair| match pair {
                [q, a] => Some((q.text.as_str(), a.text.as_str())),
                _ => None,
            })
            .collect()
    }
}

/// Raw LLaVA-style conversation JSON shape.
#[derive(Debug, Deserialize)]
struct RawConversationFile(Vec<RawConversation>);

#[derive(Debug, Deserialize)]
struct RawConversation {
    id: serde_json::Value,
    conversations: Vec<RawTurn>,
}

#[derive(Debug, Deserialize)]
struct RawTurn {
    from: String,
    value: String,
}

fn normalize_role(s: &str) -> Option<Role> {
    match s.to_ascii_lowercase().as_str() {
        "human" | "user" => Some(Role::Human),
        "gpt" | "assistant" | "ai" | "model" => Some(Role::Assistant),
        _ => None,
    }
}

fn id_to_string(v: &serde_json::Value) -> String {
    match v {
        serde_json::Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

/// Loads LLaVA-style conversation JSON. Records with unknown or
/// non-alternating roles are skipped with a warning rather than failing the
/// whole file.
pub fn load_conversations(
    path: &Path,
) -> Result<(Vec<ConversationRecord>, Vec<String>), DatasetError> {
    let file = File::open(path).map_err(io_err(path))?;
    let raw: RawConversationFile =
        serde_json::from_reader(BufReader::new(file)).map_err(|source| DatasetError::Json {
            path: path.to_path_buf(),
            source,
        })?;

    let mut records = Vec::new();
    let mut warnings = Vec::new();
    for rec in raw.0 {
        let image_id = id_to_string(&rec.id);
        let mut turns = Vec::with_capacity(rec.conversations.len());
        let mut bad = None;
        for t in &rec.conversations {
            match normalize_role(&t.from) {
                Some(role) => turns.push(Turn {
                    role,
                    text: t.value.clone(),
                }),
                None => {
                    bad = Some(format!("unknown role {:?}", t.from));
                    break;
                }
            }
        }
        let record = ConversationRecord { image_id, turns };
        let problem = bad.or_else(|| record.validate().err());
        match problem {
            Some(reason) => warnings.push(format!(
                "skipping conversation for image {}: {reason}",
                record.image_id
            )),
            None => records.push(record),
        }
    }
    Ok((records, warnings))
}

/// A benchmark set: images plus their reference grounded records and
/// conversations, deterministically ordered by image id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkSet {
    pub images: Vec<ImageRecord>,
    pub conversations: BTreeMap<String, Vec<ConversationRecord>>,
    pub references: BTreeMap<String, Vec<GvcRecord>>,
}

impl BenchmarkSet {
    pub fn image(&self, image_id: &str) -> Option<&ImageRecord> {
        self.images.iter().find(|i| i.image_id == image_id)
    }

    /// Total groundable entities across the set (crowds excluded).
    pub fn entity_count(&self) -> usize {
        self.images
            .iter()
            .map(|i| i.evaluation_instances().len())
            .sum()
    }
}

/// Groups conversations and GVC records under their images. Records that
/// reference an absent image are an error; duplicate image ids group under
/// one image.
pub fn assemble_benchmark(
    mut images: Vec<ImageRecord>,
    conversations: Vec<ConversationRecord>,
    gvc_records: Vec<GvcRecord>,
) -> Result<BenchmarkSet, DatasetError> {
    images.sort_by(|a, b| a.image_id.cmp(&b.image_id));
    let known: std::collections::BTreeSet<&str> =
        images.iter().map(|i| i.image_id.as_str()).collect();

    let mut conv_map: BTreeMap<String, Vec<ConversationRecord>> = BTreeMap::new();
    for conv in conversations {
        if !known.contains(conv.image_id.as_str()) {
            return Err(DatasetError::DanglingReference {
                image_id: conv.image_id,
            });
        }
        conv_map.entry(conv.image_id.clone()).or_default().push(conv);
    }

    let mut ref_map: BTreeMap<String, Vec<GvcRecord>> = BTreeMap::new();
    for rec in gvc_records {
        if !known.contains(rec.image_id.as_str()) {
            return Err(DatasetError::DanglingReference {
                image_id: rec.image_id,
            });
        }
        ref_map.entry(rec.image_id.clone()).or_default().push(rec);
    }

    Ok(BenchmarkSet {
        images,
        conversations: conv_map,
        references: ref_map,
    })
}

/// Writes one JSON object per line.
pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<(), DatasetError> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    for record in records {
        serde_json::to_writer(&mut w, record).map_err(|source| DatasetError::Json {
            path: path.to_path_buf(),
            source,
        })?;
        w.write_all(b"\n").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// Reads one JSON object per line; blank lines are ignored. Malformed lines
/// fail with their 1-based line number.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, DatasetError> {
    let file = File::open(path).map_err(io_err(path))?;
    let reader = BufReader::new(file);
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|source| DatasetError::JsonLine {
            path: path.to_path_buf(),
            line: i + 1,
            source,
        })?;
        records.push(record);
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn img(id: &str) -> ImageRecord {
        ImageRecord {
            image_id: id.to_string(),
            width: 100,
            height: 100,
            instances: vec![],
        }
    }

    fn conv(id: &str) -> ConversationRecord {
        ConversationRecord {
            image_id: id.to_string(),
            turns: vec![
                Turn {
                    role: Role::Human,
                    text: "What is shown?".into(),
                },
                Turn {
                    role: Role::Assistant,
                    text: "A scene.".into(),
                },
            ],
        }
    }

    #[test]
    fn conversations_load_and_skip_malformed() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("conv.json");
        std::fs::write(
            &path,
            r#"[
                {"id": "a", "conversations": [
                    {"from": "human", "value": "Q"}, {"from": "gpt", "value": "A"}]},
                {"id": "b", "conversations": [
                    {"from": "gpt", "value": "assistant first"}]},
                {"id": 42, "conversations": [
                    {"from": "human", "value": "Q"}]}
            ]"#,
        )
        .unwrap();
        let (records, warnings) = load_conversations(&path).unwrap();
        assert_eq!(records.len(), 2);
        assert_eq!(records[0].image_id, "a");
        assert_eq!(records[1].image_id, "42");
        assert_eq!(warnings.len(), 1);
        assert!(warnings[0].contains('b'));
    }

    #[test]
    fn empty_conversation_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("conv.json");
        std::fs::write(&path, "[]").unwrap();
        let (records, warnings) = load_conversations(&path).unwrap();
        assert!(records.is_empty());
        assert!(warnings.is_empty());
    }

    #[test]
    fn assemble_orders_and_groups() {
        let set = assemble_benchmark(
            vec![img("b"), img("a")],
            vec![conv("a"), conv("a")],
            vec![],
        )
        .unwrap();
        assert_eq!(set.images[0].image_id, "a");
        assert_eq!(set.images[1].image_id, "b");
        assert_eq!(set.conversations["a"].len(), 2);
    }

    #[test]
    fn assemble_rejects_dangling_reference() {
        let err = assemble_benchmark(vec![img("a")], vec![conv("missing")], vec![]).unwrap_err();
        assert!(matches!(
            err,
            DatasetError::DanglingReference { image_id } if image_id == "missing"
        ));
    }

    #[test]
    fn jsonl_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("records.jsonl");
        let records = vec![conv("a"), conv("b"), conv("c")];
        write_jsonl(&path, &records).unwrap();
        let back: Vec<ConversationRecord> = read_jsonl(&path).unwrap();
        assert_eq!(back, records);
    }

    #[test]
    fn jsonl_empty_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.jsonl");
        std::fs::write(&path, "").unwrap();
        let back: Vec<ConversationRecord> = read_jsonl(&path).unwrap();
        assert!(back.is_empty());
    }

    #[test]
    fn jsonl_malformed_line_cites_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        std::fs::write(&path, "{\"image_id\":\"a\",\"turns\":[]}\nnot json\n").unwrap();
        let err = read_jsonl::<ConversationRecord>(&path).unwrap_err();
        assert!(matches!(err, DatasetError::JsonLine { line: 2, .. }));
    }

    #[test]
    fn validate_rejects_duplicate_instance_ids() {
        let mut image = img("a");
        let inst = InstanceAnnotation {
            instance_id: 1,
            category: "person".into(),
            bbox: BoundingBox::new(0.0, 0.0, 0.5, 0.5).unwrap(),
            mask: None,
            is_crowd: false,
        };
        image.instances = vec![inst.clone(), inst];
        assert!(image.validate().is_err());
    }
}
