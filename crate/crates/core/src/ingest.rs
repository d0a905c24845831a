//! Dataset loaders, the beams exchange file, split lists and training-file
//! generation.

use std::fs::File;
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::embeddings::{EmbeddingStore, TruncationConfig};
use crate::mini_kg::sparql::parse_query;
use crate::skeleton::{build_training_pair, parse_skeleton, LabelLookup};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("record {index}: {message}")]
    Schema { index: usize, message: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

fn schema(index: usize, message: impl Into<String>) -> IngestError {
    IngestError::Schema {
        index,
        message: message.into(),
    }
}

fn open(path: &Path) -> Result<BufReader<File>, IngestError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|source| IngestError::File {
            path: path.to_path_buf(),
            source,
        })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DatasetKind {
    LcQuad2,
    SimpleQuestionsWd,
}

impl FromStr for DatasetKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().replace(['-', '_', '.', ' '], "").as_str() {
            "lcquad2" | "lcquad20" | "lcquad" => Ok(DatasetKind::LcQuad2),
            "simplequestions" | "simplequestionswd" | "simplequestionswikidata" | "sq" => {
                Ok(DatasetKind::SimpleQuestionsWd)
            }
            other => Err(format!("unknown dataset kind {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionRecord {
    pub qid: String,
    pub text: String,
    pub gold_sparql: String,
    pub dataset: DatasetKind,
    /// The gold query falls outside the SPARQL subset the in-process store evaluates.
    #[serde(default)]
    pub unsupported_gold: bool,
}

impl QuestionRecord {
    pub fn new(qid: impl Into<String>, text: impl Into<String>, gold: impl Into<String>, dataset: DatasetKind) -> Self {
        let gold_sparql = gold.into();
        let unsupported_gold = parse_query(&gold_sparql).is_err();
        Self {
            qid: qid.into(),
            text: text.into(),
            gold_sparql,
            dataset,
            unsupported_gold,
        }
    }
}

fn id_string(v: &Value) -> Option<String> {
    match v {
        Value::String(s) if !s.trim().is_empty() => Some(s.trim().to_string()),
        Value::Number(n) => Some(n.to_string()),
        _ => None,
    }
}

fn usable_text(v: Option<&Value>) -> Option<String> {
    let s = v?.as_str()?.trim();
    if s.is_empty() || s.eq_ignore_ascii_case("n/a") || s == "[]" {
        None
    } else {
        Some(s.to_string())
    }
}

/// Parses a dataset file's contents.
pub fn parse_dataset(text: &str, kind: DatasetKind) -> Result<Vec<QuestionRecord>, IngestError> {
    let trimmed = text.trim_start();
    if kind == DatasetKind::SimpleQuestionsWd && !trimmed.starts_with('[') && !trimmed.is_empty() {
        return parse_simple_questions_tsv(text);
    }
    if trimmed.is_empty() {
        return Ok(Vec::new());
    }
    let doc: Value = serde_json::from_str(text).map_err(|e| schema(0, e.to_string()))?;
    let items = doc
        .as_array()
        .ok_or_else(|| schema(0, "top level is not a JSON array"))?;
    let mut out = Vec::with_capacity(items.len());
    for (index, item) in items.iter().enumerate() {
        let obj = item
            .as_object()
            .ok_or_else(|| schema(index, "record is not an object"))?;
        let record = match kind {
            DatasetKind::LcQuad2 => {
                let qid = obj
                    .get("uid")
                    .and_then(id_string)
                    .ok_or_else(|| schema(index, "missing uid"))?;
                let text = usable_text(obj.get("question"))
                    .or_else(|| usable_text(obj.get("paraphrased_question")))
                    .or_else(|| usable_text(obj.get("NNQT_question")))
                    .ok_or_else(|| schema(index, "no usable question text"))?;
                let gold = obj
                    .get("sparql_wikidata")
                    .and_then(Value::as_str)
                    .ok_or_else(|| schema(index, "missing sparql_wikidata"))?;
                QuestionRecord::new(qid, text, gold.trim(), kind)
            }
            DatasetKind::SimpleQuestionsWd => {
                let qid = obj
                    .get("qid")
                    .or_else(|| obj.get("id"))
                    .and_then(id_string)
                    .unwrap_or_else(|| index.to_string());
                let text = usable_text(obj.get("question"))
                    .ok_or_else(|| schema(index, "missing question"))?;
                let gold = obj
                    .get("sparql")
                    .or_else(|| obj.get("sparql_wikidata"))
                    .and_then(Value::as_str)
                    .ok_or_else(|| schema(index, "missing sparql"))?;
                QuestionRecord::new(qid, text, gold.trim(), kind)
            }
        };
        out.push(record);
    }
    Ok(out)
}

/// The published tab-separated form: `subject  property  object  question`,
/// where an `R`-prefixed property denotes the reverse direction.
fn parse_simple_questions_tsv(text: &str) -> Result<Vec<QuestionRecord>, IngestError> {
    let mut out = Vec::new();
    for (index, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() < 4 {
            return Err(schema(index, format!("expected 4 columns, found {}", cols.len())));
        }
        let (subject, property) = (cols[0].trim(), cols[1].trim());
        let valid = |s: &str, p: char| s.len() > 1 && s.starts_with(p) && s[1..].bytes().all(|b| b.is_ascii_digit());
        if !valid(subject, 'Q') {
            return Err(schema(index, format!("bad subject {subject:?}")));
        }
        let gold = if valid(property, 'P') {
            format!("SELECT ?x WHERE {{ wd:{subject} wdt:{property} ?x }}")
        } else if valid(property, 'R') {
            format!("SELECT ?x WHERE {{ ?x wdt:P{} wd:{subject} }}", &property[1..])
        } else {
            return Err(schema(index, format!("bad property {property:?}")));
        };
        out.push(QuestionRecord::new(
            index.to_string(),
            cols[3].trim(),
            gold,
            DatasetKind::SimpleQuestionsWd,
        ));
    }
    Ok(out)
}

pub fn load_dataset(path: impl AsRef<Path>, kind: DatasetKind) -> Result<Vec<QuestionRecord>, IngestError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| IngestError::File {
        path: path.to_path_buf(),
        source,
    })?;
    parse_dataset(&text, kind)
}

/// One line of a beams file: decoder outputs for a question, best first.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BeamEntry {
    pub qid: String,
    pub beams: Vec<String>,
}

pub fn read_beams(reader: impl BufRead) -> Result<Vec<BeamEntry>, IngestError> {
    let mut out = Vec::new();
    for (index, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let v: Value = serde_json::from_str(&line).map_err(|e| schema(index, e.to_string()))?;
        let qid = v
            .get("qid")
            .and_then(id_string)
            .ok_or_else(|| schema(index, "missing qid"))?;
        let beams = v
            .get("beams")
            .and_then(Value::as_array)
            .ok_or_else(|| schema(index, "missing beams array"))?
            .iter()
            .map(|b| b.as_str().map(str::to_owned))
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| schema(index, "beam is not a string"))?;
        if beams.is_empty() {
            return Err(schema(index, "empty beams list"));
        }
        out.push(BeamEntry { qid, beams });
    }
    Ok(out)
}

pub fn write_beams(mut writer: impl Write, entries: &[BeamEntry]) -> io::Result<()> {
    for e in entries {
        serde_json::to_writer(&mut writer, e)?;
        writer.write_all(b"\n")?;
    }
    writer.flush()
}

pub fn load_beams(path: impl AsRef<Path>) -> Result<Vec<BeamEntry>, IngestError> {
    read_beams(open(path.as_ref())?)
}

/// A split file: one qid per line; blank lines and `#` comments ignored.
pub fn read_split(reader: impl BufRead) -> Result<Vec<String>, IngestError> {
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line?;
        let qid = line.trim();
        if !qid.is_empty() && !qid.starts_with('#') {
            out.push(qid.to_string());
        }
    }
    Ok(out)
}

pub fn load_split(path: impl AsRef<Path>) -> Result<Vec<String>, IngestError> {
    read_split(open(path.as_ref())?)
}

/// Keeps the records whose qid is listed in `split`, in split order.
pub fn apply_split(records: Vec<QuestionRecord>, split: &[String]) -> Vec<QuestionRecord> {
    let mut by_qid: std::collections::HashMap<String, QuestionRecord> =
        records.into_iter().map(|r| (r.qid.clone(), r)).collect();
    split.iter().filter_map(|q| by_qid.remove(q)).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingRecord {
    pub qid: String,
    pub question: String,
    pub skeleton: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SkippedRecord {
    pub qid: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct TrainingManifest {
    pub total: usize,
    pub written: usize,
    pub skipped: Vec<SkippedRecord>,
}

/// Converts supported records into training pairs, one JSON line each.
/// Records that cannot be converted are listed in the manifest.
pub fn make_training_file(
    records: &[QuestionRecord],
    entities: &dyn LabelLookup,
    relations: &dyn LabelLookup,
    embeddings: &EmbeddingStore,
    config: TruncationConfig,
    mut out: impl Write,
) -> io::Result<TrainingManifest> {
    let mut manifest = TrainingManifest {
        total: records.len(),
        ..Default::default()
    };
    for r in records {
        if r.unsupported_gold {
            manifest.skipped.push(SkippedRecord {
                qid: r.qid.clone(),
                reason: "gold query uses unsupported SPARQL".into(),
            });
            continue;
        }
        let pair = build_training_pair(&r.text, &r.gold_sparql, entities, relations, embeddings, config)
            .and_then(|p| parse_skeleton(&p.skeleton, config).map(|_| p));
        match pair {
            Ok(p) => {
                let line = TrainingRecord {
                    qid: r.qid.clone(),
                    question: p.question,
                    skeleton: p.skeleton,
                };
                serde_json::to_writer(&mut out, &line)?;
                out.write_all(b"\n")?;
                manifest.written += 1;
            }
            Err(e) => manifest.skipped.push(SkippedRecord {
                qid: r.qid.clone(),
                reason: e.to_string(),
            }),
        }
    }
    out.flush()?;
    Ok(manifest)
}

pub fn read_training(reader: impl BufRead) -> Result<Vec<TrainingRecord>, IngestError> {
    let mut out = Vec::new();
    for (index, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| schema(index, e.to_string()))?);
    }
    Ok(out)
}

pub fn load_training(path: impl AsRef<Path>) -> Result<Vec<TrainingRecord>, IngestError> {
    read_training(open(path.as_ref())?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embeddings::FullEmbedding;
    use std::collections::HashMap;

    #[test]
    fn lcquad_fields_and_fallback() {
        let text = r#"[
          {"uid": 19719, "question": "What is the father of Barack Obama?", "paraphrased_question": "x",
           "sparql_wikidata": " select distinct ?obj where { wd:Q76 wdt:P22 ?obj } "},
          {"uid": "7", "question": null, "paraphrased_question": "Who is it?",
           "sparql_wikidata": "SELECT ?x WHERE { ?x wdt:P31 ?y OPTIONAL { ?x wdt:P2 ?z } }"}
        ]"#;
        let recs = parse_dataset(text, DatasetKind::LcQuad2).unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[0].qid, "19719");
        assert_eq!(recs[0].gold_sparql, "select distinct ?obj where { wd:Q76 wdt:P22 ?obj }");
        assert!(!recs[0].unsupported_gold);
        assert_eq!(recs[1].text, "Who is it?");
        assert!(recs[1].unsupported_gold);
        assert!(parse_dataset("[]", DatasetKind::LcQuad2).unwrap().is_empty());
        match parse_dataset(r#"[{"uid": 1}]"#, DatasetKind::LcQuad2) {
            Err(IngestError::Schema { index: 0, .. }) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn simple_questions_forms() {
        let tsv = "Q1176417\tP136\tQ11401\twhat kind of music does the artist play\nQ12439\tR19\tQ6106580\twho was born in detroit\n";
        let recs = parse_dataset(tsv, DatasetKind::SimpleQuestionsWd).unwrap();
        assert_eq!(recs[0].gold_sparql, "SELECT ?x WHERE { wd:Q1176417 wdt:P136 ?x }");
        assert_eq!(recs[1].gold_sparql, "SELECT ?x WHERE { ?x wdt:P19 wd:Q12439 }");
        assert_eq!(recs[1].qid, "1");
        let json = r#"[{"id": "sq-1", "question": "q", "sparql": "SELECT ?x WHERE { wd:Q1 wdt:P2 ?x }"}]"#;
        let recs = parse_dataset(json, DatasetKind::SimpleQuestionsWd).unwrap();
        assert_eq!(recs[0].qid, "sq-1");
        assert!(parse_dataset("Q1\tX9\tQ2\tq", DatasetKind::SimpleQuestionsWd).is_err());
    }

    #[test]
    fn beams_roundtrip_and_errors() {
        let text = "{\"qid\":\"1\",\"beams\":[\"a\",\"b\"]}\n\n{\"beams\":[\"c\"],\"qid\":2}\n";
        let entries = read_beams(text.as_bytes()).unwrap();
        assert_eq!(entries[1].qid, "2");
        let mut buf = Vec::new();
        write_beams(&mut buf, &entries).unwrap();
        let again = read_beams(buf.as_slice()).unwrap();
        assert_eq!(again, entries);
        let mut buf2 = Vec::new();
        write_beams(&mut buf2, &again).unwrap();
        assert_eq!(buf, buf2);
        assert!(matches!(
            read_beams("{\"qid\":\"1\",\"beams\":[]}".as_bytes()),
            Err(IngestError::Schema { index: 0, .. })
        ));
    }

    #[test]
    fn split_filters_in_order() {
        let split = read_split("# test\n3\n\n1\n9\n".as_bytes()).unwrap();
        let recs: Vec<_> = (1..=3)
            .map(|i| QuestionRecord::new(i.to_string(), "q", "ASK { ?s ?p ?o }", DatasetKind::LcQuad2))
            .collect();
        let kept: Vec<_> = apply_split(recs, &split).into_iter().map(|r| r.qid).collect();
        assert_eq!(kept, ["3", "1"]);
    }

    #[test]
    fn training_file_with_manifest() {
        let entities: HashMap<String, String> = [("Q76".to_string(), "Barack Obama".to_string())].into();
        let relations: HashMap<String, String> = [("P22".to_string(), "father".to_string())].into();
        let store = EmbeddingStore::from_embeddings(vec![FullEmbedding::new("Q76", vec![0.25; 200]).unwrap()]);
        let records = vec![
            QuestionRecord::new("a", "What is the father of Barack Obama?", "SELECT ?o WHERE { wd:Q76 wdt:P22 ?o }", DatasetKind::LcQuad2),
            QuestionRecord::new("b", "?", "SELECT ?o WHERE { wd:Q99 wdt:P22 ?o }", DatasetKind::LcQuad2),
        ];
        let mut out = Vec::new();
        let manifest = make_training_file(&records, &entities, &relations, &store, TruncationConfig::default(), &mut out).unwrap();
        assert_eq!(manifest.written, 1);
        assert_eq!(manifest.skipped.len(), 1);
        assert_eq!(manifest.skipped[0].qid, "b");
        let lines = read_training(out.as_slice()).unwrap();
        assert_eq!(lines.len(), 1);
        assert!(lines[0].skeleton.contains("<ent>Barack Obama [0.250,"));
        assert!(lines[0].skeleton.contains("<rel>father</rel>"));
    }
}
