//! Full-text label search over KG entity labels with Okapi BM25.
//!
//! ```text
//! score(D, Q) = sum over query tokens q of
//!     idf(q) * tf(q, D) * (k1 + 1) / (tf(q, D) + k1 * (1 - b + b * |D| / avgdl))
//! idf(q) = ln(1 + (N - df(q) + 0.5) / (df(q) + 0.5))
//! ```
//!
//! Query tokens are counted with multiplicity. Only documents sharing at least
//! one token with the query are returned. Equal scores are ordered by the
//! numeric part of the entity id, ascending.

mod persist;

use std::cmp::Ordering;
use std::collections::HashMap;
use std::io::{self, BufRead};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use unicode_normalization::UnicodeNormalization;

#[derive(Debug, Error)]
pub enum LabelIndexError {
    #[error("invalid KG identifier {0:?}")]
    InvalidId(String),
    #[error("corrupt record at line {line}: {message}")]
    CorruptRecord { line: usize, message: String },
    #[error("query {0:?} has no searchable tokens")]
    EmptyQuery(String),
    #[error("corrupt index file: {0}")]
    Format(String),
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
}

/// A KG item with its primary label.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EntityRecord {
    pub id: String,
    pub label: String,
    pub numeric_id: u64,
}

/// Parses the digits of an identifier such as `Q76` or `P22`.
pub fn numeric_id(id: &str) -> Option<u64> {
    let mut chars = id.chars();
    let first = chars.next()?;
    let digits = chars.as_str();
    if !first.is_ascii_alphabetic()
        || digits.is_empty()
        || !digits.bytes().all(|b| b.is_ascii_digit())
    {
        return None;
    }
    digits.parse().ok()
}

impl EntityRecord {
    pub fn new(id: impl Into<String>, label: impl Into<String>) -> Result<Self, LabelIndexError> {
        let id = id.into();
        let numeric_id = numeric_id(&id).ok_or_else(|| LabelIndexError::InvalidId(id.clone()))?;
        Ok(Self {
            id,
            label: label.into(),
            numeric_id,
        })
    }

    /// Ascending numeric id, then the full id string.
    pub fn tie_break_cmp(&self, other: &Self) -> Ordering {
        self.numeric_id
            .cmp(&other.numeric_id)
            .then_with(|| self.id.cmp(&other.id))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LabelHit {
    pub entity: EntityRecord,
    pub score: f64,
    pub rank: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self { k1: 1.2, b: 0.75 }
    }
}

/// NFKC-normalizes, lowercases and splits on anything that is not alphanumeric.
pub fn tokenize(text: &str) -> Vec<String> {
    let normalized: String = text.nfkc().collect::<String>().to_lowercase();
    normalized
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Posting {
    doc: u32,
    tf: u32,
}

/// Immutable inverted index over entity labels.
#[derive(Debug, Default)]
pub struct LabelIndex {
    docs: Vec<EntityRecord>,
    doc_lens: Vec<u32>,
    by_id: HashMap<String, u32>,
    postings: HashMap<String, Vec<Posting>>,
    total_len: u64,
}

impl LabelIndex {
    /// Indexes every record; when an id repeats, its last label wins.
    pub fn build(records: impl IntoIterator<Item = EntityRecord>) -> Self {
        let mut docs: Vec<EntityRecord> = Vec::new();
        let mut by_id: HashMap<String, u32> = HashMap::new();
        for record in records {
            match by_id.get(&record.id) {
                Some(&doc) => docs[doc as usize] = record,
                None => {
                    by_id.insert(record.id.clone(), docs.len() as u32);
                    docs.push(record);
                }
            }
        }

        let mut postings: HashMap<String, Vec<Posting>> = HashMap::new();
        let mut doc_lens = Vec::with_capacity(docs.len());
        let mut total_len = 0u64;
        for (doc, record) in docs.iter().enumerate() {
            let tokens = tokenize(&record.label);
            doc_lens.push(tokens.len() as u32);
            total_len += tokens.len() as u64;
            let mut tf: HashMap<String, u32> = HashMap::new();
            for token in tokens {
                *tf.entry(token).or_default() += 1;
            }
            for (term, tf) in tf {
                postings.entry(term).or_default().push(Posting {
                    doc: doc as u32,
                    tf,
                });
            }
        }
        Self {
            docs,
            doc_lens,
            by_id,
            postings,
            total_len,
        }
    }

    /// Builds from the ingest format: one `<id>\t<label>` per line.
    pub fn from_tsv(reader: impl BufRead) -> Result<Self, LabelIndexError> {
        Ok(Self::build(read_label_records(reader)?))
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&EntityRecord> {
        self.by_id.get(id).map(|&doc| &self.docs[doc as usize])
    }

    pub fn label_of(&self, id: &str) -> Option<&str> {
        self.get(id).map(|r| r.label.as_str())
    }

    pub fn records(&self) -> &[EntityRecord] {
        &self.docs
    }

    fn avg_doc_len(&self) -> f64 {
        if self.docs.is_empty() {
            0.0
        } else {
            self.total_len as f64 / self.docs.len() as f64
        }
    }

    /// Top-`k` documents by BM25 score (descending), ties by ascending numeric id.
    pub fn search(
        &self,
        query: &str,
        k: usize,
        params: Bm25Params,
    ) -> Result<Vec<LabelHit>, LabelIndexError> {
        let tokens = tokenize(query);
        if tokens.is_empty() {
            return Err(LabelIndexError::EmptyQuery(query.to_string()));
        }
        if k == 0 || self.docs.is_empty() {
            return Ok(Vec::new());
        }

        let n = self.docs.len() as f64;
        let avgdl = self.avg_doc_len();
        let mut scores: HashMap<u32, f64> = HashMap::new();
        for token in &tokens {
            let Some(list) = self.postings.get(token) else {
                continue;
            };
            let idf = bm25_idf(n, list.len() as f64);
            for p in list {
                let dl = self.doc_lens[p.doc as usize] as f64;
                *scores.entry(p.doc).or_insert(0.0) +=
                    bm25_term(idf, p.tf as f64, dl, avgdl, params);
            }
        }

        let mut ranked: Vec<(u32, f64)> = scores.into_iter().collect();
        let cmp = |a: &(u32, f64), b: &(u32, f64)| {
            b.1.partial_cmp(&a.1)
                .unwrap_or(Ordering::Equal)
                .then_with(|| {
                    self.docs[a.0 as usize].tie_break_cmp(&self.docs[b.0 as usize])
                })
        };
        if ranked.len() > k {
            ranked.select_nth_unstable_by(k - 1, cmp);
            ranked.truncate(k);
        }
        ranked.sort_by(cmp);
        Ok(ranked
            .into_iter()
            .enumerate()
            .map(|(i, (doc, score))| LabelHit {
                entity: self.docs[doc as usize].clone(),
                score,
                rank: i + 1,
            })
            .collect())
    }
}

pub(crate) fn bm25_idf(n_docs: f64, df: f64) -> f64 {
    (1.0 + (n_docs - df + 0.5) / (df + 0.5)).ln()
}

pub(crate) fn bm25_term(idf: f64, tf: f64, dl: f64, avgdl: f64, params: Bm25Params) -> f64 {
    let norm = if avgdl > 0.0 {
        1.0 - params.b + params.b * dl / avgdl
    } else {
        1.0
    };
    idf * tf * (params.k1 + 1.0) / (tf + params.k1 * norm)
}

/// Parses `<id>\t<label>` lines, skipping blank ones.
pub fn read_label_records(reader: impl BufRead) -> Result<Vec<EntityRecord>, LabelIndexError> {
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let corrupt = |message: String| LabelIndexError::CorruptRecord {
            line: i + 1,
            message,
        };
        let (id, label) = line
            .split_once('\t')
            .ok_or_else(|| corrupt("expected <id>\\t<label>".into()))?;
        let record = EntityRecord::new(id.trim(), label)
            .map_err(|_| corrupt(format!("invalid identifier {id:?}")))?;
        records.push(record);
    }
    Ok(records)
}
