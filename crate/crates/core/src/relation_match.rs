//! Grounds generated relation labels to KG properties by cosine similarity
//! between text-embedding vectors. Vectors come from an external provider file;
//! nothing here runs an encoder.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::io::{self, BufRead};

use serde::Serialize;
use thiserror::Error;

use crate::label_index::numeric_id;
use crate::skeleton::LabelLookup;

#[derive(Debug, Error)]
pub enum RelationError {
    #[error("vector dimension {got} does not match catalog dimension {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("relation catalog is empty")]
    EmptyCatalog,
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RelationRecord {
    pub id: String,
    pub label: String,
    pub numeric_id: u64,
    #[serde(skip)]
    pub text_vector: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RelationHit {
    pub relation: RelationRecord,
    pub cosine: f64,
    pub rank: usize,
}

/// All KG properties with their text vectors; every vector has the same dimension.
#[derive(Debug, Default)]
pub struct RelationCatalog {
    records: Vec<RelationRecord>,
    norms: Vec<f64>,
    dim: usize,
    by_id: HashMap<String, usize>,
    by_label: HashMap<String, usize>,
}

fn norm(v: &[f32]) -> f64 {
    v.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>().sqrt()
}

fn parse_vector(text: &str) -> Result<Vec<f32>, String> {
    let v = text
        .split_whitespace()
        .map(|t| t.parse::<f32>().map_err(|_| format!("bad float {t:?}")))
        .collect::<Result<Vec<_>, _>>()?;
    if v.is_empty() {
        return Err("empty vector".into());
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err("non-finite value".into());
    }
    Ok(v)
}

fn label_key(label: &str) -> String {
    label.trim().to_lowercase()
}

impl RelationCatalog {
    pub fn new(records: Vec<RelationRecord>) -> Result<Self, RelationError> {
        let dim = records.first().map_or(0, |r| r.text_vector.len());
        let mut by_id = HashMap::new();
        let mut by_label = HashMap::new();
        let mut norms = Vec::with_capacity(records.len());
        for (i, r) in records.iter().enumerate() {
            if r.text_vector.len() != dim {
                return Err(RelationError::DimensionMismatch {
                    expected: dim,
                    got: r.text_vector.len(),
                });
            }
            norms.push(norm(&r.text_vector));
            by_id.insert(r.id.clone(), i);
            by_label.entry(label_key(&r.label)).or_insert(i);
        }
        Ok(Self {
            records,
            norms,
            dim,
            by_id,
            by_label,
        })
    }

    /// Reads `<id>\t<label>\t<v1> ... <vD>` lines.
    pub fn from_reader(reader: impl BufRead) -> Result<Self, RelationError> {
        let mut records = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let err = |message: String| RelationError::Parse {
                line: i + 1,
                message,
            };
            let mut parts = line.splitn(3, '\t');
            let (Some(id), Some(label), Some(vector)) = (parts.next(), parts.next(), parts.next())
            else {
                return Err(err("expected <id>\\t<label>\\t<vector>".into()));
            };
            let id = id.trim();
            let numeric_id = numeric_id(id).ok_or_else(|| err(format!("invalid identifier {id:?}")))?;
            records.push(RelationRecord {
                id: id.to_string(),
                label: label.to_string(),
                numeric_id,
                text_vector: parse_vector(vector).map_err(err)?,
            });
        }
        Self::new(records)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn records(&self) -> &[RelationRecord] {
        &self.records
    }

    pub fn get(&self, id: &str) -> Option<&RelationRecord> {
        self.by_id.get(id).map(|&i| &self.records[i])
    }

    /// First record whose label equals `label`, ignoring case and surrounding space.
    pub fn find_by_label(&self, label: &str) -> Option<&RelationRecord> {
        self.by_label.get(&label_key(label)).map(|&i| &self.records[i])
    }
}

impl LabelLookup for RelationCatalog {
    fn lookup_label(&self, id: &str) -> Option<&str> {
        self.get(id).map(|r| r.label.as_str())
    }
}

/// Top-`k` catalog entries by cosine similarity to `query`, ties by ascending
/// numeric id. A zero-norm vector on either side scores 0.
pub fn match_relation(
    query: &[f32],
    catalog: &RelationCatalog,
    k: usize,
) -> Result<Vec<RelationHit>, RelationError> {
    if catalog.is_empty() {
        return Err(RelationError::EmptyCatalog);
    }
    if query.len() != catalog.dim {
        return Err(RelationError::DimensionMismatch {
            expected: catalog.dim,
            got: query.len(),
        });
    }
    let qnorm = norm(query);
    let mut scored: Vec<(usize, f64)> = catalog
        .records
        .iter()
        .zip(&catalog.norms)
        .enumerate()
        .map(|(i, (r, &n))| {
            let cos = if qnorm == 0.0 || n == 0.0 {
                0.0
            } else {
                let dot: f64 = query
                    .iter()
                    .zip(&r.text_vector)
                    .map(|(&a, &b)| a as f64 * b as f64)
                    .sum();
                (dot / (qnorm * n)).clamp(-1.0, 1.0)
            };
            (i, cos)
        })
        .collect();
    let cmp = |a: &(usize, f64), b: &(usize, f64)| {
        let (ra, rb) = (&catalog.records[a.0], &catalog.records[b.0]);
        b.1.partial_cmp(&a.1)
            .unwrap_or(Ordering::Equal)
            .then_with(|| ra.numeric_id.cmp(&rb.numeric_id))
            .then_with(|| ra.id.cmp(&rb.id))
    };
    let k = k.min(scored.len());
    if k == 0 {
        return Ok(Vec::new());
    }
    if scored.len() > k {
        scored.select_nth_unstable_by(k - 1, cmp);
        scored.truncate(k);
    }
    scored.sort_by(cmp);
    Ok(scored
        .into_iter()
        .enumerate()
        .map(|(rank, (i, cosine))| RelationHit {
            relation: catalog.records[i].clone(),
            cosine,
            rank: rank + 1,
        })
        .collect())
}

/// Text vectors for generated relation labels, keyed by the exact label string.
#[derive(Debug, Default)]
pub struct QueryVectors {
    vectors: HashMap<String, Vec<f32>>,
    dim: usize,
}

impl QueryVectors {
    /// Reads `<label>\t<v1> ... <vD>` lines.
    pub fn from_reader(reader: impl BufRead) -> Result<Self, RelationError> {
        let mut out = Self::default();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let err = |message: String| RelationError::Parse {
                line: i + 1,
                message,
            };
            let (label, vector) = line
                .split_once('\t')
                .ok_or_else(|| err("expected <label>\\t<vector>".into()))?;
            let vector = parse_vector(vector).map_err(err)?;
            if out.vectors.is_empty() {
                out.dim = vector.len();
            } else if vector.len() != out.dim {
                return Err(RelationError::DimensionMismatch {
                    expected: out.dim,
                    got: vector.len(),
                });
            }
            out.vectors.insert(label.to_string(), vector);
        }
        Ok(out)
    }

    pub fn insert(&mut self, label: impl Into<String>, vector: Vec<f32>) {
        if self.vectors.is_empty() {
            self.dim = vector.len();
        }
        self.vectors.insert(label.into(), vector);
    }

    pub fn get(&self, label: &str) -> Option<&[f32]> {
        self.vectors.get(label).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }
}

/// Where the query vector for a generated relation label came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum QuerySource {
    ProviderVector,
    CatalogLabel,
    Unmatched,
}

/// Relation candidates for a generated label: the provider's vector for the
/// label if present; otherwise the vector of the catalog entry with exactly that
/// label; otherwise nothing.
pub fn candidates_for_label(
    label: &str,
    catalog: &RelationCatalog,
    query_vectors: &QueryVectors,
    k: usize,
) -> Result<(Vec<RelationHit>, QuerySource), RelationError> {
    if let Some(v) = query_vectors
        .get(label)
        .or_else(|| query_vectors.get(label.trim()))
    {
        return Ok((match_relation(v, catalog, k)?, QuerySource::ProviderVector));
    }
    if let Some(record) = catalog.find_by_label(label) {
        return Ok((
            match_relation(&record.text_vector, catalog, k)?,
            QuerySource::CatalogLabel,
        ));
    }
    Ok((Vec::new(), QuerySource::Unmatched))
}
