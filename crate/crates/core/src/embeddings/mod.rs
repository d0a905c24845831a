//! Entity embeddings: truncation to short fixed-precision vectors, dot-product
//! re-ranking of label-search candidates, and the label/embedding layering of
//! the final per-slot candidate list.

mod store;

pub use store::{EmbeddingStore, StoreError, FULL_EMBEDDING_DIM};

use std::cmp::Ordering;
use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::label_index::{EntityRecord, LabelHit};

#[derive(Debug, Error, PartialEq)]
pub enum EmbeddingError {
    #[error("vector length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("invalid truncation config: length {length}, precision {precision}")]
    InvalidConfig { length: usize, precision: u32 },
    #[error("expected {expected} values, got {got}")]
    WrongDimension { expected: usize, got: usize },
    #[error("non-finite value at position {0}")]
    NonFinite(usize),
}

/// How many leading coordinates to keep and how many decimals to round them to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct TruncationConfig {
    pub length: usize,
    pub precision: u32,
}

impl Default for TruncationConfig {
    fn default() -> Self {
        Self {
            length: 10,
            precision: 3,
        }
    }
}

impl TruncationConfig {
    pub fn new(length: usize, precision: u32) -> Result<Self, EmbeddingError> {
        let config = Self { length, precision };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), EmbeddingError> {
        if (1..=FULL_EMBEDDING_DIM).contains(&self.length) && self.precision <= 6 {
            Ok(())
        } else {
            Err(EmbeddingError::InvalidConfig {
                length: self.length,
                precision: self.precision,
            })
        }
    }
}

/// A stored 200-dimensional entity embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct FullEmbedding {
    pub entity_id: String,
    pub values: Vec<f32>,
}

impl FullEmbedding {
    pub fn new(entity_id: impl Into<String>, values: Vec<f32>) -> Result<Self, EmbeddingError> {
        if values.len() != FULL_EMBEDDING_DIM {
            return Err(EmbeddingError::WrongDimension {
                expected: FULL_EMBEDDING_DIM,
                got: values.len(),
            });
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(EmbeddingError::NonFinite(pos));
        }
        Ok(Self {
            entity_id: entity_id.into(),
            values,
        })
    }
}

/// A short embedding as it appears in skeleton queries: every value carries at
/// most `precision` fractional digits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruncatedEmbedding {
    values: Vec<f64>,
    precision: u32,
}

impl TruncatedEmbedding {
    /// Builds an embedding from arbitrary values, rounding each one to `precision` decimals.
    pub fn from_values(values: &[f64], precision: u32) -> Self {
        Self {
            values: values.iter().map(|&v| round_f64(v, precision)).collect(),
            precision,
        }
    }

    /// Builds an embedding from decimal strings as written by a generator.
    /// Returns `None` if any token is not a finite number.
    pub fn from_decimal_strs<'a>(
        tokens: impl IntoIterator<Item = &'a str>,
        precision: u32,
    ) -> Option<Self> {
        let mut values = Vec::new();
        for token in tokens {
            let v: f64 = token.trim().parse().ok()?;
            if !v.is_finite() {
                return None;
            }
            values.push(round_f64(v, precision));
        }
        Some(Self { values, precision })
    }

    pub fn zeros(length: usize, precision: u32) -> Self {
        Self {
            values: vec![0.0; length],
            precision,
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn precision(&self) -> u32 {
        self.precision
    }

    /// Forces the vector to `length` entries: extra trailing values are dropped,
    /// missing ones are filled with zero. Returns true if anything changed.
    pub fn repair_length(&mut self, length: usize) -> bool {
        if self.values.len() == length {
            return false;
        }
        self.values.resize(length, 0.0);
        true
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

impl fmt::Display for TruncatedEmbedding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let p = self.precision as usize;
        f.write_str("[")?;
        for (i, v) in self.values.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{:.*}", p, v)?;
        }
        f.write_str("]")
    }
}

/// Rounds the decimal representation `repr` (as produced by float `Display`,
/// i.e. no exponent) to `precision` fractional digits, half away from zero.
fn round_decimal_repr(repr: &str, precision: u32) -> String {
    let (negative, digits) = match repr.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, repr),
    };
    let (int_part, frac_part) = digits.split_once('.').unwrap_or((digits, ""));
    let p = precision as usize;

    // All kept digits as one integer-like digit string, plus the first dropped digit.
    let mut kept: Vec<u8> = int_part.bytes().map(|b| b - b'0').collect();
    let frac: Vec<u8> = frac_part.bytes().map(|b| b - b'0').collect();
    for i in 0..p {
        kept.push(frac.get(i).copied().unwrap_or(0));
    }
    let round_up = frac.get(p).is_some_and(|&d| d >= 5);
    if round_up {
        let mut i = kept.len();
        loop {
            if i == 0 {
                kept.insert(0, 1);
                break;
            }
            i -= 1;
            if kept[i] == 9 {
                kept[i] = 0;
            } else {
                kept[i] += 1;
                break;
            }
        }
    }

    let split = kept.len() - p;
    let mut int_digits: String = kept[..split].iter().map(|d| (b'0' + d) as char).collect();
    let trimmed = int_digits.trim_start_matches('0');
    int_digits = if trimmed.is_empty() {
        "0".to_string()
    } else {
        trimmed.to_string()
    };
    let frac_digits: String = kept[split..].iter().map(|d| (b'0' + d) as char).collect();
    let is_zero = kept.iter().all(|&d| d == 0);

    let mut out = String::new();
    if negative && !is_zero {
        out.push('-');
    }
    out.push_str(&int_digits);
    if p > 0 {
        out.push('.');
        out.push_str(&frac_digits);
    }
    out
}

/// Round half away from zero on the shortest decimal representation of `v`.
pub fn round_f64(v: f64, precision: u32) -> f64 {
    if !v.is_finite() {
        return v;
    }
    round_decimal_repr(&v.to_string(), precision)
        .parse()
        .unwrap_or(0.0)
}

/// Like [`round_f64`], but on the shortest representation of the `f32` itself,
/// which is what the embedding ingest file contained.
pub fn round_f32(v: f32, precision: u32) -> f64 {
    if !v.is_finite() {
        return v as f64;
    }
    round_decimal_repr(&v.to_string(), precision)
        .parse()
        .unwrap_or(0.0)
}

/// First `config.length` coordinates, rounded to `config.precision` decimals.
pub fn truncate(full: &FullEmbedding, config: TruncationConfig) -> TruncatedEmbedding {
    truncate_values(&full.values, config)
}

pub(crate) fn truncate_values(values: &[f32], config: TruncationConfig) -> TruncatedEmbedding {
    TruncatedEmbedding {
        values: values
            .iter()
            .take(config.length)
            .map(|&v| round_f32(v, config.precision))
            .collect(),
        precision: config.precision,
    }
}

pub fn dot(a: &TruncatedEmbedding, b: &TruncatedEmbedding) -> Result<f64, EmbeddingError> {
    dot_slices(a.values(), b.values())
}

pub(crate) fn dot_slices(a: &[f64], b: &[f64]) -> Result<f64, EmbeddingError> {
    if a.len() != b.len() {
        return Err(EmbeddingError::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    Ok(a.iter().zip(b).map(|(x, y)| x * y).sum())
}

/// Where a layered candidate came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CandidateSource {
    LabelSorted,
    EmbeddingSorted,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoredCandidate {
    pub entity: EntityRecord,
    /// Dot product against the generated embedding, when the entity has a stored embedding
    /// and the slot carried one.
    pub dot_score: Option<f64>,
    pub source: CandidateSource,
}

/// Outcome of [`rerank`]: the sorted list plus how many candidates had no stored vector.
#[derive(Debug, Clone, Default)]
pub struct Reranked {
    pub candidates: Vec<ScoredCandidate>,
    pub missing_embeddings: usize,
}

fn by_score_then_id(a: &ScoredCandidate, b: &ScoredCandidate) -> Ordering {
    let (sa, sb) = (a.dot_score.unwrap_or(f64::NEG_INFINITY), b.dot_score.unwrap_or(f64::NEG_INFINITY));
    sb.partial_cmp(&sa)
        .unwrap_or(Ordering::Equal)
        .then_with(|| a.entity.tie_break_cmp(&b.entity))
}

/// Scores every label hit that has a stored embedding by its dot product with
/// the generated truncated embedding (stored side truncated identically), and
/// sorts descending with ascending numeric id as the tie-break.
pub fn rerank(
    generated: &TruncatedEmbedding,
    candidates: &[LabelHit],
    store: &EmbeddingStore,
    config: TruncationConfig,
) -> Reranked {
    let config = TruncationConfig {
        length: generated.len().clamp(1, FULL_EMBEDDING_DIM),
        ..config
    };
    let mut out = Reranked::default();
    for hit in candidates {
        let Some(stored) = store.truncated(&hit.entity.id, config) else {
            out.missing_embeddings += 1;
            continue;
        };
        let score = match dot(generated, &stored) {
            Ok(s) => s,
            Err(_) => {
                out.missing_embeddings += 1;
                continue;
            }
        };
        out.candidates.push(ScoredCandidate {
            entity: hit.entity.clone(),
            dot_score: Some(score),
            source: CandidateSource::EmbeddingSorted,
        });
    }
    out.candidates.sort_by(by_score_then_id);
    out
}

/// Which list leads when the two are concatenated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LayerOrder {
    LabelFirst,
    EmbeddingFirst,
}

/// Number of label-sorted and embedding-sorted candidates kept per entity
/// slot, and which group goes first. Written as e.g. `3LS+3TS` or `3TS+3LS`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerPolicy {
    pub n_label: usize,
    pub n_embed: usize,
    pub order: LayerOrder,
}

impl Default for LayerPolicy {
    fn default() -> Self {
        Self {
            n_label: 3,
            n_embed: 3,
            order: LayerOrder::LabelFirst,
        }
    }
}

impl LayerPolicy {
    pub const fn new(n_label: usize, n_embed: usize, order: LayerOrder) -> Self {
        Self {
            n_label,
            n_embed,
            order,
        }
    }

    pub fn total(&self) -> usize {
        self.n_label + self.n_embed
    }

    /// The six candidate orderings compared in the ablation sweep.
    pub fn ablation_rows() -> [LayerPolicy; 6] {
        use LayerOrder::*;
        [
            LayerPolicy::new(3, 3, LabelFirst),
            LayerPolicy::new(3, 3, EmbeddingFirst),
            LayerPolicy::new(3, 0, LabelFirst),
            LayerPolicy::new(0, 3, LabelFirst),
            LayerPolicy::new(6, 0, LabelFirst),
            LayerPolicy::new(0, 6, LabelFirst),
        ]
    }
}

impl fmt::Display for LayerPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.order {
            LayerOrder::LabelFirst => write!(f, "{} LS + {} TS", self.n_label, self.n_embed),
            LayerOrder::EmbeddingFirst => write!(f, "{} TS + {} LS", self.n_embed, self.n_label),
        }
    }
}

#[derive(Debug, Error, PartialEq)]
#[error("invalid layer policy {0:?}; expected e.g. \"3LS+3TS\"")]
pub struct LayerPolicyParseError(String);

impl FromStr for LayerPolicy {
    type Err = LayerPolicyParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || LayerPolicyParseError(s.to_string());
        let compact: String = s.chars().filter(|c| !c.is_whitespace()).collect();
        let compact = compact.to_ascii_uppercase();
        let (first, second) = compact.split_once('+').ok_or_else(err)?;
        let part = |p: &str| -> Result<(usize, bool), LayerPolicyParseError> {
            if let Some(n) = p.strip_suffix("LS") {
                Ok((n.parse().map_err(|_| err())?, true))
            } else if let Some(n) = p.strip_suffix("TS") {
                Ok((n.parse().map_err(|_| err())?, false))
            } else {
                Err(err())
            }
        };
        let (n1, first_is_label) = part(first)?;
        let (n2, second_is_label) = part(second)?;
        if first_is_label == second_is_label {
            return Err(err());
        }
        let policy = if first_is_label {
            LayerPolicy::new(n1, n2, LayerOrder::LabelFirst)
        } else {
            LayerPolicy::new(n2, n1, LayerOrder::EmbeddingFirst)
        };
        if policy.total() == 0 {
            return Err(err());
        }
        Ok(policy)
    }
}

impl Serialize for LayerPolicy {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let compact = match self.order {
            LayerOrder::LabelFirst => format!("{}LS+{}TS", self.n_label, self.n_embed),
            LayerOrder::EmbeddingFirst => format!("{}TS+{}LS", self.n_embed, self.n_label),
        };
        serializer.serialize_str(&compact)
    }
}

impl<'de> Deserialize<'de> for LayerPolicy {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Concatenates label-sorted and embedding-sorted candidates per `policy`.
///
/// Each group takes its quota from its own list in order, skipping entities
/// already chosen. If the lists run short of the policy total, the remainder is
/// backfilled from further down the lists (leading group first), so an empty
/// `reranked` list yields the top `total()` label hits.
pub fn layer_candidates(
    label_hits: &[LabelHit],
    reranked: &[ScoredCandidate],
    policy: LayerPolicy,
) -> Vec<ScoredCandidate> {
    let dot_of = |id: &str| {
        reranked
            .iter()
            .find(|c| c.entity.id == id)
            .and_then(|c| c.dot_score)
    };
    let label_list: Vec<ScoredCandidate> = label_hits
        .iter()
        .map(|h| ScoredCandidate {
            entity: h.entity.clone(),
            dot_score: dot_of(&h.entity.id),
            source: CandidateSource::LabelSorted,
        })
        .collect();

    struct Cursor<'a> {
        list: &'a [ScoredCandidate],
        pos: usize,
        quota: usize,
    }
    let label = Cursor {
        list: &label_list,
        pos: 0,
        quota: policy.n_label,
    };
    let embed = Cursor {
        list: reranked,
        pos: 0,
        quota: policy.n_embed,
    };
    let mut cursors = match policy.order {
        LayerOrder::LabelFirst => [label, embed],
        LayerOrder::EmbeddingFirst => [embed, label],
    };

    let total = policy.total();
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(total);
    let mut take = |cursor: &mut Cursor, limit: usize, out: &mut Vec<ScoredCandidate>| {
        let mut taken = 0;
        while taken < limit && out.len() < total && cursor.pos < cursor.list.len() {
            let cand = &cursor.list[cursor.pos];
            cursor.pos += 1;
            if seen.insert(cand.entity.id.clone()) {
                out.push(cand.clone());
                taken += 1;
            }
        }
    };
    for cursor in cursors.iter_mut() {
        let quota = cursor.quota;
        take(cursor, quota, &mut out);
    }
    for cursor in cursors.iter_mut() {
        take(cursor, usize::MAX, &mut out);
    }
    out
}
