//! Skeleton SPARQL: the query text exchanged between the generator and the
//! grounding engine. Entity and relation identifiers are replaced by tagged
//! labels, and each entity label may carry a truncated embedding:
//!
//! ```text
//! select ?o where { <ent>Barack Obama [0.120, -0.031, ...] </ent> <rel>father</rel> ?o }
//! ```
//!
//! Everything outside the tags is kept verbatim as scaffold text.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::sync::OnceLock;

use regex::Regex;
use serde::Serialize;
use thiserror::Error;

use crate::embeddings::{EmbeddingStore, TruncatedEmbedding, TruncationConfig};
use crate::label_index::LabelIndex;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SkeletonError {
    #[error("malformed tags at byte {at}: {reason}")]
    MalformedTags { at: usize, reason: String },
    #[error("empty label in tag at byte {at}")]
    EmptyLabel { at: usize },
    #[error("no SPARQL query verb found")]
    NotAQuery,
    #[error("no binding for {kind} slot {index}")]
    MissingBinding { kind: SlotKind, index: usize },
    #[error("identifier {0} not found in catalog")]
    UnknownIdentifier(String),
    #[error("entity {0} has no stored embedding")]
    MissingEmbedding(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SlotKind {
    Entity,
    Relation,
}

impl std::fmt::Display for SlotKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SlotKind::Entity => "entity",
            SlotKind::Relation => "relation",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum ScaffoldToken {
    /// Verbatim query text between slots.
    Text(String),
    /// Index into `entity_slots`.
    Entity(usize),
    /// Index into `relation_slots`.
    Relation(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EntitySlot {
    pub label: String,
    pub trunc_embedding: Option<TruncatedEmbedding>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RelationSlot {
    pub label: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ParseDiagnostics {
    /// Entity slots whose embedding had the wrong number of values and was repaired.
    pub length_repaired: Vec<usize>,
}

impl ParseDiagnostics {
    pub fn any_length_repaired(&self) -> bool {
        !self.length_repaired.is_empty()
    }
}

/// Parsed skeleton query. Equality compares scaffold and slots only;
/// `raw_text` and `diagnostics` describe where the value came from.
#[derive(Debug, Clone, Serialize)]
pub struct SkeletonQuery {
    pub scaffold: Vec<ScaffoldToken>,
    pub entity_slots: Vec<EntitySlot>,
    pub relation_slots: Vec<RelationSlot>,
    pub raw_text: String,
    pub diagnostics: ParseDiagnostics,
}

impl PartialEq for SkeletonQuery {
    fn eq(&self, other: &Self) -> bool {
        self.scaffold == other.scaffold
            && self.entity_slots == other.entity_slots
            && self.relation_slots == other.relation_slots
    }
}

impl SkeletonQuery {
    pub fn slot_count(&self) -> usize {
        self.entity_slots.len() + self.relation_slots.len()
    }

    /// Slots in textual order.
    pub fn slots(&self) -> impl Iterator<Item = (SlotKind, usize)> + '_ {
        self.scaffold.iter().filter_map(|t| match t {
            ScaffoldToken::Text(_) => None,
            ScaffoldToken::Entity(i) => Some((SlotKind::Entity, *i)),
            ScaffoldToken::Relation(i) => Some((SlotKind::Relation, *i)),
        })
    }

    /// Renders back to skeleton text.
    pub fn to_skeleton_string(&self) -> String {
        let mut out = String::with_capacity(self.raw_text.len());
        for token in &self.scaffold {
            match token {
                ScaffoldToken::Text(t) => out.push_str(t),
                ScaffoldToken::Entity(i) => {
                    let slot = &self.entity_slots[*i];
                    push_entity_tag(&mut out, &slot.label, slot.trunc_embedding.as_ref());
                }
                ScaffoldToken::Relation(i) => {
                    push_relation_tag(&mut out, &self.relation_slots[*i].label);
                }
            }
        }
        out
    }
}

fn push_entity_tag(out: &mut String, label: &str, embedding: Option<&TruncatedEmbedding>) {
    match embedding {
        Some(e) => {
            let _ = write!(out, "<ent>{label} {e} </ent>");
        }
        None => {
            let _ = write!(out, "<ent>{label}</ent>");
        }
    }
}

fn push_relation_tag(out: &mut String, label: &str) {
    let _ = write!(out, "<rel>{label}</rel>");
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Tag {
    OpenEnt,
    CloseEnt,
    OpenRel,
    CloseRel,
}

impl Tag {
    fn text(self) -> &'static str {
        match self {
            Tag::OpenEnt => "<ent>",
            Tag::CloseEnt => "</ent>",
            Tag::OpenRel => "<rel>",
            Tag::CloseRel => "</rel>",
        }
    }
}

fn tag_at(text: &str, at: usize) -> Option<Tag> {
    let rest = &text.as_bytes()[at..];
    [Tag::OpenEnt, Tag::CloseEnt, Tag::OpenRel, Tag::CloseRel]
        .into_iter()
        .find(|tag| {
            let t = tag.text().as_bytes();
            rest.len() >= t.len() && rest[..t.len()].eq_ignore_ascii_case(t)
        })
}

fn query_verb_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)\b(select|ask|construct|describe)\b").unwrap())
}

/// Splits entity-tag content into a label and an optional trailing `[v1, v2, ...]` vector.
fn split_label_embedding(content: &str, precision: u32) -> (&str, Option<TruncatedEmbedding>) {
    let trimmed = content.trim();
    if let Some(body) = trimmed.strip_suffix(']') {
        if let Some(open) = body.rfind('[') {
            let inner = &body[open + 1..];
            let tokens: Vec<&str> = if inner.trim().is_empty() {
                Vec::new()
            } else {
                inner.split(',').collect()
            };
            if let Some(emb) = TruncatedEmbedding::from_decimal_strs(tokens, precision) {
                return (body[..open].trim(), Some(emb));
            }
        }
    }
    (trimmed, None)
}

/// Parses one generated skeleton query.
///
/// Embeddings with the wrong number of values are cut or zero-padded to
/// `config.length` and reported in [`ParseDiagnostics::length_repaired`].
/// A label that itself ends in a bracketed list of numbers is read as
/// label + embedding.
pub fn parse_skeleton(text: &str, config: TruncationConfig) -> Result<SkeletonQuery, SkeletonError> {
    let mut scaffold = Vec::new();
    let mut entity_slots = Vec::new();
    let mut relation_slots = Vec::new();
    let mut diagnostics = ParseDiagnostics::default();

    let bytes = text.as_bytes();
    let mut text_start = 0;
    let mut open: Option<(Tag, usize)> = None;
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] != b'<' {
            i += 1;
            continue;
        }
        let Some(tag) = tag_at(text, i) else {
            i += 1;
            continue;
        };
        let tag_len = tag.text().len();
        match (open, tag) {
            (None, Tag::OpenEnt | Tag::OpenRel) => {
                if text_start < i {
                    scaffold.push(ScaffoldToken::Text(text[text_start..i].to_string()));
                }
                open = Some((tag, i));
            }
            (None, _) => {
                return Err(SkeletonError::MalformedTags {
                    at: i,
                    reason: format!("unexpected {}", tag.text()),
                })
            }
            (Some((Tag::OpenEnt, start)), Tag::CloseEnt) => {
                let content = &text[start + Tag::OpenEnt.text().len()..i];
                let (label, mut embedding) = split_label_embedding(content, config.precision);
                if label.is_empty() {
                    return Err(SkeletonError::EmptyLabel { at: start });
                }
                if let Some(e) = embedding.as_mut() {
                    if e.repair_length(config.length) {
                        diagnostics.length_repaired.push(entity_slots.len());
                    }
                }
                scaffold.push(ScaffoldToken::Entity(entity_slots.len()));
                entity_slots.push(EntitySlot {
                    label: label.to_string(),
                    trunc_embedding: embedding,
                });
                open = None;
                text_start = i + tag_len;
            }
            (Some((Tag::OpenRel, start)), Tag::CloseRel) => {
                let label = text[start + Tag::OpenRel.text().len()..i].trim();
                if label.is_empty() {
                    return Err(SkeletonError::EmptyLabel { at: start });
                }
                scaffold.push(ScaffoldToken::Relation(relation_slots.len()));
                relation_slots.push(RelationSlot {
                    label: label.to_string(),
                });
                open = None;
                text_start = i + tag_len;
            }
            (Some((outer, start)), inner) => {
                return Err(SkeletonError::MalformedTags {
                    at: i,
                    reason: format!("{} inside {} opened at byte {start}", inner.text(), outer.text()),
                })
            }
        }
        i += tag_len;
    }
    if let Some((tag, start)) = open {
        return Err(SkeletonError::MalformedTags {
            at: start,
            reason: format!("unclosed {}", tag.text()),
        });
    }
    if text_start < text.len() {
        scaffold.push(ScaffoldToken::Text(text[text_start..].to_string()));
    }

    let has_verb = scaffold.iter().any(|t| match t {
        ScaffoldToken::Text(s) => query_verb_re().is_match(s),
        _ => false,
    });
    if !has_verb {
        return Err(SkeletonError::NotAQuery);
    }

    Ok(SkeletonQuery {
        scaffold,
        entity_slots,
        relation_slots,
        raw_text: text.to_string(),
        diagnostics,
    })
}

/// Prefixes written in front of grounded identifiers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(default)]
pub struct PrefixScheme {
    pub entity: String,
    pub relation: String,
}

impl Default for PrefixScheme {
    fn default() -> Self {
        Self {
            entity: "wd:".into(),
            relation: "wdt:".into(),
        }
    }
}

/// Identifiers for each slot, by slot index.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct SlotBindings {
    pub entities: Vec<String>,
    pub relations: Vec<String>,
}

/// Replaces every slot with its bound identifier; scaffold text is copied verbatim.
pub fn serialize_grounded(
    q: &SkeletonQuery,
    bindings: &SlotBindings,
    scheme: &PrefixScheme,
) -> Result<String, SkeletonError> {
    let mut out = String::with_capacity(q.raw_text.len());
    for token in &q.scaffold {
        match token {
            ScaffoldToken::Text(t) => out.push_str(t),
            ScaffoldToken::Entity(i) => {
                let id = bindings.entities.get(*i).ok_or(SkeletonError::MissingBinding {
                    kind: SlotKind::Entity,
                    index: *i,
                })?;
                out.push_str(&scheme.entity);
                out.push_str(id);
            }
            ScaffoldToken::Relation(i) => {
                let id = bindings.relations.get(*i).ok_or(SkeletonError::MissingBinding {
                    kind: SlotKind::Relation,
                    index: *i,
                })?;
                out.push_str(&scheme.relation);
                out.push_str(id);
            }
        }
    }
    Ok(out)
}

/// Collapses whitespace runs outside quoted strings to one space and trims.
pub fn normalize_whitespace(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut quote: Option<char> = None;
    let mut escaped = false;
    let mut pending_space = false;
    for c in s.chars() {
        if let Some(q) = quote {
            out.push(c);
            if escaped {
                escaped = false;
            } else if c == '\\' {
                escaped = true;
            } else if c == q {
                quote = None;
            }
            continue;
        }
        if c.is_whitespace() {
            pending_space = true;
            continue;
        }
        if pending_space && !out.is_empty() {
            out.push(' ');
        }
        pending_space = false;
        if c == '"' || c == '\'' {
            quote = Some(c);
        }
        out.push(c);
    }
    out
}

/// Looks up the label of a KG identifier.
pub trait LabelLookup {
    fn lookup_label(&self, id: &str) -> Option<&str>;
}

impl LabelLookup for LabelIndex {
    fn lookup_label(&self, id: &str) -> Option<&str> {
        self.label_of(id)
    }
}

impl LabelLookup for HashMap<String, String> {
    fn lookup_label(&self, id: &str) -> Option<&str> {
        self.get(id).map(String::as_str)
    }
}

/// A grounded identifier occurrence in a gold query.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GoldIdentifier {
    pub kind: SlotKind,
    pub id: String,
    /// Byte range of the whole prefixed name in the query.
    pub span: std::ops::Range<usize>,
}

fn prefixed_id_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(wdt?):([A-Za-z][0-9]+)").unwrap())
}

/// Byte ranges of `text` outside quoted strings and `<...>` IRIs.
fn unquoted_regions(text: &str) -> Vec<std::ops::Range<usize>> {
    let bytes = text.as_bytes();
    let mut regions = Vec::new();
    let mut start = 0;
    let mut i = 0;
    while i < bytes.len() {
        match bytes[i] {
            q @ (b'"' | b'\'') => {
                regions.push(start..i);
                i += 1;
                while i < bytes.len() && bytes[i] != q {
                    if bytes[i] == b'\\' {
                        i += 1;
                    }
                    i += 1;
                }
                i += 1;
                start = i.min(bytes.len());
            }
            b'<' => {
                // Only skip IRI references, not comparison operators.
                let close = bytes[i + 1..]
                    .iter()
                    .position(|&b| b == b'>' || b.is_ascii_whitespace() || b == b'<');
                match close {
                    Some(off) if bytes[i + 1 + off] == b'>' && off > 0 => {
                        regions.push(start..i);
                        i += off + 2;
                        start = i;
                    }
                    _ => i += 1,
                }
            }
            _ => i += 1,
        }
    }
    if start < bytes.len() {
        regions.push(start..bytes.len());
    }
    regions
}

fn is_name_byte(b: u8) -> bool {
    b.is_ascii_alphanumeric() || matches!(b, b'_' | b'-' | b':')
}

/// Every `wd:`/`wdt:` identifier in textual order, ignoring quoted strings and IRIs.
pub fn gold_identifiers(sparql: &str) -> Vec<GoldIdentifier> {
    let bytes = sparql.as_bytes();
    let mut found = Vec::new();
    for region in unquoted_regions(sparql) {
        let segment = &sparql[region.clone()];
        for caps in prefixed_id_re().captures_iter(segment) {
            let whole = caps.get(0).unwrap();
            let start = region.start + whole.start();
            let end = region.start + whole.end();
            if start > 0 && is_name_byte(bytes[start - 1]) {
                continue;
            }
            if end < bytes.len() && (bytes[end].is_ascii_alphanumeric() || bytes[end] == b'_') {
                continue;
            }
            let kind = if &caps[1] == "wd" {
                SlotKind::Entity
            } else {
                SlotKind::Relation
            };
            found.push(GoldIdentifier {
                kind,
                id: caps[2].to_string(),
                span: start..end,
            });
        }
    }
    found
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TrainingPair {
    pub question: String,
    pub skeleton: String,
}

/// Converts a gold query into its skeleton form for generator training.
pub fn build_training_pair(
    question: &str,
    gold_sparql: &str,
    entities: &dyn LabelLookup,
    relations: &dyn LabelLookup,
    embeddings: &EmbeddingStore,
    config: TruncationConfig,
) -> Result<TrainingPair, SkeletonError> {
    let mut skeleton = String::with_capacity(gold_sparql.len() * 2);
    let mut cursor = 0;
    for ident in gold_identifiers(gold_sparql) {
        skeleton.push_str(&gold_sparql[cursor..ident.span.start]);
        match ident.kind {
            SlotKind::Entity => {
                let label = entities
                    .lookup_label(&ident.id)
                    .ok_or_else(|| SkeletonError::UnknownIdentifier(ident.id.clone()))?;
                if label.trim().is_empty() {
                    return Err(SkeletonError::EmptyLabel { at: ident.span.start });
                }
                let embedding = embeddings
                    .truncated(&ident.id, config)
                    .ok_or_else(|| SkeletonError::MissingEmbedding(ident.id.clone()))?;
                push_entity_tag(&mut skeleton, label.trim(), Some(&embedding));
            }
            SlotKind::Relation => {
                let label = relations
                    .lookup_label(&ident.id)
                    .ok_or_else(|| SkeletonError::UnknownIdentifier(ident.id.clone()))?;
                if label.trim().is_empty() {
                    return Err(SkeletonError::EmptyLabel { at: ident.span.start });
                }
                push_relation_tag(&mut skeleton, label.trim());
            }
        }
        cursor = ident.span.end;
    }
    skeleton.push_str(&gold_sparql[cursor..]);
    Ok(TrainingPair {
        question: question.to_string(),
        skeleton,
    })
}

/// Gold bindings for re-grounding a skeleton built from `gold_sparql`.
pub fn gold_bindings(gold_sparql: &str) -> SlotBindings {
    let mut bindings = SlotBindings::default();
    for ident in gold_identifiers(gold_sparql) {
        match ident.kind {
            SlotKind::Entity => bindings.entities.push(ident.id),
            SlotKind::Relation => bindings.relations.push(ident.id),
        }
    }
    bindings
}
