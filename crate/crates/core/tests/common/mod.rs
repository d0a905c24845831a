//! Generators and brute-force oracles shared by the integration tests.
#![allow(dead_code)]

use std::cmp::Ordering;
use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use kgqa_core::embeddings::{CandidateSource, EmbeddingStore, FullEmbedding, ScoredCandidate};
use kgqa_core::grounding::BeamPlan;
use kgqa_core::ingest::{load_beams, load_dataset, BeamEntry, DatasetKind, QuestionRecord};
use kgqa_core::label_index::{EntityRecord, LabelHit};
use kgqa_core::mini_kg::{ResultSet, Term, Triple, TripleStore};
use kgqa_core::relation_match::{QueryVectors, RelationCatalog, RelationHit, RelationRecord};
use kgqa_core::skeleton::parse_skeleton;
use kgqa_core::{GroundingPlan, LabelIndex, Stores, TruncatedEmbedding, TruncationConfig};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

// ---------------------------------------------------------------- BM25

const VOCAB: &[&str] = &[
    "river", "john", "smith", "paris", "new", "york", "city", "saint", "louis", "blue", "red",
    "house", "of", "the", "king", "queen", "anna", "maria", "north", "south", "lake", "mount",
];

/// Random labels over a small vocabulary, so term overlap and score ties are common.
pub fn bm25_corpus(rng: &mut impl Rng, docs: usize) -> Vec<EntityRecord> {
    (0..docs)
        .map(|i| {
            let n = rng.random_range(1..=5);
            let words: Vec<&str> = (0..n).map(|_| *VOCAB.choose(rng).unwrap()).collect();
            // Sparse ids with gaps and an order unrelated to insertion.
            let id = (i * 7919) % 100_003 + 1;
            EntityRecord::new(format!("Q{id}"), words.join(" ")).unwrap()
        })
        .collect()
}

pub fn bm25_query(rng: &mut impl Rng) -> String {
    let n = rng.random_range(1..=3);
    (0..n)
        .map(|_| *VOCAB.choose(rng).unwrap())
        .collect::<Vec<_>>()
        .join(" ")
}

/// Scores every document directly from the formula; no inverted index.
pub fn bm25_brute_force(docs: &[EntityRecord], query: &str, k: usize) -> Vec<(String, f64)> {
    let (k1, b) = (1.2_f64, 0.75_f64);
    let toks = |s: &str| -> Vec<String> {
        s.split(|c: char| !c.is_alphanumeric())
            .filter(|t| !t.is_empty())
            .map(str::to_lowercase)
            .collect()
    };
    let doc_toks: Vec<Vec<String>> = docs.iter().map(|d| toks(&d.label)).collect();
    let n = docs.len() as f64;
    let avgdl = doc_toks.iter().map(Vec::len).sum::<usize>() as f64 / n;
    let q = toks(query);
    let mut scored = Vec::new();
    for (d, dt) in docs.iter().zip(&doc_toks) {
        let mut score = 0.0;
        let mut matched = false;
        for term in &q {
            let tf = dt.iter().filter(|t| *t == term).count() as f64;
            if tf == 0.0 {
                continue;
            }
            matched = true;
            let df = doc_toks.iter().filter(|x| x.contains(term)).count() as f64;
            let idf = (1.0 + (n - df + 0.5) / (df + 0.5)).ln();
            let norm = 1.0 - b + b * dt.len() as f64 / avgdl;
            score += idf * tf * (k1 + 1.0) / (tf + k1 * norm);
        }
        if matched {
            scored.push((d.clone(), score));
        }
    }
    scored.sort_by(|(da, sa), (db, sb)| {
        sb.partial_cmp(sa)
            .unwrap()
            .then(da.numeric_id.cmp(&db.numeric_id))
    });
    scored.truncate(k);
    scored.into_iter().map(|(d, s)| (d.id, s)).collect()
}

// ---------------------------------------------------------------- rerank

/// Embeddings whose leading values already have three decimals, so truncation is exact.
pub fn rerank_world(
    rng: &mut impl Rng,
    n: usize,
) -> (Vec<LabelHit>, EmbeddingStore, HashMap<String, Vec<f64>>) {
    let mut hits = Vec::with_capacity(n);
    let mut embeddings = Vec::with_capacity(n);
    let mut exact = HashMap::new();
    for i in 0..n {
        let id = format!("Q{}", (i * 104_729) % 1_000_003 + 1);
        let head: Vec<f64> = (0..10)
            .map(|_| f64::from(rng.random_range(-3..=3_i32)) / 10.0)
            .collect();
        let mut values = vec![0.0_f32; 200];
        for (v, h) in values.iter_mut().zip(&head) {
            *v = *h as f32;
        }
        embeddings.push(FullEmbedding::new(id.clone(), values).unwrap());
        exact.insert(id.clone(), head);
        hits.push(LabelHit {
            entity: EntityRecord::new(id, "x").unwrap(),
            score: 1.0,
            rank: i + 1,
        });
    }
    (hits, EmbeddingStore::from_embeddings(embeddings), exact)
}

/// Exhaustive ordering: each candidate's position is the number of candidates that beat it.
pub fn rerank_exhaustive(
    generated: &[f64],
    hits: &[LabelHit],
    exact: &HashMap<String, Vec<f64>>,
) -> Vec<String> {
    let scores: Vec<(u64, f64, &str)> = hits
        .iter()
        .map(|h| {
            let v = &exact[&h.entity.id];
            let s = generated.iter().zip(v).map(|(a, b)| a * b).sum();
            (h.entity.numeric_id, s, h.entity.id.as_str())
        })
        .collect();
    let mut out = vec![""; scores.len()];
    for (i, a) in scores.iter().enumerate() {
        let pos = scores
            .iter()
            .enumerate()
            .filter(|&(j, b)| j != i && (b.1 > a.1 || (b.1 == a.1 && b.0 < a.0)))
            .count();
        out[pos] = a.2;
    }
    out.into_iter().map(str::to_string).collect()
}

pub fn random_generated(rng: &mut impl Rng) -> Vec<f64> {
    (0..10)
        .map(|_| f64::from(rng.random_range(-1000..=1000_i32)) / 1000.0)
        .collect()
}

// ---------------------------------------------------------------- skeletons

const WORDS: &[&str] = &[
    "Barack", "Obama", "Paris", "father", "place", "of", "birth", "Mount", "Ève", "Zürich",
    "O'Neil", "St.", "genre", "(film)", "1984", "spouse", "São", "Paulo",
];

fn words(rng: &mut impl Rng, max: usize) -> String {
    let n = rng.random_range(1..=max);
    (0..n)
        .map(|_| *WORDS.choose(rng).unwrap())
        .collect::<Vec<_>>()
        .join(" ")
}

const SCAFFOLD: &[&str] = &[
    " ?x ", " . ", " ?sbj ", " ?value ", " FILTER(CONTAINS(lcase(?l), \"model\")) ",
    " rdfs:label ", " ; ", " ?o ", " FILTER (lang(?l) = \"en\") ", "\n  ",
];

/// A well-formed skeleton with up to `max_slots` slots in random textual order.
pub fn random_skeleton(rng: &mut impl Rng, max_slots: usize) -> String {
    let mut s = String::new();
    if rng.random_bool(0.2) {
        s.push_str("ASK { ");
    } else if rng.random_bool(0.5) {
        s.push_str("SELECT DISTINCT ?x WHERE { ");
    } else {
        s.push_str("select ?x where {");
    }
    let slots = rng.random_range(1..=max_slots);
    for _ in 0..slots {
        s.push_str(SCAFFOLD.choose(rng).unwrap());
        if rng.random_bool(0.5) {
            s.push_str("<ent>");
            s.push_str(&words(rng, 3));
            if rng.random_bool(0.8) {
                s.push_str(" [");
                for j in 0..10 {
                    if j > 0 {
                        s.push_str(if rng.random_bool(0.5) { ", " } else { " " });
                    }
                    let v = f64::from(rng.random_range(-2000..=2000_i32)) / 1000.0;
                    let _ = write!(s, "{v:.3}");
                }
                s.push(']');
            }
            s.push_str(" </ent>");
        } else {
            s.push_str("<rel>");
            s.push_str(&words(rng, 3));
            s.push_str("</rel>");
        }
    }
    s.push_str(SCAFFOLD.choose(rng).unwrap());
    s.push('}');
    if rng.random_bool(0.3) {
        let _ = write!(s, " LIMIT {}", rng.random_range(1..100));
    }
    s
}

// ---------------------------------------------------------------- training pairs

pub struct TrainingFixture {
    pub entities: HashMap<String, String>,
    pub relations: HashMap<String, String>,
    pub embeddings: EmbeddingStore,
    pub queries: Vec<String>,
}

/// Gold queries in the two reference shapes: filtered multi-pattern with LIMIT, and single-hop.
pub fn training_fixture(rng: &mut impl Rng, n: usize) -> TrainingFixture {
    let mut entities = HashMap::new();
    let mut relations = HashMap::new();
    let mut embeddings = Vec::new();
    let mut ent = |rng: &mut ChaCha8Rng| -> String {
        let id = format!("Q{}", rng.random_range(1..5_000_000));
        if !entities.contains_key(&id) {
            entities.insert(id.clone(), words(rng, 3));
            let values = (0..200).map(|_| rng.random_range(-1.0..1.0_f32)).collect();
            embeddings.push(FullEmbedding::new(id.clone(), values).unwrap());
        }
        id
    };
    let mut rel = |rng: &mut ChaCha8Rng| -> String {
        let id = format!("P{}", rng.random_range(1..5000));
        relations.entry(id.clone()).or_insert_with(|| words(rng, 2));
        id
    };
    let mut local = ChaCha8Rng::seed_from_u64(rng.random());
    let mut queries = Vec::with_capacity(n);
    for i in 0..n {
        let q = if i % 2 == 0 {
            let (c, e, p1, p2) = (ent(&mut local), ent(&mut local), rel(&mut local), rel(&mut local));
            format!(
                "SELECT DISTINCT ?sbj ?sbj_label WHERE {{ ?sbj wdt:{p1} wd:{c} . ?sbj wdt:{p2} wd:{e} . \
                 ?sbj rdfs:label ?sbj_label . FILTER(CONTAINS(lcase(?sbj_label), \"model\")) . \
                 FILTER (lang(?sbj_label) = \"en\") }} LIMIT {}",
                local.random_range(1..100)
            )
        } else {
            let (s, p) = (ent(&mut local), rel(&mut local));
            format!("SELECT ?x WHERE {{ wd:{s} wdt:{p} ?x }}")
        };
        queries.push(q);
    }
    TrainingFixture {
        entities,
        relations,
        embeddings: EmbeddingStore::from_embeddings(embeddings),
        queries,
    }
}

// ---------------------------------------------------------------- grounding

pub fn entity_candidates(ids: &[String]) -> Vec<ScoredCandidate> {
    ids.iter()
        .map(|id| ScoredCandidate {
            entity: EntityRecord::new(id.clone(), "x").unwrap(),
            dot_score: None,
            source: CandidateSource::LabelSorted,
        })
        .collect()
}

pub fn relation_candidates(ids: &[String]) -> Vec<RelationHit> {
    ids.iter()
        .enumerate()
        .map(|(i, id)| RelationHit {
            relation: RelationRecord {
                id: id.clone(),
                label: "r".into(),
                numeric_id: id[1..].parse().unwrap(),
                text_vector: vec![],
            },
            cosine: 1.0,
            rank: i + 1,
        })
        .collect()
}

pub fn ids(prefix: &str, range: std::ops::Range<usize>) -> Vec<String> {
    range.map(|i| format!("{prefix}{i}")).collect()
}

/// Beam 0 grounds to 6 x 3 = 18 queries that all come back empty; the first
/// grounding of beam 1 answers.
pub fn early_stop_fixture() -> (GroundingPlan, TripleStore) {
    let text = "SELECT ?x WHERE { <ent>Barack Obama</ent> <rel>father</rel> ?x }";
    let skeleton = parse_skeleton(text, TruncationConfig::default()).unwrap();
    let beam = |index: usize, ents: Vec<String>, rels: Vec<String>| BeamPlan {
        beam_index: index,
        skeleton: skeleton.clone(),
        entity_candidates: vec![entity_candidates(&ents)],
        relation_candidates: vec![relation_candidates(&rels)],
    };
    let plan = GroundingPlan::new(vec![
        beam(0, ids("Q", 1..7), ids("P", 1..4)),
        beam(1, ids("Q", 76..79), ids("P", 22..25)),
    ]);
    let store = TripleStore::from_triples([Triple::new(
        Term::entity("Q76"),
        Term::direct_property("P22"),
        Term::entity("Q649593"),
    )]);
    (plan, store)
}

// ---------------------------------------------------------------- mini KG

pub const BGP_VARS: &[&str] = &["a", "b", "c", "d"];

#[derive(Debug, Clone)]
pub enum Pt {
    Var(&'static str),
    Const(Term),
}

pub fn random_store(rng: &mut impl Rng, entities: usize, predicates: usize, max: usize) -> Vec<Triple> {
    let n = rng.random_range(1..=max);
    let mut out: Vec<Triple> = Vec::with_capacity(n);
    let mut seen = std::collections::HashSet::new();
    for _ in 0..n {
        let object = if rng.random_bool(0.15) {
            Term::lang_literal(format!("label {}", rng.random_range(0..entities)), "en")
        } else {
            Term::entity(&format!("Q{}", rng.random_range(0..entities)))
        };
        let t = Triple::new(
            Term::entity(&format!("Q{}", rng.random_range(0..entities))),
            Term::direct_property(&format!("P{}", rng.random_range(0..predicates))),
            object,
        );
        if seen.insert(t.clone()) {
            out.push(t);
        }
    }
    out
}

/// Connected patterns, so result sizes stay bounded; a variable predicate only
/// appears next to a constant subject or object.
pub fn random_bgp(rng: &mut impl Rng, entities: usize, predicates: usize) -> Vec<[Pt; 3]> {
    let n = rng.random_range(1..=3);
    let mut used: Vec<&'static str> = Vec::new();
    let mut patterns = Vec::with_capacity(n);
    for i in 0..n {
        let node = |rng: &mut dyn rand::RngCore, used: &mut Vec<&'static str>| -> Pt {
            if rng.random_bool(0.6) {
                let v = if !used.is_empty() && rng.random_bool(0.6) {
                    *used.choose(rng).unwrap()
                } else {
                    *BGP_VARS.choose(rng).unwrap()
                };
                if !used.contains(&v) {
                    used.push(v);
                }
                Pt::Var(v)
            } else {
                Pt::Const(Term::entity(&format!("Q{}", rng.random_range(0..entities))))
            }
        };
        let s = if i > 0 && !used.is_empty() {
            Pt::Var(used.choose(rng).unwrap())
        } else {
            node(rng, &mut used)
        };
        let o = node(rng, &mut used);
        let has_const = matches!(s, Pt::Const(_)) || matches!(o, Pt::Const(_));
        let p = if has_const && rng.random_bool(0.3) {
            let v = *BGP_VARS.choose(rng).unwrap();
            if !used.contains(&v) {
                used.push(v);
            }
            Pt::Var(v)
        } else {
            Pt::Const(Term::direct_property(&format!(
                "P{}",
                rng.random_range(0..predicates)
            )))
        };
        patterns.push([s, p, o]);
    }
    patterns
}

pub fn pattern_vars(patterns: &[[Pt; 3]]) -> Vec<&'static str> {
    let mut vars = Vec::new();
    for p in patterns.iter().flatten() {
        if let Pt::Var(v) = p {
            if !vars.contains(v) {
                vars.push(*v);
            }
        }
    }
    vars
}

pub fn bgp_sparql(patterns: &[[Pt; 3]], vars: &[&str]) -> String {
    let mut s = String::from("SELECT");
    if vars.is_empty() {
        s.push_str(" *");
    }
    for v in vars {
        let _ = write!(s, " ?{v}");
    }
    s.push_str(" WHERE {");
    for p in patterns {
        for t in p {
            match t {
                Pt::Var(v) => {
                    let _ = write!(s, " ?{v}");
                }
                Pt::Const(c) => {
                    let _ = write!(s, " {c}");
                }
            }
        }
        s.push_str(" .");
    }
    s.push_str(" }");
    s
}

/// Nested-loop join scanning every triple for every pattern; no indexes.
pub fn bgp_brute_force(
    triples: &[Triple],
    patterns: &[[Pt; 3]],
    vars: &[&str],
) -> Vec<Vec<Option<Term>>> {
    let mut solutions: Vec<HashMap<&str, Term>> = vec![HashMap::new()];
    for pattern in patterns {
        let mut next = Vec::new();
        for sol in &solutions {
            for t in triples {
                let mut ext = sol.clone();
                let ok = pattern
                    .iter()
                    .zip([&t.subject, &t.predicate, &t.object])
                    .all(|(pt, term)| match pt {
                        Pt::Const(c) => c == term,
                        Pt::Var(v) => match ext.get(v) {
                            Some(bound) => bound == term,
                            None => {
                                ext.insert(v, term.clone());
                                true
                            }
                        },
                    });
                if ok {
                    next.push(ext);
                }
            }
        }
        solutions = next;
    }
    let mut rows: Vec<Vec<Option<Term>>> = solutions
        .into_iter()
        .map(|s| vars.iter().map(|v| s.get(v).cloned()).collect())
        .collect();
    sort_rows(&mut rows);
    rows
}

pub fn sort_rows(rows: &mut [Vec<Option<Term>>]) {
    let key = |r: &Vec<Option<Term>>| -> Vec<String> {
        r.iter()
            .map(|t| t.as_ref().map(|t| t.to_string()).unwrap_or_default())
            .collect()
    };
    rows.sort_by(|a, b| key(a).cmp(&key(b)).then(Ordering::Equal));
}

pub fn rows_of(rs: ResultSet) -> Vec<Vec<Option<Term>>> {
    match rs {
        ResultSet::Bindings { mut rows, .. } => {
            sort_rows(&mut rows);
            rows
        }
        other => panic!("expected bindings, got {other:?}"),
    }
}

// ---------------------------------------------------------------- golden fixture

pub fn golden_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/golden")
}

pub struct Golden {
    pub records: Vec<QuestionRecord>,
    pub beams: Vec<BeamEntry>,
    pub stores: Stores,
}

pub fn load_golden() -> Golden {
    let dir = golden_dir();
    let open = |name: &str| BufReader::new(fs::File::open(dir.join(name)).unwrap());
    let labels = LabelIndex::from_tsv(open("labels.tsv")).unwrap();
    let relations = RelationCatalog::from_reader(open("relations.tsv")).unwrap();
    let mut kg = TripleStore::new();
    kg.load_path(dir.join("kg.tsv")).unwrap();
    let stores = Stores::new(labels, relations, Box::new(kg))
        .with_embeddings(EmbeddingStore::from_text(open("embeddings.txt")).unwrap())
        .with_query_vectors(QueryVectors::from_reader(open("query_vectors.tsv")).unwrap());
    Golden {
        records: load_dataset(dir.join("dataset.json"), DatasetKind::LcQuad2).unwrap(),
        beams: load_beams(dir.join("beams.jsonl")).unwrap(),
        stores,
    }
}

/// One hand-scored row of `expected.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpectedRow {
    pub qid: String,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub p_at_1: u8,
    pub f1: f64,
    pub answered: bool,
    pub executed: usize,
}

pub fn expected_rows() -> Vec<ExpectedRow> {
    fs::read_to_string(golden_dir().join("expected.csv"))
        .unwrap()
        .lines()
        .skip(1)
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            ExpectedRow {
                qid: f[0].into(),
                tp: f[1].parse().unwrap(),
                fp: f[2].parse().unwrap(),
                fn_: f[3].parse().unwrap(),
                p_at_1: f[4].parse().unwrap(),
                f1: f[5].parse().unwrap(),
                answered: f[6].parse().unwrap(),
                executed: f[7].parse().unwrap(),
            }
        })
        .collect()
}

pub fn truncated(values: &[f64], precision: u32) -> TruncatedEmbedding {
    TruncatedEmbedding::from_values(values, precision)
}
