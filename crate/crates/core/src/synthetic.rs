//! Seeded synthetic worlds: entities, embeddings, relations, a triple store,
//! questions with gold queries and canned decoder beams. Used for ablations,
//! throughput checks and benchmarks.
//!
//! Two question kinds are generated:
//!
//! * **distinct label**: the gold entity's label is the best label match, a few
//!   longer-labelled decoys also carry the asked relation (to other objects),
//!   and the generated embedding is random noise.
//! * **shared label**: `collision_group` entities share one label, the gold
//!   entity has the largest id (so it ranks last among the ties), decoys have
//!   no triples, and the generated embedding is the gold one plus small noise.

use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::embeddings::{
    EmbeddingStore, FullEmbedding, TruncatedEmbedding, TruncationConfig, FULL_EMBEDDING_DIM,
};
use crate::ingest::{write_beams, BeamEntry, DatasetKind, QuestionRecord};
use crate::label_index::{EntityRecord, LabelIndex};
use crate::mini_kg::{Term, Triple, TripleStore};
use crate::pipeline::Stores;
use crate::relation_match::{QueryVectors, RelationCatalog, RelationRecord};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SyntheticConfig {
    pub seed: u64,
    pub questions: usize,
    /// Fraction of shared-label questions.
    pub collision_share: f64,
    /// Entities per shared label, gold included.
    pub collision_group: usize,
    /// Decoys per distinct-label question.
    pub decoys: usize,
    /// Fraction of questions asked as a COUNT.
    pub count_share: f64,
    pub relations: usize,
    pub relation_dim: usize,
    /// Half-width of the uniform noise added to generated embeddings of shared-label questions.
    pub embedding_noise: f64,
    /// Half-width of the uniform noise added to provider relation vectors.
    pub relation_noise: f32,
    pub beams: usize,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            questions: 200,
            collision_share: 0.5,
            collision_group: 7,
            decoys: 2,
            count_share: 0.0,
            relations: 40,
            relation_dim: 16,
            embedding_noise: 0.05,
            relation_noise: 0.05,
            beams: 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum QuestionKind {
    DistinctLabel,
    SharedLabel,
}

pub struct World {
    pub entities: Vec<EntityRecord>,
    pub embeddings: Vec<FullEmbedding>,
    pub relations: Vec<RelationRecord>,
    /// Provider vectors for generated relation labels.
    pub query_vectors: Vec<(String, Vec<f32>)>,
    pub triples: Vec<Triple>,
    pub records: Vec<QuestionRecord>,
    pub kinds: Vec<QuestionKind>,
    pub beams: Vec<BeamEntry>,
}

const SYLLABLES: &[&str] = &[
    "ka", "lo", "mi", "ret", "su", "van", "do", "pel", "ri", "tor", "ne", "bas", "qu", "fen", "zi",
    "mor", "ta", "gil", "e", "ox", "ul", "ham", "pi", "ster", "ny", "cor", "ba", "lum", "wa", "dri",
];

struct Words {
    next: usize,
    used: std::collections::HashSet<String>,
}

impl Words {
    /// Distinct pronounceable words from a counter: base-30 digits become syllables.
    fn fresh(&mut self) -> String {
        loop {
            let mut n = self.next;
            self.next += 1;
            let mut w = String::new();
            loop {
                w.push_str(SYLLABLES[n % SYLLABLES.len()]);
                n /= SYLLABLES.len();
                if n == 0 {
                    break;
                }
            }
            // Different syllable sequences can spell the same word.
            if self.used.insert(w.clone()) {
                return w;
            }
        }
    }
}

fn random_vector(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f32> {
    (0..dim).map(|_| rng.random_range(-1.0f32..1.0)).collect()
}

impl World {
    pub fn generate(config: &SyntheticConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut words = Words {
            next: 900,
            used: Default::default(),
        };
        let mut next_q = 1000u64;
        let mut new_q = || {
            next_q += 1;
            format!("Q{next_q}")
        };
        let trunc = TruncationConfig::default();

        let relations: Vec<RelationRecord> = (0..config.relations)
            .map(|i| {
                let id = 100 + i as u64;
                RelationRecord {
                    id: format!("P{id}"),
                    label: format!("{} {}", words.fresh(), words.fresh()),
                    numeric_id: id,
                    text_vector: random_vector(&mut rng, config.relation_dim),
                }
            })
            .collect();
        let query_vectors: Vec<(String, Vec<f32>)> = relations
            .iter()
            .map(|r| {
                let v = r
                    .text_vector
                    .iter()
                    .map(|x| x + rng.random_range(-config.relation_noise..=config.relation_noise))
                    .collect();
                (r.label.clone(), v)
            })
            .collect();

        let mut world = World {
            entities: Vec::new(),
            embeddings: Vec::new(),
            relations,
            query_vectors,
            triples: Vec::new(),
            records: Vec::new(),
            kinds: Vec::new(),
            beams: Vec::new(),
        };
        let add_entity = |world: &mut World, rng: &mut ChaCha8Rng, id: String, label: String| {
            let values = random_vector(rng, FULL_EMBEDDING_DIM);
            world
                .embeddings
                .push(FullEmbedding::new(id.clone(), values).expect("finite 200-value vector"));
            world
                .entities
                .push(EntityRecord::new(id, label).expect("generated ids are valid"));
        };

        for qi in 0..config.questions {
            let kind = if rng.random_bool(config.collision_share.clamp(0.0, 1.0)) {
                QuestionKind::SharedLabel
            } else {
                QuestionKind::DistinctLabel
            };
            let rel = world.relations[rng.random_range(0..world.relations.len())].clone();
            let label = format!("{} {}", words.fresh(), words.fresh());
            let answer = new_q();
            add_entity(&mut world, &mut rng, answer.clone(), words.fresh());

            let gold = match kind {
                QuestionKind::DistinctLabel => {
                    let gold = new_q();
                    add_entity(&mut world, &mut rng, gold.clone(), label.clone());
                    for _ in 0..config.decoys {
                        let decoy = new_q();
                        let decoy_answer = new_q();
                        add_entity(&mut world, &mut rng, decoy.clone(), format!("{label} {}", words.fresh()));
                        add_entity(&mut world, &mut rng, decoy_answer.clone(), words.fresh());
                        world.triples.push(Triple::new(
                            Term::entity(&decoy),
                            Term::direct_property(&rel.id),
                            Term::entity(&decoy_answer),
                        ));
                    }
                    gold
                }
                QuestionKind::SharedLabel => {
                    for _ in 1..config.collision_group.max(1) {
                        let decoy = new_q();
                        add_entity(&mut world, &mut rng, decoy, label.clone());
                    }
                    let gold = new_q();
                    add_entity(&mut world, &mut rng, gold.clone(), label.clone());
                    gold
                }
            };
            world.triples.push(Triple::new(
                Term::entity(&gold),
                Term::direct_property(&rel.id),
                Term::entity(&answer),
            ));

            let gold_embedding = world
                .embeddings
                .iter()
                .rev()
                .find(|e| e.entity_id == gold)
                .expect("gold entity has an embedding");
            let gold_trunc = crate::embeddings::truncate(gold_embedding, trunc);
            let generated = match kind {
                QuestionKind::SharedLabel => TruncatedEmbedding::from_values(
                    &gold_trunc
                        .values()
                        .iter()
                        .map(|v| v + rng.random_range(-config.embedding_noise..=config.embedding_noise))
                        .collect::<Vec<_>>(),
                    trunc.precision,
                ),
                QuestionKind::DistinctLabel => TruncatedEmbedding::from_values(
                    &(0..trunc.length)
                        .map(|_| rng.random_range(-1.0..1.0))
                        .collect::<Vec<_>>(),
                    trunc.precision,
                ),
            };

            let counted = rng.random_bool(config.count_share.clamp(0.0, 1.0));
            let (head, tail) = if counted {
                ("SELECT (COUNT(?x) AS ?c) WHERE {", "}")
            } else {
                ("SELECT ?x WHERE {", "}")
            };
            let gold_sparql = format!("{head} wd:{gold} wdt:{} ?x {tail}", rel.id);
            let qid = qi.to_string();
            world.records.push(QuestionRecord::new(
                qid.clone(),
                format!("What is the {} of {label}?", rel.label),
                gold_sparql,
                DatasetKind::LcQuad2,
            ));
            world.kinds.push(kind);

            let mut beams = Vec::with_capacity(config.beams);
            for b in 0..config.beams {
                let rel_label = if b == 1 {
                    &world.relations[rng.random_range(0..world.relations.len())].label
                } else {
                    &rel.label
                };
                beams.push(format!(
                    "{head} <ent>{label} {generated} </ent> <rel>{rel_label}</rel> ?x {tail}"
                ));
            }
            world.beams.push(BeamEntry { qid, beams });
        }
        world
    }

    pub fn label_index(&self) -> LabelIndex {
        LabelIndex::build(self.entities.iter().cloned())
    }

    pub fn embedding_store(&self) -> EmbeddingStore {
        EmbeddingStore::from_embeddings(self.embeddings.iter().cloned())
    }

    pub fn relation_catalog(&self) -> RelationCatalog {
        RelationCatalog::new(self.relations.clone()).expect("generated vectors share one dimension")
    }

    pub fn provider_vectors(&self) -> QueryVectors {
        let mut qv = QueryVectors::default();
        for (label, v) in &self.query_vectors {
            qv.insert(label.clone(), v.clone());
        }
        qv
    }

    pub fn triple_store(&self) -> TripleStore {
        TripleStore::from_triples(self.triples.iter().cloned())
    }

    /// All stores, with the in-process triple store as the KG.
    pub fn stores(&self) -> Stores {
        Stores::new(
            self.label_index(),
            self.relation_catalog(),
            Box::new(self.triple_store()),
        )
        .with_embeddings(self.embedding_store())
        .with_query_vectors(self.provider_vectors())
    }

    /// Writes the world as the text files the CLI reads: `labels.tsv`,
    /// `embeddings.txt`, `relations.tsv`, `query_vectors.tsv`, `kg.tsv`,
    /// `dataset.json` and `beams.jsonl`.
    pub fn write_files(&self, dir: impl AsRef<Path>) -> io::Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        let join = |v: &[f32]| v.iter().map(f32::to_string).collect::<Vec<_>>().join(" ");

        let mut out = BufWriter::new(fs::File::create(dir.join("labels.tsv"))?);
        for e in &self.entities {
            writeln!(out, "{}\t{}", e.id, e.label)?;
        }
        out.flush()?;

        let mut out = BufWriter::new(fs::File::create(dir.join("embeddings.txt"))?);
        for e in &self.embeddings {
            writeln!(out, "{}\t{}", e.entity_id, join(&e.values))?;
        }
        out.flush()?;

        let mut out = BufWriter::new(fs::File::create(dir.join("relations.tsv"))?);
        for r in &self.relations {
            writeln!(out, "{}\t{}\t{}", r.id, r.label, join(&r.text_vector))?;
        }
        out.flush()?;

        let mut out = BufWriter::new(fs::File::create(dir.join("query_vectors.tsv"))?);
        for (label, v) in &self.query_vectors {
            writeln!(out, "{label}\t{}", join(v))?;
        }
        out.flush()?;

        let mut out = BufWriter::new(fs::File::create(dir.join("kg.tsv"))?);
        for t in &self.triples {
            writeln!(out, "{}\t{}\t{}", t.subject.compact(), t.predicate.compact(), t.object.compact())?;
        }
        out.flush()?;

        let dataset: Vec<serde_json::Value> = self
            .records
            .iter()
            .map(|r| {
                serde_json::json!({
                    "uid": r.qid,
                    "question": r.text,
                    "sparql_wikidata": r.gold_sparql,
                })
            })
            .collect();
        fs::write(dir.join("dataset.json"), serde_json::to_string_pretty(&dataset)?)?;

        write_beams(BufWriter::new(fs::File::create(dir.join("beams.jsonl"))?), &self.beams)
    }
}
