//! End-to-end question answering: parse beams, find entity and relation
//! candidates, ground and execute, then score batches.

use std::collections::HashMap;
use std::fs;
use std::io::{self, BufWriter, Write};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embeddings::{
    layer_candidates, rerank, EmbeddingStore, LayerPolicy, ScoredCandidate, TruncationConfig,
};
use crate::eval::{
    aggregate, hit_rank, qid_cmp, score_question, Diagnostics, EvalError, EvalOptions, EvalReport,
    QuestionEval,
};
use crate::grounding::{
    execute_until_answer, BeamPlan, ExecutedQuery, ExecutionLimits, GroundingError, GroundingPlan,
    SkippedBeam,
};
use crate::ingest::{BeamEntry, QuestionRecord};
use crate::label_index::{Bm25Params, LabelIndex};
use crate::mini_kg::{KnowledgeGraph, ResultSet};
use crate::relation_match::{candidates_for_label, QuerySource, QueryVectors, RelationCatalog, RelationHit};
use crate::skeleton::{gold_bindings, parse_skeleton, PrefixScheme};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config: {0}")]
    Io(#[from] io::Error),
    #[error("invalid config: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Pipeline settings. Every field has a default, so a config file only needs
/// the keys it changes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Label hits retrieved per entity slot.
    pub k_label_search: usize,
    pub layer_policy: LayerPolicy,
    /// Relation candidates per relation slot.
    pub k_relation: usize,
    /// Decoder beams considered per question.
    pub beam_count: usize,
    pub truncation: TruncationConfig,
    /// Keep searching past a COUNT query that returned 0.
    pub count_zero_is_empty: bool,
    pub limits: ExecutionLimits,
    pub bm25: Bm25Params,
    pub prefixes: PrefixScheme,
    pub eval: EvalOptions,
    /// Worker threads for batch runs; 0 picks one per core.
    pub workers: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            k_label_search: 100,
            layer_policy: LayerPolicy::default(),
            k_relation: 3,
            beam_count: 3,
            truncation: TruncationConfig::default(),
            count_zero_is_empty: false,
            limits: ExecutionLimits::default(),
            bm25: Bm25Params::default(),
            prefixes: PrefixScheme::default(),
            eval: EvalOptions::default(),
            workers: 0,
        }
    }
}

impl PipelineConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let config: Self = toml::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        Self::from_toml_str(&fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        if self.layer_policy.total() == 0 {
            return invalid("layer_policy must keep at least one candidate");
        }
        if self.k_label_search == 0 || self.k_relation == 0 || self.beam_count == 0 {
            return invalid("k_label_search, k_relation and beam_count must be positive");
        }
        if self.limits.max_queries == 0 || self.limits.max_seconds.is_nan() || self.limits.max_seconds <= 0.0 {
            return invalid("execution limits must be positive");
        }
        self.truncation
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))
    }
}

/// Everything a question is answered against. All parts are read-only.
pub struct Stores {
    pub labels: LabelIndex,
    /// Without stored embeddings, entity candidates come from label search alone.
    pub embeddings: Option<EmbeddingStore>,
    pub relations: RelationCatalog,
    pub query_vectors: QueryVectors,
    pub kg: Box<dyn KnowledgeGraph>,
}

impl Stores {
    pub fn new(labels: LabelIndex, relations: RelationCatalog, kg: Box<dyn KnowledgeGraph>) -> Self {
        Self {
            labels,
            embeddings: None,
            relations,
            query_vectors: QueryVectors::default(),
            kg,
        }
    }

    pub fn with_embeddings(mut self, embeddings: EmbeddingStore) -> Self {
        self.embeddings = Some(embeddings);
        self
    }

    pub fn with_query_vectors(mut self, query_vectors: QueryVectors) -> Self {
        self.query_vectors = query_vectors;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EntitySlotTrace {
    pub label: String,
    pub label_hits: usize,
    pub missing_embeddings: usize,
    pub candidates: Vec<ScoredCandidate>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RelationSlotTrace {
    pub label: String,
    pub source: QuerySource,
    pub candidates: Vec<RelationHit>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BeamTrace {
    pub beam_index: usize,
    pub text: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub parse_error: Option<String>,
    pub length_repaired: Vec<usize>,
    pub entity_slots: Vec<EntitySlotTrace>,
    pub relation_slots: Vec<RelationSlotTrace>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct StageTimings {
    pub parse_ms: f64,
    pub entity_ms: f64,
    pub relation_ms: f64,
    pub execute_ms: f64,
    pub total_ms: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct QuestionTrace {
    pub qid: String,
    pub beams: Vec<BeamTrace>,
    pub executed: Vec<ExecutedQuery>,
    pub skipped_beams: Vec<SkippedBeam>,
    pub answer: Option<ResultSet>,
    pub winning: Option<(usize, usize)>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// The KG could not be reached while answering.
    pub kg_unreachable: bool,
    pub timings: StageTimings,
}

impl QuestionTrace {
    pub fn executed_count(&self) -> usize {
        self.executed.len()
    }

    pub fn parse_flags(&self) -> Vec<String> {
        let mut flags = Vec::new();
        for b in &self.beams {
            if b.parse_error.is_some() {
                flags.push(format!("beam{}:parse_error", b.beam_index));
            } else if !b.length_repaired.is_empty() {
                flags.push(format!("beam{}:length_repaired", b.beam_index));
            }
        }
        flags
    }
}

fn ms_since(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1000.0
}

fn entity_candidates(
    label: &str,
    embedding: Option<&crate::embeddings::TruncatedEmbedding>,
    config: &PipelineConfig,
    stores: &Stores,
) -> EntitySlotTrace {
    let mut trace = EntitySlotTrace {
        label: label.to_string(),
        label_hits: 0,
        missing_embeddings: 0,
        candidates: Vec::new(),
        error: None,
    };
    let hits = match stores.labels.search(label, config.k_label_search, config.bm25) {
        Ok(h) => h,
        Err(e) => {
            trace.error = Some(e.to_string());
            return trace;
        }
    };
    trace.label_hits = hits.len();
    let reranked = match (embedding, &stores.embeddings) {
        (Some(generated), Some(store)) => {
            let r = rerank(generated, &hits, store, config.truncation);
            trace.missing_embeddings = r.missing_embeddings;
            r.candidates
        }
        _ => Vec::new(),
    };
    trace.candidates = layer_candidates(&hits, &reranked, config.layer_policy);
    trace
}

/// Answers one question from its decoder beams (best first).
pub fn answer_question(
    qid: &str,
    beams: &[String],
    config: &PipelineConfig,
    stores: &Stores,
) -> (Option<ResultSet>, QuestionTrace) {
    let started = Instant::now();
    let mut trace = QuestionTrace {
        qid: qid.to_string(),
        ..Default::default()
    };

    let t = Instant::now();
    let mut parsed = Vec::new();
    for (beam_index, text) in beams.iter().take(config.beam_count).enumerate() {
        let mut beam = BeamTrace {
            beam_index,
            text: text.clone(),
            parse_error: None,
            length_repaired: Vec::new(),
            entity_slots: Vec::new(),
            relation_slots: Vec::new(),
        };
        match parse_skeleton(text, config.truncation) {
            Ok(q) => {
                beam.length_repaired = q.diagnostics.length_repaired.clone();
                parsed.push((beam_index, q));
            }
            Err(e) => beam.parse_error = Some(e.to_string()),
        }
        trace.beams.push(beam);
    }
    trace.timings.parse_ms = ms_since(t);

    let t = Instant::now();
    for (beam_index, q) in &parsed {
        trace.beams[*beam_index].entity_slots = q
            .entity_slots
            .iter()
            .map(|s| entity_candidates(&s.label, s.trunc_embedding.as_ref(), config, stores))
            .collect();
    }
    trace.timings.entity_ms = ms_since(t);

    let t = Instant::now();
    for (beam_index, q) in &parsed {
        trace.beams[*beam_index].relation_slots = q
            .relation_slots
            .iter()
            .map(|s| {
                match candidates_for_label(&s.label, &stores.relations, &stores.query_vectors, config.k_relation) {
                    Ok((candidates, source)) => RelationSlotTrace {
                        label: s.label.clone(),
                        source,
                        candidates,
                        error: None,
                    },
                    Err(e) => RelationSlotTrace {
                        label: s.label.clone(),
                        source: QuerySource::Unmatched,
                        candidates: Vec::new(),
                        error: Some(e.to_string()),
                    },
                }
            })
            .collect();
    }
    trace.timings.relation_ms = ms_since(t);

    let t = Instant::now();
    let plan = GroundingPlan {
        beams: parsed
            .into_iter()
            .map(|(beam_index, skeleton)| {
                let bt = &trace.beams[beam_index];
                BeamPlan {
                    beam_index,
                    skeleton,
                    entity_candidates: bt.entity_slots.iter().map(|s| s.candidates.clone()).collect(),
                    relation_candidates: bt.relation_slots.iter().map(|s| s.candidates.clone()).collect(),
                }
            })
            .collect(),
        prefixes: config.prefixes.clone(),
        count_zero_is_empty: config.count_zero_is_empty,
    };
    let outcome = match execute_until_answer(&plan, stores.kg.as_ref(), config.limits) {
        Ok(o) => o,
        Err(e) => {
            trace.kg_unreachable = matches!(e, GroundingError::KgUnreachable { .. });
            trace.error = Some(e.to_string());
            match e {
                GroundingError::KgUnreachable { outcome, .. }
                | GroundingError::LimitExceeded { outcome, .. } => *outcome,
                _ => Default::default(),
            }
        }
    };
    trace.timings.execute_ms = ms_since(t);

    trace.executed = outcome.executed;
    trace.skipped_beams = outcome.skipped_beams;
    trace.winning = outcome.winning;
    trace.answer = outcome.answer.clone();
    trace.timings.total_ms = ms_since(started);
    (outcome.answer, trace)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimingSummary {
    pub questions: usize,
    pub total_ms: f64,
    pub mean_ms: f64,
    pub median_ms: f64,
    pub max_ms: f64,
}

impl TimingSummary {
    fn from_latencies(mut ms: Vec<f64>, wall_ms: f64) -> Self {
        ms.sort_by(f64::total_cmp);
        let n = ms.len();
        let median = match n {
            0 => 0.0,
            _ if n % 2 == 1 => ms[n / 2],
            _ => (ms[n / 2 - 1] + ms[n / 2]) / 2.0,
        };
        Self {
            questions: n,
            total_ms: wall_ms,
            mean_ms: if n == 0 { 0.0 } else { ms.iter().sum::<f64>() / n as f64 },
            median_ms: median,
            max_ms: ms.last().copied().unwrap_or(0.0),
        }
    }
}

#[derive(Debug, Clone)]
pub struct BatchResult {
    pub report: EvalReport,
    /// One per question that had beams, sorted by qid.
    pub traces: Vec<QuestionTrace>,
    pub timing: TimingSummary,
    /// Questions during which the KG could not be reached.
    pub unreachable: usize,
}

struct QuestionRun {
    eval: QuestionEval,
    trace: Option<QuestionTrace>,
    unreachable: bool,
}

fn run_one(
    record: &QuestionRecord,
    beams: Option<&BeamEntry>,
    config: &PipelineConfig,
    stores: &Stores,
) -> QuestionRun {
    let gold = match stores.kg.query(&record.gold_sparql) {
        Ok(g) => g,
        Err(e) => {
            let diagnostics = Diagnostics {
                gold_error: Some(e.to_string()),
                missing_beams: beams.is_none(),
                ..Default::default()
            };
            return QuestionRun {
                eval: QuestionEval::zero(&record.qid, diagnostics),
                trace: None,
                unreachable: e.is_unreachable(),
            };
        }
    };
    let Some(entry) = beams else {
        let diagnostics = Diagnostics {
            missing_beams: true,
            ..Default::default()
        };
        return QuestionRun {
            eval: QuestionEval::zero(&record.qid, diagnostics),
            trace: None,
            unreachable: false,
        };
    };

    let (pred, trace) = answer_question(&record.qid, &entry.beams, config, stores);
    let mut eval = score_question(&record.qid, &gold, pred.as_ref(), &config.eval);
    let gold_ids = gold_bindings(&record.gold_sparql);
    let first = trace.beams.first().filter(|b| b.parse_error.is_none());
    eval.diagnostics = Diagnostics {
        entity_hit_rank: first.and_then(|b| {
            let lists: Vec<Vec<String>> = b
                .entity_slots
                .iter()
                .map(|s| s.candidates.iter().map(|c| c.entity.id.clone()).collect())
                .collect();
            hit_rank(&gold_ids.entities, &lists)
        }),
        relation_hit_rank: first.and_then(|b| {
            let lists: Vec<Vec<String>> = b
                .relation_slots
                .iter()
                .map(|s| s.candidates.iter().map(|c| c.relation.id.clone()).collect())
                .collect();
            hit_rank(&gold_ids.relations, &lists)
        }),
        executed_count: trace.executed_count(),
        parse_flags: trace.parse_flags(),
        gold_error: None,
        missing_beams: false,
    };
    QuestionRun {
        eval,
        unreachable: trace.kg_unreachable,
        trace: Some(trace),
    }
}

/// Answers and scores every record. Questions without beams score 0; a
/// failure in one question never stops the batch.
pub fn run_batch(
    records: &[QuestionRecord],
    beams: &[BeamEntry],
    config: &PipelineConfig,
    stores: &Stores,
) -> Result<BatchResult, EvalError> {
    let by_qid: HashMap<&str, &BeamEntry> = beams.iter().map(|b| (b.qid.as_str(), b)).collect();
    let started = Instant::now();
    let work = || -> Vec<QuestionRun> {
        records
            .par_iter()
            .map(|r| {
                let entry = by_qid.get(r.qid.as_str()).copied();
                catch_unwind(AssertUnwindSafe(|| run_one(r, entry, config, stores))).unwrap_or_else(|_| {
                    let diagnostics = Diagnostics {
                        parse_flags: vec!["internal_error".into()],
                        ..Default::default()
                    };
                    QuestionRun {
                        eval: QuestionEval::zero(&r.qid, diagnostics),
                        trace: None,
                        unreachable: false,
                    }
                })
            })
            .collect()
    };
    let runs = if config.workers > 0 {
        match rayon::ThreadPoolBuilder::new().num_threads(config.workers).build() {
            Ok(pool) => pool.install(work),
            Err(e) => {
                log::warn!("cannot build worker pool ({e}); using the global pool");
                work()
            }
        }
    } else {
        work()
    };
    let wall_ms = ms_since(started);

    let unreachable = runs.iter().filter(|r| r.unreachable).count();
    let mut evals = Vec::with_capacity(runs.len());
    let mut traces = Vec::new();
    for run in runs {
        evals.push(run.eval);
        traces.extend(run.trace);
    }
    traces.sort_by(|a, b| qid_cmp(&a.qid, &b.qid));
    let timing = TimingSummary::from_latencies(traces.iter().map(|t| t.timings.total_ms).collect(), wall_ms);
    Ok(BatchResult {
        report: aggregate(evals)?,
        traces,
        timing,
        unreachable,
    })
}

/// Serializes a report as pretty JSON with a trailing newline.
pub fn report_json(report: &EvalReport) -> String {
    let mut s = serde_json::to_string_pretty(report).expect("report serializes");
    s.push('\n');
    s
}

/// Writes `report.json`, `report.txt`, `timing.json` and, when requested, `traces.jsonl`.
pub fn write_batch_outputs(dir: impl AsRef<Path>, result: &BatchResult, traces: bool) -> io::Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    fs::write(dir.join("report.json"), report_json(&result.report))?;
    fs::write(dir.join("report.txt"), result.report.render_table())?;
    let mut timing = serde_json::to_string_pretty(&result.timing)?;
    timing.push('\n');
    fs::write(dir.join("timing.json"), timing)?;
    if traces {
        let mut out = BufWriter::new(fs::File::create(dir.join("traces.jsonl"))?);
        for t in &result.traces {
            serde_json::to_writer(&mut out, t)?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct SweepRow {
    pub policy: LayerPolicy,
    pub result: BatchResult,
}

/// Runs the batch once per candidate-ordering policy.
pub fn sweep(
    records: &[QuestionRecord],
    beams: &[BeamEntry],
    config: &PipelineConfig,
    stores: &Stores,
    policies: &[LayerPolicy],
) -> Result<Vec<SweepRow>, EvalError> {
    policies
        .iter()
        .map(|&policy| {
            let config = PipelineConfig {
                layer_policy: policy,
                ..config.clone()
            };
            run_batch(records, beams, &config, stores).map(|result| SweepRow { policy, result })
        })
        .collect()
}

pub fn render_sweep_table(rows: &[SweepRow]) -> String {
    let mut s = format!("{:<14} {:>8} {:>8}\n", "policy", "P@1", "F1");
    for r in rows {
        s.push_str(&format!(
            "{:<14} {:>8.4} {:>8.4}\n",
            r.policy.to_string(),
            r.result.report.macro_p_at_1,
            r.result.report.macro_f1
        ));
    }
    s
}
