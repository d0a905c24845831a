//! Grounding of skeleton SPARQL queries for knowledge-graph question answering.
//!
//! A text generator emits skeleton queries whose entity and relation slots carry
//! labels (and, for entities, a short truncated KG embedding). This crate turns
//! them into executable queries: BM25 label search and embedding re-ranking for
//! entities, vector similarity for relations, rank-ordered enumeration of slot
//! combinations, and execution against a knowledge graph until one answers.
//! It also scores answers against gold queries.

pub mod embeddings;
pub mod eval;
pub mod grounding;
pub mod ingest;
pub mod label_index;
pub mod mini_kg;
pub mod pipeline;
pub mod relation_match;
pub mod skeleton;
pub mod synthetic;

pub use embeddings::{
    layer_candidates, rerank, CandidateSource, EmbeddingStore, FullEmbedding, LayerOrder,
    LayerPolicy, ScoredCandidate, TruncatedEmbedding, TruncationConfig,
};
pub use eval::{aggregate, score_question, EvalOptions, EvalReport, QuestionEval};
pub use grounding::{
    enumerate_combinations, execute_until_answer, ExecutionLimits, ExecutionOutcome,
    GroundedQuery, GroundingError, GroundingPlan,
};
pub use ingest::{BeamEntry, DatasetKind, QuestionRecord};
pub use label_index::{Bm25Params, EntityRecord, LabelHit, LabelIndex};
pub use mini_kg::{EndpointClient, KgError, KnowledgeGraph, ResultSet, Term, Triple, TripleStore};
pub use pipeline::{answer_question, run_batch, PipelineConfig, QuestionTrace, Stores};
pub use relation_match::{match_relation, QueryVectors, RelationCatalog, RelationHit};
pub use skeleton::{parse_skeleton, serialize_grounded, SkeletonQuery, SlotBindings};
