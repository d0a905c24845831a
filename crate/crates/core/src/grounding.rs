//! Turns parsed beams plus per-slot candidates into executable queries and
//! runs them against a knowledge graph until one returns an answer.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embeddings::ScoredCandidate;
use crate::mini_kg::{KgError, KnowledgeGraph, ResultSet};
use crate::relation_match::RelationHit;
use crate::skeleton::{serialize_grounded, PrefixScheme, SkeletonQuery, SlotBindings, SlotKind};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GroundingError {
    #[error("beam {beam}: {kind} slot {slot} has no candidates")]
    EmptySlotCandidates {
        beam: usize,
        kind: SlotKind,
        slot: usize,
    },
    #[error("beam {beam}: expected {expected} {kind} candidate lists, got {got}")]
    SlotCountMismatch {
        beam: usize,
        kind: SlotKind,
        expected: usize,
        got: usize,
    },
    #[error("knowledge graph unreachable: {message}")]
    KgUnreachable {
        message: String,
        outcome: Box<ExecutionOutcome>,
    },
    #[error("{limit} limit reached after {} queries", outcome.executed_count)]
    LimitExceeded {
        limit: LimitKind,
        outcome: Box<ExecutionOutcome>,
    },
}

impl GroundingError {
    /// What had been executed before the question was aborted, if anything.
    pub fn partial_outcome(&self) -> Option<&ExecutionOutcome> {
        match self {
            GroundingError::KgUnreachable { outcome, .. }
            | GroundingError::LimitExceeded { outcome, .. } => Some(outcome),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LimitKind {
    QueryCount,
    WallClock,
}

impl std::fmt::Display for LimitKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            LimitKind::QueryCount => "query count",
            LimitKind::WallClock => "wall clock",
        })
    }
}

/// Per-question execution budget.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExecutionLimits {
    pub max_queries: usize,
    pub max_seconds: f64,
}

impl Default for ExecutionLimits {
    fn default() -> Self {
        Self {
            max_queries: 200,
            max_seconds: 30.0,
        }
    }
}

impl ExecutionLimits {
    pub fn unlimited() -> Self {
        Self {
            max_queries: usize::MAX,
            max_seconds: f64::INFINITY,
        }
    }

    fn wall_clock(&self) -> Option<Duration> {
        Duration::try_from_secs_f64(self.max_seconds).ok()
    }
}

/// One parsed beam with its candidates, one list per slot index.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BeamPlan {
    /// Position of the beam in decoder output.
    pub beam_index: usize,
    pub skeleton: SkeletonQuery,
    pub entity_candidates: Vec<Vec<ScoredCandidate>>,
    pub relation_candidates: Vec<Vec<RelationHit>>,
}

impl BeamPlan {
    pub fn entity_ids(&self) -> Vec<Vec<String>> {
        self.entity_candidates
            .iter()
            .map(|l| l.iter().map(|c| c.entity.id.clone()).collect())
            .collect()
    }

    pub fn relation_ids(&self) -> Vec<Vec<String>> {
        self.relation_candidates
            .iter()
            .map(|l| l.iter().map(|h| h.relation.id.clone()).collect())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroundingPlan {
    pub beams: Vec<BeamPlan>,
    pub prefixes: PrefixScheme,
    /// Treat a zero COUNT as "no answer" and keep searching.
    pub count_zero_is_empty: bool,
}

impl GroundingPlan {
    pub fn new(beams: Vec<BeamPlan>) -> Self {
        Self {
            beams,
            prefixes: PrefixScheme::default(),
            count_zero_is_empty: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct GroundedQuery {
    pub beam_index: usize,
    /// 0-based position in the beam's enumeration order.
    pub combo_rank: usize,
    pub sparql: String,
    pub bindings: SlotBindings,
}

/// Lazy Cartesian product over slot candidates. Slots are taken in textual
/// order and the leftmost slot varies slowest.
#[derive(Debug, Clone)]
pub struct Combinations<'a> {
    query: &'a SkeletonQuery,
    beam_index: usize,
    prefixes: PrefixScheme,
    slots: Vec<(SlotKind, usize)>,
    lists: Vec<&'a [String]>,
    counters: Vec<usize>,
    rank: usize,
    total: usize,
    done: bool,
}

impl Combinations<'_> {
    /// Number of combinations, saturating at `usize::MAX`.
    pub fn total(&self) -> usize {
        self.total
    }
}

impl Iterator for Combinations<'_> {
    type Item = GroundedQuery;

    fn next(&mut self) -> Option<GroundedQuery> {
        if self.done {
            return None;
        }
        let mut bindings = SlotBindings {
            entities: vec![String::new(); self.query.entity_slots.len()],
            relations: vec![String::new(); self.query.relation_slots.len()],
        };
        for (pos, &(kind, index)) in self.slots.iter().enumerate() {
            let id = self.lists[pos][self.counters[pos]].clone();
            match kind {
                SlotKind::Entity => bindings.entities[index] = id,
                SlotKind::Relation => bindings.relations[index] = id,
            }
        }
        let sparql = serialize_grounded(self.query, &bindings, &self.prefixes)
            .expect("every slot is bound");
        let item = GroundedQuery {
            beam_index: self.beam_index,
            combo_rank: self.rank,
            sparql,
            bindings,
        };
        self.rank += 1;

        let mut pos = self.slots.len();
        loop {
            if pos == 0 {
                self.done = true;
                break;
            }
            pos -= 1;
            self.counters[pos] += 1;
            if self.counters[pos] < self.lists[pos].len() {
                break;
            }
            self.counters[pos] = 0;
        }
        Some(item)
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        if self.done {
            return (0, Some(0));
        }
        let left = self.total.saturating_sub(self.rank);
        (left, Some(left))
    }
}

/// Enumerates every grounding of `query`. `entity_ids[i]` and `relation_ids[i]`
/// are the ranked candidates for entity and relation slot `i`.
pub fn enumerate_combinations<'a>(
    query: &'a SkeletonQuery,
    beam_index: usize,
    entity_ids: &'a [Vec<String>],
    relation_ids: &'a [Vec<String>],
    prefixes: &PrefixScheme,
) -> Result<Combinations<'a>, GroundingError> {
    for (kind, expected, got) in [
        (SlotKind::Entity, query.entity_slots.len(), entity_ids.len()),
        (SlotKind::Relation, query.relation_slots.len(), relation_ids.len()),
    ] {
        if expected != got {
            return Err(GroundingError::SlotCountMismatch {
                beam: beam_index,
                kind,
                expected,
                got,
            });
        }
    }
    let slots: Vec<(SlotKind, usize)> = query.slots().collect();
    let mut lists = Vec::with_capacity(slots.len());
    for &(kind, index) in &slots {
        let list = match kind {
            SlotKind::Entity => &entity_ids[index],
            SlotKind::Relation => &relation_ids[index],
        };
        if list.is_empty() {
            return Err(GroundingError::EmptySlotCandidates {
                beam: beam_index,
                kind,
                slot: index,
            });
        }
        lists.push(list.as_slice());
    }
    let total = lists.iter().fold(1usize, |acc, l| acc.saturating_mul(l.len()));
    Ok(Combinations {
        query,
        beam_index,
        prefixes: prefixes.clone(),
        counters: vec![0; slots.len()],
        slots,
        lists,
        rank: 0,
        total,
        done: false,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum QueryStatus {
    Answered,
    Empty,
    Failed { error: String },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExecutedQuery {
    pub beam_index: usize,
    pub combo_rank: usize,
    pub sparql: String,
    #[serde(flatten)]
    pub status: QueryStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SkippedBeam {
    pub beam_index: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ExecutionOutcome {
    /// The first non-empty response; `None` when nothing answered.
    pub answer: Option<ResultSet>,
    pub executed_count: usize,
    /// `(beam_index, combo_rank)` of the answering query.
    pub winning: Option<(usize, usize)>,
    pub winning_query: Option<GroundedQuery>,
    pub executed: Vec<ExecutedQuery>,
    pub skipped_beams: Vec<SkippedBeam>,
}

/// Runs each beam's combinations in order and stops at the first non-empty
/// result. Query errors count as empty; transport failures abort.
pub fn execute_until_answer(
    plan: &GroundingPlan,
    kg: &dyn KnowledgeGraph,
    limits: ExecutionLimits,
) -> Result<ExecutionOutcome, GroundingError> {
    let started = Instant::now();
    let deadline = limits.wall_clock();
    let mut outcome = ExecutionOutcome::default();

    for beam in &plan.beams {
        let entity_ids = beam.entity_ids();
        let relation_ids = beam.relation_ids();
        let combos = match enumerate_combinations(
            &beam.skeleton,
            beam.beam_index,
            &entity_ids,
            &relation_ids,
            &plan.prefixes,
        ) {
            Ok(c) => c,
            Err(e) => {
                outcome.skipped_beams.push(SkippedBeam {
                    beam_index: beam.beam_index,
                    reason: e.to_string(),
                });
                continue;
            }
        };
        for grounded in combos {
            let limit = if outcome.executed_count >= limits.max_queries {
                Some(LimitKind::QueryCount)
            } else if deadline.is_some_and(|d| started.elapsed() >= d) {
                Some(LimitKind::WallClock)
            } else {
                None
            };
            if let Some(limit) = limit {
                return Err(GroundingError::LimitExceeded {
                    limit,
                    outcome: Box::new(outcome),
                });
            }

            outcome.executed_count += 1;
            let result = kg.query(&grounded.sparql);
            let status = match &result {
                Ok(rs) if !rs.is_empty(plan.count_zero_is_empty) => QueryStatus::Answered,
                Ok(_) => QueryStatus::Empty,
                Err(e) => QueryStatus::Failed {
                    error: e.to_string(),
                },
            };
            outcome.executed.push(ExecutedQuery {
                beam_index: grounded.beam_index,
                combo_rank: grounded.combo_rank,
                sparql: grounded.sparql.clone(),
                status: status.clone(),
            });
            match result {
                Err(e) if e.is_unreachable() => {
                    return Err(GroundingError::KgUnreachable {
                        message: e.to_string(),
                        outcome: Box::new(outcome),
                    });
                }
                Ok(rs) if status == QueryStatus::Answered => {
                    outcome.answer = Some(rs);
                    outcome.winning = Some((grounded.beam_index, grounded.combo_rank));
                    outcome.winning_query = Some(grounded);
                    return Ok(outcome);
                }
                Err(KgError::Timeout) => log::debug!("query timed out: {}", grounded.sparql),
                _ => {}
            }
        }
    }
    Ok(outcome)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embeddings::{CandidateSource, TruncationConfig};
    use crate::label_index::EntityRecord;
    use crate::mini_kg::{Term, Triple, TripleStore};
    use crate::relation_match::RelationRecord;
    use crate::skeleton::parse_skeleton;

    fn ids(prefix: &str, n: usize, start: usize) -> Vec<String> {
        (start..start + n).map(|i| format!("{prefix}{i}")).collect()
    }

    fn skeleton(text: &str) -> SkeletonQuery {
        parse_skeleton(text, TruncationConfig::default()).unwrap()
    }

    fn entity_list(list: &[String]) -> Vec<ScoredCandidate> {
        list.iter()
            .map(|id| ScoredCandidate {
                entity: EntityRecord::new(id.clone(), "x").unwrap(),
                dot_score: None,
                source: CandidateSource::LabelSorted,
            })
            .collect()
    }

    fn relation_list(list: &[String]) -> Vec<RelationHit> {
        list.iter()
            .enumerate()
            .map(|(rank, id)| RelationHit {
                relation: RelationRecord {
                    id: id.clone(),
                    label: "r".into(),
                    numeric_id: id[1..].parse().unwrap(),
                    text_vector: vec![],
                },
                cosine: 1.0,
                rank: rank + 1,
            })
            .collect()
    }

    #[test]
    fn six_by_three_gives_eighteen() {
        let q = skeleton("SELECT ?x WHERE { <ent>Barack Obama</ent> <rel>father</rel> ?x }");
        let e = vec![ids("Q", 6, 1)];
        let r = vec![ids("P", 3, 1)];
        let combos: Vec<_> = enumerate_combinations(&q, 0, &e, &r, &PrefixScheme::default())
            .unwrap()
            .collect();
        assert_eq!(combos.len(), 18);
        assert_eq!(combos[0].sparql, "SELECT ?x WHERE { wd:Q1 wdt:P1 ?x }");
        assert_eq!(combos[1].sparql, "SELECT ?x WHERE { wd:Q1 wdt:P2 ?x }");
        assert_eq!(combos[3].sparql, "SELECT ?x WHERE { wd:Q2 wdt:P1 ?x }");
        assert!(combos.iter().enumerate().all(|(i, c)| c.combo_rank == i));
    }

    #[test]
    fn textual_order_controls_significance() {
        // The relation comes first in the text, so it varies slowest.
        let q = skeleton("SELECT ?x WHERE { ?x <rel>r</rel> <ent>a</ent> }");
        let e = vec![ids("Q", 2, 1)];
        let r = vec![ids("P", 2, 1)];
        let got: Vec<_> = enumerate_combinations(&q, 0, &e, &r, &PrefixScheme::default())
            .unwrap()
            .map(|c| (c.bindings.relations[0].clone(), c.bindings.entities[0].clone()))
            .collect();
        assert_eq!(
            got,
            [("P1", "Q1"), ("P1", "Q2"), ("P2", "Q1"), ("P2", "Q2")]
                .map(|(a, b)| (a.to_string(), b.to_string()))
        );
    }

    #[test]
    fn single_candidates_and_empty_slots() {
        let q = skeleton("ASK { <ent>a</ent> <rel>r</rel> <ent>b</ent> }");
        let e = vec![ids("Q", 1, 1), ids("Q", 1, 2)];
        let r = vec![ids("P", 1, 1)];
        let combos: Vec<_> = enumerate_combinations(&q, 2, &e, &r, &PrefixScheme::default())
            .unwrap()
            .collect();
        assert_eq!(combos.len(), 1);
        assert_eq!((combos[0].beam_index, combos[0].combo_rank), (2, 0));
        let e = vec![ids("Q", 1, 1), vec![]];
        assert_eq!(
            enumerate_combinations(&q, 2, &e, &r, &PrefixScheme::default()).unwrap_err(),
            GroundingError::EmptySlotCandidates { beam: 2, kind: SlotKind::Entity, slot: 1 }
        );
    }

    fn beam(index: usize, text: &str, e: Vec<Vec<String>>, r: Vec<Vec<String>>) -> BeamPlan {
        BeamPlan {
            beam_index: index,
            skeleton: skeleton(text),
            entity_candidates: e.iter().map(|l| entity_list(l)).collect(),
            relation_candidates: r.iter().map(|l| relation_list(l)).collect(),
        }
    }

    #[test]
    fn second_beam_answers_after_eighteen_empty() {
        let kg = TripleStore::from_triples([Triple::new(
            Term::entity("Q100"),
            Term::direct_property("P200"),
            Term::entity("Q5"),
        )]);
        let text = "SELECT ?x WHERE { <ent>a</ent> <rel>r</rel> ?x }";
        let plan = GroundingPlan::new(vec![
            beam(0, text, vec![ids("Q", 6, 1)], vec![ids("P", 3, 1)]),
            beam(1, text, vec![ids("Q", 6, 100)], vec![ids("P", 3, 200)]),
        ]);
        let out = execute_until_answer(&plan, &kg, ExecutionLimits::default()).unwrap();
        assert_eq!(out.executed_count, 19);
        assert_eq!(out.winning, Some((1, 0)));
        assert!(out.answer.is_some());
    }

    #[test]
    fn count_zero_rule() {
        let kg = TripleStore::from_triples([Triple::new(
            Term::entity("Q2"),
            Term::direct_property("P1"),
            Term::entity("Q5"),
        )]);
        let text = "SELECT (COUNT(?x) AS ?n) WHERE { <ent>a</ent> <rel>r</rel> ?x }";
        let mut plan = GroundingPlan::new(vec![beam(0, text, vec![ids("Q", 2, 1)], vec![ids("P", 1, 1)])]);
        let out = execute_until_answer(&plan, &kg, ExecutionLimits::default()).unwrap();
        assert_eq!(out.winning, Some((0, 0)));
        assert_eq!(out.answer, Some(ResultSet::Scalar { var: "n".into(), value: 0 }));

        plan.count_zero_is_empty = true;
        let out = execute_until_answer(&plan, &kg, ExecutionLimits::default()).unwrap();
        assert_eq!(out.winning, Some((0, 1)));
        assert_eq!(out.answer, Some(ResultSet::Scalar { var: "n".into(), value: 1 }));
    }

    #[test]
    fn limits_and_skipped_beams() {
        let kg = TripleStore::new();
        let text = "SELECT ?x WHERE { <ent>a</ent> <rel>r</rel> ?x }";
        let plan = GroundingPlan::new(vec![
            beam(0, text, vec![vec![]], vec![ids("P", 3, 1)]),
            beam(1, text, vec![ids("Q", 6, 1)], vec![ids("P", 3, 1)]),
        ]);
        let out = execute_until_answer(&plan, &kg, ExecutionLimits::default()).unwrap();
        assert_eq!(out.executed_count, 18);
        assert_eq!(out.skipped_beams.len(), 1);
        assert!(out.answer.is_none() && out.winning.is_none());

        let limits = ExecutionLimits { max_queries: 5, ..Default::default() };
        match execute_until_answer(&plan, &kg, limits) {
            Err(GroundingError::LimitExceeded { limit: LimitKind::QueryCount, outcome }) => {
                assert_eq!(outcome.executed_count, 5)
            }
            other => panic!("{other:?}"),
        }
    }

    struct Unreachable;

    impl KnowledgeGraph for Unreachable {
        fn query(&self, _: &str) -> Result<ResultSet, KgError> {
            Err(KgError::Transport("connection refused".into()))
        }
    }

    #[test]
    fn transport_failure_aborts() {
        let text = "SELECT ?x WHERE { <ent>a</ent> <rel>r</rel> ?x }";
        let plan = GroundingPlan::new(vec![beam(0, text, vec![ids("Q", 2, 1)], vec![ids("P", 1, 1)])]);
        let err = execute_until_answer(&plan, &Unreachable, ExecutionLimits::default()).unwrap_err();
        assert!(matches!(err, GroundingError::KgUnreachable { .. }));
        assert_eq!(err.partial_outcome().unwrap().executed_count, 1);
    }
}
