//! Scoring predicted answers against gold answers, report aggregation and
//! embedding-similarity diagnostics.

use std::cmp::Ordering;
use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::io::{self, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embeddings::{TruncatedEmbedding, TruncationConfig};
use crate::ingest::{BeamEntry, TrainingRecord};
use crate::mini_kg::{ResultSet, Term};
use crate::skeleton::parse_skeleton;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("nothing to aggregate")]
    EmptyInput,
}

/// How precision at 1 is decided.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrecisionMode {
    /// The first value of the first returned row must be a gold answer.
    #[default]
    FirstAnswer,
    /// Any predicted answer in the gold set counts.
    AnyAnswer,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalOptions {
    pub precision_mode: PrecisionMode,
    /// Score a question whose gold and predicted answers are both empty as correct.
    pub empty_matches_empty: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            precision_mode: PrecisionMode::FirstAnswer,
            empty_matches_empty: true,
        }
    }
}

/// Answer identity: IRIs by full string, literals by lexical form and language.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AnswerKey {
    Iri(String),
    Literal(String, Option<String>),
}

impl AnswerKey {
    pub fn of(term: &Term) -> Self {
        match term {
            Term::Iri { value } => AnswerKey::Iri(value.clone()),
            Term::Literal { value, lang, .. } => AnswerKey::Literal(value.clone(), lang.clone()),
        }
    }
}

/// Answer values in result order: every bound value of every row, then
/// scalars and booleans as single literals.
pub fn answer_values(rs: &ResultSet) -> Vec<AnswerKey> {
    match rs {
        ResultSet::Bindings { rows, .. } => rows
            .iter()
            .flat_map(|r| r.iter().flatten().map(AnswerKey::of))
            .collect(),
        ResultSet::Boolean { value } => vec![AnswerKey::Literal(value.to_string(), None)],
        ResultSet::Scalar { value, .. } => vec![AnswerKey::Literal(value.to_string(), None)],
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Diagnostics {
    /// Worst 1-based rank at which a gold entity appears among the first
    /// beam's candidates; `None` when some gold entity is missing.
    pub entity_hit_rank: Option<usize>,
    pub relation_hit_rank: Option<usize>,
    pub executed_count: usize,
    pub parse_flags: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gold_error: Option<String>,
    #[serde(skip_serializing_if = "std::ops::Not::not")]
    pub missing_beams: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuestionEval {
    pub qid: String,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub p_at_1: u8,
    pub f1: f64,
    pub answered: bool,
    pub diagnostics: Diagnostics,
}

impl QuestionEval {
    /// A question that could not be scored (no beams, gold failure).
    pub fn zero(qid: impl Into<String>, diagnostics: Diagnostics) -> Self {
        Self {
            qid: qid.into(),
            tp: 0,
            fp: 0,
            fn_: 0,
            p_at_1: 0,
            f1: 0.0,
            answered: false,
            diagnostics,
        }
    }
}

/// Scores one question. `pred` is `None` when no grounded query answered.
pub fn score_question(
    qid: impl Into<String>,
    gold: &ResultSet,
    pred: Option<&ResultSet>,
    options: &EvalOptions,
) -> QuestionEval {
    let gold_values = answer_values(gold);
    let gold_set: HashSet<&AnswerKey> = gold_values.iter().collect();
    let pred_values = pred.map(answer_values).unwrap_or_default();
    let pred_set: HashSet<&AnswerKey> = pred_values.iter().collect();

    let tp = pred_set.intersection(&gold_set).count();
    let fp = pred_set.len() - tp;
    let fn_ = gold_set.len() - tp;
    let both_empty = gold_set.is_empty() && pred_set.is_empty();
    let denom = 2 * tp + fp + fn_;
    let f1 = if denom > 0 {
        2.0 * tp as f64 / denom as f64
    } else if both_empty && options.empty_matches_empty {
        1.0
    } else {
        0.0
    };
    let p_at_1 = if both_empty {
        options.empty_matches_empty
    } else {
        match options.precision_mode {
            PrecisionMode::FirstAnswer => pred_values.first().is_some_and(|v| gold_set.contains(v)),
            PrecisionMode::AnyAnswer => tp > 0,
        }
    };
    QuestionEval {
        qid: qid.into(),
        tp,
        fp,
        fn_,
        p_at_1: u8::from(p_at_1),
        f1,
        answered: pred.is_some(),
        diagnostics: Diagnostics::default(),
    }
}

/// Worst rank over `gold_ids` of the best 1-based rank each reaches in any list.
pub fn hit_rank(gold_ids: &[String], candidate_lists: &[Vec<String>]) -> Option<usize> {
    if gold_ids.is_empty() {
        return None;
    }
    let mut worst = 0;
    for id in gold_ids {
        let best = candidate_lists
            .iter()
            .filter_map(|l| l.iter().position(|c| c == id))
            .min()?;
        worst = worst.max(best + 1);
    }
    Some(worst)
}

/// Orders qids numerically when both are integers, otherwise as strings.
pub fn qid_cmp(a: &str, b: &str) -> Ordering {
    match (a.parse::<u64>(), b.parse::<u64>()) {
        (Ok(x), Ok(y)) => x.cmp(&y).then_with(|| a.cmp(b)),
        (Ok(_), Err(_)) => Ordering::Less,
        (Err(_), Ok(_)) => Ordering::Greater,
        _ => a.cmp(b),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub questions: usize,
    pub answered: usize,
    /// Fraction of questions that had beams.
    pub coverage: f64,
    pub macro_p_at_1: f64,
    pub macro_f1: f64,
    /// Fraction of questions whose gold entities all appear among the candidates.
    pub entity_hit_fraction: f64,
    pub relation_hit_fraction: f64,
    pub mean_executed: f64,
    pub gold_errors: usize,
    pub per_question: Vec<QuestionEval>,
}

pub fn aggregate(mut per_question: Vec<QuestionEval>) -> Result<EvalReport, EvalError> {
    if per_question.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    per_question.sort_by(|a, b| qid_cmp(&a.qid, &b.qid));
    let n = per_question.len() as f64;
    let mean = |f: &dyn Fn(&QuestionEval) -> f64| per_question.iter().map(f).sum::<f64>() / n;
    Ok(EvalReport {
        questions: per_question.len(),
        answered: per_question.iter().filter(|q| q.answered).count(),
        coverage: mean(&|q| f64::from(u8::from(!q.diagnostics.missing_beams))),
        macro_p_at_1: mean(&|q| f64::from(q.p_at_1)),
        macro_f1: mean(&|q| q.f1),
        entity_hit_fraction: mean(&|q| f64::from(u8::from(q.diagnostics.entity_hit_rank.is_some()))),
        relation_hit_fraction: mean(&|q| {
            f64::from(u8::from(q.diagnostics.relation_hit_rank.is_some()))
        }),
        mean_executed: mean(&|q| q.diagnostics.executed_count as f64),
        gold_errors: per_question
            .iter()
            .filter(|q| q.diagnostics.gold_error.is_some())
            .count(),
        per_question,
    })
}

impl EvalReport {
    /// Human-readable summary followed by one row per question.
    pub fn render_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "questions        {}", self.questions);
        let _ = writeln!(s, "answered         {}", self.answered);
        let _ = writeln!(s, "coverage         {:.4}", self.coverage);
        let _ = writeln!(s, "macro P@1        {:.4}", self.macro_p_at_1);
        let _ = writeln!(s, "macro F1         {:.4}", self.macro_f1);
        let _ = writeln!(s, "entity hit       {:.4}", self.entity_hit_fraction);
        let _ = writeln!(s, "relation hit     {:.4}", self.relation_hit_fraction);
        let _ = writeln!(s, "mean executed    {:.2}", self.mean_executed);
        let _ = writeln!(s, "gold errors      {}", self.gold_errors);
        let _ = writeln!(s);
        let _ = writeln!(
            s,
            "{:<16} {:>4} {:>4} {:>4} {:>4} {:>7} {:>6} {:>6} {:>5}",
            "qid", "tp", "fp", "fn", "p@1", "f1", "e_rank", "r_rank", "exec"
        );
        let rank = |r: Option<usize>| r.map_or_else(|| "-".to_string(), |r| r.to_string());
        for q in &self.per_question {
            let _ = writeln!(
                s,
                "{:<16} {:>4} {:>4} {:>4} {:>4} {:>7.4} {:>6} {:>6} {:>5}",
                q.qid,
                q.tp,
                q.fp,
                q.fn_,
                q.p_at_1,
                q.f1,
                rank(q.diagnostics.entity_hit_rank),
                rank(q.diagnostics.relation_hit_rank),
                q.diagnostics.executed_count
            );
        }
        s
    }
}

/// Cosine of two vectors, `None` when either has zero norm or lengths differ.
pub fn cosine(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.len() != b.len() {
        return None;
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum();
    let nb: f64 = b.iter().map(|x| x * x).sum();
    if na == 0.0 || nb == 0.0 {
        return None;
    }
    Some((dot / (na * nb).sqrt()).clamp(-1.0, 1.0))
}

/// Angle in degrees, exact at the parallel and antiparallel extremes.
pub fn angle_degrees(a: &[f64], b: &[f64]) -> Option<f64> {
    let c = cosine(a, b)?;
    Some(if c >= 1.0 {
        0.0
    } else if c <= -1.0 {
        180.0
    } else {
        c.acos().to_degrees()
    })
}

pub const ANGLE_BIN_DEGREES: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AngleStats {
    pub angles: Vec<f64>,
    pub mean: Option<f64>,
    /// Counts per 10° bin over [0°, 180°]; 180° falls in the last bin.
    pub histogram: Vec<usize>,
    /// Pairs excluded for a zero-norm vector or a length mismatch.
    pub excluded: usize,
}

pub fn angle_stats(pairs: &[(TruncatedEmbedding, TruncatedEmbedding)]) -> AngleStats {
    let bins = (180.0 / ANGLE_BIN_DEGREES) as usize;
    let mut histogram = vec![0; bins];
    let mut angles = Vec::with_capacity(pairs.len());
    let mut excluded = 0;
    for (gold, pred) in pairs {
        match angle_degrees(gold.values(), pred.values()) {
            Some(a) => {
                histogram[((a / ANGLE_BIN_DEGREES) as usize).min(bins - 1)] += 1;
                angles.push(a);
            }
            None => excluded += 1,
        }
    }
    let mean = (!angles.is_empty()).then(|| angles.iter().sum::<f64>() / angles.len() as f64);
    AngleStats {
        angles,
        mean,
        histogram,
        excluded,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurvePoint {
    pub epoch: String,
    /// Entity-slot pairs compared.
    pub pairs: usize,
    pub mean_cosine: Option<f64>,
    pub mean_dot: Option<f64>,
    /// Pairs without a usable embedding on either side, or with a zero norm (cosine only).
    pub skipped: usize,
    pub missing_gold: usize,
}

/// Per-epoch similarity between generated and gold entity embeddings. Slots
/// are paired by position; only the first beam of each entry is used.
pub fn similarity_curves(
    epochs: &[(String, Vec<BeamEntry>)],
    gold: &[TrainingRecord],
    config: TruncationConfig,
) -> Vec<CurvePoint> {
    let gold_embeddings: HashMap<&str, Vec<Option<TruncatedEmbedding>>> = gold
        .iter()
        .filter_map(|g| {
            let q = parse_skeleton(&g.skeleton, config).ok()?;
            Some((
                g.qid.as_str(),
                q.entity_slots.into_iter().map(|s| s.trunc_embedding).collect(),
            ))
        })
        .collect();

    epochs
        .iter()
        .map(|(epoch, entries)| {
            let (mut pairs, mut skipped, mut missing_gold) = (0, 0, 0);
            let (mut cos_sum, mut cos_n, mut dot_sum) = (0.0, 0usize, 0.0);
            for entry in entries {
                let Some(gold_slots) = gold_embeddings.get(entry.qid.as_str()) else {
                    missing_gold += 1;
                    continue;
                };
                let generated = entry
                    .beams
                    .first()
                    .and_then(|b| parse_skeleton(b, config).ok())
                    .map(|q| q.entity_slots)
                    .unwrap_or_default();
                for (i, g) in gold_slots.iter().enumerate() {
                    let p = generated.get(i).and_then(|s| s.trunc_embedding.as_ref());
                    match (g, p) {
                        (Some(g), Some(p)) if g.len() == p.len() => {
                            pairs += 1;
                            dot_sum += g.values().iter().zip(p.values()).map(|(x, y)| x * y).sum::<f64>();
                            match cosine(g.values(), p.values()) {
                                Some(c) => {
                                    cos_sum += c;
                                    cos_n += 1;
                                }
                                None => skipped += 1,
                            }
                        }
                        _ => skipped += 1,
                    }
                }
            }
            CurvePoint {
                epoch: epoch.clone(),
                pairs,
                mean_cosine: (cos_n > 0).then(|| cos_sum / cos_n as f64),
                mean_dot: (pairs > 0).then(|| dot_sum / pairs as f64),
                skipped,
                missing_gold,
            }
        })
        .collect()
}

pub fn write_curves_csv(mut out: impl Write, points: &[CurvePoint]) -> io::Result<()> {
    writeln!(out, "epoch,pairs,mean_cosine,mean_dot,skipped,missing_gold")?;
    let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
    for p in points {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            p.epoch,
            p.pairs,
            opt(p.mean_cosine),
            opt(p.mean_dot),
            p.skipped,
            p.missing_gold
        )?;
    }
    out.flush()
}
