use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use std::hint::black_box;

use kgqa_core::embeddings::{rerank, TruncatedEmbedding, TruncationConfig};
use kgqa_core::skeleton::PrefixScheme;
use kgqa_core::synthetic::{SyntheticConfig, World};
use kgqa_core::{
    answer_question, enumerate_combinations, parse_skeleton, run_batch, Bm25Params,
    KnowledgeGraph, PipelineConfig,
};

fn world(questions: usize) -> World {
    World::generate(&SyntheticConfig {
        questions,
        ..Default::default()
    })
}

fn bench_label_search(c: &mut Criterion) {
    let w = world(500);
    let index = w.label_index();
    let queries: Vec<&str> = w.entities.iter().take(64).map(|e| e.label.as_str()).collect();
    c.bench_function("bm25_search_k100", |b| {
        let mut i = 0;
        b.iter(|| {
            let q = queries[i % queries.len()];
            i += 1;
            black_box(index.search(q, 100, Bm25Params::default()).unwrap())
        })
    });
}

fn bench_rerank(c: &mut Criterion) {
    let w = world(500);
    let index = w.label_index();
    let store = w.embedding_store();
    let hits = index
        .search(&w.entities[0].label, 100, Bm25Params::default())
        .unwrap();
    let generated = TruncatedEmbedding::from_values(&[0.1; 10], 3);
    c.bench_function("rerank_100", |b| {
        b.iter(|| black_box(rerank(&generated, &hits, &store, TruncationConfig::default())))
    });
}

fn bench_enumeration(c: &mut Criterion) {
    let skeleton = parse_skeleton(
        "SELECT ?o WHERE { <ent>a [0 0 0 0 0 0 0 0 0 0] </ent> <rel>r</rel> ?x . \
         ?x <rel>s</rel> <ent>b [0 0 0 0 0 0 0 0 0 0] </ent> }",
        TruncationConfig::default(),
    )
    .unwrap();
    let ents: Vec<Vec<String>> = (0..2)
        .map(|s| (0..6).map(|i| format!("Q{}", s * 10 + i)).collect())
        .collect();
    let rels: Vec<Vec<String>> = (0..2)
        .map(|s| (0..3).map(|i| format!("P{}", s * 10 + i)).collect())
        .collect();
    let prefixes = PrefixScheme::default();
    c.bench_function("enumerate_324_groundings", |b| {
        b.iter(|| {
            let combos = enumerate_combinations(&skeleton, 0, &ents, &rels, &prefixes).unwrap();
            black_box(combos.count())
        })
    });
}

fn bench_mini_kg(c: &mut Criterion) {
    let w = world(500);
    let kg = w.triple_store();
    let queries: Vec<&str> = w.records.iter().map(|r| r.gold_sparql.as_str()).collect();
    c.bench_function("mini_kg_gold_query", |b| {
        let mut i = 0;
        b.iter(|| {
            let q = queries[i % queries.len()];
            i += 1;
            black_box(kg.query(q).unwrap())
        })
    });
}

fn bench_answer(c: &mut Criterion) {
    let w = world(200);
    let stores = w.stores();
    let config = PipelineConfig::default();
    c.bench_function("answer_question", |b| {
        let mut i = 0;
        b.iter(|| {
            let entry = &w.beams[i % w.beams.len()];
            i += 1;
            black_box(answer_question(&entry.qid, &entry.beams, &config, &stores))
        })
    });
}

fn bench_batch(c: &mut Criterion) {
    let w = world(200);
    let config = PipelineConfig::default();
    let mut group = c.benchmark_group("batch");
    group.sample_size(10);
    group.bench_function("run_batch_200", |b| {
        b.iter_batched(
            || w.stores(),
            |stores| black_box(run_batch(&w.records, &w.beams, &config, &stores).unwrap()),
            BatchSize::LargeInput,
        )
    });
    group.finish();
}

criterion_group!(
    benches,
    bench_label_search,
    bench_rerank,
    bench_enumeration,
    bench_mini_kg,
    bench_answer,
    bench_batch
);
criterion_main!(benches);
