//! Criterion benchmarks for the grounding pipeline live under `benches/`.
