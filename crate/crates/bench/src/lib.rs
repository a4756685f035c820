//! Criterion benchmarks for the lesion-mil pipeline live in `benches/`.
