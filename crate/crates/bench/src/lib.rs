//! Criterion benchmarks for the hot paths of `searchkd`; see `benches/`.
