//! Criterion benchmarks for `tfspec-core`; see `benches/`.
