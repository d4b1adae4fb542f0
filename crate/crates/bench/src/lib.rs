//! Criterion benchmarks for the signal and training hot paths; see `benches/`.
