//! Criterion benchmarks for the diagnostic-matrix kernels live in `benches/`.
