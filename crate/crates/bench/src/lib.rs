//! Criterion benchmarks for the fusion objective and training loop.
