//! Criterion benchmarks for the deghosting pipeline; see `benches/pipeline.rs`.
