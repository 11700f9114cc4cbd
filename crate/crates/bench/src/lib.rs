//! Criterion benchmarks for the tuning, lowering, simulation and attack stages.
//! See `benches/pipeline.rs`.
