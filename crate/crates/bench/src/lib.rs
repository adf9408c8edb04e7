//! Benchmark-only crate; the benchmarks are in `benches/estimation.rs`.
