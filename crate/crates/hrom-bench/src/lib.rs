//! Benchmark-only crate; see `benches/reduce.rs`.
