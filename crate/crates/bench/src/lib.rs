//! Criterion benchmarks for `cellnet-core`; see `benches/engine.rs`.
