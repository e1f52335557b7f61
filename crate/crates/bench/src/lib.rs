//! Criterion benchmarks for trim-mpc live in `benches/`.
