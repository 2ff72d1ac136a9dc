//! Benchmarks for the linkerr crate live under `benches/`.
