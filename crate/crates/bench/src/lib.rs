//! Benchmarks for the pipeline live in `benches/`; run them with
//! `cargo bench -p prodintent-bench`.
