//! Criterion benchmarks for `hda-core`; see `benches/`.
