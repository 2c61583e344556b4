//! Benchmarks for `caplab`; see `benches/`.
