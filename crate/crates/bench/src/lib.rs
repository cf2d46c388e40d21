//! Benchmarks live under benches/; see `cargo bench -p tcgen-bench`.
