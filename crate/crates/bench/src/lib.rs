//! Criterion benchmarks for the descriptor, attack step, proof and ledger
//! simulator live under `benches/`. Run them with `cargo bench -p semguard-bench`.
