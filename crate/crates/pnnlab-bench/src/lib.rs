//! Benchmark-only crate; see `benches/product_layers.rs`.
//!
//! Kept separate from the core library so criterion and its dependency tree
//! never touch consumers of `pnnlab`.
