//! Benchmark-only crate; the measurements live in the `kernels` bench target
//! (`cargo bench -p anticalc-bench`).
