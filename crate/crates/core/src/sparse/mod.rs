//! Compressed-model export and execution: CSR storage, int8 blocks, the
//! `SQRL` artifact format and a size/latency benchmark.

pub mod bench;
pub mod csr;
pub mod format;

pub use bench::{benchmark, param_reduction, BenchReport, BenchRow};
pub use csr::{csr_matvec, to_csr, to_csr_i8, CsrMatrix, CsrValues};
pub use format::{
    export, export_bytes, CompressedLayer, CompressedModel, ExportOptions, Head, LayerActivation, Layout,
    WeightBlock,
};
