//! Hybrid linear-morphological network heads over the max-plus semiring.
//!
//! The crate covers tropical arithmetic ([`tropical`]), a small reverse-mode
//! autodiff engine ([`autodiff`]), the five classification heads
//! ([`heads`]), exact ReLU/maxout rewrites ([`equivalence`]), training
//! ([`optim`]), L1 unstructured pruning ([`pruning`]), metrics, data
//! loaders and the `morphnet` command line.

pub mod autodiff;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod equivalence;
pub mod error;
pub mod gradcheck;
pub mod heads;
pub mod metrics;
pub mod optim;
pub mod pruning;
pub mod report;
pub mod tensor;
pub mod tropical;

pub use error::{Error, Result};
pub use tensor::Tensor;
pub use tropical::{ExtScalar, TropicalMatrix};
