//! Segmentation-network laboratory: a reverse-mode autodiff engine over 4-D
//! tensors, plain / residual / dense / dense-residual (DRU) blocks, a 5-level
//! encoder-decoder, Adam training with bit-exact checkpoints, segmentation
//! metrics, a Wilcoxon signed-rank test, and image ingestion.

pub mod atomic;
pub mod blocks;
pub mod data;
pub mod diagnostics;
pub mod engine;
pub mod error;
pub mod exec;
pub mod kv;
pub mod layers;
pub mod metrics;
pub mod network;
pub mod params;
pub mod scalar;
pub mod shuffle;
pub mod tensor;
pub mod training;

pub use blocks::{BlockKind, BlockSpec};
pub use error::{Error, FormatError, Result};
pub use network::{build_network, Network, NetworkConfig};
pub use params::Parameters;
pub use scalar::Scalar;
pub use tensor::{LabelGrid, Shape, Tensor};
