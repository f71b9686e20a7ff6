//! Structured mixed-precision binarization of linear layers.
//!
//! Each layer is pruned to an N:M pattern chosen per layer, its salient
//! columns are binarized with a residual second pass and the remaining kept
//! weights are split into three magnitude regions, each with its own row
//! scale. Quantization error is pushed onto the not-yet-quantized columns
//! through the calibration Hessian.

pub mod allocation;
pub mod compensation;
pub mod error;
pub mod linalg;
pub mod packing;
pub mod pipeline;
pub mod quantizer;
pub mod rng;
pub mod scoring;
pub mod tensor;
pub mod tensorio;

pub use allocation::{AllocationPlan, AllocationStrategy, NMRatio};
pub use error::{Error, ErrorKind, Result};
pub use pipeline::{quantize_layer, quantize_model, QuantConfig, QuantReport};
pub use quantizer::{BlockConfig, RegionCode, StructuredBinaryLayer};
pub use scoring::ScorerKind;
pub use tensor::Tensor2D;
