//! Operator-compatibility analysis and verified conversion of neural-network
//! computation graphs for constrained deployment targets.
//!
//! The pipeline: parse a model ([`ir`]), check it against a target
//! [`profiles::CapabilityProfile`] ([`analyzer`]), transform the incompatible
//! parts ([`rewriter`]) and check every transformation numerically against the
//! reference [`interpreter`] ([`harness`]).

pub mod analyzer;
pub mod fixtures;
pub mod harness;
pub mod interpreter;
pub mod ir;
pub mod profiles;
pub mod rewriter;
pub mod scalar;
pub mod tensor;

pub use scalar::Scalar;
pub use tensor::{DType, DenseTensor, TensorValue};

/// Element type of every arithmetic value in a graph.
pub type Real = f32;
/// Tensor of the graph arithmetic type.
pub type Tensor = DenseTensor<Real>;
/// Double-precision tensor, for oracles and accumulation-sensitive callers.
pub type Tensor64 = DenseTensor<f64>;
