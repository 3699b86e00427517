//! Numerical foundation: dense tensors, a reverse-mode autodiff tape, the
//! Adam optimizer with parameter storage and checkpointing, a deterministic
//! counter-based RNG, and finite-difference gradient checking utilities.

pub mod gradcheck;
pub mod rng;
pub mod store;
pub mod tape;
pub mod tensor;

pub use rng::RngState;
pub use store::{AdamConfig, Param, ParamKind, ParameterStore};
pub use tape::{LstmParams, Tape, ValueId};
pub use tensor::Tensor;

/// Scalar element type. 64-bit by default so gradient checks and the
/// acceptance tolerances hold; the `f32` feature switches training to
/// single precision.
#[cfg(not(feature = "f32"))]
pub type Real = f64;
#[cfg(feature = "f32")]
pub type Real = f32;
