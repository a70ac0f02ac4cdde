//! Audio-aware dialogue policy: a next-system-act classifier that fuses
//! per-layer text and speech encoder activations with learned layer
//! weighting, multi-head attention and attention pooling.

pub mod autodiff;
pub mod corpus;
pub mod error;
pub mod gradcheck;
pub mod model;
pub mod ops;
pub mod store;
pub mod synth;
pub mod tensor;
pub mod train;

pub use autodiff::{Tape, Var};
pub use error::{Error, Result};
pub use tensor::{Scalar, Tensor};
