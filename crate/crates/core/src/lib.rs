//! Spectral band permutation prediction.
//!
//! A spectrum is cut into equal contiguous segments, the segments are
//! shuffled, and an encoder learns to recover the original order. The
//! segment count and the permutation difficulty follow a curriculum. The
//! pretrained encoder is then fine-tuned for scalar regression.

pub mod curriculum;
pub mod data;
pub mod error;
pub mod model;
pub mod permutation;
pub mod scalar;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Training precision.
pub type Array32 = tensor::Array<f32>;
/// Gradient-check precision.
pub type Array64 = tensor::Array<f64>;
pub type Tape32 = tensor::Tape<f32>;
pub type Tape64 = tensor::Tape<f64>;
pub type Model32 = model::Model<f32>;
pub type Model64 = model::Model<f64>;

/// Seeded random stream used everywhere randomness is needed.
pub type SeededRng = rand_chacha::ChaCha8Rng;
