//! Train small reinforcement-learning policies, compress them with gradual
//! magnitude pruning and 8-bit quantization-aware training, and run the
//! result on a sparse int8 inference engine.

pub mod envs;
pub mod error;
pub mod nn;
pub mod par;
pub mod pipeline;
pub mod prune;
pub mod quant;
pub mod rl;
pub mod seed;
pub mod sparse;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
