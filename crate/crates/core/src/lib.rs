//! Semi-supervised encoder-decoder text generation at desk scale.
//!
//! The crate provides a small reverse-mode autodiff engine, a bidirectional
//! LSTM seq2seq model with bilinear attention, an interpolated trigram
//! language model used as a reward function, word-level noise for denoising
//! auto-encoder training, and a three-route joint training loop that mixes
//! supervised, denoising, and policy-gradient updates over shared
//! parameters.

pub mod data;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod lm;
pub mod model;
pub mod noise;
pub mod tensor;
pub mod training;
pub mod util;

pub use error::{Error, Result};
pub use tensor::{ParamId, ParamStore, Tape, Tensor};
