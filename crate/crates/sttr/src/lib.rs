//! Fine-grained image style transfer with a token-matching transformer.
//!
//! The pipeline: two small convolutional backbones turn a content and a style
//! image into token sequences, a transformer encoder/decoder matches every
//! content token against the style tokens, and a convolutional decoder paints
//! the matched tokens back into an image. Training compares the result
//! against both inputs through a frozen random-weight feature network.
//!
//! Everything runs on the crate's own `f32` tensor core ([`tensor`]) with
//! reverse-mode differentiation; there is no GPU path and no external ML
//! dependency. Start with the `examples/` directory, which exercises each
//! layer of the crate on images small enough for a laptop CPU.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod decoder;
pub mod error;
pub mod features;
pub mod image;
pub mod init;
pub mod loss;
pub mod model;
pub mod tensor;
pub mod train;
pub mod transformer;

pub use config::RunConfig;
pub use error::{Error, Result};
pub use tensor::{Tape, Tensor};
