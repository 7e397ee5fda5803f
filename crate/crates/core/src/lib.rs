//! Visual question answering as answer classification over a dual-extractor
//! visual embedding and a trainable text embedding, fused by Multiway
//! Transformer blocks.
//!
//! The crate is self-contained: [`tensor`] is a small reverse-mode autodiff
//! engine, and every model component, metric and the training harness is
//! built on top of it.

pub mod classifier;
pub mod data;
pub mod error;
pub mod feature_file;
pub mod harness;
pub mod jsonl;
pub mod layers;
pub mod metrics;
pub mod model;
pub mod multiway;
pub mod optim;
pub mod params;
pub mod stats;
pub mod tensor;
pub mod text;
pub mod vision;

pub use error::{Error, Result};
pub use tensor::{RngStream, Tape, Tensor, Var};
