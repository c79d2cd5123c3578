//! Quantize model tensors to INT8, measure how much information the quantized
//! bytes carry, and entropy-code them into a verifiable container.
//!
//! The pipeline is: [`tensorio`] (load / synthesize float tensors) →
//! [`quant`] (tensor-wise, channel-wise or smoothed INT8) → [`entropy`]
//! (order-0 statistics) → [`codecs`] (Huffman, tANS, Zstandard adapter) →
//! [`container`] (packed archive) → [`bench`] (ratio and load-time reports).

pub mod bench;
pub mod cli;
pub mod codecs;
pub mod container;
pub mod entropy;
mod error;
pub mod fsutil;
pub mod quant;
pub mod tensorio;

pub use error::{Error, Result};
