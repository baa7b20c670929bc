//! Paraphrase-trained sentence embeddings.
//!
//! A GRU encoder compresses a sentence into a fixed-width vector, and two
//! independent decoders are trained from that vector: one regenerates the input
//! sentence, the other generates a paraphrase of it. The crate also ships the
//! evaluation side: P-coherence (mean within-paraphrase-set cosine) and an STS
//! similarity-regression head scored by Pearson correlation.
//!
//! Everything numeric runs on the small reverse-mode tape in [`numkit`].

pub mod cli;
pub mod corpus;
mod error;
pub mod metrics;
pub mod model;
pub mod numkit;
pub mod sts;
pub mod train;

pub use error::{Error, Result};
