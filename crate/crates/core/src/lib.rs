//! Hallucination detection for large vision-language models from the
//! cross-modal attention of their first generated token.

pub mod cli;
pub mod dataset;
pub mod error;
pub mod metrics;
pub mod mlp;
pub mod pipeline;
pub mod rng;
pub mod synthgen;
pub mod tensor;

pub use error::{Error, Result};
