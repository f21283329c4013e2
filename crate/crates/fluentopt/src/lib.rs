//! Fluent context modification against micro language models: gradient-guided
//! discrete token optimization (GCG and the EPO family), sparse-autoencoder
//! and logit-difference objectives, masked-denoiser inpainting, and a
//! reproducible benchmark harness.

pub mod artifact;
pub mod bench;
pub mod cli;
pub mod denoiser;
pub mod error;
pub mod lm;
pub mod mat;
pub mod objective;
pub mod optimizer;
pub mod oracle;
pub mod report;
pub mod runconfig;
pub mod rng;
pub mod sae;
pub mod transformer;
pub mod vocab;

pub use error::{Error, Result};
pub use lm::{LMConfig, LMParams};
pub use vocab::{TokenSeq, Vocab};
