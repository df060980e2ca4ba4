//! Transformer translation models with training, decoding and checkpoint
//! tooling, built on `nmt-tensor`.

pub mod config;
pub mod decode;
mod error;
pub mod model;
pub mod toolbox;
pub mod train;
mod translator;

pub use error::{CoreError, Result};
pub use translator::Translator;
