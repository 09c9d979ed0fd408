#[cfg(feature = "cli")]
pub mod cli;
pub mod distribution;
pub mod error;
pub mod expsum;
pub mod hecke;
pub mod modarith;
pub mod quantization;

pub use error::{Error, Result};
