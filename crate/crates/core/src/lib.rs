pub mod cascade;
pub mod cli;
pub mod dataio;
pub mod error;
pub mod eval;
pub mod landmarks;
pub mod mlp;
pub mod ppg;
pub mod stats;

pub use error::{Error, Result};
