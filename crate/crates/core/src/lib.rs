//! Semantic change detection on bi-temporal imagery with a visual state-space
//! encoder, spatio-frequency fusion and change-guided semantic decoders.

pub mod backbone;
pub mod cli;
pub mod config;
pub mod data;
pub mod decoder;
pub mod error;
pub mod fusion;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod train;

pub use error::{Result, ScdError};
pub use model::{ModelOutput, ScdModel};
