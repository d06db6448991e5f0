//! Visual state-space encoder.

pub mod encoder;
pub mod scan;
pub mod vss;

pub use encoder::{stage_stride, Encoder, FeaturePyramid};
pub use vss::VssBlock;
