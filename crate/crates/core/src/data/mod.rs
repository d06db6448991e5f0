//! Bi-temporal samples: disk datasets, augmentation and a synthetic generator.

pub mod augment;
pub mod loader;
pub mod palette;
mod sample;
pub mod synth;

pub use augment::{augment, Geometric, Photometric};
pub use loader::{open_dataset, qa_report, resolve_palette, DiskDataset, InMemory, SampleSource};
pub use palette::Palette;
pub use sample::BiTemporalSample;
pub use synth::{generate, GenConfig, Generated, TransitionTable};
