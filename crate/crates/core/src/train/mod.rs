//! Optimisation loop, checkpoints and evaluation.

mod batch;
pub mod checkpoint;
pub mod eval;
mod optim;
mod trainer;

pub use batch::{batch_plan, mix_seed, Batch};
pub use checkpoint::Checkpoint;
pub use eval::{evaluate, write_report, EvalOutput, GroundTruthPredictor, ModelPredictor, Prediction, Predictor};
pub use optim::{AdamW, MomentState, StepStats};
pub use trainer::{Control, ModelSummary, Trainer};
