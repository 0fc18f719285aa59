//! Hierarchical shifted-window transformer.

pub mod config;
pub mod layers;
pub mod model;
pub mod window;

pub use config::{StagePlan, SwinConfig, NUM_STAGES};
pub use model::{ForwardOutput, Stage, StageTrace, SwinModel};
pub use window::{build_shift_mask, window_partition, window_reverse, AttentionMask};
