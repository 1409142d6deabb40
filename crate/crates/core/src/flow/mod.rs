//! Conditional flow matching over normalised log-Mel spectrograms.

pub mod backbone;
pub mod condition;
pub mod loss;
pub mod mask;
pub mod norm;
pub mod path;
pub mod sampler;
pub mod train;

pub use backbone::{Backbone, BackboneConfig};
pub use condition::{assemble_condition, ConditionBundle};
pub use loss::masked_cfm_loss;
pub use mask::{build_infilling_masks, random_span, InfillingMask, MaskRanges};
pub use norm::NormStats;
pub use path::{interpolate, interpolate_batch, sample_time, velocity_target};
pub use sampler::{euler_integrate, euler_sample, BackboneField, VelocityField};
pub use train::{
    enhance, held_out_loss, inference_condition, prepare_example, train_flow, train_step, Example, FlowModel,
    FmConfig, StepLog, Variant,
};
