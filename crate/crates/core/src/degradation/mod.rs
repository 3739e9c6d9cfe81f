//! Classical degradation primitives and the two-stage synthesis pipeline
//! that turns ground-truth HR images into training LR inputs.

mod config;
mod filter;
mod jpeg;
mod kernel;
mod noise;
mod pipeline;
mod resize;

pub use config::{
    BlurConfig, DegradationConfig, DegradationStageConfig, KernelFamilyWeights, NoiseConfig, NoiseTypeWeights,
    ResizeConfig, ResizeMethodWeights, SkipConfig,
};
pub use filter::apply_blur;
pub use jpeg::{chroma_table, jpeg_roundtrip, luma_table};
pub use kernel::{gen_gaussian_kernel, gen_sinc_kernel, BlurKernel};
pub use noise::{
    add_gaussian_noise, add_poisson_noise, apply_noise, gaussian_noise_field, poisson_noise_field, NoiseKind, LUMA,
    POISSON_LEVELS,
};
pub use pipeline::{degrade, replay, sample, BlurRecord, DegradationRecord, NoiseRecord, ResizeRecord, StageRecord};
pub use resize::{resize, ResizeMethod};
