//! GAN fine-tuning: losses, Adam, EMA, the training step and the
//! checkpointed fine-tuning loop.

mod config;
mod features;
mod finetune;
mod losses;
mod optim;
mod state;
mod trainer;

pub use config::{GanLoss, LossWeights, TrainConfig};
pub use features::{FeatureExtractor, FEATURE_LAYERS, FEATURE_SEED, FEATURE_TAPS};
pub use finetune::{
    augment_crop, build_trainer, finetune, load_training_images, plan_schedule, sample_batch, FinetuneRequest,
    RunSummary, Skipped,
};
pub use losses::{gan_loss_d, gan_loss_g};
pub use optim::{adam_step, adam_update, ema_update, AdamHyper, AdamState, EmaState};
pub use state::{
    ema_name, inference_generator, LoadReport, META_DISCRIMINATOR_CONFIG, META_GENERATOR_CONFIG, META_ITERATION,
    META_SEED,
};
pub use trainer::{synthesize_lr, StepLosses, Trainer};
