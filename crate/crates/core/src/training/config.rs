use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub l1: f64,
    pub perceptual: f64,
    pub gan: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            l1: 1.0,
            perceptual: 1.0,
            gan: 0.1,
        }
    }
}

/// Adversarial objective.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GanLoss {
    /// Non-saturating logistic loss on every logit.
    #[default]
    Standard,
    /// Relativistic average: real and fake logits are compared with the
    /// mean logit of the other set.
    Relativistic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub batch_size: usize,
    pub total_iterations: u64,
    pub loss_weights: LossWeights,
    pub gan_loss: GanLoss,
    pub ema_decay: f64,
    /// Edge of the square HR crops.
    pub patch_size: usize,
    pub seed: u64,
    pub checkpoint_interval: u64,
    /// Checkpoint holding `features.*` tensors that replace the built-in
    /// perceptual feature weights.
    pub feature_weights: Option<String>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-4,
            adam_beta1: 0.9,
            adam_beta2: 0.99,
            adam_eps: 1e-8,
            batch_size: 10,
            total_iterations: 3000,
            loss_weights: LossWeights::default(),
            gan_loss: GanLoss::Standard,
            ema_decay: 0.999,
            patch_size: 128,
            seed: 0,
            checkpoint_interval: 500,
            feature_weights: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("train.{m}")));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate {} must be positive", self.learning_rate));
        }
        for (name, b) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&b) {
                return bad(format!("{name} {b} outside [0, 1)"));
            }
        }
        if self.adam_eps.is_nan() || self.adam_eps <= 0.0 {
            return bad(format!("adam_eps {} must be positive", self.adam_eps));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        let w = &self.loss_weights;
        if [w.l1, w.perceptual, w.gan]
            .iter()
            .any(|x| !(*x >= 0.0 && x.is_finite()))
        {
            return bad("loss_weights must be finite and nonnegative".into());
        }
        if w.l1 + w.perceptual + w.gan <= 0.0 {
            return bad("loss_weights must not all be zero".into());
        }
        if !(0.0..=1.0).contains(&self.ema_decay) {
            return bad(format!("ema_decay {} outside [0, 1]", self.ema_decay));
        }
        if self.patch_size == 0 || !self.patch_size.is_multiple_of(8) {
            return bad(format!(
                "patch_size {} must be a positive multiple of 8",
                self.patch_size
            ));
        }
        if self.checkpoint_interval == 0 {
            return bad("checkpoint_interval must be at least 1".into());
        }
        Ok(())
    }
}
