use rayon::prelude::*;

use super::config::{GanLoss, TrainConfig};
use super::features::FeatureExtractor;
use super::losses::{gan_loss_d, gan_loss_g};
use super::optim::{adam_step, AdamHyper, AdamState, EmaState};
use crate::degradation::{degrade, DegradationConfig};
use crate::error::{Error, Result};
use crate::networks::{Discriminator, Generator};
use crate::rng::SeededRng;
use crate::tensor::{Tape, Tensor, Var};

/// Scalar losses of one iteration. `d` is 0 when the adversarial weight is 0
/// (the discriminator is not trained then).
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StepLosses {
    pub l1: f64,
    pub percep: f64,
    pub gan_g: f64,
    pub d: f64,
}

impl StepLosses {
    /// `iter, loss_l1, loss_percep, loss_gan_g, loss_d, seconds`, tab-separated.
    pub fn log_line(&self, iteration: u64, seconds: f64) -> String {
        format!(
            "{iteration}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{seconds:.3}",
            self.l1, self.percep, self.gan_g, self.d
        )
    }
}

/// Networks and optimizer state of a fine-tuning run.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub generator: Generator,
    pub discriminator: Discriminator,
    pub features: FeatureExtractor,
    pub gen_opt: AdamState,
    pub disc_opt: AdamState,
    pub ema: EmaState,
    pub config: TrainConfig,
    pub degradation: DegradationConfig,
    /// Completed iterations.
    pub iteration: u64,
}

fn scalar(tape: &Tape<f32>, v: Var) -> f64 {
    tape.value(v).data()[0] as f64
}

impl Trainer {
    pub fn new(
        generator: Generator,
        discriminator: Discriminator,
        features: FeatureExtractor,
        config: TrainConfig,
        degradation: DegradationConfig,
    ) -> Result<Self> {
        config.validate()?;
        degradation.validate()?;
        if degradation.output_scale != generator.config().scale {
            return Err(Error::Config(format!(
                "degradation output_scale {} differs from generator scale {}",
                degradation.output_scale,
                generator.config().scale
            )));
        }
        let gen_opt = AdamState::new(generator.params());
        let disc_opt = AdamState::new(discriminator.params());
        let ema = EmaState::new(generator.params(), config.ema_decay);
        Ok(Trainer {
            generator,
            discriminator,
            features,
            gen_opt,
            disc_opt,
            ema,
            config,
            degradation,
            iteration: 0,
        })
    }

    fn hyper(&self) -> AdamHyper {
        AdamHyper {
            lr: self.config.learning_rate,
            beta1: self.config.adam_beta1,
            beta2: self.config.adam_beta2,
            eps: self.config.adam_eps,
        }
    }

    /// Generator with the EMA weights substituted.
    pub fn ema_generator(&self) -> Generator {
        let mut g = self.generator.clone();
        for (p, s) in g.params_mut().iter_mut().zip(&self.ema.shadow) {
            p.value = s.clone();
        }
        g
    }

    /// One optimization step on an explicit `(lr, hr)` batch.
    pub fn step_on_pair(&mut self, lr: &Tensor<f32>, hr: &Tensor<f32>) -> Result<StepLosses> {
        let (mut losses, sr) = self.generator_step(lr, hr)?;
        if self.config.loss_weights.gan > 0.0 {
            losses.d = self.discriminator_step(hr, &sr)?;
        }
        self.iteration += 1;
        Ok(losses)
    }

    /// Generator update (Adam, then EMA). Returns the losses and the
    /// generator output before the update.
    pub fn generator_step(&mut self, lr: &Tensor<f32>, hr: &Tensor<f32>) -> Result<(StepLosses, Tensor<f32>)> {
        let w = self.config.loss_weights.clone();
        let kind = self.config.gan_loss;
        let mut losses = StepLosses::default();
        let mut tape = Tape::<f32>::new();
        let gb = self.generator.params().bind_f32(&mut tape, true);
        let lr_v = tape.leaf(lr.clone(), false);
        let hr_v = tape.leaf(hr.clone(), false);
        let sr = self.generator.forward(&mut tape, &gb, lr_v)?;
        if tape.shape(sr) != tape.shape(hr_v) {
            return Err(Error::shape(
                "train_step",
                format!("generator output {} vs HR batch {}", tape.shape(sr), tape.shape(hr_v)),
            ));
        }
        let l1 = tape.mean_abs_diff(sr, hr_v)?;
        losses.l1 = scalar(&tape, l1);
        let mut total = tape.scale(l1, w.l1);
        if w.perceptual > 0.0 {
            let fb = self.features.bind(&mut tape);
            let p = self.features.perceptual_loss(&mut tape, &fb, sr, hr_v)?;
            losses.percep = scalar(&tape, p);
            let term = tape.scale(p, w.perceptual);
            total = tape.add(total, term)?;
        }
        if w.gan > 0.0 {
            let db = self.discriminator.params().bind_f32(&mut tape, false);
            let fake = self.discriminator.forward(&mut tape, &db, sr, true)?;
            let real = match kind {
                GanLoss::Relativistic => Some(self.discriminator.forward(&mut tape, &db, hr_v, true)?),
                GanLoss::Standard => None,
            };
            let g = gan_loss_g(&mut tape, fake, real, kind)?;
            losses.gan_g = scalar(&tape, g);
            let term = tape.scale(g, w.gan);
            total = tape.add(total, term)?;
        }
        self.check_finite("loss_l1", losses.l1)?;
        self.check_finite("loss_percep", losses.percep)?;
        self.check_finite("loss_gan_g", losses.gan_g)?;
        let grads = tape.backward(total)?;
        let sr_value = tape.value(sr).clone();
        self.generator.params_mut().store_grads(&grads, &gb);
        drop(tape);
        let hyper = self.hyper();
        adam_step(self.generator.params_mut(), &mut self.gen_opt, &hyper)?;
        self.ema.update(self.generator.params())?;
        Ok((losses, sr_value))
    }

    /// Discriminator update on real `hr` and the detached generator output
    /// `sr`. Returns the discriminator loss.
    pub fn discriminator_step(&mut self, hr: &Tensor<f32>, sr: &Tensor<f32>) -> Result<f64> {
        let kind = self.config.gan_loss;
        let mut tape = Tape::<f32>::new();
        let db = self.discriminator.params().bind_f32(&mut tape, true);
        let real_in = tape.leaf(hr.clone(), false);
        let fake_in = tape.leaf(sr.clone(), false);
        let real = self.discriminator.forward(&mut tape, &db, real_in, true)?;
        let fake = self.discriminator.forward(&mut tape, &db, fake_in, true)?;
        let d = gan_loss_d(&mut tape, real, fake, kind)?;
        let loss = scalar(&tape, d);
        self.check_finite("loss_d", loss)?;
        let grads = tape.backward(d)?;
        self.discriminator.params_mut().store_grads(&grads, &db);
        drop(tape);
        let hyper = self.hyper();
        adam_step(self.discriminator.params_mut(), &mut self.disc_opt, &hyper)?;
        Ok(loss)
    }

    fn check_finite(&self, term: &str, v: f64) -> Result<()> {
        if v.is_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite(format!(
                "{term} = {v} at iteration {}",
                self.iteration + 1
            )))
        }
    }

    /// Degrades every HR image with its own child stream, then steps.
    pub fn train_step(&mut self, hr_batch: &Tensor<f32>, rng: &SeededRng) -> Result<StepLosses> {
        let lr = synthesize_lr(hr_batch, &self.degradation, rng)?;
        self.step_on_pair(&lr, hr_batch)
    }
}

/// LR counterparts of a batch; image `i` uses `rng.child(i)`.
pub fn synthesize_lr(hr_batch: &Tensor<f32>, config: &DegradationConfig, rng: &SeededRng) -> Result<Tensor<f32>> {
    let n = hr_batch.shape().n;
    let items: Vec<Tensor<f32>> = (0..n)
        .into_par_iter()
        .map(|i| degrade(&hr_batch.batch_item(i), config, &mut rng.child(i as u64)).map(|(lr, _)| lr))
        .collect::<Result<_>>()?;
    Tensor::stack(&items)
}
