use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use super::features::FeatureExtractor;
use super::trainer::{StepLosses, Trainer};
use crate::config::ToolkitConfig;
use crate::error::{Error, Result};
use crate::io::{list_images, read_image, Checkpoint};
use crate::networks::{Discriminator, Generator};
use crate::rng::SeededRng;
use crate::tensor::{Shape, Tensor};

/// `round(epochs · ceil(num_images / batch_size))`.
pub fn plan_schedule(num_images: usize, batch_size: usize, epochs: f64) -> Result<u64> {
    if num_images == 0 || batch_size == 0 || !(epochs > 0.0 && epochs.is_finite()) {
        return Err(Error::invalid(format!(
            "schedule needs positive inputs, got {num_images} images, batch {batch_size}, {epochs} epochs"
        )));
    }
    let per_epoch = num_images.div_ceil(batch_size) as f64;
    Ok((epochs * per_epoch).round() as u64)
}

/// Fresh trainer for `config`, with external feature weights if configured.
pub fn build_trainer(config: &ToolkitConfig) -> Result<Trainer> {
    config.validate()?;
    let features = match &config.train.feature_weights {
        Some(path) => FeatureExtractor::from_checkpoint(&Checkpoint::load(Path::new(path))?)?,
        None => FeatureExtractor::new()?,
    };
    Trainer::new(
        Generator::new(config.generator.clone())?,
        Discriminator::new(config.discriminator.clone())?,
        features,
        config.train.clone(),
        config.degradation.clone(),
    )
}

/// Files left out of training, with the reason.
pub type Skipped = Vec<(PathBuf, String)>;

/// Training images of at least `patch×patch`, in file-name order.
pub fn load_training_images(dir: &Path, patch: usize) -> Result<(Vec<Tensor<f32>>, Skipped)> {
    let mut images = Vec::new();
    let mut skipped = Vec::new();
    for path in list_images(dir)? {
        match read_image(&path) {
            Ok(img) if img.shape().h >= patch && img.shape().w >= patch => images.push(img),
            Ok(img) => {
                let why = format!(
                    "{}x{} is smaller than the {patch}px patch",
                    img.shape().h,
                    img.shape().w
                );
                log::warn!("skipping {}: {why}", path.display());
                skipped.push((path, why));
            }
            Err(e) => {
                log::warn!("skipping {}: {e}", path.display());
                skipped.push((path, e.to_string()));
            }
        }
    }
    if images.is_empty() {
        return Err(Error::invalid(format!(
            "no usable training images in {}",
            dir.display()
        )));
    }
    Ok((images, skipped))
}

/// Square crop of `img` at `(y0, x0)`, rotated by `quarter_turns`·90°
/// counter-clockwise after an optional horizontal flip.
pub fn augment_crop(
    img: &Tensor<f32>,
    y0: usize,
    x0: usize,
    patch: usize,
    flip: bool,
    quarter_turns: u8,
) -> Result<Tensor<f32>> {
    let crop = img.crop(y0, x0, patch, patch)?;
    let last = patch - 1;
    Ok(Tensor::from_fn(
        Shape::new(1, crop.shape().c, patch, patch),
        |_, c, y, x| {
            let (sy, sx) = match quarter_turns % 4 {
                0 => (y, x),
                1 => (x, last - y),
                2 => (last - y, last - x),
                _ => (last - x, y),
            };
            let sx = if flip { last - sx } else { sx };
            crop.at(0, c, sy, sx)
        },
    ))
}

/// Draws `batch` augmented crops (images chosen with replacement).
pub fn sample_batch(images: &[Tensor<f32>], patch: usize, batch: usize, rng: &mut SeededRng) -> Result<Tensor<f32>> {
    let mut items = Vec::with_capacity(batch);
    for _ in 0..batch {
        let img = &images[rng.below(images.len() as u64) as usize];
        let s = img.shape();
        let y0 = rng.below((s.h - patch + 1) as u64) as usize;
        let x0 = rng.below((s.w - patch + 1) as u64) as usize;
        let flip = rng.bernoulli(0.5);
        let turns = rng.below(4) as u8;
        items.push(augment_crop(img, y0, x0, patch, flip, turns)?);
    }
    Tensor::stack(&items)
}

pub struct FinetuneRequest<'a> {
    /// Starting weights; `None` trains from the configured initialization.
    pub checkpoint_in: Option<&'a Path>,
    pub dataset_dir: &'a Path,
    pub checkpoint_out: &'a Path,
    /// Continue the stored iteration counter instead of starting at 0.
    pub resume: bool,
    pub config: &'a ToolkitConfig,
}

#[derive(Clone, Debug, Default)]
pub struct RunSummary {
    pub start_iteration: u64,
    pub end_iteration: u64,
    pub iterations_run: u64,
    pub images: usize,
    pub skipped_images: usize,
    pub checkpoints_written: usize,
    pub last_losses: Option<StepLosses>,
    pub seconds: f64,
}

/// Runs `train_step` until `total_iterations`, writing a log line per
/// iteration and a checkpoint every `checkpoint_interval` iterations and at
/// the end. Iteration `i` draws its batch from `SeededRng::new(seed).child(i)`,
/// so a resumed run continues exactly where the saved one stopped.
pub fn finetune(req: &FinetuneRequest<'_>, log: &mut dyn Write) -> Result<RunSummary> {
    let started = Instant::now();
    let cfg = &req.config.train;
    let mut trainer = build_trainer(req.config)?;
    let scale = req.config.generator.scale;
    if !(cfg.patch_size / scale).is_multiple_of(req.config.generator.unshuffle_factor())
        || !cfg.patch_size.is_multiple_of(scale)
    {
        return Err(Error::Config(format!(
            "train.patch_size {} does not give a valid LR patch for scale {scale}",
            cfg.patch_size
        )));
    }

    if req.resume && req.checkpoint_in.is_none() {
        return Err(Error::invalid("resume needs an input checkpoint"));
    }
    if let Some(path) = req.checkpoint_in {
        let ckpt = Checkpoint::load(path)?;
        let report = trainer.load_checkpoint(&ckpt)?;
        if !report.discriminator_loaded {
            log::warn!(
                "{} has no discriminator tensors; starting from a fresh discriminator",
                path.display()
            );
        }
        for name in &report.unused {
            log::warn!("{}: tensor {name} is not used by the model", path.display());
        }
        if req.resume {
            trainer.iteration = report.stored_iteration;
            if report.stored_seed.is_some_and(|s| s != cfg.seed) {
                log::warn!(
                    "resuming with seed {} but the checkpoint was written with {:?}",
                    cfg.seed,
                    report.stored_seed
                );
            }
        }
    }

    let (images, skipped) = load_training_images(req.dataset_dir, cfg.patch_size)?;
    let root = SeededRng::new(cfg.seed);
    let mut summary = RunSummary {
        start_iteration: trainer.iteration,
        images: images.len(),
        skipped_images: skipped.len(),
        ..RunSummary::default()
    };
    let mut saved_at = None;
    while trainer.iteration < cfg.total_iterations {
        let t0 = Instant::now();
        let mut rng = root.child(trainer.iteration);
        let batch = sample_batch(&images, cfg.patch_size, cfg.batch_size, &mut rng)?;
        let losses = trainer.train_step(&batch, &rng)?;
        writeln!(
            log,
            "{}",
            losses.log_line(trainer.iteration, t0.elapsed().as_secs_f64())
        )
        .map_err(|e| Error::io("<log>", e))?;
        summary.iterations_run += 1;
        summary.last_losses = Some(losses);
        if trainer.iteration % cfg.checkpoint_interval == 0 {
            trainer.to_checkpoint()?.save(req.checkpoint_out)?;
            summary.checkpoints_written += 1;
            saved_at = Some(trainer.iteration);
        }
    }
    if saved_at != Some(trainer.iteration) {
        trainer.to_checkpoint()?.save(req.checkpoint_out)?;
        summary.checkpoints_written += 1;
    }
    summary.end_iteration = trainer.iteration;
    summary.seconds = started.elapsed().as_secs_f64();
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_examples() {
        assert_eq!(plan_schedule(397, 10, 75.0).unwrap(), 3000);
        assert_eq!(plan_schedule(3310, 10, 50.0).unwrap(), 16550);
        assert_eq!(plan_schedule(10, 10, 1.0).unwrap(), 1);
        assert!(plan_schedule(0, 10, 1.0).is_err());
    }

    #[test]
    fn augmentation_is_a_permutation() {
        let img = Tensor::from_fn([1, 1, 6, 6], |_, _, y, x| (y * 6 + x) as f32);
        let mut base: Vec<f32> = img.crop(1, 2, 4, 4).unwrap().data().to_vec();
        base.sort_by(f32::total_cmp);
        for turns in 0..4 {
            for flip in [false, true] {
                let a = augment_crop(&img, 1, 2, 4, flip, turns).unwrap();
                let mut v = a.data().to_vec();
                v.sort_by(f32::total_cmp);
                assert_eq!(v, base);
            }
        }
        let r = augment_crop(&img, 0, 0, 2, false, 1).unwrap();
        // [[0,1],[6,7]] rotated a quarter turn counter-clockwise
        assert_eq!(r.data(), &[1.0, 7.0, 0.0, 6.0]);
    }
}
