//! PSNR/SSIM metrics and the fixed evaluation protocols.

mod metrics;
mod protocol;
mod report;

use std::path::Path;

use rayon::prelude::*;

pub use metrics::{psnr, ssim, to_8bit_scale, SSIM_SIGMA, SSIM_WINDOW};
pub use protocol::{
    drive_protocol, nih_protocol, CustomProtocolConfig, EvalProtocol, EvaluationConfig, GtResize, DEFAULT_BLUR_KERNEL,
    DEFAULT_BLUR_SIGMA,
};
pub use report::{format_psnr, EvalReport, ImageScore};

use crate::degradation::{resize, ResizeMethod};
use crate::error::{Error, Result};
use crate::io::{list_images, read_image};
use crate::networks::Generator;
use crate::tensor::{Shape, Tensor};

/// Anything that maps an LR image to an image `scale()` times larger.
pub trait Upscaler: Sync {
    fn scale(&self) -> usize;
    fn upscale(&self, lr: &Tensor<f32>) -> Result<Tensor<f32>>;
}

/// Plain bicubic interpolation; the comparison baseline.
#[derive(Clone, Copy, Debug)]
pub struct BicubicUpscaler {
    pub scale: usize,
}

impl Upscaler for BicubicUpscaler {
    fn scale(&self) -> usize {
        self.scale
    }

    fn upscale(&self, lr: &Tensor<f32>) -> Result<Tensor<f32>> {
        let s = lr.shape();
        resize(lr, s.h * self.scale, s.w * self.scale, ResizeMethod::Bicubic)
    }
}

/// Generator inference with edge padding for sides the network cannot take
/// directly, optionally tiled.
#[derive(Clone, Debug)]
pub struct GeneratorUpscaler {
    pub generator: Generator,
    pub tile: usize,
    pub pad: usize,
}

impl GeneratorUpscaler {
    pub fn new(generator: Generator, config: &EvaluationConfig) -> Self {
        GeneratorUpscaler {
            generator,
            tile: config.tile_size,
            pad: config.tile_pad,
        }
    }
}

fn pad_edge(t: &Tensor<f32>, h: usize, w: usize) -> Tensor<f32> {
    let s = t.shape();
    Tensor::from_fn(Shape::new(s.n, s.c, h, w), |n, c, y, x| {
        t.at(n, c, y.min(s.h - 1), x.min(s.w - 1))
    })
}

impl Upscaler for GeneratorUpscaler {
    fn scale(&self) -> usize {
        self.generator.config().scale
    }

    fn upscale(&self, lr: &Tensor<f32>) -> Result<Tensor<f32>> {
        let s = lr.shape();
        let f = self.generator.config().unshuffle_factor();
        let (h, w) = (s.h.div_ceil(f) * f, s.w.div_ceil(f) * f);
        let round = |v: usize| v.div_ceil(f) * f;
        let (tile, pad) = (round(self.tile), round(self.pad));
        if (h, w) == (s.h, s.w) {
            return self.generator.infer_tiled(lr, tile, pad);
        }
        let out = self.generator.infer_tiled(&pad_edge(lr, h, w), tile, pad)?;
        let k = self.scale();
        out.crop(0, 0, s.h * k, s.w * k)
    }
}

/// Scores `upscaler` on every PNG in `gt_dir`. `model` labels the report.
/// Unreadable images are skipped and listed; an empty directory is an error.
pub fn run_protocol(
    upscaler: &dyn Upscaler,
    model: &str,
    ema: Option<bool>,
    gt_dir: &Path,
    protocol: &EvalProtocol,
) -> Result<EvalReport> {
    protocol.validate()?;
    if upscaler.scale() != protocol.upscale {
        return Err(Error::Config(format!(
            "model scale {} does not match protocol {} (x{})",
            upscaler.scale(),
            protocol.name,
            protocol.upscale
        )));
    }
    let paths = list_images(gt_dir)?;
    if paths.is_empty() {
        return Err(Error::invalid(format!("no PNG images in {}", gt_dir.display())));
    }
    let results: Vec<(String, Result<ImageScore>)> = paths
        .par_iter()
        .map(|path| {
            let name = path
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default();
            let score = read_image(path).and_then(|img| {
                let gt = protocol.ground_truth(&img)?;
                let lr = protocol.degrade(&gt)?;
                let sr = upscaler.upscale(&lr)?;
                let (a, b) = (to_8bit_scale(&sr), to_8bit_scale(&gt));
                Ok(ImageScore {
                    name: name.clone(),
                    psnr: psnr(&a, &b, 255.0)?,
                    ssim: ssim(&a, &b, 255.0)?,
                })
            });
            (name, score)
        })
        .collect();
    let mut scores = Vec::new();
    let mut skipped = Vec::new();
    for (name, r) in results {
        match r {
            Ok(s) => scores.push(s),
            Err(e) => {
                log::warn!("skipping {name}: {e}");
                skipped.push((name, e.to_string()));
            }
        }
    }
    if scores.is_empty() {
        return Err(Error::invalid(format!(
            "no image in {} could be evaluated",
            gt_dir.display()
        )));
    }
    Ok(EvalReport::new(
        protocol.clone(),
        model.to_string(),
        ema,
        scores,
        skipped,
    ))
}
