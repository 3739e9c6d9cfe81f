//! Two-stage degradation. Sampling and execution are separate: [`sample`]
//! draws every random quantity into a [`DegradationRecord`] and [`replay`]
//! runs the deterministic image operations it describes.

use serde::{Deserialize, Serialize};

use super::config::{DegradationConfig, DegradationStageConfig, ResizeMethodWeights};
use super::filter::apply_blur;
use super::jpeg::jpeg_roundtrip;
use super::kernel::{gen_gaussian_kernel, gen_sinc_kernel, BlurKernel};
use super::noise::{apply_noise, NoiseKind};
use super::resize::{resize, ResizeMethod};
use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "family")]
pub enum BlurRecord {
    Gaussian {
        size: usize,
        sigma_x: f64,
        sigma_y: f64,
        theta: f64,
    },
    Sinc {
        size: usize,
        cutoff: f64,
    },
}

impl BlurRecord {
    pub fn kernel(&self) -> Result<BlurKernel> {
        match *self {
            BlurRecord::Gaussian {
                size,
                sigma_x,
                sigma_y,
                theta,
            } => gen_gaussian_kernel(size, sigma_x, sigma_y, theta),
            BlurRecord::Sinc { size, cutoff } => gen_sinc_kernel(size, cutoff),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResizeRecord {
    pub method: ResizeMethod,
    pub height: usize,
    pub width: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseRecord {
    #[serde(flatten)]
    pub kind: NoiseKind,
    pub gray: bool,
    /// Seed of the stream the noise field is drawn from.
    pub seed: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub blur: Option<BlurRecord>,
    pub resize: Option<ResizeRecord>,
    pub noise: Option<NoiseRecord>,
    pub jpeg_quality: Option<u8>,
}

/// Every sampled quantity of one degradation run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DegradationRecord {
    pub input: [usize; 2],
    pub stage1: StageRecord,
    pub stage2: StageRecord,
    pub final_resize: ResizeRecord,
    pub final_sinc: Option<BlurRecord>,
}

impl DegradationRecord {
    /// Single-line JSON for audit logs.
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("record serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::invalid(format!("degradation record: {e}")))
    }
}

/// Largest odd kernel whose reflect padding fits an `h×w` image.
fn max_kernel(h: usize, w: usize) -> usize {
    2 * h.min(w) - 1
}

fn pick_size(sizes: &[usize], min: usize, cap: usize, rng: &mut SeededRng) -> Option<usize> {
    let fit: Vec<usize> = sizes.iter().copied().filter(|&k| k >= min && k <= cap).collect();
    if fit.is_empty() {
        return None;
    }
    Some(fit[rng.below(fit.len() as u64) as usize])
}

fn sample_sinc(sizes: &[usize], range: [f64; 2], dims: (usize, usize), rng: &mut SeededRng) -> Option<BlurRecord> {
    let size = pick_size(sizes, 7, max_kernel(dims.0, dims.1), rng)?;
    Some(BlurRecord::Sinc {
        size,
        cutoff: rng.uniform_in(range[0], range[1]),
    })
}

fn sample_method(w: &ResizeMethodWeights, rng: &mut SeededRng) -> ResizeMethod {
    const ORDER: [ResizeMethod; 4] = [
        ResizeMethod::Nearest,
        ResizeMethod::Bilinear,
        ResizeMethod::Bicubic,
        ResizeMethod::Area,
    ];
    ORDER[rng.weighted_index(&[w.nearest, w.bilinear, w.bicubic, w.area])]
}

fn scaled(len: usize, s: f64) -> usize {
    ((len as f64 * s).round() as usize).max(1)
}

fn sample_stage(
    cfg: &DegradationStageConfig,
    dims: &mut (usize, usize),
    reference: (usize, usize),
    rng: &mut SeededRng,
) -> StageRecord {
    let mut rec = StageRecord::default();
    if !rng.bernoulli(cfg.skip.blur) {
        let b = &cfg.blur;
        let f = &b.family_weights;
        let cap = max_kernel(dims.0, dims.1);
        rec.blur = match rng.weighted_index(&[f.isotropic, f.anisotropic, f.sinc]) {
            2 => sample_sinc(&b.kernel_sizes, b.sinc_cutoff_range, *dims, rng),
            family => pick_size(&b.kernel_sizes, 3, cap, rng).map(|size| {
                let [lo, hi] = b.sigma_range;
                if family == 0 {
                    let sigma = rng.uniform_in(lo, hi);
                    BlurRecord::Gaussian {
                        size,
                        sigma_x: sigma,
                        sigma_y: sigma,
                        theta: 0.0,
                    }
                } else {
                    BlurRecord::Gaussian {
                        size,
                        sigma_x: rng.uniform_in(lo, hi),
                        sigma_y: rng.uniform_in(lo, hi),
                        theta: rng.uniform_in(b.rotation_range[0], b.rotation_range[1]),
                    }
                }
            }),
        };
    }
    if !rng.bernoulli(cfg.skip.resize) {
        let [lo, hi] = cfg.resize.scale_range;
        let s = rng.uniform_in(lo, hi);
        let method = sample_method(&cfg.resize.method_weights, rng);
        *dims = (scaled(reference.0, s), scaled(reference.1, s));
        rec.resize = Some(ResizeRecord {
            method,
            height: dims.0,
            width: dims.1,
        });
    }
    if !rng.bernoulli(cfg.skip.noise) {
        let n = &cfg.noise;
        let kind = if rng.weighted_index(&[n.type_weights.gaussian, n.type_weights.poisson]) == 0 {
            NoiseKind::Gaussian {
                sigma: rng.uniform_in(n.gaussian_sigma_range[0], n.gaussian_sigma_range[1]),
            }
        } else {
            NoiseKind::Poisson {
                scale: rng.uniform_in(n.poisson_scale_range[0], n.poisson_scale_range[1]),
            }
        };
        rec.noise = Some(NoiseRecord {
            kind,
            gray: rng.bernoulli(n.gray_probability),
            seed: rng.next_u64(),
        });
    }
    if !rng.bernoulli(cfg.skip.jpeg) {
        let [lo, hi] = cfg.jpeg_quality;
        rec.jpeg_quality = Some(lo + rng.below((hi - lo) as u64 + 1) as u8);
    }
    rec
}

fn check_divisible(h: usize, w: usize, scale: usize) -> Result<()> {
    if !h.is_multiple_of(scale) || !w.is_multiple_of(scale) {
        return Err(Error::shape(
            "degrade",
            format!("input {h}x{w} is not divisible by output scale {scale}"),
        ));
    }
    Ok(())
}

/// Draws a complete record for an `h×w` input.
pub fn sample(config: &DegradationConfig, h: usize, w: usize, rng: &mut SeededRng) -> Result<DegradationRecord> {
    config.validate()?;
    let scale = config.output_scale;
    check_divisible(h, w, scale)?;
    let target = (h / scale, w / scale);
    let mut dims = (h, w);
    let stage1 = sample_stage(&config.stage1, &mut dims, (h, w), rng);
    let mut stage2 = sample_stage(&config.stage2, &mut dims, target, rng);
    // The second JPEG runs after the final resize and sinc.
    let jpeg = stage2.jpeg_quality.take();
    let final_resize = ResizeRecord {
        method: sample_method(&config.stage2.resize.method_weights, rng),
        height: target.0,
        width: target.1,
    };
    let final_sinc = if rng.bernoulli(config.final_sinc_probability) {
        sample_sinc(
            &config.stage2.blur.kernel_sizes,
            config.final_sinc_cutoff_range,
            target,
            rng,
        )
    } else {
        None
    };
    stage2.jpeg_quality = jpeg;
    Ok(DegradationRecord {
        input: [h, w],
        stage1,
        stage2,
        final_resize,
        final_sinc,
    })
}

fn blur(img: Tensor<f32>, rec: &BlurRecord) -> Result<Tensor<f32>> {
    Ok(apply_blur(&img, &rec.kernel()?)?.clamp(0.0, 1.0))
}

fn run_front(img: Tensor<f32>, rec: &StageRecord) -> Result<Tensor<f32>> {
    let mut x = img;
    if let Some(b) = &rec.blur {
        x = blur(x, b)?;
    }
    if let Some(r) = &rec.resize {
        x = resize(&x, r.height, r.width, r.method)?;
    }
    if let Some(n) = &rec.noise {
        x = apply_noise(&x, n.kind, n.gray, n.seed)?;
    }
    Ok(x)
}

/// Re-executes a record on `img` (`N×C×H×W`, the same parameters for every
/// image in the batch).
pub fn replay(img: &Tensor<f32>, record: &DegradationRecord) -> Result<Tensor<f32>> {
    let s = img.shape();
    if [s.h, s.w] != record.input {
        return Err(Error::shape(
            "degrade",
            format!(
                "record was sampled for {}x{}, image is {}x{}",
                record.input[0], record.input[1], s.h, s.w
            ),
        ));
    }
    let mut x = run_front(img.clone(), &record.stage1)?;
    if let Some(q) = record.stage1.jpeg_quality {
        x = jpeg_roundtrip(&x, q)?;
    }
    x = run_front(x, &record.stage2)?;
    let r = &record.final_resize;
    x = resize(&x, r.height, r.width, r.method)?;
    if let Some(b) = &record.final_sinc {
        x = blur(x, b)?;
    }
    if let Some(q) = record.stage2.jpeg_quality {
        x = jpeg_roundtrip(&x, q)?;
    }
    Ok(x)
}

/// Samples and applies a degradation; returns the LR image and its record.
pub fn degrade(
    img_hr: &Tensor<f32>,
    config: &DegradationConfig,
    rng: &mut SeededRng,
) -> Result<(Tensor<f32>, DegradationRecord)> {
    let s = img_hr.shape();
    let record = sample(config, s.h, s.w, rng)?;
    let lr = replay(img_hr, &record)?;
    Ok((lr, record))
}
