//! Fixed, sample-free degradations used to score a model against ground truth.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::degradation::{apply_blur, gen_gaussian_kernel, resize, ResizeMethod};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Resize applied to every ground-truth image before degradation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GtResize {
    pub height: usize,
    pub width: usize,
    pub method: ResizeMethod,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalProtocol {
    pub name: String,
    pub gt_resize: Option<GtResize>,
    pub down_factor: usize,
    pub down_method: ResizeMethod,
    pub blur_sigma: f64,
    pub blur_kernel_size: usize,
    pub upscale: usize,
}

/// Retinal setting: 512×512 Lanczos ground truth, ×2 bicubic down, then blur.
pub fn drive_protocol() -> EvalProtocol {
    EvalProtocol {
        name: "drive".into(),
        gt_resize: Some(GtResize {
            height: 512,
            width: 512,
            method: ResizeMethod::Lanczos,
        }),
        down_factor: 2,
        down_method: ResizeMethod::Bicubic,
        blur_sigma: DEFAULT_BLUR_SIGMA,
        blur_kernel_size: DEFAULT_BLUR_KERNEL,
        upscale: 2,
    }
}

/// Chest X-ray setting: native resolution, ×4 bicubic down, then blur.
pub fn nih_protocol() -> EvalProtocol {
    EvalProtocol {
        name: "nih".into(),
        gt_resize: None,
        down_factor: 4,
        down_method: ResizeMethod::Bicubic,
        blur_sigma: DEFAULT_BLUR_SIGMA,
        blur_kernel_size: DEFAULT_BLUR_KERNEL,
        upscale: 4,
    }
}

pub const DEFAULT_BLUR_SIGMA: f64 = 1.0;
pub const DEFAULT_BLUR_KERNEL: usize = 7;

/// Images with values already on the 8-bit grid stay there.
pub(crate) fn quantize(t: &Tensor<f32>) -> Tensor<f32> {
    t.map(|v| (v.clamp(0.0, 1.0) * 255.0).round() / 255.0)
}

impl EvalProtocol {
    pub fn validate(&self) -> Result<()> {
        if self.down_factor == 0 {
            return Err(Error::Config("protocol down_factor must be at least 1".into()));
        }
        if self.upscale != self.down_factor {
            return Err(Error::Config(format!(
                "protocol upscale {} differs from down_factor {}",
                self.upscale, self.down_factor
            )));
        }
        if self.blur_kernel_size.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "blur_kernel_size must be odd, got {}",
                self.blur_kernel_size
            )));
        }
        if !(self.blur_sigma >= 0.0 && self.blur_sigma.is_finite()) {
            return Err(Error::Config(format!(
                "blur_sigma must be finite and >= 0, got {}",
                self.blur_sigma
            )));
        }
        if let Some(g) = self.gt_resize {
            if g.height == 0 || g.width == 0 {
                return Err(Error::Config("gt_resize dimensions must be positive".into()));
            }
        }
        Ok(())
    }

    pub fn with_blur(mut self, sigma: f64, kernel_size: usize) -> Self {
        self.blur_sigma = sigma;
        self.blur_kernel_size = kernel_size;
        self
    }

    /// Ground truth for `img`: optional resize, crop to a multiple of
    /// `down_factor`, 8-bit quantization.
    pub fn ground_truth(&self, img: &Tensor<f32>) -> Result<Tensor<f32>> {
        let img = match self.gt_resize {
            Some(g) => resize(img, g.height, g.width, g.method)?,
            None => img.clone(),
        };
        let s = img.shape();
        let f = self.down_factor;
        let (h, w) = (s.h - s.h % f, s.w - s.w % f);
        if h == 0 || w == 0 {
            return Err(Error::invalid(format!(
                "{}x{} image is smaller than the factor {f}",
                s.h, s.w
            )));
        }
        Ok(quantize(&img.crop(0, 0, h, w)?))
    }

    /// LR input for a ground truth from [`EvalProtocol::ground_truth`].
    pub fn degrade(&self, gt: &Tensor<f32>) -> Result<Tensor<f32>> {
        let s = gt.shape();
        let f = self.down_factor;
        if !s.h.is_multiple_of(f) || !s.w.is_multiple_of(f) {
            return Err(Error::shape(
                "protocol",
                format!("ground truth {}x{} is not a multiple of {f}", s.h, s.w),
            ));
        }
        let mut lr = resize(gt, s.h / f, s.w / f, self.down_method)?;
        if self.blur_sigma > 0.0 && self.blur_kernel_size > 1 {
            let k = gen_gaussian_kernel(self.blur_kernel_size, self.blur_sigma, self.blur_sigma, 0.0)?;
            lr = apply_blur(&lr, &k)?;
        }
        Ok(quantize(&lr))
    }
}

impl fmt::Display for EvalProtocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.name)
    }
}

/// User-defined protocol fields under `[evaluation.custom]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CustomProtocolConfig {
    pub gt_size: Option<[usize; 2]>,
    pub gt_method: ResizeMethod,
    pub down_factor: usize,
    pub down_method: ResizeMethod,
}

impl Default for CustomProtocolConfig {
    fn default() -> Self {
        CustomProtocolConfig {
            gt_size: None,
            gt_method: ResizeMethod::Lanczos,
            down_factor: 4,
            down_method: ResizeMethod::Bicubic,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationConfig {
    pub blur_sigma: f64,
    pub blur_kernel_size: usize,
    /// LR tile edge for generator inference; 0 runs whole images.
    pub tile_size: usize,
    /// LR context around each tile.
    pub tile_pad: usize,
    pub custom: CustomProtocolConfig,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        EvaluationConfig {
            blur_sigma: DEFAULT_BLUR_SIGMA,
            blur_kernel_size: DEFAULT_BLUR_KERNEL,
            tile_size: 128,
            tile_pad: 16,
            custom: CustomProtocolConfig::default(),
        }
    }
}

impl EvaluationConfig {
    pub fn validate(&self) -> Result<()> {
        self.protocol("custom")?.validate()
    }

    /// `drive`, `nih` or `custom`, with this config's blur settings.
    pub fn protocol(&self, name: &str) -> Result<EvalProtocol> {
        let base = match name {
            "drive" => drive_protocol(),
            "nih" => nih_protocol(),
            "custom" => {
                let c = &self.custom;
                EvalProtocol {
                    name: "custom".into(),
                    gt_resize: c.gt_size.map(|[height, width]| GtResize {
                        height,
                        width,
                        method: c.gt_method,
                    }),
                    down_factor: c.down_factor,
                    down_method: c.down_method,
                    blur_sigma: DEFAULT_BLUR_SIGMA,
                    blur_kernel_size: DEFAULT_BLUR_KERNEL,
                    upscale: c.down_factor,
                }
            }
            other => {
                return Err(Error::Config(format!(
                    "unknown protocol {other:?} (drive, nih, custom)"
                )))
            }
        };
        let p = base.with_blur(self.blur_sigma, self.blur_kernel_size);
        p.validate()?;
        Ok(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(h: usize, w: usize) -> Tensor<f32> {
        Tensor::from_fn([1, 3, h, w], |_, c, y, x| {
            ((c * 50 + y * 3 + x * 5) % 256) as f32 / 255.0
        })
    }

    #[test]
    fn drive_sizes() {
        let p = drive_protocol();
        let gt = p.ground_truth(&ramp(584, 565)).unwrap();
        assert_eq!(gt.shape().dims(), [1, 3, 512, 512]);
        assert_eq!(p.degrade(&gt).unwrap().shape().dims(), [1, 3, 256, 256]);
    }

    #[test]
    fn nih_sizes_and_determinism() {
        let p = nih_protocol();
        let gt = p.ground_truth(&ramp(64, 66)).unwrap();
        assert_eq!(gt.shape().dims(), [1, 3, 64, 64]);
        let a = p.degrade(&gt).unwrap();
        assert_eq!(a.shape().dims(), [1, 3, 16, 16]);
        assert_eq!(a.data(), p.degrade(&gt).unwrap().data());
    }

    #[test]
    fn config_protocols() {
        let cfg = EvaluationConfig::default();
        assert_eq!(cfg.protocol("drive").unwrap(), drive_protocol());
        assert_eq!(cfg.protocol("custom").unwrap().upscale, 4);
        assert!(cfg.protocol("other").is_err());
        let bad = EvaluationConfig {
            blur_kernel_size: 6,
            ..EvaluationConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
