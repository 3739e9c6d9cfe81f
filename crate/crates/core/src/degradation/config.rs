use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelFamilyWeights {
    pub isotropic: f64,
    pub anisotropic: f64,
    pub sinc: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlurConfig {
    /// Candidate odd kernel sizes, drawn uniformly.
    pub kernel_sizes: Vec<usize>,
    pub family_weights: KernelFamilyWeights,
    pub sigma_range: [f64; 2],
    /// Rotation of anisotropic kernels in radians.
    pub rotation_range: [f64; 2],
    pub sinc_cutoff_range: [f64; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResizeMethodWeights {
    pub nearest: f64,
    pub bilinear: f64,
    pub bicubic: f64,
    pub area: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResizeConfig {
    pub method_weights: ResizeMethodWeights,
    /// Scale relative to the stage's reference size.
    pub scale_range: [f64; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseTypeWeights {
    pub gaussian: f64,
    pub poisson: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    pub type_weights: NoiseTypeWeights,
    /// Standard deviation in unit intensity.
    pub gaussian_sigma_range: [f64; 2],
    pub poisson_scale_range: [f64; 2],
    pub gray_probability: f64,
}

/// Probability of skipping each sub-step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SkipConfig {
    pub blur: f64,
    pub resize: f64,
    pub noise: f64,
    pub jpeg: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DegradationStageConfig {
    pub skip: SkipConfig,
    pub blur: BlurConfig,
    pub resize: ResizeConfig,
    pub noise: NoiseConfig,
    pub jpeg_quality: [u8; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DegradationConfig {
    pub stage1: DegradationStageConfig,
    pub stage2: DegradationStageConfig,
    pub final_sinc_probability: f64,
    pub final_sinc_cutoff_range: [f64; 2],
    pub output_scale: usize,
}

fn odd_sizes() -> Vec<usize> {
    (7..=21).step_by(2).collect()
}

impl DegradationStageConfig {
    pub fn first() -> Self {
        DegradationStageConfig {
            skip: SkipConfig {
                blur: 0.0,
                resize: 0.0,
                noise: 0.0,
                jpeg: 0.0,
            },
            blur: BlurConfig {
                kernel_sizes: odd_sizes(),
                family_weights: KernelFamilyWeights {
                    isotropic: 0.45,
                    anisotropic: 0.45,
                    sinc: 0.1,
                },
                sigma_range: [0.2, 3.0],
                rotation_range: [-PI, PI],
                sinc_cutoff_range: [PI / 3.0, PI],
            },
            resize: ResizeConfig {
                method_weights: ResizeMethodWeights {
                    nearest: 0.0,
                    bilinear: 1.0,
                    bicubic: 1.0,
                    area: 1.0,
                },
                scale_range: [0.15, 1.5],
            },
            noise: NoiseConfig {
                type_weights: NoiseTypeWeights {
                    gaussian: 0.5,
                    poisson: 0.5,
                },
                gaussian_sigma_range: [0.0, 30.0 / 255.0],
                poisson_scale_range: [0.05, 3.0],
                gray_probability: 0.4,
            },
            jpeg_quality: [30, 95],
        }
    }

    pub fn second() -> Self {
        let mut s = Self::first();
        s.skip.blur = 0.2;
        s.blur.sigma_range = [0.2, 1.5];
        s.resize.scale_range = [0.3, 1.2];
        s.noise.gaussian_sigma_range = [0.0, 25.0 / 255.0];
        s.noise.poisson_scale_range = [0.05, 2.5];
        s
    }

    /// Every sub-step skipped.
    pub fn disabled() -> Self {
        let mut s = Self::first();
        s.skip = SkipConfig {
            blur: 1.0,
            resize: 1.0,
            noise: 1.0,
            jpeg: 1.0,
        };
        s
    }

    pub fn validate(&self, stage: &str) -> Result<()> {
        let ctx = |msg: String| Error::Config(format!("degradation.{stage}.{msg}"));
        let s = &self.skip;
        for (name, p) in [
            ("blur", s.blur),
            ("resize", s.resize),
            ("noise", s.noise),
            ("jpeg", s.jpeg),
        ] {
            check_probability(p).map_err(|m| ctx(format!("skip.{name}: {m}")))?;
        }

        let b = &self.blur;
        if b.kernel_sizes.is_empty() || b.kernel_sizes.iter().any(|&k| k % 2 == 0 || !(3..=21).contains(&k)) {
            return Err(ctx(format!(
                "blur.kernel_sizes {:?} must be odd values in [3, 21]",
                b.kernel_sizes
            )));
        }
        let f = &b.family_weights;
        check_weights(&[f.isotropic, f.anisotropic, f.sinc]).map_err(|m| ctx(format!("blur.family_weights: {m}")))?;
        if f.sinc > 0.0 && !b.kernel_sizes.iter().any(|&k| k >= 7) {
            return Err(ctx("blur.kernel_sizes needs a size >= 7 for sinc kernels".into()));
        }
        check_range(b.sigma_range).map_err(|m| ctx(format!("blur.sigma_range: {m}")))?;
        if b.sigma_range[0] <= 0.0 {
            return Err(ctx("blur.sigma_range must be positive".into()));
        }
        check_range(b.rotation_range).map_err(|m| ctx(format!("blur.rotation_range: {m}")))?;
        check_cutoff(b.sinc_cutoff_range).map_err(|m| ctx(format!("blur.sinc_cutoff_range: {m}")))?;

        let r = &self.resize;
        let m = &r.method_weights;
        check_weights(&[m.nearest, m.bilinear, m.bicubic, m.area])
            .map_err(|e| ctx(format!("resize.method_weights: {e}")))?;
        check_range(r.scale_range).map_err(|e| ctx(format!("resize.scale_range: {e}")))?;
        if r.scale_range[0] <= 0.0 {
            return Err(ctx("resize.scale_range must be positive".into()));
        }

        let n = &self.noise;
        check_weights(&[n.type_weights.gaussian, n.type_weights.poisson])
            .map_err(|e| ctx(format!("noise.type_weights: {e}")))?;
        check_range(n.gaussian_sigma_range).map_err(|e| ctx(format!("noise.gaussian_sigma_range: {e}")))?;
        if n.gaussian_sigma_range[0] < 0.0 {
            return Err(ctx("noise.gaussian_sigma_range must be >= 0".into()));
        }
        check_range(n.poisson_scale_range).map_err(|e| ctx(format!("noise.poisson_scale_range: {e}")))?;
        if n.poisson_scale_range[0] <= 0.0 {
            return Err(ctx("noise.poisson_scale_range must be positive".into()));
        }
        check_probability(n.gray_probability).map_err(|e| ctx(format!("noise.gray_probability: {e}")))?;

        let [lo, hi] = self.jpeg_quality;
        if lo == 0 || hi > 100 || lo > hi {
            return Err(ctx(format!(
                "jpeg_quality [{lo}, {hi}] must satisfy 1 <= lo <= hi <= 100"
            )));
        }
        Ok(())
    }
}

impl Default for DegradationConfig {
    fn default() -> Self {
        DegradationConfig {
            stage1: DegradationStageConfig::first(),
            stage2: DegradationStageConfig::second(),
            final_sinc_probability: 0.8,
            final_sinc_cutoff_range: [PI / 3.0, PI],
            output_scale: 4,
        }
    }
}

impl DegradationConfig {
    /// Only the mandatory final resize, at scale 1: a no-op pipeline.
    pub fn identity() -> Self {
        let mut stage2 = DegradationStageConfig::disabled();
        stage2.jpeg_quality = [100, 100];
        DegradationConfig {
            stage1: DegradationStageConfig::disabled(),
            stage2,
            final_sinc_probability: 0.0,
            final_sinc_cutoff_range: [PI / 3.0, PI],
            output_scale: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.stage1.validate("stage1")?;
        self.stage2.validate("stage2")?;
        check_probability(self.final_sinc_probability)
            .map_err(|m| Error::Config(format!("degradation.final_sinc_probability: {m}")))?;
        check_cutoff(self.final_sinc_cutoff_range)
            .map_err(|m| Error::Config(format!("degradation.final_sinc_cutoff_range: {m}")))?;
        if ![1, 2, 4].contains(&self.output_scale) {
            return Err(Error::Config(format!(
                "degradation.output_scale {} not in {{1, 2, 4}}",
                self.output_scale
            )));
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: DegradationConfig = crate::config::overlay_toml(&DegradationConfig::default(), text)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn check_probability(p: f64) -> std::result::Result<(), String> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(format!("{p} outside [0, 1]"))
    }
}

fn check_weights(w: &[f64]) -> std::result::Result<(), String> {
    if w.iter().any(|&x| !(x >= 0.0 && x.is_finite())) {
        return Err(format!("{w:?} must be finite and nonnegative"));
    }
    if w.iter().sum::<f64>() <= 0.0 {
        return Err(format!("{w:?} must not all be zero"));
    }
    Ok(())
}

fn check_range(r: [f64; 2]) -> std::result::Result<(), String> {
    if r.iter().all(|x| x.is_finite()) && r[0] <= r[1] {
        Ok(())
    } else {
        Err(format!("[{}, {}] is not a finite range with lo <= hi", r[0], r[1]))
    }
}

fn check_cutoff(r: [f64; 2]) -> std::result::Result<(), String> {
    check_range(r)?;
    // allow the rounding of a written-out pi
    if r[0] > 0.0 && r[1] <= PI + 1e-9 {
        Ok(())
    } else {
        Err(format!("[{}, {}] not inside (0, pi]", r[0], r[1]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        DegradationConfig::default().validate().unwrap();
        DegradationConfig::identity().validate().unwrap();
    }

    #[test]
    fn toml_overlay() {
        let cfg = DegradationConfig::from_toml_str("output_scale = 2\n[stage1.skip]\nnoise = 1.0\n").unwrap();
        assert_eq!(cfg.output_scale, 2);
        assert_eq!(cfg.stage1.skip.noise, 1.0);
        assert_eq!(cfg.stage2, DegradationStageConfig::second());
    }

    #[test]
    fn invalid_values_rejected() {
        for text in [
            "output_scale = 3",
            "final_sinc_probability = 1.5",
            "[stage1]\njpeg_quality = [90, 30]",
            "[stage1.blur]\nkernel_sizes = [8]",
            "[stage2.resize]\nscale_range = [1.2, 0.3]",
            "[stage1.noise.type_weights]\ngaussian = 0.0\npoisson = 0.0",
            "[stage2.blur]\nsigma_range = [0.0, 1.0]",
        ] {
            assert!(DegradationConfig::from_toml_str(text).is_err(), "{text}");
        }
    }
}
