//! TOML configuration. Files are partial: every key that is present
//! overrides the corresponding default, everything else keeps its default.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::degradation::DegradationConfig;
use crate::error::{Error, Result};
use crate::evaluation::EvaluationConfig;
use crate::networks::{DiscriminatorConfig, GeneratorConfig};
use crate::training::TrainConfig;

fn merge(base: &mut toml::Value, overlay: toml::Value) {
    match (base, overlay) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Parses `text` as an overlay on `defaults`. Unknown keys are rejected.
pub fn overlay_toml<T: Serialize + DeserializeOwned>(defaults: &T, text: &str) -> Result<T> {
    let overlay: toml::Value = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    let mut base = toml::Value::try_from(defaults).map_err(|e| Error::Config(e.to_string()))?;
    merge(&mut base, overlay);
    base.try_into()
        .map_err(|e: toml::de::Error| Error::Config(e.to_string()))
}

/// Everything a run can be configured with, one section per module.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToolkitConfig {
    pub train: TrainConfig,
    pub degradation: DegradationConfig,
    pub generator: GeneratorConfig,
    pub discriminator: DiscriminatorConfig,
    pub evaluation: EvaluationConfig,
}

impl ToolkitConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ToolkitConfig = overlay_toml(&ToolkitConfig::default(), text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.degradation.validate()?;
        self.generator.validate()?;
        self.discriminator.validate()?;
        self.evaluation.validate()?;
        if self.degradation.output_scale != self.generator.scale {
            return Err(Error::Config(format!(
                "degradation.output_scale {} differs from generator.scale {}",
                self.degradation.output_scale, self.generator.scale
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = ToolkitConfig::default();
        let text = cfg.to_toml_string().unwrap();
        assert_eq!(ToolkitConfig::from_toml_str(&text).unwrap(), cfg);
    }

    #[test]
    fn partial_overlay_keeps_other_defaults() {
        let cfg = ToolkitConfig::from_toml_str(
            "[train]\nbatch_size = 3\n[degradation.stage2.blur]\nsigma_range = [0.5, 1.0]\n",
        )
        .unwrap();
        assert_eq!(cfg.train.batch_size, 3);
        assert_eq!(cfg.degradation.stage2.blur.sigma_range, [0.5, 1.0]);
        let d = DegradationConfig::default();
        assert_eq!(cfg.degradation.stage2.resize, d.stage2.resize);
        assert_eq!(cfg.degradation.stage1, d.stage1);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(ToolkitConfig::from_toml_str("[train]\nbatchsize = 3\n").is_err());
        assert!(ToolkitConfig::from_toml_str("[nonsense]\n").is_err());
    }

    #[test]
    fn scale_mismatch_rejected() {
        let err = ToolkitConfig::from_toml_str("[generator]\nscale = 2\n").unwrap_err();
        assert!(err.to_string().contains("output_scale"));
    }
}
