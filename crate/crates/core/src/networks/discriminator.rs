//! U-Net discriminator with spectrally normalized convolutions.
//!
//! ```text
//! conv0 ──────────────────────────────────────────────(+)── conv6 ── conv7 ── conv8 ── conv9 → logits
//!   └ conv1 (↓2) ─────────────────────────(+)── conv5 ↑2
//!       └ conv2 (↓2) ─────────(+)── conv4 ↑2
//!           └ conv3 (↓2) ── ↑2 ┘
//! ```
//!
//! Widths F, 2F, 4F, 8F on the way down, mirrored on the way up with additive
//! skips. `conv1`–`conv8` are bias-free and spectrally normalized; `conv0`
//! and the output `conv9` are plain biased convolutions.

use serde::{Deserialize, Serialize};

use super::params::{ConvLayer, ConvSpec, ParamStore};
use super::spectral::{initial_u, power_iteration};
use super::LEAKY_SLOPE;
use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::tensor::{Scalar, Tape, Tensor, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiscriminatorConfig {
    pub in_channels: usize,
    pub num_features: usize,
    pub spectral_norm_iterations: usize,
    pub init_seed: u64,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        DiscriminatorConfig {
            in_channels: 3,
            num_features: 64,
            spectral_norm_iterations: 1,
            init_seed: 1,
        }
    }
}

impl DiscriminatorConfig {
    pub fn toy(num_features: usize) -> Self {
        DiscriminatorConfig {
            num_features,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.num_features == 0 {
            return Err(Error::invalid("discriminator channel counts must be at least 1"));
        }
        Ok(())
    }
}

/// Number of spectrally normalized layers (`conv1`–`conv8`).
pub const SN_LAYERS: usize = 8;

#[derive(Clone, Debug)]
pub struct Discriminator {
    config: DiscriminatorConfig,
    params: ParamStore,
    layers: [ConvLayer; 10],
    sn_u: Vec<Vec<f32>>,
}

impl Discriminator {
    pub fn new(config: DiscriminatorConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = SeededRng::new(config.init_seed);
        let mut params = ParamStore::new();
        let f = config.num_features;
        // (in, out, kernel, stride, bias)
        let plan = [
            (config.in_channels, f, 3, 1, true),
            (f, 2 * f, 4, 2, false),
            (2 * f, 4 * f, 4, 2, false),
            (4 * f, 8 * f, 4, 2, false),
            (8 * f, 4 * f, 3, 1, false),
            (4 * f, 2 * f, 3, 1, false),
            (2 * f, f, 3, 1, false),
            (f, f, 3, 1, false),
            (f, f, 3, 1, false),
            (f, 1, 3, 1, true),
        ];
        let mut layers = Vec::with_capacity(plan.len());
        for (i, &(in_c, out_c, kernel, stride, bias)) in plan.iter().enumerate() {
            let layer = ConvLayer::build(
                &mut params,
                ConvSpec {
                    name: &format!("discriminator.conv{i}"),
                    in_c,
                    out_c,
                    kernel,
                    stride,
                    bias,
                    gain: 1.0,
                },
                &mut rng,
            )?;
            layers.push(layer);
        }
        let sn_u = layers[1..=SN_LAYERS]
            .iter()
            .map(|l| initial_u(params.get(l.weight).value.shape().n, &mut rng))
            .collect();
        Ok(Discriminator {
            config,
            params,
            layers: layers.try_into().expect("ten layers"),
            sn_u,
        })
    }

    pub fn config(&self) -> &DiscriminatorConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn count_params(&self) -> usize {
        self.params.count()
    }

    /// Power-iteration state for `conv1`–`conv8`, with checkpoint names.
    pub fn spectral_state(&self) -> Vec<(String, &[f32])> {
        self.sn_u
            .iter()
            .enumerate()
            .map(|(i, u)| (format!("discriminator.conv{}.sn_u", i + 1), u.as_slice()))
            .collect()
    }

    pub fn set_spectral_state(&mut self, layer: usize, u: Vec<f32>) -> Result<()> {
        let slot = self
            .sn_u
            .get_mut(layer)
            .ok_or_else(|| Error::invalid(format!("no spectral-norm layer {layer}")))?;
        if slot.len() != u.len() {
            return Err(Error::shape(
                "discriminator",
                format!(
                    "spectral state conv{} has {} entries, got {}",
                    layer + 1,
                    slot.len(),
                    u.len()
                ),
            ));
        }
        *slot = u;
        Ok(())
    }

    fn normalized_weight<T: Scalar>(
        &mut self,
        tape: &mut Tape<T>,
        bound: &[Var],
        layer: usize,
        update: bool,
    ) -> Result<Var> {
        let weight = bound[self.layers[layer].weight];
        let slot = &mut self.sn_u[layer - 1];
        let u: Vec<T> = slot.iter().map(|&x| T::from_f64(x as f64)).collect();
        let iterations = if update {
            self.config.spectral_norm_iterations
        } else {
            0
        };
        let est = power_iteration(tape.value(weight), &u, iterations)?;
        if update {
            *slot = est.u.iter().map(|x| x.as_f64() as f32).collect();
        }
        tape.spectral_norm(weight, est.u, est.v, est.sigma)
    }

    fn sn_conv<T: Scalar>(
        &mut self,
        tape: &mut Tape<T>,
        bound: &[Var],
        layer: usize,
        x: Var,
        update: bool,
    ) -> Result<Var> {
        let w = self.normalized_weight(tape, bound, layer, update)?;
        let y = self.layers[layer].forward_with_weight(tape, bound, w, x)?;
        tape.leaky_relu(y, LEAKY_SLOPE)
    }

    /// Per-pixel logits of shape `N×1×H×W`. With `update_spectral` the
    /// power-iteration state advances (training); otherwise it is read only.
    pub fn forward<T: Scalar>(
        &mut self,
        tape: &mut Tape<T>,
        bound: &[Var],
        img: Var,
        update_spectral: bool,
    ) -> Result<Var> {
        let s = tape.shape(img);
        if !s.h.is_multiple_of(8) || !s.w.is_multiple_of(8) {
            return Err(Error::shape(
                "discriminator",
                format!("input sides must be divisible by 8, got {}x{}", s.h, s.w),
            ));
        }
        let up = update_spectral;
        let x0 = self.layers[0].forward(tape, bound, img)?;
        let x0 = tape.leaky_relu(x0, LEAKY_SLOPE)?;
        let x1 = self.sn_conv(tape, bound, 1, x0, up)?;
        let x2 = self.sn_conv(tape, bound, 2, x1, up)?;
        let x3 = self.sn_conv(tape, bound, 3, x2, up)?;

        let x3 = tape.bilinear_upsample(x3, 2)?;
        let x4 = self.sn_conv(tape, bound, 4, x3, up)?;
        let x4 = tape.add(x4, x2)?;
        let x4 = tape.bilinear_upsample(x4, 2)?;
        let x5 = self.sn_conv(tape, bound, 5, x4, up)?;
        let x5 = tape.add(x5, x1)?;
        let x5 = tape.bilinear_upsample(x5, 2)?;
        let x6 = self.sn_conv(tape, bound, 6, x5, up)?;
        let x6 = tape.add(x6, x0)?;

        let out = self.sn_conv(tape, bound, 7, x6, up)?;
        let out = self.sn_conv(tape, bound, 8, out, up)?;
        self.layers[9].forward(tape, bound, out)
    }

    /// Gradient-free evaluation that leaves the spectral state untouched.
    pub fn infer(&self, img: &Tensor<f32>) -> Result<Tensor<f32>> {
        let mut scratch = self.clone();
        let mut tape = Tape::new();
        let bound = scratch.params.bind_f32(&mut tape, false);
        let x = tape.leaf(img.clone(), false);
        let out = scratch.forward(&mut tape, &bound, x, false)?;
        Ok(tape.value(out).clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_parameter_count() {
        let d = Discriminator::new(DiscriminatorConfig::default()).unwrap();
        assert_eq!(d.count_params(), 4_376_897);
    }

    #[test]
    fn per_pixel_output() {
        let d = Discriminator::new(DiscriminatorConfig::toy(8)).unwrap();
        let x = Tensor::from_fn([1, 3, 64, 64], |_, c, y, x| ((c + y * 3 + x * 7) % 13) as f32 / 13.0);
        let out = d.infer(&x).unwrap();
        assert_eq!(out.shape().dims(), [1, 1, 64, 64]);
        assert!(out.is_finite());
    }

    #[test]
    fn rejects_indivisible_input() {
        let d = Discriminator::new(DiscriminatorConfig::toy(4)).unwrap();
        assert!(d.infer(&Tensor::full([1, 3, 20, 16], 0.5)).is_err());
    }

    #[test]
    fn training_forward_advances_spectral_state() {
        let mut d = Discriminator::new(DiscriminatorConfig::toy(4)).unwrap();
        let before: Vec<Vec<f32>> = d.spectral_state().iter().map(|(_, u)| u.to_vec()).collect();
        let mut tape = Tape::<f32>::new();
        let bound = d.params().bind_f32(&mut tape, true);
        let x = tape.leaf(Tensor::full([1, 3, 16, 16], 0.3), false);
        d.forward(&mut tape, &bound, x, true).unwrap();
        let after: Vec<Vec<f32>> = d.spectral_state().iter().map(|(_, u)| u.to_vec()).collect();
        assert_ne!(before, after);
    }
}
