//! RRDB generator.
//!
//! Layout (parameter names in brackets):
//!
//! ```text
//! [scale 2/1: pixel_unshuffle by 2/4]
//! conv_first ─┬─ body.0 … body.{B-1} ─ conv_body ─(+)─ ↑2 conv_up1 ─ ↑2 conv_up2 ─ conv_hr ─ conv_last
//!             └──────────────────────────────────────┘
//! ```
//!
//! Each `body.i` is a residual-in-residual dense block of three dense blocks
//! `rdb1..rdb3`; each dense block has five 3×3 convolutions `conv1..conv5`
//! fed by the concatenation of the block input and all earlier outputs.

use serde::{Deserialize, Serialize};

use super::params::{ConvLayer, ConvSpec, ParamStore};
use super::LEAKY_SLOPE;
use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::tensor::{kernels, Scalar, Shape, Tape, Tensor, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub in_channels: usize,
    pub out_channels: usize,
    pub num_features: usize,
    pub num_rrdb_blocks: usize,
    pub growth_channels: usize,
    pub scale: usize,
    pub residual_beta: f64,
    /// Seed for weight initialization.
    pub init_seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self::canonical(4)
    }
}

impl GeneratorConfig {
    /// 64 features, 23 RRDB blocks, growth 32.
    pub fn canonical(scale: usize) -> Self {
        GeneratorConfig {
            in_channels: 3,
            out_channels: 3,
            num_features: 64,
            num_rrdb_blocks: 23,
            growth_channels: 32,
            scale,
            residual_beta: 0.2,
            init_seed: 0,
        }
    }

    /// Small network for tests and desk-scale runs.
    pub fn toy(num_features: usize, num_rrdb_blocks: usize, growth_channels: usize, scale: usize) -> Self {
        GeneratorConfig {
            num_features,
            num_rrdb_blocks,
            growth_channels,
            scale,
            ..Self::canonical(scale)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if ![1, 2, 4].contains(&self.scale) {
            return Err(Error::invalid(format!(
                "generator scale {} not in {{1, 2, 4}}",
                self.scale
            )));
        }
        if self.in_channels == 0 || self.out_channels == 0 || self.num_features == 0 || self.growth_channels == 0 {
            return Err(Error::invalid("generator channel counts must be at least 1"));
        }
        if self.num_rrdb_blocks == 0 {
            return Err(Error::invalid("generator needs at least one RRDB block"));
        }
        if !self.residual_beta.is_finite() {
            return Err(Error::invalid("residual_beta must be finite"));
        }
        Ok(())
    }

    /// Space-to-depth factor applied before the ×4 body.
    pub fn unshuffle_factor(&self) -> usize {
        4 / self.scale
    }
}

#[derive(Clone, Debug)]
struct DenseBlock {
    convs: [ConvLayer; 5],
}

#[derive(Clone, Debug)]
struct Rrdb {
    blocks: [DenseBlock; 3],
}

#[derive(Clone, Debug)]
pub struct Generator {
    config: GeneratorConfig,
    params: ParamStore,
    conv_first: ConvLayer,
    body: Vec<Rrdb>,
    conv_body: ConvLayer,
    conv_up1: ConvLayer,
    conv_up2: ConvLayer,
    conv_hr: ConvLayer,
    conv_last: ConvLayer,
}

/// Dense-block convolutions start 10× smaller than Kaiming scale.
const DENSE_INIT_GAIN: f64 = 0.1;

impl Generator {
    pub fn new(config: GeneratorConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = SeededRng::new(config.init_seed);
        let mut params = ParamStore::new();
        let f = config.num_features;
        let g = config.growth_channels;
        let ff = config.unshuffle_factor();
        let mut conv = |params: &mut ParamStore, name: &str, in_c: usize, out_c: usize, gain: f64| {
            ConvLayer::build(
                params,
                ConvSpec {
                    name: &format!("generator.{name}"),
                    in_c,
                    out_c,
                    kernel: 3,
                    stride: 1,
                    bias: true,
                    gain,
                },
                &mut rng,
            )
        };

        let conv_first = conv(&mut params, "conv_first", config.in_channels * ff * ff, f, 1.0)?;
        let mut body = Vec::with_capacity(config.num_rrdb_blocks);
        for b in 0..config.num_rrdb_blocks {
            let mut blocks = Vec::with_capacity(3);
            for r in 1..=3 {
                let mut convs = Vec::with_capacity(5);
                for c in 0..5 {
                    let out_c = if c == 4 { f } else { g };
                    convs.push(conv(
                        &mut params,
                        &format!("body.{b}.rdb{r}.conv{}", c + 1),
                        f + c * g,
                        out_c,
                        DENSE_INIT_GAIN,
                    )?);
                }
                blocks.push(DenseBlock {
                    convs: convs.try_into().expect("five convs"),
                });
            }
            body.push(Rrdb {
                blocks: blocks.try_into().expect("three dense blocks"),
            });
        }
        let conv_body = conv(&mut params, "conv_body", f, f, 1.0)?;
        let conv_up1 = conv(&mut params, "conv_up1", f, f, 1.0)?;
        let conv_up2 = conv(&mut params, "conv_up2", f, f, 1.0)?;
        let conv_hr = conv(&mut params, "conv_hr", f, f, 1.0)?;
        let conv_last = conv(&mut params, "conv_last", f, config.out_channels, 1.0)?;

        Ok(Generator {
            config,
            params,
            conv_first,
            body,
            conv_body,
            conv_up1,
            conv_up2,
            conv_hr,
            conv_last,
        })
    }

    pub fn config(&self) -> &GeneratorConfig {
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

    /// Names of the convolution weights inside dense blocks.
    pub fn dense_weight_names(&self) -> Vec<String> {
        self.params
            .iter()
            .filter(|p| p.name.contains(".rdb") && p.name.ends_with(".weight"))
            .map(|p| p.name.clone())
            .collect()
    }

    pub fn check_input(&self, h: usize, w: usize) -> Result<()> {
        let f = self.config.unshuffle_factor();
        if !h.is_multiple_of(f) || !w.is_multiple_of(f) {
            return Err(Error::shape(
                "generator",
                format!(
                    "scale {} needs input sides divisible by {f}, got {h}x{w}",
                    self.config.scale
                ),
            ));
        }
        Ok(())
    }

    /// Records the forward pass; `bound` comes from [`ParamStore::bind`].
    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, bound: &[Var], lr: Var) -> Result<Var> {
        let s = tape.shape(lr);
        if s.c != self.config.in_channels {
            return Err(Error::shape(
                "generator",
                format!("expected {} input channels, got {}", self.config.in_channels, s.c),
            ));
        }
        self.check_input(s.h, s.w)?;
        let beta = self.config.residual_beta;

        let x = match self.config.unshuffle_factor() {
            1 => lr,
            f => tape.pixel_unshuffle(lr, f)?,
        };
        let feat = self.conv_first.forward(tape, bound, x)?;
        let mut trunk = feat;
        for rrdb in &self.body {
            let mut h = trunk;
            for block in &rrdb.blocks {
                h = dense_block(tape, bound, block, h, beta)?;
            }
            let scaled = tape.scale(h, beta);
            trunk = tape.add(scaled, trunk)?;
        }
        let body = self.conv_body.forward(tape, bound, trunk)?;
        let mut feat = tape.add(feat, body)?;
        for up in [&self.conv_up1, &self.conv_up2] {
            let u = tape.nearest_upsample(feat, 2)?;
            let c = up.forward(tape, bound, u)?;
            feat = tape.leaky_relu(c, LEAKY_SLOPE)?;
        }
        let hr = self.conv_hr.forward(tape, bound, feat)?;
        let hr = tape.leaky_relu(hr, LEAKY_SLOPE)?;
        self.conv_last.forward(tape, bound, hr)
    }

    /// Gradient-free evaluation on a `N×C×h×w` batch. Runs the kernels
    /// directly so only a handful of activations are alive at a time.
    pub fn infer(&self, lr: &Tensor<f32>) -> Result<Tensor<f32>> {
        let s = lr.shape();
        if s.c != self.config.in_channels {
            return Err(Error::shape(
                "generator",
                format!("expected {} input channels, got {}", self.config.in_channels, s.c),
            ));
        }
        self.check_input(s.h, s.w)?;
        let beta = self.config.residual_beta as f32;
        let conv = |layer: &ConvLayer, x: &Tensor<f32>| -> Result<Tensor<f32>> {
            let p = &self.params;
            kernels::conv2d_forward(
                x,
                &p.get(layer.weight).value,
                layer.bias.map(|b| &p.get(b).value),
                layer.stride,
                layer.padding,
            )
        };
        let lrelu = |mut t: Tensor<f32>| {
            let slope = LEAKY_SLOPE as f32;
            t.data_mut().iter_mut().for_each(|v| {
                if *v < 0.0 {
                    *v *= slope
                }
            });
            t
        };
        // a·beta + b, in place on `a`
        let residual = |mut a: Tensor<f32>, b: &Tensor<f32>| {
            a.data_mut()
                .iter_mut()
                .zip(b.data())
                .for_each(|(x, &y)| *x = *x * beta + y);
            a
        };

        let x = match self.config.unshuffle_factor() {
            1 => lr.clone(),
            f => kernels::pixel_unshuffle(lr, f)?,
        };
        let first = conv(&self.conv_first, &x)?;
        let mut trunk = first.clone();
        for rrdb in &self.body {
            let mut h = trunk.clone();
            for block in &rrdb.blocks {
                let mut cat = h.clone();
                for (i, c) in block.convs.iter().enumerate() {
                    let y = conv(c, &cat)?;
                    if i == 4 {
                        h = residual(y, &h);
                    } else {
                        cat = concat_channels(&cat, &lrelu(y))?;
                    }
                }
            }
            trunk = residual(h, &trunk);
        }
        let mut feat = conv(&self.conv_body, &trunk)?;
        drop(trunk);
        feat.data_mut().iter_mut().zip(first.data()).for_each(|(x, &y)| *x += y);
        for up in [&self.conv_up1, &self.conv_up2] {
            feat = lrelu(conv(up, &kernels::nearest_upsample(&feat, 2))?);
        }
        let hr = lrelu(conv(&self.conv_hr, &feat)?);
        conv(&self.conv_last, &hr)
    }

    /// [`Generator::infer`] over overlapping LR tiles of edge `tile` with
    /// `pad` pixels of context on each side; the context is cropped from the
    /// output before stitching. `tile == 0` runs the whole image at once.
    pub fn infer_tiled(&self, lr: &Tensor<f32>, tile: usize, pad: usize) -> Result<Tensor<f32>> {
        let s = lr.shape();
        if tile == 0 || (s.h <= tile && s.w <= tile) {
            return self.infer(lr);
        }
        let f = self.config.unshuffle_factor();
        if !tile.is_multiple_of(f) || !pad.is_multiple_of(f) {
            return Err(Error::invalid(format!(
                "tile {tile} and pad {pad} must be multiples of {f}"
            )));
        }
        self.check_input(s.h, s.w)?;
        let scale = self.config.scale;
        let out_shape = Shape::new(s.n, self.config.out_channels, s.h * scale, s.w * scale);
        let mut out = vec![0.0f32; out_shape.numel()];
        for y0 in (0..s.h).step_by(tile) {
            for x0 in (0..s.w).step_by(tile) {
                let (y1, x1) = ((y0 + tile).min(s.h), (x0 + tile).min(s.w));
                let (py0, px0) = (y0.saturating_sub(pad), x0.saturating_sub(pad));
                let (py1, px1) = ((y1 + pad).min(s.h), (x1 + pad).min(s.w));
                let part = self.infer(&lr.crop(py0, px0, py1 - py0, px1 - px0)?)?;
                for n in 0..s.n {
                    for c in 0..out_shape.c {
                        for y in (y0 * scale)..(y1 * scale) {
                            let src_row = part.index(n, c, y - py0 * scale, (x0 - px0) * scale);
                            let dst_row = ((n * out_shape.c + c) * out_shape.h + y) * out_shape.w + x0 * scale;
                            let len = (x1 - x0) * scale;
                            out[dst_row..dst_row + len].copy_from_slice(&part.data()[src_row..src_row + len]);
                        }
                    }
                }
            }
        }
        Tensor::new(out_shape, out)
    }
}

fn concat_channels(a: &Tensor<f32>, b: &Tensor<f32>) -> Result<Tensor<f32>> {
    let (sa, sb) = (a.shape(), b.shape());
    let out = Shape::new(sa.n, sa.c + sb.c, sa.h, sa.w);
    let mut data = Vec::with_capacity(out.numel());
    for n in 0..sa.n {
        data.extend_from_slice(&a.data()[n * sa.c * sa.plane()..(n + 1) * sa.c * sa.plane()]);
        data.extend_from_slice(&b.data()[n * sb.c * sb.plane()..(n + 1) * sb.c * sb.plane()]);
    }
    Tensor::new(out, data)
}

fn dense_block<T: Scalar>(tape: &mut Tape<T>, bound: &[Var], block: &DenseBlock, x: Var, beta: f64) -> Result<Var> {
    let mut features = vec![x];
    for (i, conv) in block.convs.iter().enumerate() {
        let input = if features.len() == 1 {
            x
        } else {
            tape.concat_channels(&features)?
        };
        let y = conv.forward(tape, bound, input)?;
        if i == 4 {
            let scaled = tape.scale(y, beta);
            return tape.add(scaled, x);
        }
        let y = tape.leaky_relu(y, LEAKY_SLOPE)?;
        features.push(y);
    }
    unreachable!("dense block has five convolutions")
}
