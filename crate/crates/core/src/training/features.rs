//! Fixed convolutional feature extractor for the perceptual loss.
//!
//! Five 3×3 convolutions with ReLU between them:
//!
//! ```text
//! 3 → 16 → 16 → 32 (stride 2) → 32 → 32 (stride 2)
//! ```
//!
//! The loss compares the pre-activation outputs of layers 2 and 4. Weights are
//! Kaiming-normal from seed 0 unless replaced by `features.conv{i}.*` tensors
//! from a checkpoint. Layers after the deepest tap are not evaluated.

use crate::error::{Error, Result};
use crate::io::Checkpoint;
use crate::networks::{ConvLayer, ConvSpec, ParamStore};
use crate::rng::SeededRng;
use crate::tensor::{Scalar, Tape, Var};

/// `(in, out, stride)` of each layer.
pub const FEATURE_LAYERS: [(usize, usize, usize); 5] = [(3, 16, 1), (16, 16, 1), (16, 32, 2), (32, 32, 1), (32, 32, 2)];

/// Zero-based layers whose pre-activation outputs are compared.
pub const FEATURE_TAPS: [usize; 2] = [1, 3];

pub const FEATURE_SEED: u64 = 0;

#[derive(Clone, Debug)]
pub struct FeatureExtractor {
    params: ParamStore,
    layers: Vec<ConvLayer>,
}

impl FeatureExtractor {
    pub fn new() -> Result<Self> {
        let mut rng = SeededRng::new(FEATURE_SEED);
        let mut params = ParamStore::new();
        let mut layers = Vec::with_capacity(FEATURE_LAYERS.len());
        for (i, &(in_c, out_c, stride)) in FEATURE_LAYERS.iter().enumerate() {
            layers.push(ConvLayer::build(
                &mut params,
                ConvSpec {
                    name: &format!("features.conv{i}"),
                    in_c,
                    out_c,
                    kernel: 3,
                    stride,
                    bias: true,
                    gain: 1.0,
                },
                &mut rng,
            )?);
        }
        Ok(FeatureExtractor { params, layers })
    }

    /// Built-in layout with weights taken from `ckpt`.
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let mut fx = Self::new()?;
        if !ckpt.has_prefix("features.") {
            return Err(Error::Checkpoint(
                "no features.* tensors in the feature checkpoint".into(),
            ));
        }
        fx.params.load_from(&|name| ckpt.get(name).cloned())?;
        Ok(fx)
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    /// Binds the weights as constants.
    pub fn bind<T: Scalar>(&self, tape: &mut Tape<T>) -> Vec<Var> {
        self.params.bind(tape, false)
    }

    /// Pre-activation outputs at [`FEATURE_TAPS`].
    pub fn features<T: Scalar>(&self, tape: &mut Tape<T>, bound: &[Var], x: Var) -> Result<Vec<Var>> {
        let last = *FEATURE_TAPS.iter().max().expect("taps");
        let mut taps = Vec::with_capacity(FEATURE_TAPS.len());
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate().take(last + 1) {
            let pre = layer.forward(tape, bound, h)?;
            if FEATURE_TAPS.contains(&i) {
                taps.push(pre);
            }
            if i < last {
                h = tape.relu(pre)?;
            }
        }
        Ok(taps)
    }

    /// Σ over taps of the mean absolute feature difference.
    pub fn perceptual_loss<T: Scalar>(&self, tape: &mut Tape<T>, bound: &[Var], sr: Var, hr: Var) -> Result<Var> {
        let (ss, hs) = (tape.shape(sr), tape.shape(hr));
        if ss != hs {
            return Err(Error::shape("perceptual_loss", format!("sr {ss} vs hr {hs}")));
        }
        let fs = self.features(tape, bound, sr)?;
        let fh = self.features(tape, bound, hr)?;
        let mut total: Option<Var> = None;
        for (a, b) in fs.into_iter().zip(fh) {
            let d = tape.mean_abs_diff(a, b)?;
            total = Some(match total {
                Some(t) => tape.add(t, d)?,
                None => d,
            });
        }
        Ok(total.expect("at least one tap"))
    }
}
