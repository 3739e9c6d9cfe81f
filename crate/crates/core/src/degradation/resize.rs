use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResizeMethod {
    Nearest,
    Bilinear,
    Bicubic,
    Area,
    Lanczos,
}

impl ResizeMethod {
    pub const ALL: [ResizeMethod; 5] = [
        ResizeMethod::Nearest,
        ResizeMethod::Bilinear,
        ResizeMethod::Bicubic,
        ResizeMethod::Area,
        ResizeMethod::Lanczos,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ResizeMethod::Nearest => "nearest",
            ResizeMethod::Bilinear => "bilinear",
            ResizeMethod::Bicubic => "bicubic",
            ResizeMethod::Area => "area",
            ResizeMethod::Lanczos => "lanczos",
        }
    }

    fn support(self) -> f64 {
        match self {
            ResizeMethod::Nearest | ResizeMethod::Area => 0.5,
            ResizeMethod::Bilinear => 1.0,
            ResizeMethod::Bicubic => 2.0,
            ResizeMethod::Lanczos => 3.0,
        }
    }

    fn filter(self, x: f64) -> f64 {
        match self {
            ResizeMethod::Nearest | ResizeMethod::Area => {
                if x > -0.5 && x <= 0.5 {
                    1.0
                } else {
                    0.0
                }
            }
            ResizeMethod::Bilinear => (1.0 - x.abs()).max(0.0),
            ResizeMethod::Bicubic => {
                const A: f64 = -0.5;
                let x = x.abs();
                if x < 1.0 {
                    ((A + 2.0) * x - (A + 3.0)) * x * x + 1.0
                } else if x < 2.0 {
                    (((x - 5.0) * x + 8.0) * x - 4.0) * A
                } else {
                    0.0
                }
            }
            ResizeMethod::Lanczos => {
                if x.abs() < 3.0 {
                    sinc(x) * sinc(x / 3.0)
                } else {
                    0.0
                }
            }
        }
    }
}

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        let px = PI * x;
        libm::sin(px) / px
    }
}

impl fmt::Display for ResizeMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ResizeMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ResizeMethod::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| {
                Error::invalid(format!(
                    "unknown resize method '{s}' (expected nearest, bilinear, bicubic, area or lanczos)"
                ))
            })
    }
}

/// Contributions of input samples to one output sample.
struct Taps {
    start: usize,
    weights: Vec<f64>,
}

fn taps(in_len: usize, out_len: usize, method: ResizeMethod) -> Vec<Taps> {
    let scale = in_len as f64 / out_len as f64;
    if method == ResizeMethod::Nearest {
        return (0..out_len)
            .map(|i| Taps {
                start: (((i as f64 + 0.5) * scale).floor() as usize).min(in_len - 1),
                weights: vec![1.0],
            })
            .collect();
    }
    // Downscaling widens the filter so it also antialiases.
    let filter_scale = scale.max(1.0);
    let support = method.support() * filter_scale;
    (0..out_len)
        .map(|i| {
            let center = (i as f64 + 0.5) * scale;
            let lo = ((center - support + 0.5).floor().max(0.0) as usize).min(in_len - 1);
            let hi = ((center + support + 0.5).floor() as usize).clamp(lo + 1, in_len);
            let mut weights: Vec<f64> = (lo..hi)
                .map(|j| method.filter((j as f64 - center + 0.5) / filter_scale))
                .collect();
            let total: f64 = weights.iter().sum();
            if total.abs() > 1e-12 {
                weights.iter_mut().for_each(|w| *w /= total);
            } else {
                let nearest = ((center.floor() as usize).min(in_len - 1) - lo).min(weights.len() - 1);
                weights.fill(0.0);
                weights[nearest] = 1.0;
            }
            Taps { start: lo, weights }
        })
        .collect()
}

/// Separable resampling of every `H×W` plane to `target_h×target_w`,
/// clamped to `[0, 1]`.
pub fn resize(img: &Tensor<f32>, target_h: usize, target_w: usize, method: ResizeMethod) -> Result<Tensor<f32>> {
    if target_h == 0 || target_w == 0 {
        return Err(Error::invalid(format!(
            "resize target {target_h}x{target_w} must be at least 1x1"
        )));
    }
    let s = img.shape();
    let out_shape = Shape::new(s.n, s.c, target_h, target_w);
    let tx = taps(s.w, target_w, method);
    let ty = taps(s.h, target_h, method);
    let mut out = vec![0.0f32; out_shape.numel()];
    out.par_chunks_mut(out_shape.plane())
        .zip(img.data().par_chunks(s.plane()))
        .for_each(|(dst, src)| {
            // horizontal pass into f64 rows, then vertical
            let mut mid = vec![0.0f64; s.h * target_w];
            for y in 0..s.h {
                let row = &src[y * s.w..(y + 1) * s.w];
                for (x, t) in tx.iter().enumerate() {
                    mid[y * target_w + x] = t.weights.iter().zip(&row[t.start..]).map(|(w, &v)| w * v as f64).sum();
                }
            }
            for (y, t) in ty.iter().enumerate() {
                for x in 0..target_w {
                    let v: f64 = t
                        .weights
                        .iter()
                        .enumerate()
                        .map(|(k, w)| w * mid[(t.start + k) * target_w + x])
                        .sum();
                    dst[y * target_w + x] = v.clamp(0.0, 1.0) as f32;
                }
            }
        });
    Tensor::new(out_shape, out)
}
