use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::tensor::Tensor;

/// 8-bit quantization steps per unit intensity; Poisson `λ = LEVELS / scale²`.
pub const POISSON_LEVELS: f64 = 255.0;

/// BT.601 luma weights.
pub const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum NoiseKind {
    Gaussian { sigma: f64 },
    Poisson { scale: f64 },
}

fn check_sigma(sigma: f64) -> Result<()> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::invalid(format!(
            "gaussian noise sigma {sigma} must be finite and >= 0"
        )));
    }
    Ok(())
}

fn check_scale(scale: f64) -> Result<()> {
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::invalid(format!(
            "poisson noise scale {scale} must be finite and > 0"
        )));
    }
    Ok(())
}

/// Additive Gaussian noise field for an image, before clamping.
/// With `gray` one plane per image is drawn and repeated on every channel.
pub fn gaussian_noise_field(img: &Tensor<f32>, sigma: f64, gray: bool, rng: &mut SeededRng) -> Result<Tensor<f32>> {
    check_sigma(sigma)?;
    let s = img.shape();
    let plane = s.plane();
    let mut out = vec![0.0f32; s.numel()];
    for n in 0..s.n {
        let image = &mut out[n * s.c * plane..(n + 1) * s.c * plane];
        if gray {
            let field: Vec<f32> = (0..plane).map(|_| (sigma * rng.normal()) as f32).collect();
            image.chunks_mut(plane).for_each(|ch| ch.copy_from_slice(&field));
        } else {
            image.iter_mut().for_each(|v| *v = (sigma * rng.normal()) as f32);
        }
    }
    Tensor::new(s, out)
}

/// Shot-noise field `Poisson(xλ)/λ − x`, before clamping. With `gray` the
/// field is computed on luma and repeated on every channel.
pub fn poisson_noise_field(img: &Tensor<f32>, scale: f64, gray: bool, rng: &mut SeededRng) -> Result<Tensor<f32>> {
    check_scale(scale)?;
    let lambda = POISSON_LEVELS / (scale * scale);
    let s = img.shape();
    let plane = s.plane();
    let mut shot = |x: f64| -> f32 {
        let x = x.clamp(0.0, 1.0);
        (rng.poisson(x * lambda) as f64 / lambda - x) as f32
    };
    let mut out = vec![0.0f32; s.numel()];
    for n in 0..s.n {
        let src = &img.data()[n * s.c * plane..(n + 1) * s.c * plane];
        let dst = &mut out[n * s.c * plane..(n + 1) * s.c * plane];
        if gray {
            let field: Vec<f32> = (0..plane)
                .map(|p| {
                    let luma = if s.c == 3 {
                        (0..3).map(|c| LUMA[c] * src[c * plane + p] as f64).sum()
                    } else {
                        (0..s.c).map(|c| src[c * plane + p] as f64).sum::<f64>() / s.c as f64
                    };
                    shot(luma)
                })
                .collect();
            dst.chunks_mut(plane).for_each(|ch| ch.copy_from_slice(&field));
        } else {
            for (d, &x) in dst.iter_mut().zip(src) {
                *d = shot(x as f64);
            }
        }
    }
    Tensor::new(s, out)
}

fn add_clamped(img: &Tensor<f32>, field: &Tensor<f32>) -> Tensor<f32> {
    let data = img
        .data()
        .iter()
        .zip(field.data())
        .map(|(&x, &n)| (x + n).clamp(0.0, 1.0))
        .collect();
    Tensor::new(img.shape(), data).expect("same shape")
}

pub fn add_gaussian_noise(img: &Tensor<f32>, sigma: f64, gray: bool, rng: &mut SeededRng) -> Result<Tensor<f32>> {
    if sigma == 0.0 {
        return Ok(img.clone());
    }
    let field = gaussian_noise_field(img, sigma, gray, rng)?;
    Ok(add_clamped(img, &field))
}

pub fn add_poisson_noise(img: &Tensor<f32>, scale: f64, gray: bool, rng: &mut SeededRng) -> Result<Tensor<f32>> {
    let field = poisson_noise_field(img, scale, gray, rng)?;
    Ok(add_clamped(img, &field))
}

/// Applies `kind` with a stream derived only from `seed`.
pub fn apply_noise(img: &Tensor<f32>, kind: NoiseKind, gray: bool, seed: u64) -> Result<Tensor<f32>> {
    let mut rng = SeededRng::new(seed);
    match kind {
        NoiseKind::Gaussian { sigma } => add_gaussian_noise(img, sigma, gray, &mut rng),
        NoiseKind::Poisson { scale } => add_poisson_noise(img, scale, gray, &mut rng),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_sigma_is_identity() {
        let img = Tensor::from_fn([1, 3, 8, 8], |_, c, y, x| ((c + y + x) % 5) as f32 / 4.0);
        let out = add_gaussian_noise(&img, 0.0, false, &mut SeededRng::new(1)).unwrap();
        assert_eq!(out, img);
    }

    #[test]
    fn gray_noise_shared_across_channels() {
        let img = Tensor::full([2, 3, 6, 6], 0.5f32);
        let mut rng = SeededRng::new(4);
        for field in [
            gaussian_noise_field(&img, 0.1, true, &mut rng).unwrap(),
            poisson_noise_field(&img, 1.0, true, &mut rng).unwrap(),
        ] {
            for n in 0..2 {
                for y in 0..6 {
                    for x in 0..6 {
                        let r = field.at(n, 0, y, x);
                        assert_eq!(r, field.at(n, 1, y, x));
                        assert_eq!(r, field.at(n, 2, y, x));
                    }
                }
            }
        }
    }

    #[test]
    fn gaussian_std_matches_sigma() {
        let img = Tensor::full([1, 1, 128, 128], 0.5f32);
        let field = gaussian_noise_field(&img, 0.1, false, &mut SeededRng::new(9)).unwrap();
        let n = field.len() as f64;
        let mean = field.data().iter().map(|&v| v as f64).sum::<f64>() / n;
        let var = field.data().iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!((var.sqrt() - 0.1).abs() < 0.01);
    }

    #[test]
    fn poisson_variance_tracks_signal() {
        let img = Tensor::full([1, 1, 128, 128], 0.5f32);
        let scale = 2.0;
        let field = poisson_noise_field(&img, scale, false, &mut SeededRng::new(2)).unwrap();
        let n = field.len() as f64;
        let var = field.data().iter().map(|&v| (v as f64).powi(2)).sum::<f64>() / n;
        let expected = 0.5 * scale * scale / POISSON_LEVELS;
        assert!((var / expected - 1.0).abs() < 0.1, "{var} vs {expected}");
    }

    #[test]
    fn rejects_invalid_strengths() {
        let img = Tensor::full([1, 1, 2, 2], 0.5f32);
        let mut rng = SeededRng::new(0);
        assert!(add_gaussian_noise(&img, -0.1, false, &mut rng).is_err());
        assert!(add_poisson_noise(&img, 0.0, false, &mut rng).is_err());
    }

    #[test]
    fn output_in_unit_range() {
        let img = Tensor::from_fn([1, 3, 16, 16], |_, _, y, _| if y < 8 { 0.0 } else { 1.0 });
        let out = add_gaussian_noise(&img, 0.5, false, &mut SeededRng::new(3)).unwrap();
        assert!(out.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }
}
