//! PSNR and SSIM on tensors whose values live in `[0, peak]`.

use crate::degradation::LUMA;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;

fn same_shape(op: &'static str, a: &Tensor<f32>, b: &Tensor<f32>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, format!("{} vs {}", a.shape(), b.shape())));
    }
    if a.is_empty() {
        return Err(Error::invalid(format!("{op} of empty images")));
    }
    Ok(())
}

/// `10·log10(peak² / MSE)` over every element; `+∞` when the inputs agree.
pub fn psnr(a: &Tensor<f32>, b: &Tensor<f32>, peak: f64) -> Result<f64> {
    same_shape("psnr", a, b)?;
    let sse: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum();
    let mse = sse / a.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

/// Planes SSIM is computed on: each single-channel item as is, RGB items
/// reduced to BT.601 luma.
fn luma_planes(t: &Tensor<f32>) -> Result<Vec<Vec<f64>>> {
    let s = t.shape();
    let plane = s.plane();
    let d = t.data();
    (0..s.n)
        .map(|n| match s.c {
            1 => Ok(d[n * plane..(n + 1) * plane].iter().map(|&v| v as f64).collect()),
            3 => {
                let base = n * 3 * plane;
                Ok((0..plane)
                    .map(|p| (0..3).map(|c| LUMA[c] * d[base + c * plane + p] as f64).sum())
                    .collect())
            }
            c => Err(Error::invalid(format!("ssim needs 1 or 3 channels, got {c}"))),
        })
        .collect()
}

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let r = (SSIM_WINDOW / 2) as f64;
    let mut w = [0.0; SSIM_WINDOW];
    for (i, v) in w.iter_mut().enumerate() {
        let x = i as f64 - r;
        *v = (-x * x / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let sum: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= sum);
    w
}

/// Separable valid-mode filtering of an `h×w` plane.
fn filter_valid(src: &[f64], h: usize, w: usize, win: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (oh, ow) = (h + 1 - SSIM_WINDOW, w + 1 - SSIM_WINDOW);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        let line = &src[y * w..(y + 1) * w];
        for x in 0..ow {
            rows[y * ow + x] = win.iter().zip(&line[x..x + SSIM_WINDOW]).map(|(k, v)| k * v).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = win.iter().enumerate().map(|(k, wk)| wk * rows[(y + k) * ow + x]).sum();
        }
    }
    out
}

/// Mean SSIM over valid 11×11 Gaussian windows (σ 1.5) with
/// `C1 = (0.01·peak)²`, `C2 = (0.03·peak)²`. RGB inputs are compared on
/// luma; batches are averaged.
pub fn ssim(a: &Tensor<f32>, b: &Tensor<f32>, peak: f64) -> Result<f64> {
    same_shape("ssim", a, b)?;
    let s = a.shape();
    if s.h < SSIM_WINDOW || s.w < SSIM_WINDOW {
        return Err(Error::invalid(format!(
            "ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {}x{}",
            s.h, s.w
        )));
    }
    let c1 = (0.01 * peak).powi(2);
    let c2 = (0.03 * peak).powi(2);
    let win = gaussian_window();
    let (pa, pb) = (luma_planes(a)?, luma_planes(b)?);
    let mut total = 0.0;
    for (x, y) in pa.iter().zip(&pb) {
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(y).map(|(p, q)| p * q).collect();
        let [mx, my, sxx, syy, sxy] = [x, y, &xx, &yy, &xy].map(|p| filter_valid(p, s.h, s.w, &win));
        let mut sum = 0.0;
        for i in 0..mx.len() {
            let (ux, uy) = (mx[i], my[i]);
            let vx = sxx[i] - ux * ux;
            let vy = syy[i] - uy * uy;
            let cov = sxy[i] - ux * uy;
            sum += ((2.0 * ux * uy + c1) * (2.0 * cov + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2));
        }
        total += sum / mx.len() as f64;
    }
    Ok(total / s.n as f64)
}

/// `x·255` rounded to the nearest 8-bit level, for `x` in `[0, 1]`.
pub fn to_8bit_scale(t: &Tensor<f32>) -> Tensor<f32> {
    t.map(|v| (v.clamp(0.0, 1.0) * 255.0).round())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn psnr_examples() {
        let a = Tensor::full([1, 1, 4, 4], 0.0f32);
        let b = Tensor::full([1, 1, 4, 4], 255.0f32);
        assert_eq!(psnr(&a, &a, 255.0).unwrap(), f64::INFINITY);
        assert!(psnr(&a, &b, 255.0).unwrap().abs() < 1e-12);
        let a = Tensor::<f32>::zeros([1, 1, 2, 2]);
        let b = Tensor::new([1, 1, 2, 2], vec![10.0, 0.0, 0.0, 0.0]).unwrap();
        assert!((psnr(&a, &b, 255.0).unwrap() - 34.151).abs() < 1e-3);
    }

    #[test]
    fn ssim_constant_images() {
        let a = Tensor::full([1, 1, 16, 16], 100.0f32);
        let b = Tensor::full([1, 1, 16, 16], 110.0f32);
        assert!((ssim(&a, &b, 255.0).unwrap() - 0.99548).abs() < 1e-3);
    }

    #[test]
    fn ssim_identity_and_errors() {
        let a = Tensor::from_fn([1, 3, 12, 13], |_, c, y, x| ((c * 31 + y * 7 + x * 3) % 256) as f32);
        assert!((ssim(&a, &a, 255.0).unwrap() - 1.0).abs() < 1e-9);
        let small = Tensor::full([1, 1, 10, 20], 1.0f32);
        assert!(ssim(&small, &small, 255.0).is_err());
        let other = Tensor::full([1, 3, 12, 12], 1.0f32);
        assert!(ssim(&a, &other, 255.0).is_err());
    }
}
