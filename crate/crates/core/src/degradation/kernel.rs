use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Square, odd-sized blur kernel normalized to unit sum.
#[derive(Clone, Debug, PartialEq)]
pub struct BlurKernel {
    size: usize,
    weights: Vec<f64>,
}

impl BlurKernel {
    /// Normalizes `weights` (row-major `size×size`) to sum 1.
    pub fn from_weights(size: usize, weights: Vec<f64>) -> Result<Self> {
        if size.is_multiple_of(2) || weights.len() != size * size {
            return Err(Error::invalid(format!(
                "kernel of {} weights is not an odd square of side {size}",
                weights.len()
            )));
        }
        let total: f64 = weights.iter().sum();
        if !total.is_finite() || total.abs() < 1e-300 {
            return Err(Error::invalid("kernel weights sum to zero"));
        }
        Ok(BlurKernel {
            size,
            weights: weights.into_iter().map(|w| w / total).collect(),
        })
    }

    /// Single-tap identity kernel of the given odd size.
    pub fn delta(size: usize) -> Result<Self> {
        let mut w = vec![0.0; size * size];
        if let Some(center) = w.get_mut(size * size / 2) {
            *center = 1.0;
        }
        Self::from_weights(size, w)
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn radius(&self) -> usize {
        self.size / 2
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.weights[row * self.size + col]
    }
}

fn check_odd(size: usize, min: usize, what: &str) -> Result<()> {
    if size.is_multiple_of(2) || size < min {
        return Err(Error::invalid(format!(
            "{what} kernel size {size} must be odd and at least {min}"
        )));
    }
    Ok(())
}

/// Sampled 2D Gaussian with standard deviations `sigma_x`, `sigma_y` along
/// axes rotated by `theta` radians.
pub fn gen_gaussian_kernel(size: usize, sigma_x: f64, sigma_y: f64, theta: f64) -> Result<BlurKernel> {
    check_odd(size, 3, "gaussian")?;
    if !(sigma_x > 0.0 && sigma_y > 0.0) {
        return Err(Error::invalid(format!(
            "gaussian sigmas must be positive, got {sigma_x}, {sigma_y}"
        )));
    }
    // Σ = R·diag(σx², σy²)·Rᵀ, evaluated through its inverse.
    let (s, c) = (libm::sin(theta), libm::cos(theta));
    let (vx, vy) = (sigma_x * sigma_x, sigma_y * sigma_y);
    let a = c * c * vx + s * s * vy;
    let b = c * s * (vx - vy);
    let d = s * s * vx + c * c * vy;
    let det = a * d - b * b;
    let (ia, ib, id) = (d / det, -b / det, a / det);
    let r = (size / 2) as f64;
    let mut w = Vec::with_capacity(size * size);
    for row in 0..size {
        let y = row as f64 - r;
        for col in 0..size {
            let x = col as f64 - r;
            w.push(libm::exp(-0.5 * (ia * x * x + 2.0 * ib * x * y + id * y * y)));
        }
    }
    BlurKernel::from_weights(size, w)
}

/// Radially symmetric ideal low-pass kernel `ω·J₁(ω r)/(2π r)` at cutoff `ω`.
pub fn gen_sinc_kernel(size: usize, cutoff: f64) -> Result<BlurKernel> {
    check_odd(size, 7, "sinc")?;
    if !(cutoff > 0.0 && cutoff <= PI) {
        return Err(Error::invalid(format!("sinc cutoff {cutoff} outside (0, pi]")));
    }
    let c = (size / 2) as f64;
    let mut w = Vec::with_capacity(size * size);
    for row in 0..size {
        for col in 0..size {
            let r = ((row as f64 - c).powi(2) + (col as f64 - c).powi(2)).sqrt();
            w.push(if r == 0.0 {
                cutoff * cutoff / (4.0 * PI)
            } else {
                cutoff * libm::j1(cutoff * r) / (2.0 * PI * r)
            });
        }
    }
    BlurKernel::from_weights(size, w)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn total(k: &BlurKernel) -> f64 {
        k.weights().iter().sum()
    }

    #[test]
    fn gaussian_sums_to_one() {
        for &(size, sx, sy, th) in &[(7, 1.0, 2.0, 0.3), (21, 3.0, 0.2, -2.0), (3, 0.5, 0.5, 0.0)] {
            let k = gen_gaussian_kernel(size, sx, sy, th).unwrap();
            assert!((total(&k) - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn tiny_sigma_is_near_delta() {
        let k = gen_gaussian_kernel(7, 0.01, 0.01, 0.0).unwrap();
        assert!(k.at(3, 3) > 0.999);
    }

    #[test]
    fn isotropic_ignores_rotation() {
        let base = gen_gaussian_kernel(9, 2.0, 2.0, 0.0).unwrap();
        for theta in [0.4, 1.3, -2.9] {
            let k = gen_gaussian_kernel(9, 2.0, 2.0, theta).unwrap();
            for (a, b) in k.weights().iter().zip(base.weights()) {
                assert!((a - b).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn isotropic_rotation_symmetry() {
        let k = gen_gaussian_kernel(11, 1.7, 1.7, 0.0).unwrap();
        let n = k.size();
        for r in 0..n {
            for c in 0..n {
                assert!((k.at(r, c) - k.at(c, n - 1 - r)).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn rejects_bad_sizes() {
        assert!(gen_gaussian_kernel(8, 1.0, 1.0, 0.0).is_err());
        assert!(gen_gaussian_kernel(1, 1.0, 1.0, 0.0).is_err());
        assert!(gen_sinc_kernel(5, 1.0).is_err());
        assert!(gen_sinc_kernel(7, 0.0).is_err());
        assert!(gen_sinc_kernel(7, 3.5).is_err());
    }

    #[test]
    fn sinc_sums_to_one_and_is_radial() {
        let k = gen_sinc_kernel(13, PI / 3.0).unwrap();
        assert!((total(&k) - 1.0).abs() < 1e-6);
        let n = k.size();
        for r in 0..n {
            for c in 0..n {
                assert!((k.at(r, c) - k.at(c, n - 1 - r)).abs() < 1e-9);
            }
        }
        // negative side lobes are what produce ringing
        assert!(k.weights().iter().any(|&w| w < 0.0));
    }
}
