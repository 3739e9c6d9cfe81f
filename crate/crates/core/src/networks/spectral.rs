//! Spectral normalization by power iteration.

use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::tensor::{Scalar, Tensor, SPECTRAL_EPS};

fn normalize(v: &mut [f64]) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(SPECTRAL_EPS);
    v.iter_mut().for_each(|x| *x /= norm);
}

/// Result of a power-iteration estimate on a weight viewed as `out × rest`.
#[derive(Clone, Debug)]
pub struct SpectralEstimate<T> {
    pub u: Vec<T>,
    pub v: Vec<T>,
    pub sigma: T,
}

/// Runs `iterations` steps of `v ← norm(Wᵀu)`, `u ← norm(Wv)` and returns
/// `σ = uᵀWv`. With zero iterations `u` is kept and only `v` is refreshed.
pub fn power_iteration<T: Scalar>(weight: &Tensor<T>, u: &[T], iterations: usize) -> Result<SpectralEstimate<T>> {
    let rows = weight.shape().n;
    let cols = weight.len() / rows;
    if u.len() != rows {
        return Err(Error::shape(
            "spectral_normalize",
            format!("u has {} entries for {rows} output channels", u.len()),
        ));
    }
    let w: Vec<f64> = weight.data().iter().map(|x| x.as_f64()).collect();
    let mut u: Vec<f64> = u.iter().map(|x| x.as_f64()).collect();
    let mut v = vec![0.0; cols];

    let wt_u = |u: &[f64], v: &mut [f64]| {
        v.fill(0.0);
        for (r, &ur) in u.iter().enumerate() {
            for (vc, &wrc) in v.iter_mut().zip(&w[r * cols..(r + 1) * cols]) {
                *vc += wrc * ur;
            }
        }
        normalize(v);
    };
    let w_v = |v: &[f64], r: usize| -> f64 { w[r * cols..(r + 1) * cols].iter().zip(v).map(|(a, b)| a * b).sum() };

    if iterations == 0 {
        wt_u(&u, &mut v);
    }
    for _ in 0..iterations {
        wt_u(&u, &mut v);
        for (r, ur) in u.iter_mut().enumerate() {
            *ur = w_v(&v, r);
        }
        normalize(&mut u);
    }
    let sigma: f64 = u.iter().enumerate().map(|(r, &ur)| ur * w_v(&v, r)).sum();
    Ok(SpectralEstimate {
        u: u.into_iter().map(T::from_f64).collect(),
        v: v.into_iter().map(T::from_f64).collect(),
        sigma: T::from_f64(sigma),
    })
}

/// Returns `W / σ` and the updated left singular vector estimate.
pub fn spectral_normalize(weight: &Tensor<f32>, u: &[f32], iterations: usize) -> Result<(Tensor<f32>, Vec<f32>)> {
    let est = power_iteration(weight, u, iterations)?;
    let denom = (est.sigma as f64).max(SPECTRAL_EPS);
    Ok((weight.map(|x| (x as f64 / denom) as f32), est.u))
}

/// Random unit vector used to seed `u`.
pub fn initial_u(len: usize, rng: &mut SeededRng) -> Vec<f32> {
    let mut v: Vec<f64> = (0..len).map(|_| rng.normal()).collect();
    normalize(&mut v);
    v.into_iter().map(|x| x as f32).collect()
}
