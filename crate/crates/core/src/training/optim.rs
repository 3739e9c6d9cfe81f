use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::networks::ParamStore;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

/// First and second moments per parameter plus the step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<Tensor<f32>>,
    pub v: Vec<Tensor<f32>>,
    pub t: u64,
}

impl AdamState {
    pub fn new(params: &ParamStore) -> Self {
        let zeros = || params.iter().map(|p| Tensor::zeros(p.value.shape())).collect();
        AdamState {
            m: zeros(),
            v: zeros(),
            t: 0,
        }
    }
}

/// One bias-corrected Adam update of `theta` at step `t` (1-based).
pub fn adam_update(theta: &mut [f32], g: &[f32], m: &mut [f32], v: &mut [f32], t: u64, h: &AdamHyper) {
    let c1 = 1.0 - h.beta1.powi(t as i32);
    let c2 = 1.0 - h.beta2.powi(t as i32);
    for i in 0..theta.len() {
        let gi = g[i] as f64;
        let mi = h.beta1 * m[i] as f64 + (1.0 - h.beta1) * gi;
        let vi = h.beta2 * v[i] as f64 + (1.0 - h.beta2) * gi * gi;
        m[i] = mi as f32;
        v[i] = vi as f32;
        let update = h.lr * (mi / c1) / ((vi / c2).sqrt() + h.eps);
        theta[i] = (theta[i] as f64 - update) as f32;
    }
}

/// Applies Adam to every parameter using its stored gradient.
pub fn adam_step(params: &mut ParamStore, state: &mut AdamState, h: &AdamHyper) -> Result<()> {
    if state.m.len() != params.len() || state.v.len() != params.len() {
        return Err(Error::shape(
            "adam_step",
            format!(
                "optimizer holds {} moments for {} parameters",
                state.m.len(),
                params.len()
            ),
        ));
    }
    state.t += 1;
    let t = state.t;
    let mut work: Vec<_> = params
        .iter_mut()
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
        .collect();
    work.par_iter_mut().try_for_each(|(p, (m, v))| {
        let s = p.value.shape();
        if p.grad.shape() != s || m.shape() != s || v.shape() != s {
            return Err(Error::shape(
                "adam_step",
                format!("{}: state shapes differ from {s}", p.name),
            ));
        }
        let grad = p.grad.clone();
        adam_update(p.value.data_mut(), grad.data(), m.data_mut(), v.data_mut(), t, h);
        Ok(())
    })
}

/// Shadow copy of parameters tracking `decay·shadow + (1−decay)·current`.
#[derive(Clone, Debug, PartialEq)]
pub struct EmaState {
    pub shadow: Vec<Tensor<f32>>,
    pub decay: f64,
}

pub fn ema_update(shadow: &mut [f32], current: &[f32], decay: f64) {
    for (s, &c) in shadow.iter_mut().zip(current) {
        *s = (decay * *s as f64 + (1.0 - decay) * c as f64) as f32;
    }
}

impl EmaState {
    pub fn new(params: &ParamStore, decay: f64) -> Self {
        EmaState {
            shadow: params.values(),
            decay,
        }
    }

    pub fn update(&mut self, params: &ParamStore) -> Result<()> {
        if self.shadow.len() != params.len() {
            return Err(Error::shape(
                "ema_update",
                format!("{} shadow tensors for {} parameters", self.shadow.len(), params.len()),
            ));
        }
        for (s, p) in self.shadow.iter_mut().zip(params.iter()) {
            if s.shape() != p.value.shape() {
                return Err(Error::shape(
                    "ema_update",
                    format!("{}: {} vs {}", p.name, s.shape(), p.value.shape()),
                ));
            }
        }
        let decay = self.decay;
        self.shadow
            .par_iter_mut()
            .zip(params.iter().collect::<Vec<_>>().par_iter())
            .for_each(|(s, p)| ema_update(s.data_mut(), p.value.data(), decay));
        Ok(())
    }
}
