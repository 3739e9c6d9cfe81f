//! Mapping between a [`Trainer`] and the checkpoint container.
//!
//! | tensor names                     | contents                          |
//! |----------------------------------|-----------------------------------|
//! | `generator.*`                    | generator weights                 |
//! | `discriminator.*`                | discriminator weights             |
//! | `discriminator.convK.sn_u`       | power-iteration vectors           |
//! | `ema.generator.*`                | EMA shadow of the generator       |
//! | `optim.m.<param>`, `optim.v.<param>` | Adam moments                  |
//!
//! Metadata keys: `iteration`, `seed`, `generator.adam_t`,
//! `discriminator.adam_t`, `generator_config`, `discriminator_config`.

use std::collections::BTreeSet;

use super::optim::AdamState;
use super::trainer::Trainer;
use crate::error::{Error, Result};
use crate::io::Checkpoint;
use crate::networks::{Generator, GeneratorConfig, ParamStore};
use crate::tensor::{Shape, Tensor};

pub const META_ITERATION: &str = "iteration";
pub const META_SEED: &str = "seed";
pub const META_GENERATOR_CONFIG: &str = "generator_config";
pub const META_DISCRIMINATOR_CONFIG: &str = "discriminator_config";
const META_GEN_T: &str = "generator.adam_t";
const META_DISC_T: &str = "discriminator.adam_t";

pub fn ema_name(param: &str) -> String {
    format!("ema.{param}")
}

fn moment_names(param: &str) -> (String, String) {
    (format!("optim.m.{param}"), format!("optim.v.{param}"))
}

/// What [`Trainer::load_checkpoint`] found.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LoadReport {
    pub discriminator_loaded: bool,
    pub ema_loaded: bool,
    pub optimizer_loaded: bool,
    /// Iteration stored in the checkpoint.
    pub stored_iteration: u64,
    pub stored_seed: Option<u64>,
    /// Tensors that no part of the model consumed.
    pub unused: Vec<String>,
}

fn meta_u64(ckpt: &Checkpoint, key: &str) -> Result<Option<u64>> {
    ckpt.metadata
        .get(key)
        .map(|v| {
            v.parse::<u64>()
                .map_err(|_| Error::Checkpoint(format!("metadata {key} = {v:?} is not an integer")))
        })
        .transpose()
}

fn insert_store(ckpt: &mut Checkpoint, store: &ParamStore) -> Result<()> {
    for p in store.iter() {
        ckpt.insert(p.name.clone(), p.value.clone())?;
    }
    Ok(())
}

fn insert_moments(ckpt: &mut Checkpoint, store: &ParamStore, opt: &AdamState) -> Result<()> {
    for (p, (m, v)) in store.iter().zip(opt.m.iter().zip(&opt.v)) {
        let (mn, vn) = moment_names(&p.name);
        ckpt.insert(mn, m.clone())?;
        ckpt.insert(vn, v.clone())?;
    }
    Ok(())
}

/// Collects `name → tensor` for every parameter, recording problems.
fn lookup_all(
    ckpt: &Checkpoint,
    store: &ParamStore,
    rename: impl Fn(&str) -> String,
    used: &mut BTreeSet<String>,
    problems: &mut Vec<String>,
) -> Vec<Tensor<f32>> {
    let mut out = Vec::with_capacity(store.len());
    for p in store.iter() {
        let name = rename(&p.name);
        match ckpt.get(&name) {
            None => problems.push(format!("{name}: missing")),
            Some(t) if t.shape() != p.value.shape() => problems.push(format!(
                "{name}: checkpoint shape {} but model expects {}",
                t.shape(),
                p.value.shape()
            )),
            Some(t) => out.push(t.clone()),
        }
        used.insert(name);
    }
    out
}

fn assign(store: &mut ParamStore, values: Vec<Tensor<f32>>) {
    for (p, v) in store.iter_mut().zip(values) {
        p.value = v;
    }
}

impl Trainer {
    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let mut ckpt = Checkpoint::new();
        let meta = &mut ckpt.metadata;
        meta.insert(META_ITERATION.into(), self.iteration.to_string());
        meta.insert(META_SEED.into(), self.config.seed.to_string());
        meta.insert(META_GEN_T.into(), self.gen_opt.t.to_string());
        meta.insert(META_DISC_T.into(), self.disc_opt.t.to_string());
        meta.insert(
            META_GENERATOR_CONFIG.into(),
            serde_json::to_string(self.generator.config()).expect("config serializes"),
        );
        meta.insert(
            META_DISCRIMINATOR_CONFIG.into(),
            serde_json::to_string(self.discriminator.config()).expect("config serializes"),
        );
        insert_store(&mut ckpt, self.generator.params())?;
        insert_store(&mut ckpt, self.discriminator.params())?;
        for (name, u) in self.discriminator.spectral_state() {
            ckpt.insert(name, Tensor::new(Shape::new(u.len(), 1, 1, 1), u.to_vec())?)?;
        }
        for (p, s) in self.generator.params().iter().zip(&self.ema.shadow) {
            ckpt.insert(ema_name(&p.name), s.clone())?;
        }
        insert_moments(&mut ckpt, self.generator.params(), &self.gen_opt)?;
        insert_moments(&mut ckpt, self.discriminator.params(), &self.disc_opt)?;
        Ok(ckpt)
    }

    /// Loads every tensor group present in `ckpt`. The generator is required;
    /// a missing discriminator, EMA or optimizer keeps its fresh state (the
    /// EMA then starts from the loaded generator). Any missing or misshapen
    /// tensor within a present group is an error, and all of them are listed.
    pub fn load_checkpoint(&mut self, ckpt: &Checkpoint) -> Result<LoadReport> {
        if !ckpt.has_prefix("generator.") {
            return Err(Error::Checkpoint("checkpoint has no generator tensors".into()));
        }
        let mut used = BTreeSet::new();
        let mut problems = Vec::new();
        let mut report = LoadReport::default();

        let gen = lookup_all(
            ckpt,
            self.generator.params(),
            |n| n.to_string(),
            &mut used,
            &mut problems,
        );

        let disc_present = ckpt.names().any(|n| n.starts_with("discriminator."));
        let mut disc = Vec::new();
        let mut sn = Vec::new();
        if disc_present {
            disc = lookup_all(
                ckpt,
                self.discriminator.params(),
                |n| n.to_string(),
                &mut used,
                &mut problems,
            );
            for (i, (name, u)) in self.discriminator.spectral_state().into_iter().enumerate() {
                if let Some(t) = ckpt.get(&name) {
                    if t.len() != u.len() {
                        problems.push(format!("{name}: {} entries but model expects {}", t.len(), u.len()));
                    } else {
                        sn.push((i, t.data().to_vec()));
                    }
                    used.insert(name);
                }
            }
        }

        let ema_present = ckpt.has_prefix("ema.");
        let ema = if ema_present {
            lookup_all(ckpt, self.generator.params(), ema_name, &mut used, &mut problems)
        } else {
            Vec::new()
        };

        let load_moments = |store: &ParamStore, used: &mut BTreeSet<String>, problems: &mut Vec<String>| {
            let first = store.iter().next().map(|p| moment_names(&p.name).0);
            if !first.is_some_and(|n| ckpt.contains(&n)) {
                return None;
            }
            let m = lookup_all(ckpt, store, |n| moment_names(n).0, used, problems);
            let v = lookup_all(ckpt, store, |n| moment_names(n).1, used, problems);
            Some((m, v))
        };
        let gen_moments = load_moments(self.generator.params(), &mut used, &mut problems);
        let disc_moments = load_moments(self.discriminator.params(), &mut used, &mut problems);

        if !problems.is_empty() {
            return Err(Error::TensorMismatch(problems));
        }

        assign(self.generator.params_mut(), gen);
        if disc_present {
            assign(self.discriminator.params_mut(), disc);
            for (i, u) in sn {
                self.discriminator.set_spectral_state(i, u)?;
            }
            report.discriminator_loaded = true;
        }
        self.ema.shadow = if ema_present {
            report.ema_loaded = true;
            ema
        } else {
            self.generator.params().values()
        };
        if let Some((m, v)) = gen_moments {
            self.gen_opt = AdamState {
                m,
                v,
                t: meta_u64(ckpt, META_GEN_T)?.unwrap_or(0),
            };
            report.optimizer_loaded = true;
        }
        if let Some((m, v)) = disc_moments {
            self.disc_opt = AdamState {
                m,
                v,
                t: meta_u64(ckpt, META_DISC_T)?.unwrap_or(0),
            };
        }
        report.stored_iteration = meta_u64(ckpt, META_ITERATION)?.unwrap_or(0);
        report.stored_seed = meta_u64(ckpt, META_SEED)?;
        report.unused = ckpt.names().filter(|n| !used.contains(*n)).map(String::from).collect();
        Ok(report)
    }
}

/// Generator for inference: architecture from the checkpoint metadata when
/// recorded (else `fallback`), EMA weights when present.
pub fn inference_generator(ckpt: &Checkpoint, fallback: &GeneratorConfig) -> Result<(Generator, bool)> {
    let config = match ckpt.metadata.get(META_GENERATOR_CONFIG) {
        Some(json) => serde_json::from_str(json)
            .map_err(|e| Error::Checkpoint(format!("metadata {META_GENERATOR_CONFIG}: {e}")))?,
        None => fallback.clone(),
    };
    let mut g = Generator::new(config)?;
    let ema = g.params().iter().all(|p| ckpt.contains(&ema_name(&p.name)));
    if ema {
        g.params_mut().load_from(&|n| ckpt.get(&ema_name(n)).cloned())?;
    } else {
        g.params_mut().load_from(&|n| ckpt.get(n).cloned())?;
    }
    Ok((g, ema))
}
