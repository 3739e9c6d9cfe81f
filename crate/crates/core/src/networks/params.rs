use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::tensor::{Gradients, Scalar, Shape, Tape, Tensor, Var};

/// A named trainable tensor and its most recent gradient.
#[derive(Clone, Debug)]
pub struct Parameter {
    /// Dot-separated path, e.g. `generator.body.0.rdb1.conv1.weight`.
    pub name: String,
    pub value: Tensor<f32>,
    pub grad: Tensor<f32>,
}

/// Ordered collection of uniquely named parameters.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: Vec<Parameter>,
    by_name: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<f32>) -> Result<usize> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(Error::invalid(format!("duplicate parameter name {name}")));
        }
        let idx = self.params.len();
        self.by_name.insert(name.clone(), idx);
        self.params.push(Parameter {
            grad: Tensor::zeros(value.shape()),
            name,
            value,
        });
        Ok(idx)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.params.iter_mut()
    }

    pub fn get(&self, idx: usize) -> &Parameter {
        &self.params[idx]
    }

    pub fn get_mut(&mut self, idx: usize) -> &mut Parameter {
        &mut self.params[idx]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.by_name.get(name).copied()
    }

    pub fn by_name(&self, name: &str) -> Option<&Parameter> {
        self.index_of(name).map(|i| &self.params[i])
    }

    /// Total number of trainable scalars.
    pub fn count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn values(&self) -> Vec<Tensor<f32>> {
        self.params.iter().map(|p| p.value.clone()).collect()
    }

    pub fn grads(&self) -> Vec<Tensor<f32>> {
        self.params.iter().map(|p| p.grad.clone()).collect()
    }

    /// Records every parameter as a tape leaf, cast to the tape's element type.
    pub fn bind<T: Scalar>(&self, tape: &mut Tape<T>, requires_grad: bool) -> Vec<Var> {
        self.params
            .iter()
            .map(|p| tape.leaf(p.value.cast::<T>(), requires_grad))
            .collect()
    }

    /// Like [`ParamStore::bind`] for the `f32` training tape, without copying.
    pub fn bind_f32(&self, tape: &mut Tape<f32>, requires_grad: bool) -> Vec<Var> {
        self.params
            .iter()
            .map(|p| tape.leaf(p.value.clone(), requires_grad))
            .collect()
    }

    /// Stores the gradient of each bound leaf (zeros where the loss does not reach it).
    pub fn store_grads(&mut self, grads: &Gradients<f32>, bound: &[Var]) {
        for (p, &var) in self.params.iter_mut().zip(bound) {
            p.grad = grads.get_or_zeros(var, p.value.shape());
        }
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad = Tensor::zeros(p.value.shape());
        }
    }

    /// Replaces values from `lookup`, failing with every missing or
    /// wrong-shaped tensor listed. Returns the names that were loaded.
    pub fn load_from(&mut self, lookup: &dyn Fn(&str) -> Option<Tensor<f32>>) -> Result<Vec<String>> {
        let mut problems = Vec::new();
        let mut staged = Vec::new();
        for (i, p) in self.params.iter().enumerate() {
            match lookup(&p.name) {
                None => problems.push(format!("{}: missing", p.name)),
                Some(t) if t.shape() != p.value.shape() => problems.push(format!(
                    "{}: checkpoint shape {} but model expects {}",
                    p.name,
                    t.shape(),
                    p.value.shape()
                )),
                Some(t) => staged.push((i, t)),
            }
        }
        if !problems.is_empty() {
            return Err(Error::TensorMismatch(problems));
        }
        let mut loaded = Vec::with_capacity(staged.len());
        for (i, t) in staged {
            self.params[i].value = t;
            loaded.push(self.params[i].name.clone());
        }
        Ok(loaded)
    }
}

/// Kaiming-normal initialization (`std = gain·√(2 / fan_in)`), zero bias.
pub(crate) fn kaiming_normal(shape: Shape, gain: f64, rng: &mut SeededRng) -> Tensor<f32> {
    let fan_in = (shape.c * shape.h * shape.w) as f64;
    let std = gain * (2.0 / fan_in).sqrt();
    let data = (0..shape.numel()).map(|_| (rng.normal() * std) as f32).collect();
    Tensor::new(shape, data).expect("shape matches data")
}

/// Parameter indices and geometry of one convolution layer.
#[derive(Clone, Copy, Debug)]
pub struct ConvLayer {
    pub weight: usize,
    pub bias: Option<usize>,
    pub stride: usize,
    pub padding: usize,
}

pub(crate) struct ConvSpec<'a> {
    pub name: &'a str,
    pub in_c: usize,
    pub out_c: usize,
    pub kernel: usize,
    pub stride: usize,
    pub bias: bool,
    pub gain: f64,
}

impl ConvLayer {
    pub(crate) fn build(store: &mut ParamStore, spec: ConvSpec<'_>, rng: &mut SeededRng) -> Result<Self> {
        let shape = Shape::new(spec.out_c, spec.in_c, spec.kernel, spec.kernel);
        let weight = store.add(format!("{}.weight", spec.name), kaiming_normal(shape, spec.gain, rng))?;
        let bias = if spec.bias {
            Some(store.add(
                format!("{}.bias", spec.name),
                Tensor::zeros(Shape::new(spec.out_c, 1, 1, 1)),
            )?)
        } else {
            None
        };
        Ok(ConvLayer {
            weight,
            bias,
            stride: spec.stride,
            padding: (spec.kernel - 1) / 2,
        })
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, bound: &[Var], x: Var) -> Result<Var> {
        tape.conv2d(
            x,
            bound[self.weight],
            self.bias.map(|b| bound[b]),
            self.stride,
            self.padding,
        )
    }

    /// Convolution with a pre-transformed weight (e.g. spectrally normalized).
    pub fn forward_with_weight<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        bound: &[Var],
        weight: Var,
        x: Var,
    ) -> Result<Var> {
        tape.conv2d(x, weight, self.bias.map(|b| bound[b]), self.stride, self.padding)
    }
}
