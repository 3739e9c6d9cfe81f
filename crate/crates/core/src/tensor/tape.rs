use super::kernels;
use super::{Scalar, Shape, Tensor};
use crate::error::{Error, Result};

/// Lower bound on the spectral-norm divisor.
pub const SPECTRAL_EPS: f64 = 1e-12;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Binary {
    Add,
    Sub,
    Mul,
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Conv2d {
        input: Var,
        weight: Var,
        bias: Option<Var>,
        stride: usize,
        padding: usize,
    },
    LeakyRelu {
        input: Var,
        slope: T,
    },
    NearestUpsample {
        input: Var,
        factor: usize,
    },
    BilinearUpsample {
        input: Var,
        factor: usize,
    },
    PixelUnshuffle {
        input: Var,
        factor: usize,
    },
    /// `a ∘ b` elementwise; `b` may be a single-element tensor broadcast over `a`.
    Binary {
        kind: Binary,
        a: Var,
        b: Var,
    },
    Scale {
        input: Var,
        factor: T,
    },
    Concat {
        inputs: Vec<Var>,
    },
    MeanAbsDiff {
        a: Var,
        b: Var,
    },
    Mean {
        input: Var,
    },
    Sum {
        input: Var,
    },
    /// `mean(softplus(sign · x))`
    MeanSoftplus {
        input: Var,
        sign: T,
    },
    /// `W / σ` with `σ = uᵀWv` and `u`, `v` held constant.
    SpectralNorm {
        weight: Var,
        u: Vec<T>,
        v: Vec<T>,
        sigma: T,
    },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Records a computation in evaluation order so gradients can be propagated
/// back from a scalar loss.
///
/// Nodes are appended as operations run, so every node's inputs precede it.
/// Input values stay on the tape for the backward pass.
#[derive(Debug, Default)]
pub struct Tape<T = f32> {
    nodes: Vec<Node<T>>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient for `var`, if it requires one and the loss depends on it.
    pub fn get(&self, var: Var) -> Option<&Tensor<T>> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    /// Gradient for `var`, or zeros of `shape` when the loss does not reach it.
    pub fn get_or_zeros(&self, var: Var, shape: Shape) -> Tensor<T> {
        self.get(var).cloned().unwrap_or_else(|| Tensor::zeros(shape))
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(var.0).and_then(Option::take)
    }
}

fn softplus(x: f64) -> f64 {
    // log(1 + e^x) without overflow
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn add_into<T: Scalar>(slot: &mut Option<Tensor<T>>, g: Tensor<T>) {
    match slot {
        None => *slot = Some(g),
        Some(acc) => {
            for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                *a = *a + *b;
            }
        }
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Records an input. `requires_grad` marks trainable leaves.
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.needs(v)
    }

    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Option<Var>, stride: usize, padding: usize) -> Result<Var> {
        let out = kernels::conv2d_forward(
            self.value(input),
            self.value(weight),
            bias.map(|b| self.value(b)),
            stride,
            padding,
        )?;
        let rg = self.needs(input) || self.needs(weight) || bias.is_some_and(|b| self.needs(b));
        Ok(self.push(
            out,
            Op::Conv2d {
                input,
                weight,
                bias,
                stride,
                padding,
            },
            rg,
        ))
    }

    pub fn leaky_relu(&mut self, input: Var, slope: f64) -> Result<Var> {
        if !(0.0..1.0).contains(&slope) {
            return Err(Error::invalid(format!("leaky_relu slope {slope} outside [0, 1)")));
        }
        let s = T::from_f64(slope);
        let out = self.value(input).map(|x| if x >= T::zero() { x } else { x * s });
        let rg = self.needs(input);
        Ok(self.push(out, Op::LeakyRelu { input, slope: s }, rg))
    }

    pub fn relu(&mut self, input: Var) -> Result<Var> {
        self.leaky_relu(input, 0.0)
    }

    pub fn nearest_upsample(&mut self, input: Var, factor: usize) -> Result<Var> {
        if factor == 0 {
            return Err(Error::invalid("nearest_upsample factor must be positive"));
        }
        let out = kernels::nearest_upsample(self.value(input), factor);
        let rg = self.needs(input);
        Ok(self.push(out, Op::NearestUpsample { input, factor }, rg))
    }

    pub fn bilinear_upsample(&mut self, input: Var, factor: usize) -> Result<Var> {
        if factor == 0 {
            return Err(Error::invalid("bilinear_upsample factor must be positive"));
        }
        let out = kernels::bilinear_upsample(self.value(input), factor);
        let rg = self.needs(input);
        Ok(self.push(out, Op::BilinearUpsample { input, factor }, rg))
    }

    pub fn pixel_unshuffle(&mut self, input: Var, factor: usize) -> Result<Var> {
        let out = kernels::pixel_unshuffle(self.value(input), factor)?;
        let rg = self.needs(input);
        Ok(self.push(out, Op::PixelUnshuffle { input, factor }, rg))
    }

    fn binary(&mut self, kind: Binary, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb && !sb.is_scalar() {
            return Err(Error::shape(
                match kind {
                    Binary::Add => "add",
                    Binary::Sub => "sub",
                    Binary::Mul => "mul",
                },
                format!("{sa} vs {sb}"),
            ));
        }
        let f = match kind {
            Binary::Add => |x: T, y: T| x + y,
            Binary::Sub => |x: T, y: T| x - y,
            Binary::Mul => |x: T, y: T| x * y,
        };
        let av = self.value(a).data();
        let bv = self.value(b).data();
        let data: Vec<T> = if sb.is_scalar() && !sa.is_scalar() {
            av.iter().map(|&x| f(x, bv[0])).collect()
        } else {
            av.iter().zip(bv).map(|(&x, &y)| f(x, y)).collect()
        };
        let out = Tensor::new(sa, data)?;
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Binary { kind, a, b }, rg))
    }

    /// `a + b`; `b` may be a single-element tensor broadcast over `a`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Mul, a, b)
    }

    pub fn scale(&mut self, input: Var, factor: f64) -> Var {
        let f = T::from_f64(factor);
        let out = self.value(input).map(|x| x * f);
        let rg = self.needs(input);
        self.push(out, Op::Scale { input, factor: f }, rg)
    }

    /// Concatenates along channels; all inputs must agree on N, H and W.
    pub fn concat_channels(&mut self, inputs: &[Var]) -> Result<Var> {
        let first = inputs
            .first()
            .map(|&v| self.shape(v))
            .ok_or_else(|| Error::invalid("concat_channels of zero tensors"))?;
        let mut channels = 0;
        for &v in inputs {
            let s = self.shape(v);
            if (s.n, s.h, s.w) != (first.n, first.h, first.w) {
                return Err(Error::shape("concat_channels", format!("{s} vs {first}")));
            }
            channels += s.c;
        }
        let out_shape = Shape::new(first.n, channels, first.h, first.w);
        let mut data = Vec::with_capacity(out_shape.numel());
        for n in 0..first.n {
            for &v in inputs {
                let t = self.value(v);
                let per = t.shape().c * t.shape().plane();
                data.extend_from_slice(&t.data()[n * per..(n + 1) * per]);
            }
        }
        let out = Tensor::new(out_shape, data)?;
        let rg = inputs.iter().any(|&v| self.needs(v));
        Ok(self.push(
            out,
            Op::Concat {
                inputs: inputs.to_vec(),
            },
            rg,
        ))
    }

    /// `(1/|a|) · Σ |aᵢ − bᵢ|` as a single-element tensor.
    pub fn mean_abs_diff(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::shape("mean_abs_diff", format!("{sa} vs {sb}")));
        }
        let av = self.value(a).data();
        let bv = self.value(b).data();
        let total: T = av.iter().zip(bv).map(|(&x, &y)| (x - y).abs()).sum();
        let out = Tensor::scalar(total / T::from_f64(av.len() as f64));
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::MeanAbsDiff { a, b }, rg))
    }

    pub fn mean(&mut self, input: Var) -> Var {
        let out = Tensor::scalar(self.value(input).mean());
        let rg = self.needs(input);
        self.push(out, Op::Mean { input }, rg)
    }

    pub fn sum(&mut self, input: Var) -> Var {
        let out = Tensor::scalar(self.value(input).sum());
        let rg = self.needs(input);
        self.push(out, Op::Sum { input }, rg)
    }

    /// `mean(log(1 + exp(sign · x)))`, evaluated without overflow.
    pub fn mean_softplus(&mut self, input: Var, sign: f64) -> Var {
        let x = self.value(input);
        let total: f64 = x.data().iter().map(|&v| softplus(sign * v.as_f64())).sum();
        let out = Tensor::scalar(T::from_f64(total / x.len() as f64));
        let rg = self.needs(input);
        self.push(
            out,
            Op::MeanSoftplus {
                input,
                sign: T::from_f64(sign),
            },
            rg,
        )
    }

    /// Divides `weight` (viewed as `out × rest`) by `σ = uᵀWv`, treating the
    /// singular-vector estimates as constants.
    pub fn spectral_norm(&mut self, weight: Var, u: Vec<T>, v: Vec<T>, sigma: T) -> Result<Var> {
        let s = self.shape(weight);
        if u.len() != s.n || v.len() != s.numel() / s.n {
            return Err(Error::shape(
                "spectral_norm",
                format!("u/v of length {}/{} for weight {s}", u.len(), v.len()),
            ));
        }
        let denom = sigma.max(T::from_f64(SPECTRAL_EPS));
        let out = self.value(weight).map(|x| x / denom);
        let rg = self.needs(weight);
        Ok(self.push(out, Op::SpectralNorm { weight, u, v, sigma }, rg))
    }

    /// Reverse-mode accumulation from the single-element `loss`.
    ///
    /// Leaves that require gradients but do not influence the loss get no
    /// entry; use [`Gradients::get_or_zeros`] for those.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        self.backward_scaled(loss, 1.0)
    }

    /// Like [`Tape::backward`] but seeds the loss gradient with `seed`.
    pub fn backward_scaled(&self, loss: Var, seed: f64) -> Result<Gradients<T>> {
        let ls = self.shape(loss);
        if !ls.is_scalar() {
            return Err(Error::NotScalar(ls.to_string()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        if !self.needs(loss) {
            return Ok(Gradients { grads });
        }
        grads[loss.0] = Some(Tensor::full(ls, T::from_f64(seed)));

        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            // Intermediate gradients are dropped once propagated.
            let Some(g) = grads[id].take() else {
                continue;
            };
            for (target, contribution) in self.local_grads(node, &g)? {
                if self.needs(target) {
                    add_into(&mut grads[target.0], contribution);
                }
            }
        }
        Ok(Gradients { grads })
    }

    fn local_grads(&self, node: &Node<T>, g: &Tensor<T>) -> Result<Vec<(Var, Tensor<T>)>> {
        let mut out = Vec::new();
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d {
                input,
                weight,
                bias,
                stride,
                padding,
            } => {
                let need = [
                    self.needs(*input),
                    self.needs(*weight),
                    bias.is_some_and(|b| self.needs(b)),
                ];
                let grads =
                    kernels::conv2d_backward(self.value(*input), self.value(*weight), g, *stride, *padding, need)?;
                if let Some(d) = grads.input {
                    out.push((*input, d));
                }
                if let Some(d) = grads.weight {
                    out.push((*weight, d));
                }
                if let (Some(b), Some(d)) = (bias, grads.bias) {
                    out.push((*b, d.reshape(self.shape(*b))?));
                }
            }
            Op::LeakyRelu { input, slope } => {
                let x = self.value(*input).data();
                let data = x
                    .iter()
                    .zip(g.data())
                    .map(|(&xv, &gv)| if xv >= T::zero() { gv } else { gv * *slope })
                    .collect();
                out.push((*input, Tensor::new(g.shape(), data)?));
            }
            Op::NearestUpsample { input, factor } => {
                out.push((*input, kernels::nearest_upsample_backward(g, *factor)));
            }
            Op::BilinearUpsample { input, factor } => {
                out.push((*input, kernels::bilinear_upsample_backward(g, *factor)));
            }
            Op::PixelUnshuffle { input, factor } => {
                out.push((*input, kernels::pixel_shuffle(g, *factor)?));
            }
            Op::Binary { kind, a, b } => {
                let sb = self.shape(*b);
                let broadcast = sb.is_scalar() && !g.shape().is_scalar();
                let reduce = |t: Tensor<T>| -> Tensor<T> {
                    if broadcast {
                        Tensor::scalar(t.sum())
                    } else {
                        t
                    }
                };
                let bval = |i: usize| {
                    let bv = self.value(*b).data();
                    if broadcast {
                        bv[0]
                    } else {
                        bv[i]
                    }
                };
                match kind {
                    Binary::Add => {
                        out.push((*a, g.clone()));
                        out.push((*b, reduce(g.clone())));
                    }
                    Binary::Sub => {
                        out.push((*a, g.clone()));
                        out.push((*b, reduce(g.map(|v| -v))));
                    }
                    Binary::Mul => {
                        let av = self.value(*a).data();
                        let ga: Vec<T> = g.data().iter().enumerate().map(|(i, &gv)| gv * bval(i)).collect();
                        let gb: Vec<T> = g.data().iter().zip(av).map(|(&gv, &x)| gv * x).collect();
                        out.push((*a, Tensor::new(g.shape(), ga)?));
                        out.push((*b, reduce(Tensor::new(g.shape(), gb)?)));
                    }
                }
            }
            Op::Scale { input, factor } => {
                out.push((*input, g.map(|v| v * *factor)));
            }
            Op::Concat { inputs } => {
                let s = g.shape();
                let per_out = s.c * s.plane();
                let mut offset = 0;
                for &v in inputs {
                    let vs = self.shape(v);
                    let per = vs.c * vs.plane();
                    let mut data = Vec::with_capacity(vs.numel());
                    for n in 0..s.n {
                        let start = n * per_out + offset;
                        data.extend_from_slice(&g.data()[start..start + per]);
                    }
                    offset += per;
                    out.push((v, Tensor::new(vs, data)?));
                }
            }
            Op::MeanAbsDiff { a, b } => {
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                let scale = g.data()[0] / T::from_f64(av.len() as f64);
                let ga: Vec<T> = av
                    .iter()
                    .zip(bv)
                    .map(|(&x, &y)| {
                        let d = x - y;
                        if d > T::zero() {
                            scale
                        } else if d < T::zero() {
                            -scale
                        } else {
                            T::zero()
                        }
                    })
                    .collect();
                let gb: Vec<T> = ga.iter().map(|&v| -v).collect();
                out.push((*a, Tensor::new(self.shape(*a), ga)?));
                out.push((*b, Tensor::new(self.shape(*b), gb)?));
            }
            Op::Mean { input } => {
                let s = self.shape(*input);
                out.push((*input, Tensor::full(s, g.data()[0] / T::from_f64(s.numel() as f64))));
            }
            Op::Sum { input } => {
                out.push((*input, Tensor::full(self.shape(*input), g.data()[0])));
            }
            Op::MeanSoftplus { input, sign } => {
                let x = self.value(*input);
                let scale = g.data()[0].as_f64() / x.len() as f64;
                let s = sign.as_f64();
                let data = x
                    .data()
                    .iter()
                    .map(|&v| T::from_f64(scale * s * sigmoid(s * v.as_f64())))
                    .collect();
                out.push((*input, Tensor::new(x.shape(), data)?));
            }
            Op::SpectralNorm { weight, u, v, sigma } => {
                // d(W/σ) = dW/σ − W·(uᵀ dW v)/σ²  ⇒  ∇W = (G − ⟨G, W/σ⟩·u vᵀ)/σ
                let eps = T::from_f64(SPECTRAL_EPS);
                let wn = &node.value;
                if *sigma < eps {
                    out.push((*weight, g.map(|x| x / eps)));
                } else {
                    let inner: T = g.data().iter().zip(wn.data()).map(|(&a, &b)| a * b).sum();
                    let cols = v.len();
                    let data = g
                        .data()
                        .iter()
                        .enumerate()
                        .map(|(i, &gv)| (gv - inner * u[i / cols] * v[i % cols]) / *sigma)
                        .collect();
                    out.push((*weight, Tensor::new(g.shape(), data)?));
                }
            }
        }
        Ok(out)
    }
}
