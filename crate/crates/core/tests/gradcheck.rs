//! Central finite differences against tape gradients, in f64.

use srforge_core::networks::{power_iteration, Generator, GeneratorConfig, LEAKY_SLOPE};
use srforge_core::rng::SeededRng;
use srforge_core::{Tape, Tensor, Var};

const STEP: f64 = 1e-4;
const TOL: f64 = 1e-3;
const COMPOSED_STEP: f64 = 1e-7;

fn random(shape: [usize; 4], rng: &mut SeededRng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_, _, _, _| rng.uniform_in(-1.0, 1.0))
}

/// Builds a scalar from the inputs: the op under test followed by a
/// weighted sum with fixed random weights so every output element matters.
type Build<'a> = dyn Fn(&mut Tape<f64>, &[Var]) -> Var + 'a;

fn weighted_sum(tape: &mut Tape<f64>, out: Var, seed: u64) -> Var {
    let s = tape.shape(out);
    if s.is_scalar() {
        return out;
    }
    let mut rng = SeededRng::new(seed);
    let w = tape.leaf(random(s.dims(), &mut rng), false);
    let p = tape.mul(out, w).unwrap();
    tape.sum(p)
}

fn eval(build: &Build<'_>, inputs: &[Tensor<f64>]) -> f64 {
    let mut tape = Tape::<f64>::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), false)).collect();
    let out = build(&mut tape, &vars);
    let loss = weighted_sum(&mut tape, out, 99);
    tape.value(loss).data()[0]
}

/// Largest `|analytic − numeric| / max|numeric|` over the checked entries of
/// every input. `limit` caps the entries checked per input (evenly strided).
fn max_rel_error(build: &Build<'_>, inputs: &[Tensor<f64>], limit: usize, step: f64) -> f64 {
    let mut tape = Tape::<f64>::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let out = build(&mut tape, &vars);
    let loss = weighted_sum(&mut tape, out, 99);
    let grads = tape.backward(loss).unwrap();

    let mut worst: f64 = 0.0;
    for (k, input) in inputs.iter().enumerate() {
        let analytic = grads.get_or_zeros(vars[k], input.shape());
        let stride = input.len().div_ceil(limit).max(1);
        let mut diff: f64 = 0.0;
        let mut scale: f64 = 0.0;
        for i in (0..input.len()).step_by(stride) {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[i] += step;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[i] -= step;
            let numeric = (eval(build, &plus) - eval(build, &minus)) / (2.0 * step);
            diff = diff.max((analytic.data()[i] - numeric).abs());
            scale = scale.max(numeric.abs()).max(analytic.data()[i].abs());
        }
        worst = worst.max(diff / scale.max(1e-12));
    }
    worst
}

fn check(name: &str, build: &Build<'_>, shapes: &[[usize; 4]]) {
    let mut rng = SeededRng::new(name.bytes().map(u64::from).sum());
    let inputs: Vec<Tensor<f64>> = shapes.iter().map(|&s| random(s, &mut rng)).collect();
    let err = max_rel_error(build, &inputs, usize::MAX, STEP);
    assert!(err <= TOL, "{name}: max relative error {err:.3e}");
}

#[test]
fn conv2d_variants() {
    for (stride, padding, bias) in [(1, 1, true), (2, 1, true), (1, 0, false), (2, 0, true)] {
        let name = format!("conv2d s{stride} p{padding} b{bias}");
        let shapes: Vec<[usize; 4]> = if bias {
            vec![[2, 3, 7, 6], [4, 3, 3, 3], [1, 4, 1, 1]]
        } else {
            vec![[2, 3, 7, 6], [4, 3, 3, 3]]
        };
        check(
            &name,
            &move |t, v| t.conv2d(v[0], v[1], v.get(2).copied(), stride, padding).unwrap(),
            &shapes,
        );
    }
    check(
        "conv2d 1x1",
        &|t, v| t.conv2d(v[0], v[1], Some(v[2]), 1, 0).unwrap(),
        &[[1, 5, 4, 4], [2, 5, 1, 1], [1, 2, 1, 1]],
    );
}

#[test]
fn activations() {
    check(
        "leaky_relu",
        &|t, v| t.leaky_relu(v[0], LEAKY_SLOPE).unwrap(),
        &[[2, 3, 5, 4]],
    );
    check("relu", &|t, v| t.relu(v[0]).unwrap(), &[[2, 3, 5, 4]]);
}

#[test]
fn resampling() {
    check(
        "nearest_upsample",
        &|t, v| t.nearest_upsample(v[0], 2).unwrap(),
        &[[1, 2, 3, 4]],
    );
    check(
        "bilinear_upsample",
        &|t, v| t.bilinear_upsample(v[0], 2).unwrap(),
        &[[2, 2, 4, 3]],
    );
    check(
        "pixel_unshuffle",
        &|t, v| t.pixel_unshuffle(v[0], 2).unwrap(),
        &[[1, 2, 4, 6]],
    );
    check(
        "pixel_unshuffle 4",
        &|t, v| t.pixel_unshuffle(v[0], 4).unwrap(),
        &[[1, 1, 8, 8]],
    );
}

#[test]
fn elementwise() {
    check("add", &|t, v| t.add(v[0], v[1]).unwrap(), &[[2, 3, 4, 4], [2, 3, 4, 4]]);
    check(
        "add broadcast",
        &|t, v| t.add(v[0], v[1]).unwrap(),
        &[[2, 3, 4, 4], [1, 1, 1, 1]],
    );
    check("sub", &|t, v| t.sub(v[0], v[1]).unwrap(), &[[2, 3, 4, 4], [2, 3, 4, 4]]);
    check(
        "sub broadcast",
        &|t, v| t.sub(v[0], v[1]).unwrap(),
        &[[2, 3, 4, 4], [1, 1, 1, 1]],
    );
    check("mul", &|t, v| t.mul(v[0], v[1]).unwrap(), &[[2, 3, 4, 4], [2, 3, 4, 4]]);
    check(
        "mul broadcast",
        &|t, v| t.mul(v[0], v[1]).unwrap(),
        &[[2, 3, 4, 4], [1, 1, 1, 1]],
    );
    check("scale", &|t, v| t.scale(v[0], -0.7), &[[1, 2, 3, 3]]);
    check(
        "concat_channels",
        &|t, v| t.concat_channels(&[v[0], v[1], v[2]]).unwrap(),
        &[[2, 1, 3, 3], [2, 3, 3, 3], [2, 2, 3, 3]],
    );
}

#[test]
fn reductions() {
    check(
        "mean_abs_diff",
        &|t, v| t.mean_abs_diff(v[0], v[1]).unwrap(),
        &[[2, 3, 4, 5], [2, 3, 4, 5]],
    );
    check("mean", &|t, v| t.mean(v[0]), &[[2, 3, 4, 5]]);
    check("sum", &|t, v| t.sum(v[0]), &[[2, 3, 4, 5]]);
    check("mean_softplus +", &|t, v| t.mean_softplus(v[0], 1.0), &[[2, 1, 4, 5]]);
    check("mean_softplus -", &|t, v| t.mean_softplus(v[0], -1.0), &[[2, 1, 4, 5]]);
}

#[test]
fn spectral_norm_with_fixed_vectors() {
    // u and v are constants of the forward pass, so the reference treats
    // σ = uᵀWv as a function of W when differencing.
    let mut rng = SeededRng::new(5);
    let w = random([4, 3, 3, 3], &mut rng);
    let u0: Vec<f64> = (0..4).map(|_| rng.normal()).collect();
    let est = power_iteration(&w, &u0, 3).unwrap();
    let (u, v) = (est.u.clone(), est.v.clone());
    let build = move |t: &mut Tape<f64>, vars: &[Var]| {
        let wv = t.value(vars[0]);
        let rest = wv.len() / 4;
        let sigma: f64 = (0..4)
            .map(|i| u[i] * (0..rest).map(|j| wv.data()[i * rest + j] * v[j]).sum::<f64>())
            .sum();
        t.spectral_norm(vars[0], u.clone(), v.clone(), sigma).unwrap()
    };
    let err = max_rel_error(&build, &[w], usize::MAX, STEP);
    assert!(err <= TOL, "spectral_norm: max relative error {err:.3e}");
}

#[test]
fn composed_toy_generator() {
    let g = Generator::new(GeneratorConfig::toy(8, 1, 8, 4)).unwrap();
    let mut rng = SeededRng::new(11);
    let lr = Tensor::from_fn([1, 3, 16, 16], |_, _, _, _| rng.uniform());
    let params: Vec<Tensor<f64>> = g.params().iter().map(|p| p.value.cast::<f64>()).collect();
    let mut inputs = vec![lr];
    inputs.extend(params);
    let build = |t: &mut Tape<f64>, vars: &[Var]| g.forward(t, &vars[1..], vars[0]).unwrap();
    // A weight perturbation moves every activation of its channel, and at a
    // step of 1e-4 some of the thousands of leaky-ReLU inputs cross zero.
    // The smaller step keeps the difference on one linear piece.
    let err = max_rel_error(&build, &inputs, 6, COMPOSED_STEP);
    assert!(err <= TOL, "toy generator: max relative error {err:.3e}");
}

#[test]
fn backward_is_linear_in_the_seed() {
    let mut rng = SeededRng::new(3);
    let x = random([1, 2, 4, 4], &mut rng);
    let w = random([3, 2, 3, 3], &mut rng);
    let mut tape = Tape::<f64>::new();
    let xv = tape.leaf(x, true);
    let wv = tape.leaf(w, true);
    let y = tape.conv2d(xv, wv, None, 1, 1).unwrap();
    let y = tape.leaky_relu(y, LEAKY_SLOPE).unwrap();
    let loss = tape.mean(y);
    let g1 = tape.backward(loss).unwrap();
    let g4 = tape.backward_scaled(loss, 4.0).unwrap();
    for v in [xv, wv] {
        let a = g1.get(v).unwrap().map(|x| x * 4.0);
        assert_eq!(a.data(), g4.get(v).unwrap().data());
    }
}
