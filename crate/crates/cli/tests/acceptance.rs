//! Acceptance run. Prints one `PASS` or `FAIL` line per criterion and exits
//! nonzero if any criterion fails.
//!
//! | # | criterion                                    | budget  |
//! |---|----------------------------------------------|---------|
//! | 1 | canonical generator parameter count          | 1 s     |
//! | 2 | canonical discriminator parameter count      | 1 s     |
//! | 3 | finite-difference gradient suite             | 2 min   |
//! | 4 | iteration schedule                           |         |
//! | 5 | multi-scale dataset preparation              |         |
//! | 6 | PSNR / SSIM against direct definitions       |         |
//! | 7 | degradation determinism and sanity           |         |
//! | 8 | L1 overfit of a toy generator                | 5 min   |
//! | 9 | desk-scale GAN fine-tune through the CLI     | 20 min  |
//! | 10| deterministic evaluation reports             |         |

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use srforge_core::degradation::{
    apply_blur, degrade, gen_sinc_kernel, jpeg_roundtrip, resize, DegradationConfig, ResizeMethod,
};
use srforge_core::evaluation::{psnr, ssim};
use srforge_core::io::{read_image, write_image, DEFAULT_SCALES, MANIFEST_FILE};
use srforge_core::networks::{Discriminator, DiscriminatorConfig, Generator, GeneratorConfig, LEAKY_SLOPE};
use srforge_core::rng::SeededRng;
use srforge_core::training::{plan_schedule, FeatureExtractor, LossWeights, TrainConfig, Trainer};
use srforge_core::{Tape, Tensor, Var};

type Verdict = Result<String, String>;
type Criterion = (&'static str, fn() -> Verdict);

fn ensure(ok: bool, detail: String) -> Verdict {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn within(elapsed: Duration, budget: Duration, detail: String) -> Verdict {
    if elapsed <= budget {
        Ok(detail)
    } else {
        Err(format!(
            "{detail}, but took {:.1}s (budget {}s)",
            elapsed.as_secs_f64(),
            budget.as_secs()
        ))
    }
}

fn srforge(args: &[&str]) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_srforge"))
        .args(args)
        .env_remove("SRFORGE_THREADS")
        .output()
        .map_err(|e| format!("spawning srforge: {e}"))?;
    let stdout = String::from_utf8_lossy(&out.stdout).into_owned();
    if out.status.success() {
        Ok(stdout)
    } else {
        Err(format!(
            "srforge {}: {}{}",
            args.join(" "),
            stdout.trim(),
            String::from_utf8_lossy(&out.stderr).trim()
        ))
    }
}

fn path_str(p: &Path) -> &str {
    p.to_str().expect("utf-8 temp path")
}

fn c1_generator_params() -> Verdict {
    let t = Instant::now();
    let n = Generator::new(GeneratorConfig::canonical(4))
        .map_err(|e| e.to_string())?
        .count_params();
    ensure(n == 16_697_987, format!("{n} parameters")).and_then(|d| within(t.elapsed(), Duration::from_secs(1), d))
}

fn c2_discriminator_params() -> Verdict {
    let t = Instant::now();
    let n = Discriminator::new(DiscriminatorConfig::default())
        .map_err(|e| e.to_string())?
        .count_params();
    ensure(n == 4_376_897, format!("{n} parameters")).and_then(|d| within(t.elapsed(), Duration::from_secs(1), d))
}

// Criterion 3: central differences in f64 against the tape.

type Build<'a> = dyn Fn(&mut Tape<f64>, &[Var]) -> Var + 'a;
type OpCase<'a> = (&'static str, Box<Build<'a>>, Vec<[usize; 4]>);

fn random(shape: [usize; 4], rng: &mut SeededRng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_, _, _, _| rng.uniform_in(-1.0, 1.0))
}

fn project(tape: &mut Tape<f64>, out: Var) -> Var {
    let s = tape.shape(out);
    if s.is_scalar() {
        return out;
    }
    let w = tape.leaf(random(s.dims(), &mut SeededRng::new(99)), false);
    let p = tape.mul(out, w).expect("same shape");
    tape.sum(p)
}

fn loss_at(build: &Build<'_>, inputs: &[Tensor<f64>]) -> f64 {
    let mut tape = Tape::<f64>::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), false)).collect();
    let out = build(&mut tape, &vars);
    let loss = project(&mut tape, out);
    tape.value(loss).data()[0]
}

fn gradient_error(build: &Build<'_>, inputs: &[Tensor<f64>], per_input: usize, step: f64) -> f64 {
    let mut tape = Tape::<f64>::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let out = build(&mut tape, &vars);
    let loss = project(&mut tape, out);
    let grads = tape.backward(loss).expect("scalar loss");
    let mut worst: f64 = 0.0;
    for (k, input) in inputs.iter().enumerate() {
        let analytic = grads.get_or_zeros(vars[k], input.shape());
        let (mut diff, mut scale): (f64, f64) = (0.0, 0.0);
        for i in (0..input.len()).step_by(input.len().div_ceil(per_input).max(1)) {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[i] += step;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[i] -= step;
            let numeric = (loss_at(build, &plus) - loss_at(build, &minus)) / (2.0 * step);
            diff = diff.max((analytic.data()[i] - numeric).abs());
            scale = scale.max(numeric.abs()).max(analytic.data()[i].abs());
        }
        worst = worst.max(diff / scale.max(1e-12));
    }
    worst
}

fn c3_gradients() -> Verdict {
    let t = Instant::now();
    let mut rng = SeededRng::new(3);
    let mut cases: Vec<OpCase<'_>> = vec![
        (
            "conv2d",
            Box::new(|t, v| t.conv2d(v[0], v[1], Some(v[2]), 1, 1).unwrap()),
            vec![[2, 3, 6, 5], [4, 3, 3, 3], [1, 4, 1, 1]],
        ),
        (
            "conv2d stride 2",
            Box::new(|t, v| t.conv2d(v[0], v[1], None, 2, 1).unwrap()),
            vec![[1, 2, 7, 6], [3, 2, 3, 3]],
        ),
        (
            "leaky_relu",
            Box::new(|t, v| t.leaky_relu(v[0], LEAKY_SLOPE).unwrap()),
            vec![[2, 3, 4, 4]],
        ),
        ("relu", Box::new(|t, v| t.relu(v[0]).unwrap()), vec![[2, 3, 4, 4]]),
        (
            "nearest_upsample",
            Box::new(|t, v| t.nearest_upsample(v[0], 2).unwrap()),
            vec![[1, 2, 3, 4]],
        ),
        (
            "bilinear_upsample",
            Box::new(|t, v| t.bilinear_upsample(v[0], 2).unwrap()),
            vec![[1, 2, 4, 3]],
        ),
        (
            "pixel_unshuffle",
            Box::new(|t, v| t.pixel_unshuffle(v[0], 2).unwrap()),
            vec![[1, 2, 4, 6]],
        ),
        (
            "add",
            Box::new(|t, v| t.add(v[0], v[1]).unwrap()),
            vec![[2, 3, 4, 4], [1, 1, 1, 1]],
        ),
        (
            "sub",
            Box::new(|t, v| t.sub(v[0], v[1]).unwrap()),
            vec![[2, 3, 4, 4], [2, 3, 4, 4]],
        ),
        (
            "mul",
            Box::new(|t, v| t.mul(v[0], v[1]).unwrap()),
            vec![[2, 3, 4, 4], [2, 3, 4, 4]],
        ),
        ("scale", Box::new(|t, v| t.scale(v[0], -0.7)), vec![[1, 2, 3, 3]]),
        (
            "concat_channels",
            Box::new(|t, v| t.concat_channels(&[v[0], v[1]]).unwrap()),
            vec![[2, 1, 3, 3], [2, 3, 3, 3]],
        ),
        (
            "mean_abs_diff",
            Box::new(|t, v| t.mean_abs_diff(v[0], v[1]).unwrap()),
            vec![[2, 3, 4, 5], [2, 3, 4, 5]],
        ),
        ("mean", Box::new(|t, v| t.mean(v[0])), vec![[2, 3, 4, 5]]),
        ("sum", Box::new(|t, v| t.sum(v[0])), vec![[2, 3, 4, 5]]),
        (
            "mean_softplus",
            Box::new(|t, v| t.mean_softplus(v[0], -1.0)),
            vec![[2, 1, 4, 5]],
        ),
    ];
    let mut worst = (0.0, "");
    for (name, build, shapes) in cases.drain(..) {
        let inputs: Vec<Tensor<f64>> = shapes.iter().map(|&s| random(s, &mut rng)).collect();
        let err = gradient_error(build.as_ref(), &inputs, usize::MAX, 1e-4);
        if err > worst.0 {
            worst = (err, name);
        }
    }

    let g = Generator::new(GeneratorConfig::toy(8, 1, 8, 4)).map_err(|e| e.to_string())?;
    let mut inputs = vec![Tensor::from_fn([1, 3, 16, 16], |_, _, _, _| rng.uniform())];
    inputs.extend(g.params().iter().map(|p| p.value.cast::<f64>()));
    let build = |t: &mut Tape<f64>, v: &[Var]| g.forward(t, &v[1..], v[0]).unwrap();
    // Leaky-ReLU kinks sit close together in a deep net; the smaller step
    // keeps each difference on one linear piece.
    let composed = gradient_error(&build, &inputs, 6, 1e-7);

    let detail = format!(
        "worst op {} {:.2e}, toy generator {:.2e} (tolerance 1e-3)",
        worst.1, worst.0, composed
    );
    ensure(worst.0 <= 1e-3 && composed <= 1e-3, detail).and_then(|d| within(t.elapsed(), Duration::from_secs(120), d))
}

fn c4_schedule() -> Verdict {
    let a = plan_schedule(397, 10, 75.0).map_err(|e| e.to_string())?;
    let b = plan_schedule(3310, 10, 50.0).map_err(|e| e.to_string())?;
    let off = (b as f64 - 16600.0).abs() / 16600.0;
    ensure(
        a == 3000 && b == 16550 && off <= 0.01,
        format!("{a} and {b} ({:.2}% from 16600)", off * 100.0),
    )
}

fn noise_image(seed: u64, h: usize, w: usize) -> Tensor<f32> {
    let mut rng = SeededRng::new(seed);
    Tensor::from_fn([1, 3, h, w], |_, _, _, _| rng.below(256) as f32 / 255.0)
}

fn c5_multiscale() -> Verdict {
    let src = tempfile::tempdir().map_err(|e| e.to_string())?;
    let dst = tempfile::tempdir().map_err(|e| e.to_string())?;
    let sources = [("big", 605, 700), ("mid", 64, 48), ("small", 33, 33)];
    for (i, &(stem, h, w)) in sources.iter().enumerate() {
        write_image(&noise_image(i as u64, h, w), &src.path().join(format!("{stem}.png")))
            .map_err(|e| e.to_string())?;
    }
    let summary = srforge(&[
        "prepare",
        "--input",
        path_str(src.path()),
        "--output",
        path_str(dst.path()),
    ])?;
    let pngs = fs::read_dir(dst.path())
        .map_err(|e| e.to_string())?
        .filter(|e| {
            e.as_ref()
                .is_ok_and(|e| e.path().extension().is_some_and(|x| x == "png"))
        })
        .count();
    let mut copies_identical = true;
    for (stem, _, _) in sources {
        let copy = fs::read(dst.path().join(format!("{stem}_x1.png"))).map_err(|e| e.to_string())?;
        copies_identical &= copy == fs::read(src.path().join(format!("{stem}.png"))).map_err(|e| e.to_string())?;
    }
    let half = read_image(&dst.path().join("big_x0.5.png")).map_err(|e| e.to_string())?;
    let dims = (half.shape().w, half.shape().h);
    ensure(
        pngs == 5 * sources.len()
            && DEFAULT_SCALES.len() == 5
            && copies_identical
            && dims == (350, 303)
            && dst.path().join(MANIFEST_FILE).exists(),
        format!(
            "{} sources -> {pngs} files, scale-1 copies identical: {copies_identical}, 700x605 at 0.5 -> {}x{} ({})",
            sources.len(),
            dims.0,
            dims.1,
            summary.trim()
        ),
    )
}

// Criterion 6: metrics against their definitions, evaluated naively.

fn direct_psnr(a: &Tensor<f32>, b: &Tensor<f32>) -> f64 {
    let se: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| (x as f64 - y as f64).powi(2))
        .sum();
    10.0 * (255.0f64 * 255.0 / (se / a.len() as f64)).log10()
}

fn direct_ssim(a: &Tensor<f32>, b: &Tensor<f32>) -> f64 {
    let s = a.shape();
    let luma = |t: &Tensor<f32>, y: usize, x: usize| {
        0.299 * t.at(0, 0, y, x) as f64 + 0.587 * t.at(0, 1, y, x) as f64 + 0.114 * t.at(0, 2, y, x) as f64
    };
    let mut g = [[0.0f64; 11]; 11];
    for (i, row) in g.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = (-(((i as f64 - 5.0).powi(2) + (j as f64 - 5.0).powi(2)) / 4.5)).exp();
        }
    }
    let total: f64 = g.iter().flatten().sum();
    let (c1, c2) = ((0.01f64 * 255.0).powi(2), (0.03f64 * 255.0).powi(2));
    let mut acc = 0.0;
    let mut count = 0;
    for y0 in 0..=s.h - 11 {
        for x0 in 0..=s.w - 11 {
            let mut m = [0.0f64; 5];
            for (i, row) in g.iter().enumerate() {
                for (j, &weight) in row.iter().enumerate() {
                    let k = weight / total;
                    let (p, q) = (luma(a, y0 + i, x0 + j), luma(b, y0 + i, x0 + j));
                    m[0] += k * p;
                    m[1] += k * q;
                    m[2] += k * p * p;
                    m[3] += k * q * q;
                    m[4] += k * p * q;
                }
            }
            let (va, vb, cov) = (m[2] - m[0] * m[0], m[3] - m[1] * m[1], m[4] - m[0] * m[1]);
            acc += (2.0 * m[0] * m[1] + c1) * (2.0 * cov + c2) / ((m[0] * m[0] + m[1] * m[1] + c1) * (va + vb + c2));
            count += 1;
        }
    }
    acc / count as f64
}

fn c6_metrics() -> Verdict {
    let mut rng = SeededRng::new(606);
    let (mut dp, mut ds) = (0.0f64, 0.0f64);
    for _ in 0..20 {
        let h = 11 + rng.below(20) as usize;
        let w = 11 + rng.below(20) as usize;
        let a = Tensor::from_fn([1, 3, h, w], |_, _, _, _| rng.below(256) as f32);
        let b = Tensor::from_fn([1, 3, h, w], |n, c, y, x| {
            (a.at(n, c, y, x) as f64 + 25.0 * rng.normal())
                .round()
                .clamp(0.0, 255.0) as f32
        });
        dp = dp.max((psnr(&a, &b, 255.0).map_err(|e| e.to_string())? - direct_psnr(&a, &b)).abs());
        ds = ds.max((ssim(&a, &b, 255.0).map_err(|e| e.to_string())? - direct_ssim(&a, &b)).abs());
    }
    let zero_db = psnr(
        &Tensor::full([1, 1, 4, 4], 0.0f32),
        &Tensor::full([1, 1, 4, 4], 255.0),
        255.0,
    );
    let one_off = psnr(
        &Tensor::<f32>::zeros([1, 1, 2, 2]),
        &Tensor::new([1, 1, 2, 2], vec![10.0, 0.0, 0.0, 0.0]).map_err(|e| e.to_string())?,
        255.0,
    );
    let flat = ssim(
        &Tensor::full([1, 1, 12, 12], 100.0f32),
        &Tensor::full([1, 1, 12, 12], 110.0),
        255.0,
    );
    let (zero_db, one_off, flat) = (
        zero_db.map_err(|e| e.to_string())?,
        one_off.map_err(|e| e.to_string())?,
        flat.map_err(|e| e.to_string())?,
    );
    ensure(
        dp <= 1e-6 && ds <= 1e-4 && zero_db.abs() <= 1e-3 && (one_off - 34.151).abs() <= 1e-3 && (flat - 0.99548).abs() <= 1e-3,
        format!("20 pairs: psnr diff {dp:.1e}, ssim diff {ds:.1e}; examples {zero_db:.4} dB, {one_off:.4} dB, ssim {flat:.5}"),
    )
}

fn c7_degradation() -> Verdict {
    let img = Tensor::from_fn([1, 3, 64, 64], |_, c, y, x| {
        (0.5 + 0.3 * ((x as f64 * 0.21).sin() * (y as f64 * 0.17 + c as f64).cos())) as f32
    });
    let cfg = DegradationConfig::default();
    let run = |i: u64| degrade(&img, &cfg, &mut SeededRng::new(42).child(i)).map_err(|e| e.to_string());
    let ((a, ra), (b, rb)) = (run(0)?, run(0)?);
    let deterministic = a.data() == b.data() && ra == rb;

    let (same, _) = degrade(&img, &DegradationConfig::identity(), &mut SeededRng::new(1)).map_err(|e| e.to_string())?;
    let identity_db = psnr(&same, &img, 1.0).map_err(|e| e.to_string())?;

    let step = Tensor::from_fn([1, 1, 16, 16], |_, _, _, x| if x < 8 { 0.2f32 } else { 0.8 });
    let ringing = apply_blur(
        &step,
        &gen_sinc_kernel(11, std::f64::consts::PI / 3.0).map_err(|e| e.to_string())?,
    )
    .map_err(|e| e.to_string())?;
    let peak = ringing.data().iter().copied().fold(f32::MIN, f32::max);

    let q = |quality| -> Result<f64, String> {
        let out = jpeg_roundtrip(&img, quality).map_err(|e| e.to_string())?;
        psnr(&out, &img, 1.0).map_err(|e| e.to_string())
    };
    let (q90, q10) = (q(90)?, q(10)?);
    ensure(
        deterministic && identity_db >= 50.0 && peak > 0.8 && q90 > q10,
        format!(
            "replay identical: {deterministic}, identity {identity_db:.1} dB, step overshoot to {peak:.4}, jpeg q90 {q90:.2} dB > q10 {q10:.2} dB"
        ),
    )
}

fn smooth_scene(seed: u64, size: usize) -> Tensor<f32> {
    let mut rng = SeededRng::new(seed);
    let (fy, fx, phase) = (
        rng.uniform_in(0.03, 0.12),
        rng.uniform_in(0.03, 0.12),
        rng.uniform_in(0.0, 6.0),
    );
    let (cy, cx) = (
        rng.uniform_in(0.25, 0.75) * size as f64,
        rng.uniform_in(0.25, 0.75) * size as f64,
    );
    let r = rng.uniform_in(0.1, 0.25) * size as f64;
    Tensor::from_fn([1, 3, size, size], move |_, c, y, x| {
        let wave = 0.45 + 0.25 * (y as f64 * fy + x as f64 * fx + phase + 0.7 * c as f64).sin();
        let inside = (y as f64 - cy).hypot(x as f64 - cx) < r;
        (wave + if inside { 0.2 } else { 0.0 }).clamp(0.0, 1.0) as f32
    })
}

fn c8_overfit() -> Verdict {
    let t = Instant::now();
    let hr = smooth_scene(8, 128);
    let lr = resize(&hr, 32, 32, ResizeMethod::Bicubic).map_err(|e| e.to_string())?;
    let train = TrainConfig {
        learning_rate: 1e-4,
        loss_weights: LossWeights {
            l1: 1.0,
            perceptual: 0.0,
            gan: 0.0,
        },
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::new(
        Generator::new(GeneratorConfig::toy(16, 2, 16, 4)).map_err(|e| e.to_string())?,
        Discriminator::new(DiscriminatorConfig::toy(4)).map_err(|e| e.to_string())?,
        FeatureExtractor::new().map_err(|e| e.to_string())?,
        train,
        DegradationConfig::default(),
    )
    .map_err(|e| e.to_string())?;
    let mut first = None;
    let mut last = 0.0;
    for _ in 0..200 {
        let l = trainer.step_on_pair(&lr, &hr).map_err(|e| e.to_string())?.l1;
        first.get_or_insert(l);
        last = l;
    }
    let first = first.unwrap_or(f64::NAN);
    ensure(
        last < 0.2 * first,
        format!(
            "L1 {first:.4} -> {last:.4} ({:.1}% of step 1) in 200 steps",
            100.0 * last / first
        ),
    )
    .and_then(|d| within(t.elapsed(), Duration::from_secs(300), d))
}

// Criterion 9 lives in its own section below.

fn c10_reports() -> Verdict {
    let gt = tempfile::tempdir().map_err(|e| e.to_string())?;
    let out = tempfile::tempdir().map_err(|e| e.to_string())?;
    for i in 0..3 {
        write_image(
            &smooth_scene(100 + i, 96 + 8 * i as usize),
            &gt.path().join(format!("case{i}.png")),
        )
        .map_err(|e| e.to_string())?;
    }
    let mut lines = Vec::new();
    for protocol in ["drive", "nih"] {
        let mut reports = Vec::new();
        for run in 0..2 {
            let path = out.path().join(format!("{protocol}{run}.txt"));
            srforge(&[
                "evaluate",
                "--protocol",
                protocol,
                "--gt",
                path_str(gt.path()),
                "--bicubic",
                "--report",
                path_str(&path),
            ])?;
            reports.push(fs::read(&path).map_err(|e| e.to_string())?);
        }
        let text = String::from_utf8_lossy(&reports[0]).into_owned();
        let table = text
            .lines()
            .skip_while(|l| !l.starts_with("| Model"))
            .collect::<Vec<_>>();
        let shaped = table.len() == 3 && table[1] == "|---|---|" && table[2].starts_with("| bicubic | ");
        if reports[0] != reports[1] || !shaped {
            return Err(format!(
                "{protocol}: identical {}, table shape ok {shaped}",
                reports[0] == reports[1]
            ));
        }
        lines.push(format!(
            "{protocol} {}",
            table[2].trim_start_matches("| bicubic | ").trim_end_matches(" |")
        ));
    }
    Ok(format!("two runs byte-identical; bicubic stub {}", lines.join(", ")))
}

// Criterion 9: a desk-scale run of the whole pipeline through the binary.
//
// An L1-only pretraining run stands in for the natural-image weights that a
// real fine-tune starts from. The fine-tune proper then trains with L1,
// perceptual and adversarial losses for 300 iterations at batch 2, once
// straight through and once as 150 iterations plus a resume.

const DESK_IMAGES: u64 = 8;
const DESK_PRETRAIN: &str = "3000";
const DESK_ITERATIONS: &str = "300";
const DESK_HALF: &str = "150";

const DESK_CONFIG: &str = r#"
[train]
batch_size = 2
patch_size = 64
checkpoint_interval = 100
learning_rate = 1e-4
ema_decay = 0.99
seed = 5

[generator]
scale = 2
num_features = 16
num_rrdb_blocks = 1
growth_channels = 8

[discriminator]
num_features = 16

[degradation]
output_scale = 2
final_sinc_probability = 0.0

[degradation.stage1.skip]
resize = 1.0
noise = 1.0
jpeg = 1.0

[degradation.stage1.blur]
kernel_sizes = [13]
sigma_range = [1.8, 2.2]

[degradation.stage1.blur.family_weights]
isotropic = 1.0
anisotropic = 0.0
sinc = 0.0

[degradation.stage2.skip]
blur = 1.0
resize = 1.0
noise = 1.0
jpeg = 1.0

[evaluation.custom]
down_factor = 2
"#;

const PRETRAIN_OVERRIDES: &str = r#"
[train.loss_weights]
perceptual = 0.0
gan = 0.0
"#;

/// Flat background with a faint gradient and six overlapping ellipses and
/// rectangles with hard edges.
fn shapes_scene(seed: u64, size: usize) -> Tensor<f32> {
    let mut rng = SeededRng::new(seed);
    let base: Vec<f64> = (0..3).map(|_| rng.uniform_in(0.2, 0.5)).collect();
    let (gy, gx) = (rng.uniform_in(-0.002, 0.002), rng.uniform_in(-0.002, 0.002));
    let shapes: Vec<([f64; 4], bool, [f64; 3])> = (0..6)
        .map(|_| {
            let cy = rng.uniform_in(0.0, size as f64);
            let cx = rng.uniform_in(0.0, size as f64);
            let ry = rng.uniform_in(6.0, 28.0);
            let rx = rng.uniform_in(6.0, 28.0);
            let ellipse = rng.bernoulli(0.6);
            let tint = [
                rng.uniform_in(-0.3, 0.4),
                rng.uniform_in(-0.3, 0.4),
                rng.uniform_in(-0.3, 0.4),
            ];
            ([cy, cx, ry, rx], ellipse, tint)
        })
        .collect();
    Tensor::from_fn([1, 3, size, size], move |_, c, y, x| {
        let (yf, xf) = (y as f64, x as f64);
        let mut v = base[c] + gy * yf + gx * xf;
        for &([cy, cx, ry, rx], ellipse, tint) in &shapes {
            let inside = if ellipse {
                ((yf - cy) / ry).powi(2) + ((xf - cx) / rx).powi(2) < 1.0
            } else {
                (yf - cy).abs() < ry && (xf - cx).abs() < rx
            };
            if inside {
                v += tint[c];
            }
        }
        v.clamp(0.0, 1.0) as f32
    })
}

fn mean_psnr(report: &Path) -> Result<f64, String> {
    let text = fs::read_to_string(report).map_err(|e| e.to_string())?;
    text.lines()
        .find_map(|l| l.strip_prefix("MEAN\t"))
        .and_then(|rest| rest.split('\t').next())
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| format!("no MEAN row in {}", report.display()))
}

/// Log lines with the trailing wall-clock column removed.
fn log_losses(path: &Path) -> Result<Vec<String>, String> {
    let text = fs::read_to_string(path).map_err(|e| e.to_string())?;
    Ok(text
        .lines()
        .map(|l| l.rsplit_once('\t').map_or(l, |(head, _)| head).to_string())
        .collect())
}

fn c9_desk_finetune() -> Verdict {
    let t = Instant::now();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let p = |name: &str| -> PathBuf { dir.path().join(name) };
    let data = p("data");
    fs::create_dir(&data).map_err(|e| e.to_string())?;
    for i in 0..DESK_IMAGES {
        write_image(&shapes_scene(i, 128), &data.join(format!("scene{i}.png"))).map_err(|e| e.to_string())?;
    }
    fs::write(p("desk.toml"), DESK_CONFIG).map_err(|e| e.to_string())?;
    fs::write(
        p("pretrain.toml"),
        format!("{DESK_CONFIG}{PRETRAIN_OVERRIDES}").replace("learning_rate = 1e-4", "learning_rate = 1e-3"),
    )
    .map_err(|e| e.to_string())?;
    let (cfg, data) = (p("desk.toml"), data);
    let (cfg, data_s) = (path_str(&cfg).to_string(), path_str(&data).to_string());
    let finetune = |config: &str, extra: &[&str], out: &str, iters: &str, log: &str| -> Result<String, String> {
        let (out, log) = (p(out), p(log));
        let mut args = vec!["--config", config, "finetune", "--dataset", &data_s];
        args.extend_from_slice(extra);
        args.extend_from_slice(&[
            "--output",
            path_str(&out),
            "--iterations",
            iters,
            "--log",
            path_str(&log),
        ]);
        srforge(&args)
    };

    let pre = p("pretrained.srfg");
    let pre_s = path_str(&pre).to_string();
    finetune(
        path_str(&p("pretrain.toml")),
        &[],
        "pretrained.srfg",
        DESK_PRETRAIN,
        "pretrain.log",
    )?;
    finetune(
        &cfg,
        &["--checkpoint", &pre_s],
        "straight.srfg",
        DESK_ITERATIONS,
        "straight.log",
    )?;
    finetune(&cfg, &["--checkpoint", &pre_s], "half.srfg", DESK_HALF, "half.log")?;
    let half = path_str(&p("half.srfg")).to_string();
    finetune(
        &cfg,
        &["--checkpoint", &half, "--resume"],
        "resumed.srfg",
        DESK_ITERATIONS,
        "resumed.log",
    )?;

    let straight = log_losses(&p("straight.log"))?;
    let mut pieced = log_losses(&p("half.log"))?;
    pieced.extend(log_losses(&p("resumed.log"))?);
    let finite = straight.len() == 300
        && straight.iter().all(|l| {
            l.split('\t')
                .skip(1)
                .all(|v| v.parse::<f64>().is_ok_and(f64::is_finite))
        });
    let bit_exact = fs::read(p("straight.srfg")).map_err(|e| e.to_string())?
        == fs::read(p("resumed.srfg")).map_err(|e| e.to_string())?
        && straight == pieced;

    let model = p("model.txt");
    let bicubic = p("bicubic.txt");
    let straight_s = path_str(&p("straight.srfg")).to_string();
    srforge(&[
        "--config",
        &cfg,
        "evaluate",
        "--protocol",
        "custom",
        "--gt",
        &data_s,
        "--checkpoint",
        &straight_s,
        "--report",
        path_str(&model),
    ])?;
    srforge(&[
        "--config",
        &cfg,
        "evaluate",
        "--protocol",
        "custom",
        "--gt",
        &data_s,
        "--bicubic",
        "--report",
        path_str(&bicubic),
    ])?;
    let (m, b) = (mean_psnr(&model)?, mean_psnr(&bicubic)?);

    let last = straight.last().cloned().unwrap_or_default();
    ensure(
        finite && bit_exact && m >= b - 0.5,
        format!(
            "losses finite: {finite}, resume bit-exact: {bit_exact}, x2 mean PSNR {m:.2} dB vs bicubic {b:.2} dB (floor {:.2}), last log [{}]",
            b - 0.5,
            last.replace('\t', " ")
        ),
    )
    .and_then(|d| within(t.elapsed(), Duration::from_secs(1200), d))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        ("generator parameter count", c1_generator_params),
        ("discriminator parameter count", c2_discriminator_params),
        ("gradient suite", c3_gradients),
        ("iteration schedule", c4_schedule),
        ("multi-scale preparation", c5_multiscale),
        ("metric oracles", c6_metrics),
        ("degradation determinism and sanity", c7_degradation),
        ("L1 overfit", c8_overfit),
        ("desk-scale fine-tune", c9_desk_finetune),
        ("deterministic evaluation reports", c10_reports),
    ];
    let only: Option<usize> = std::env::var("SRFORGE_ACCEPTANCE_ONLY")
        .ok()
        .and_then(|v| v.parse().ok());
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let n = i + 1;
        if only.is_some_and(|o| o != n) {
            continue;
        }
        let t = Instant::now();
        let verdict = check();
        let secs = t.elapsed().as_secs_f64();
        match verdict {
            Ok(detail) => println!("PASS {n:>2} {name}: {detail} [{secs:.1}s]"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {n:>2} {name}: {detail} [{secs:.1}s]");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
