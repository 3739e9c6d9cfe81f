use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use rayon::prelude::*;

use srforge_core::config::ToolkitConfig;
use srforge_core::degradation::degrade;
use srforge_core::evaluation::{run_protocol, BicubicUpscaler, GeneratorUpscaler, Upscaler};
use srforge_core::io::{atomic_write, list_images, prepare_multiscale, read_image, write_image, Checkpoint};
use srforge_core::rng::SeededRng;
use srforge_core::training::{finetune, inference_generator, plan_schedule, FinetuneRequest};

use crate::{Command, ProtocolName, Summary};

pub const RECORDS_FILE: &str = "records.jsonl";

pub fn dispatch(command: Command, cfg: &ToolkitConfig) -> Result<Summary> {
    match command {
        Command::Prepare { input, output, scales } => prepare(&input, &output, &scales),
        Command::Degrade { input, output } => degrade_dir(&input, &output, cfg),
        Command::Finetune {
            dataset,
            output,
            checkpoint,
            resume,
            iterations,
            epochs,
            log,
        } => {
            let mut cfg = cfg.clone();
            if let Some(n) = iterations {
                cfg.train.total_iterations = n;
            }
            if let Some(e) = epochs {
                let n = list_images(&dataset)?.len();
                cfg.train.total_iterations = plan_schedule(n, cfg.train.batch_size, e)?;
            }
            let mut sink: Box<dyn Write> = match &log {
                Some(path) => Box::new(BufWriter::new(
                    File::create(path).with_context(|| format!("creating {}", path.display()))?,
                )),
                None => Box::new(io::stderr()),
            };
            let s = finetune(
                &FinetuneRequest {
                    checkpoint_in: checkpoint.as_deref(),
                    dataset_dir: &dataset,
                    checkpoint_out: &output,
                    resume,
                    config: &cfg,
                },
                &mut sink,
            )?;
            sink.flush()?;
            let losses = s
                .last_losses
                .map(|l| {
                    format!(
                        ", last l1 {:.4} percep {:.4} gan_g {:.4} d {:.4}",
                        l.l1, l.percep, l.gan_g, l.d
                    )
                })
                .unwrap_or_default();
            Ok(Summary {
                line: format!(
                    "finetune: iterations {}..{} ({} run) on {} images, {} skipped, {} checkpoints{losses}, {:.1}s, 0 errors",
                    s.start_iteration, s.end_iteration, s.iterations_run, s.images, s.skipped_images, s.checkpoints_written, s.seconds
                ),
                errors: 0,
            })
        }
        Command::Upscale {
            checkpoint,
            input,
            output,
            scale,
        } => upscale(&checkpoint, &input, &output, scale, cfg),
        Command::Evaluate {
            protocol,
            gt,
            checkpoint,
            bicubic,
            report,
        } => evaluate(protocol, &gt, checkpoint.as_deref(), bicubic, report.as_deref(), cfg),
        Command::InspectCheckpoint { path } => inspect(&path),
    }
}

fn prepare(input: &Path, output: &Path, scales: &[f64]) -> Result<Summary> {
    let m = prepare_multiscale(input, output, scales)?;
    let sources = m.entries.len() / scales.len().max(1);
    Ok(Summary {
        line: format!(
            "prepare: {} images x {} scales -> {} files, {} skipped, 0 errors",
            sources,
            scales.len(),
            m.entries.len(),
            m.skipped.len()
        ),
        errors: 0,
    })
}

/// Image `i` in name order uses `SeededRng::new(seed).child(i)`.
fn degrade_dir(input: &Path, output: &Path, cfg: &ToolkitConfig) -> Result<Summary> {
    let paths = list_images(input)?;
    if paths.is_empty() {
        bail!("no PNG images in {}", input.display());
    }
    fs::create_dir_all(output).with_context(|| format!("creating {}", output.display()))?;
    let root = SeededRng::new(cfg.train.seed);
    let results: Vec<(String, Result<String>)> = paths
        .par_iter()
        .enumerate()
        .map(|(i, path)| {
            let name = path
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default();
            let done = (|| -> Result<String> {
                let img = read_image(path)?;
                let (lr, record) = degrade(&img, &cfg.degradation, &mut root.child(i as u64))?;
                write_image(&lr, &output.join(&name))?;
                let line = serde_json::json!({ "file": name, "index": i, "record": record });
                Ok(line.to_string())
            })();
            (name, done)
        })
        .collect();
    let mut lines = String::new();
    let mut errors = 0;
    for (name, r) in &results {
        match r {
            Ok(line) => {
                lines.push_str(line);
                lines.push('\n');
            }
            Err(e) => {
                log::error!("{name}: {e:#}");
                errors += 1;
            }
        }
    }
    atomic_write(&output.join(RECORDS_FILE), |w| {
        w.write_all(lines.as_bytes())
            .map_err(|e| srforge_core::Error::io(RECORDS_FILE, e))
    })?;
    Ok(Summary {
        line: format!(
            "degrade: {} images, {} written, seed {}, {errors} errors",
            paths.len(),
            paths.len() - errors,
            cfg.train.seed
        ),
        errors,
    })
}

fn load_upscaler(checkpoint: &Path, cfg: &ToolkitConfig) -> Result<(GeneratorUpscaler, bool)> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let (generator, ema) = inference_generator(&ckpt, &cfg.generator)?;
    Ok((GeneratorUpscaler::new(generator, &cfg.evaluation), ema))
}

fn upscale(
    checkpoint: &Path,
    input: &Path,
    output: &Path,
    scale: Option<usize>,
    cfg: &ToolkitConfig,
) -> Result<Summary> {
    let (up, ema) = load_upscaler(checkpoint, cfg)?;
    if let Some(s) = scale {
        if s != up.scale() {
            bail!(
                "--scale {s} but {} holds a x{} generator",
                checkpoint.display(),
                up.scale()
            );
        }
    }
    let paths = list_images(input)?;
    if paths.is_empty() {
        bail!("no PNG images in {}", input.display());
    }
    fs::create_dir_all(output).with_context(|| format!("creating {}", output.display()))?;
    let mut errors = 0;
    for path in &paths {
        let name = path.file_name().expect("listed files have names");
        let done = read_image(path)
            .and_then(|lr| up.upscale(&lr))
            .and_then(|sr| write_image(&sr, &output.join(name)));
        if let Err(e) = done {
            log::error!("{}: {e}", path.display());
            errors += 1;
        }
    }
    Ok(Summary {
        line: format!(
            "upscale: {} images at x{} ({} weights), {} written, {errors} errors",
            paths.len(),
            up.scale(),
            if ema { "EMA" } else { "raw" },
            paths.len() - errors
        ),
        errors,
    })
}

fn evaluate(
    protocol: ProtocolName,
    gt: &Path,
    checkpoint: Option<&Path>,
    bicubic: bool,
    report_path: Option<&Path>,
    cfg: &ToolkitConfig,
) -> Result<Summary> {
    let protocol = cfg.evaluation.protocol(protocol.as_str())?;
    let report = match checkpoint {
        Some(path) if !bicubic => {
            let (up, ema) = load_upscaler(path, cfg)?;
            run_protocol(&up, &path.display().to_string(), Some(ema), gt, &protocol)?
        }
        _ => {
            let up = BicubicUpscaler {
                scale: protocol.upscale,
            };
            run_protocol(&up, "bicubic", None, gt, &protocol)?
        }
    };
    let text = report.render();
    match report_path {
        Some(path) => atomic_write(path, |w| {
            w.write_all(text.as_bytes())
                .map_err(|e| srforge_core::Error::io(path, e))
        })?,
        None => print!("{text}"),
    }
    Ok(Summary {
        line: format!(
            "evaluate: protocol {}, {} images, mean psnr {} ssim {:.4}, {} skipped, 0 errors",
            protocol.name,
            report.per_image.len(),
            srforge_core::evaluation::format_psnr(report.mean_psnr),
            report.mean_ssim,
            report.skipped.len()
        ),
        errors: 0,
    })
}

fn inspect(path: &Path) -> Result<Summary> {
    let ckpt = Checkpoint::load(path)?;
    let manifest = ckpt.manifest();
    println!("version {}", manifest.version);
    for (k, v) in &manifest.metadata {
        println!("meta {k} = {v}");
    }
    let mut elements = 0usize;
    for t in &manifest.tensors {
        let n: usize = t.shape.iter().product();
        elements += n;
        println!(
            "{}\t{}\t{}x{}x{}x{}\toffset {}\tbytes {}",
            t.name, t.dtype, t.shape[0], t.shape[1], t.shape[2], t.shape[3], t.offset, t.length
        );
    }
    Ok(Summary {
        line: format!(
            "inspect-checkpoint: {} tensors, {elements} elements, 0 errors",
            manifest.tensors.len()
        ),
        errors: 0,
    })
}
