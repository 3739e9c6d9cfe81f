use std::fmt::Write as _;

use super::protocol::EvalProtocol;

#[derive(Clone, Debug, PartialEq)]
pub struct ImageScore {
    pub name: String,
    pub psnr: f64,
    pub ssim: f64,
}

/// Scores of one model under one protocol, in image-name order.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub protocol: EvalProtocol,
    /// Model label, e.g. `bicubic` or a checkpoint path.
    pub model: String,
    /// Whether the EMA weights were used.
    pub ema: Option<bool>,
    pub per_image: Vec<ImageScore>,
    pub skipped: Vec<(String, String)>,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
}

pub fn format_psnr(v: f64) -> String {
    if v == f64::INFINITY {
        "inf".into()
    } else {
        format!("{v:.4}")
    }
}

impl EvalReport {
    pub fn new(
        protocol: EvalProtocol,
        model: String,
        ema: Option<bool>,
        per_image: Vec<ImageScore>,
        skipped: Vec<(String, String)>,
    ) -> Self {
        let n = per_image.len().max(1) as f64;
        let mean_psnr = per_image.iter().map(|s| s.psnr).sum::<f64>() / n;
        let mean_ssim = per_image.iter().map(|s| s.ssim).sum::<f64>() / n;
        EvalReport {
            protocol,
            model,
            ema,
            per_image,
            skipped,
            mean_psnr,
            mean_ssim,
        }
    }

    /// Header comments, `name\tpsnr\tssim` rows, a `MEAN` row, then the
    /// summary table. Contains nothing run-dependent besides the inputs.
    pub fn render(&self) -> String {
        let p = &self.protocol;
        let mut out = String::new();
        let gt = match p.gt_resize {
            Some(g) => format!("{}x{} {}", g.height, g.width, g.method.name()),
            None => "none".into(),
        };
        let ema = match self.ema {
            Some(true) => "yes",
            Some(false) => "no",
            None => "n/a",
        };
        let _ = writeln!(out, "# protocol: {}", p.name);
        let _ = writeln!(out, "# checkpoint: {}", self.model);
        let _ = writeln!(out, "# ema weights: {ema}");
        let _ = writeln!(out, "# gt resize: {gt}");
        let _ = writeln!(out, "# downsample: x{} {}", p.down_factor, p.down_method.name());
        let _ = writeln!(out, "# blur sigma: {}", p.blur_sigma);
        let _ = writeln!(out, "# blur kernel: {}", p.blur_kernel_size);
        let _ = writeln!(out, "# upscale: x{}", p.upscale);
        let _ = writeln!(
            out,
            "# metrics: psnr/ssim on 8-bit values, peak 255, ssim on BT.601 luma"
        );
        let _ = writeln!(out, "# images: {}", self.per_image.len());
        let _ = writeln!(out, "# skipped: {}", self.skipped.len());
        for (name, why) in &self.skipped {
            let _ = writeln!(out, "# skipped {name}: {why}");
        }
        let _ = writeln!(out, "name\tpsnr\tssim");
        for s in &self.per_image {
            let _ = writeln!(out, "{}\t{}\t{:.6}", s.name, format_psnr(s.psnr), s.ssim);
        }
        let _ = writeln!(out, "MEAN\t{}\t{:.6}", format_psnr(self.mean_psnr), self.mean_ssim);
        let _ = writeln!(out);
        let _ = writeln!(out, "| Model | PSNR / SSIM |");
        let _ = writeln!(out, "|---|---|");
        let psnr = if self.mean_psnr == f64::INFINITY {
            "inf".to_string()
        } else {
            format!("{:.2}", self.mean_psnr)
        };
        let _ = writeln!(out, "| {} | {psnr} / {:.4} |", self.model, self.mean_ssim);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluation::nih_protocol;

    #[test]
    fn means_and_layout() {
        let r = EvalReport::new(
            nih_protocol(),
            "bicubic".into(),
            None,
            vec![
                ImageScore {
                    name: "a.png".into(),
                    psnr: 30.0,
                    ssim: 0.8,
                },
                ImageScore {
                    name: "b.png".into(),
                    psnr: 32.0,
                    ssim: 0.9,
                },
            ],
            vec![],
        );
        assert!((r.mean_psnr - 31.0).abs() < 1e-9);
        assert!((r.mean_ssim - 0.85).abs() < 1e-9);
        let text = r.render();
        assert!(text.contains("a.png\t30.0000\t0.800000\n"));
        assert!(text.contains("MEAN\t31.0000\t0.850000\n"));
        assert!(text.contains("| bicubic | 31.00 / 0.8500 |"));
        assert_eq!(format_psnr(f64::INFINITY), "inf");
    }
}
