use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::image::{atomic_write, read_image, write_image};
use crate::degradation::{resize, ResizeMethod};
use crate::error::{Error, Result};

/// Five ground-truth scales: the original plus four Lanczos reductions.
pub const DEFAULT_SCALES: [f64; 5] = [1.0, 0.75, 0.5, 1.0 / 3.0, 0.25];

pub const MANIFEST_FILE: &str = "manifest.tsv";

/// `round(len·scale)` with halves away from zero, at least 1.
pub fn scaled_dim(len: usize, scale: f64) -> usize {
    ((len as f64 * scale).round() as usize).max(1)
}

/// Short decimal label for a scale, e.g. `1`, `0.75`, `0.333`.
pub fn scale_tag(scale: f64) -> String {
    let s = format!("{scale:.3}");
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

/// PNG files directly inside `dir`, sorted by file name.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let is_png = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| e.eq_ignore_ascii_case("png"));
        if is_png && path.is_file() {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ManifestEntry {
    pub source: PathBuf,
    pub scale: f64,
    pub output: PathBuf,
    pub width: usize,
    pub height: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
    /// Inputs that could not be read, with the reason.
    pub skipped: Vec<(PathBuf, String)>,
}

impl DatasetManifest {
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("source\tscale\toutput\twidth\theight\n");
        for e in &self.entries {
            let name = |p: &Path| {
                p.file_name()
                    .map(|n| n.to_string_lossy().into_owned())
                    .unwrap_or_default()
            };
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}",
                name(&e.source),
                scale_tag(e.scale),
                name(&e.output),
                e.width,
                e.height
            );
        }
        out
    }
}

fn process(src: &Path, dst_dir: &Path, scales: &[f64]) -> Result<Vec<ManifestEntry>> {
    let img = read_image(src)?;
    let s = img.shape();
    let stem = src
        .file_stem()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "image".into());
    let mut out = Vec::with_capacity(scales.len());
    for &scale in scales {
        let output = dst_dir.join(format!("{stem}_x{}.png", scale_tag(scale)));
        let (h, w) = if scale == 1.0 {
            let bytes = std::fs::read(src).map_err(|e| Error::io(src, e))?;
            atomic_write(&output, |f| f.write_all(&bytes).map_err(|e| Error::io(&output, e)))?;
            (s.h, s.w)
        } else {
            let (h, w) = (scaled_dim(s.h, scale), scaled_dim(s.w, scale));
            write_image(&resize(&img, h, w, ResizeMethod::Lanczos)?, &output)?;
            (h, w)
        };
        out.push(ManifestEntry {
            source: src.to_path_buf(),
            scale,
            output,
            width: w,
            height: h,
        });
    }
    Ok(out)
}

/// Writes a Lanczos-resized copy of every image in `src_dir` at every
/// scale (scale 1 is copied byte for byte) plus `manifest.tsv`.
pub fn prepare_multiscale(src_dir: &Path, dst_dir: &Path, scales: &[f64]) -> Result<DatasetManifest> {
    if scales.is_empty() {
        return Err(Error::invalid("no scales given"));
    }
    if let Some(bad) = scales.iter().find(|&&s| !(s > 0.0 && s <= 1.0)) {
        return Err(Error::invalid(format!("scale {bad} outside (0, 1]")));
    }
    let mut tags: Vec<String> = scales.iter().map(|&s| scale_tag(s)).collect();
    tags.sort();
    tags.dedup();
    if tags.len() != scales.len() {
        return Err(Error::invalid("scales must be distinct at three decimals"));
    }
    if src_dir.canonicalize().ok() == dst_dir.canonicalize().ok() && dst_dir.exists() {
        return Err(Error::invalid("output directory must differ from the input directory"));
    }
    let sources = list_images(src_dir)?;
    std::fs::create_dir_all(dst_dir).map_err(|e| Error::io(dst_dir, e))?;
    let results: Vec<(PathBuf, Result<Vec<ManifestEntry>>)> = sources
        .par_iter()
        .map(|src| (src.clone(), process(src, dst_dir, scales)))
        .collect();
    let mut manifest = DatasetManifest::default();
    for (src, r) in results {
        match r {
            Ok(entries) => manifest.entries.extend(entries),
            Err(e) => {
                log::warn!("skipping {}: {e}", src.display());
                manifest.skipped.push((src, e.to_string()));
            }
        }
    }
    if manifest.entries.is_empty() {
        return Err(Error::invalid(format!(
            "no readable PNG images in {}",
            src_dir.display()
        )));
    }
    let path = dst_dir.join(MANIFEST_FILE);
    let tsv = manifest.to_tsv();
    atomic_write(&path, |f| f.write_all(tsv.as_bytes()).map_err(|e| Error::io(&path, e)))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rounding_rule() {
        assert_eq!(scaled_dim(605, 0.5), 303);
        assert_eq!(scaled_dim(700, 0.5), 350);
        assert_eq!(scaled_dim(3, 0.1), 1);
        assert_eq!(scaled_dim(700, 1.0 / 3.0), 233);
    }

    #[test]
    fn tags() {
        assert_eq!(scale_tag(1.0), "1");
        assert_eq!(scale_tag(0.75), "0.75");
        assert_eq!(scale_tag(1.0 / 3.0), "0.333");
        assert_eq!(scale_tag(0.25), "0.25");
    }
}
