use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use png::{BitDepth, ColorType, Transformations};

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

fn image_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Image {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

/// Decoded 8-bit PNG, interleaved.
pub struct RawImage {
    pub width: usize,
    pub height: usize,
    /// 1 (gray) or 3 (RGB).
    pub channels: usize,
    pub bytes: Vec<u8>,
}

pub fn read_png(path: &Path) -> Result<RawImage> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut decoder = png::Decoder::new_with_limits(BufReader::new(file), png::Limits { bytes: 1 << 31 });
    decoder.set_transformations(Transformations::IDENTITY);
    let mut reader = decoder.read_info().map_err(|e| image_err(path, e.to_string()))?;
    let (color, depth) = reader.output_color_type();
    let channels = match color {
        ColorType::Grayscale => 1,
        ColorType::Rgb => 3,
        ColorType::GrayscaleAlpha | ColorType::Rgba => {
            return Err(image_err(path, "images with an alpha channel are not supported"));
        }
        ColorType::Indexed => return Err(image_err(path, "palette images are not supported")),
    };
    if depth != BitDepth::Eight {
        return Err(image_err(
            path,
            format!("bit depth {} is not supported, expected 8", depth as u8),
        ));
    }
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| image_err(path, "image too large"))?;
    let mut buf = vec![0u8; size];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| image_err(path, e.to_string()))?;
    let (width, height) = (info.width as usize, info.height as usize);
    let stride = info.line_size;
    let mut bytes = Vec::with_capacity(width * height * channels);
    for row in buf.chunks(stride).take(height) {
        bytes.extend_from_slice(&row[..width * channels]);
    }
    Ok(RawImage {
        width,
        height,
        channels,
        bytes,
    })
}

/// Reads an 8-bit gray or RGB PNG as a `1×3×H×W` tensor in `[0, 1]`;
/// gray images are replicated to three channels.
pub fn read_image(path: &Path) -> Result<Tensor<f32>> {
    let raw = read_png(path)?;
    let plane = raw.width * raw.height;
    let mut data = vec![0.0f32; 3 * plane];
    for p in 0..plane {
        for c in 0..3 {
            let src = if raw.channels == 1 { p } else { p * 3 + c };
            data[c * plane + p] = raw.bytes[src] as f32 / 255.0;
        }
    }
    Tensor::new(Shape::new(1, 3, raw.height, raw.width), data)
}

pub fn to_byte(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes a `1×C×H×W` tensor (C ∈ {1, 3}) as an 8-bit PNG. RGB input whose
/// channels agree within one level is stored as grayscale. The file is
/// replaced atomically.
pub fn write_image(img: &Tensor<f32>, path: &Path) -> Result<()> {
    let s = img.shape();
    if s.n != 1 || (s.c != 1 && s.c != 3) {
        return Err(image_err(path, format!("cannot write a {s} tensor as an image")));
    }
    let plane = s.plane();
    let d = img.data();
    let gray = s.c == 1
        || (0..plane).all(|p| {
            let (r, g, b) = (d[p], d[plane + p], d[2 * plane + p]);
            (r - g).abs() <= 1.0 / 255.0 && (r - b).abs() <= 1.0 / 255.0
        });
    let (color, bytes): (ColorType, Vec<u8>) = if gray {
        (ColorType::Grayscale, d[..plane].iter().map(|&v| to_byte(v)).collect())
    } else {
        let mut out = Vec::with_capacity(3 * plane);
        for p in 0..plane {
            for c in 0..3 {
                out.push(to_byte(d[c * plane + p]));
            }
        }
        (ColorType::Rgb, out)
    };
    write_png_bytes(path, s.w, s.h, color, &bytes)
}

fn write_png_bytes(path: &Path, width: usize, height: usize, color: ColorType, bytes: &[u8]) -> Result<()> {
    atomic_write(path, |w| {
        let mut enc = png::Encoder::new(w, width as u32, height as u32);
        enc.set_color(color);
        enc.set_depth(BitDepth::Eight);
        let mut writer = enc.write_header().map_err(|e| image_err(path, e.to_string()))?;
        writer
            .write_image_data(bytes)
            .map_err(|e| image_err(path, e.to_string()))?;
        writer.finish().map_err(|e| image_err(path, e.to_string()))
    })
}

/// Writes through a temporary file in the destination directory and
/// renames it into place.
pub fn atomic_write(path: &Path, body: impl FnOnce(&mut BufWriter<&mut File>) -> Result<()>) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    {
        let mut w = BufWriter::new(tmp.as_file_mut());
        body(&mut w)?;
        w.flush().map_err(|e| Error::io(path, e))?;
    }
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}
