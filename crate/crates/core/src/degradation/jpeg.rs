//! Pixel-domain JPEG simulation: colour transform, 8×8 DCT, quantization and
//! reconstruction. Entropy coding is lossless and therefore skipped; chroma
//! is kept at full resolution.

use std::f64::consts::PI;
use std::sync::OnceLock;

use rayon::prelude::*;

use super::filter::reflect;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[rustfmt::skip]
const LUMA_TABLE: [u16; 64] = [
    16, 11, 10, 16, 24, 40, 51, 61,
    12, 12, 14, 19, 26, 58, 60, 55,
    14, 13, 16, 24, 40, 57, 69, 56,
    14, 17, 22, 29, 51, 87, 80, 62,
    18, 22, 37, 56, 68, 109, 103, 77,
    24, 35, 55, 64, 81, 104, 113, 92,
    49, 64, 78, 87, 103, 121, 120, 101,
    72, 92, 95, 98, 112, 100, 103, 99,
];

#[rustfmt::skip]
const CHROMA_TABLE: [u16; 64] = [
    17, 18, 24, 47, 99, 99, 99, 99,
    18, 21, 26, 66, 99, 99, 99, 99,
    24, 26, 56, 99, 99, 99, 99, 99,
    47, 66, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99,
];

/// Quantizer for `quality` using the libjpeg scaling of a base table.
pub fn quant_table(base: &[u16; 64], quality: u8) -> Result<[f64; 64]> {
    if !(1..=100).contains(&quality) {
        return Err(Error::invalid(format!("jpeg quality {quality} outside [1, 100]")));
    }
    let q = quality as u32;
    let scale = if q < 50 { 5000 / q } else { 200 - 2 * q };
    let mut out = [0.0; 64];
    for (o, &b) in out.iter_mut().zip(base) {
        *o = ((b as u32 * scale + 50) / 100).clamp(1, 255) as f64;
    }
    Ok(out)
}

pub fn luma_table(quality: u8) -> Result<[f64; 64]> {
    quant_table(&LUMA_TABLE, quality)
}

pub fn chroma_table(quality: u8) -> Result<[f64; 64]> {
    quant_table(&CHROMA_TABLE, quality)
}

/// Orthonormal DCT-II basis `C[u][x]`.
fn basis() -> &'static [[f64; 8]; 8] {
    static BASIS: OnceLock<[[f64; 8]; 8]> = OnceLock::new();
    BASIS.get_or_init(|| {
        let mut c = [[0.0; 8]; 8];
        for (u, row) in c.iter_mut().enumerate() {
            let alpha = if u == 0 {
                (1.0f64 / 8.0).sqrt()
            } else {
                (2.0f64 / 8.0).sqrt()
            };
            for (x, v) in row.iter_mut().enumerate() {
                *v = alpha * libm::cos((2 * x + 1) as f64 * u as f64 * PI / 16.0);
            }
        }
        c
    })
}

fn dct(block: &[f64; 64]) -> [f64; 64] {
    let c = basis();
    let mut tmp = [0.0; 64];
    for u in 0..8 {
        for x in 0..8 {
            tmp[u * 8 + x] = (0..8).map(|y| c[u][y] * block[y * 8 + x]).sum();
        }
    }
    let mut out = [0.0; 64];
    for u in 0..8 {
        for v in 0..8 {
            out[u * 8 + v] = (0..8).map(|x| c[v][x] * tmp[u * 8 + x]).sum();
        }
    }
    out
}

fn idct(coef: &[f64; 64]) -> [f64; 64] {
    let c = basis();
    let mut tmp = [0.0; 64];
    for y in 0..8 {
        for v in 0..8 {
            tmp[y * 8 + v] = (0..8).map(|u| c[u][y] * coef[u * 8 + v]).sum();
        }
    }
    let mut out = [0.0; 64];
    for y in 0..8 {
        for x in 0..8 {
            out[y * 8 + x] = (0..8).map(|v| c[v][x] * tmp[y * 8 + v]).sum();
        }
    }
    out
}

/// Quantizes one level-shifted plane in place, block by block.
fn quantize_plane(plane: &mut [f64], h: usize, w: usize, table: &[f64; 64]) {
    plane.par_chunks_mut(8 * w).for_each(|band| {
        for bx in (0..w).step_by(8) {
            let mut block = [0.0; 64];
            for y in 0..8 {
                for x in 0..8 {
                    block[y * 8 + x] = band[y * w + bx + x] - 128.0;
                }
            }
            let mut coef = dct(&block);
            for (c, q) in coef.iter_mut().zip(table) {
                *c = (*c / q).round() * q;
            }
            let rec = idct(&coef);
            for y in 0..8 {
                for x in 0..8 {
                    band[y * w + bx + x] = rec[y * 8 + x] + 128.0;
                }
            }
        }
    });
    debug_assert_eq!(plane.len(), h * w);
}

/// Compresses and decompresses every image in the batch at `quality`.
/// Values are quantized to 8 bits on the way in and out.
pub fn jpeg_roundtrip(img: &Tensor<f32>, quality: u8) -> Result<Tensor<f32>> {
    let luma_q = luma_table(quality)?;
    let chroma_q = chroma_table(quality)?;
    let s = img.shape();
    if s.c != 1 && s.c != 3 {
        return Err(Error::shape(
            "jpeg_roundtrip",
            format!("expected 1 or 3 channels, got {}", s.c),
        ));
    }
    let (ph, pw) = (s.h.div_ceil(8) * 8, s.w.div_ceil(8) * 8);
    let plane = s.plane();
    let mut out = Vec::with_capacity(s.numel());
    for n in 0..s.n {
        let src = &img.data()[n * s.c * plane..(n + 1) * s.c * plane];
        let byte =
            |c: usize, y: usize, x: usize| (src[c * plane + y * s.w + x] as f64 * 255.0).round().clamp(0.0, 255.0);
        let mut planes: Vec<Vec<f64>> = vec![vec![0.0; ph * pw]; s.c];
        for y in 0..ph {
            let sy = reflect(y as isize, s.h);
            for x in 0..pw {
                let sx = reflect(x as isize, s.w);
                let i = y * pw + x;
                if s.c == 3 {
                    let (r, g, b) = (byte(0, sy, sx), byte(1, sy, sx), byte(2, sy, sx));
                    planes[0][i] = 0.299 * r + 0.587 * g + 0.114 * b;
                    planes[1][i] = -0.168736 * r - 0.331264 * g + 0.5 * b + 128.0;
                    planes[2][i] = 0.5 * r - 0.418688 * g - 0.081312 * b + 128.0;
                } else {
                    planes[0][i] = byte(0, sy, sx);
                }
            }
        }
        for (c, p) in planes.iter_mut().enumerate() {
            quantize_plane(p, ph, pw, if c == 0 { &luma_q } else { &chroma_q });
        }
        let to_unit = |v: f64| (v.round().clamp(0.0, 255.0) / 255.0) as f32;
        let mut image = vec![0.0f32; s.c * plane];
        for y in 0..s.h {
            for x in 0..s.w {
                let i = y * pw + x;
                let o = y * s.w + x;
                if s.c == 3 {
                    let (yy, cb, cr) = (planes[0][i], planes[1][i] - 128.0, planes[2][i] - 128.0);
                    image[o] = to_unit(yy + 1.402 * cr);
                    image[plane + o] = to_unit(yy - 0.344136 * cb - 0.714136 * cr);
                    image[2 * plane + o] = to_unit(yy + 1.772 * cb);
                } else {
                    image[o] = to_unit(planes[0][i]);
                }
            }
        }
        out.extend(image);
    }
    Tensor::new(s, out)
}
