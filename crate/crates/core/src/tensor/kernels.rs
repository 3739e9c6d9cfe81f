//! Forward and backward kernels for the differentiable tensor ops.
//!
//! All reductions run in a fixed order, so results do not depend on the
//! number of worker threads.

use rayon::prelude::*;

use super::{Scalar, Shape, Tensor};
use crate::error::{Error, Result};

/// Rows of the output matrix handed to one gemm task. Fixed so that the
/// work split (and therefore the rounding) never depends on the thread count.
const GEMM_ROW_BLOCK: usize = 16;

/// Row-major `c[m×n] (+)= a[m×k] · b[k×n]` with strided `a`/`b`, split into
/// fixed row blocks processed in parallel.
#[allow(clippy::too_many_arguments)]
fn gemm_rows<T: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    rsa: usize,
    csa: usize,
    b: &[T],
    rsb: usize,
    csb: usize,
    c: &mut [T],
    accumulate: bool,
) {
    assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    assert!(k == 0 || (m - 1) * rsa + (k - 1) * csa < a.len());
    assert!(k == 0 || (k - 1) * rsb + (n - 1) * csb < b.len());
    let beta = if accumulate { T::one() } else { T::zero() };
    c.par_chunks_mut(GEMM_ROW_BLOCK * n)
        .enumerate()
        .for_each(|(block, c_rows)| {
            let r0 = block * GEMM_ROW_BLOCK;
            let rows = c_rows.len() / n;
            // SAFETY: bounds asserted above; each task writes a disjoint row block.
            unsafe {
                T::gemm(
                    rows,
                    k,
                    n,
                    T::one(),
                    a.as_ptr().add(r0 * rsa),
                    rsa as isize,
                    csa as isize,
                    b.as_ptr(),
                    rsb as isize,
                    csb as isize,
                    beta,
                    c_rows.as_mut_ptr(),
                    n as isize,
                    1,
                );
            }
        });
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub in_c: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_c: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub padding: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeometry {
    pub fn new(input: Shape, weight: Shape, stride: usize, padding: usize) -> Result<Self> {
        if stride == 0 {
            return Err(Error::invalid("conv2d: stride must be positive"));
        }
        if weight.c != input.c {
            return Err(Error::shape(
                "conv2d",
                format!(
                    "input has {} channels but weight {} expects {}",
                    input.c, weight, weight.c
                ),
            ));
        }
        let (ph, pw) = (input.h + 2 * padding, input.w + 2 * padding);
        if weight.h > ph || weight.w > pw {
            return Err(Error::shape(
                "conv2d",
                format!("kernel {}x{} exceeds padded input {ph}x{pw}", weight.h, weight.w),
            ));
        }
        Ok(ConvGeometry {
            in_c: input.c,
            in_h: input.h,
            in_w: input.w,
            out_c: weight.n,
            kh: weight.h,
            kw: weight.w,
            stride,
            padding,
            out_h: (ph - weight.h) / stride + 1,
            out_w: (pw - weight.w) / stride + 1,
        })
    }

    fn patch_len(&self) -> usize {
        self.in_c * self.kh * self.kw
    }

    fn out_plane(&self) -> usize {
        self.out_h * self.out_w
    }

    /// Input coordinate for output coordinate `o` and kernel tap `k`, if inside.
    #[inline]
    fn source(&self, o: usize, k: usize, extent: usize) -> Option<usize> {
        let pos = (o * self.stride + k) as isize - self.padding as isize;
        (pos >= 0 && (pos as usize) < extent).then_some(pos as usize)
    }

    fn im2col<T: Scalar>(&self, image: &[T], cols: &mut [T]) {
        let p = self.out_plane();
        cols.par_chunks_mut(p).enumerate().for_each(|(row, dst)| {
            let kx = row % self.kw;
            let ky = (row / self.kw) % self.kh;
            let ci = row / (self.kw * self.kh);
            let plane = &image[ci * self.in_h * self.in_w..(ci + 1) * self.in_h * self.in_w];
            for oy in 0..self.out_h {
                let out_row = &mut dst[oy * self.out_w..(oy + 1) * self.out_w];
                match self.source(oy, ky, self.in_h) {
                    None => out_row.fill(T::zero()),
                    Some(iy) => {
                        let src = &plane[iy * self.in_w..(iy + 1) * self.in_w];
                        for (ox, v) in out_row.iter_mut().enumerate() {
                            *v = match self.source(ox, kx, self.in_w) {
                                Some(ix) => src[ix],
                                None => T::zero(),
                            };
                        }
                    }
                }
            }
        });
    }

    fn col2im<T: Scalar>(&self, cols: &[T], image: &mut [T]) {
        let p = self.out_plane();
        let taps = self.kh * self.kw;
        image
            .par_chunks_mut(self.in_h * self.in_w)
            .enumerate()
            .for_each(|(ci, plane)| {
                plane.fill(T::zero());
                for tap in 0..taps {
                    let (ky, kx) = (tap / self.kw, tap % self.kw);
                    let src = &cols[(ci * taps + tap) * p..(ci * taps + tap + 1) * p];
                    for oy in 0..self.out_h {
                        let Some(iy) = self.source(oy, ky, self.in_h) else {
                            continue;
                        };
                        for ox in 0..self.out_w {
                            if let Some(ix) = self.source(ox, kx, self.in_w) {
                                plane[iy * self.in_w + ix] = plane[iy * self.in_w + ix] + src[oy * self.out_w + ox];
                            }
                        }
                    }
                }
            });
    }
}

pub fn conv2d_forward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    let g = ConvGeometry::new(input.shape(), weight.shape(), stride, padding)?;
    if let Some(b) = bias {
        if b.len() != g.out_c {
            return Err(Error::shape(
                "conv2d",
                format!("bias has {} elements for {} output channels", b.len(), g.out_c),
            ));
        }
    }
    let n = input.shape().n;
    let (k, p) = (g.patch_len(), g.out_plane());
    let in_per = g.in_c * g.in_h * g.in_w;
    let mut out = vec![T::zero(); n * g.out_c * p];
    out.par_chunks_mut(g.out_c * p).enumerate().for_each(|(i, out_img)| {
        let mut cols = vec![T::zero(); k * p];
        g.im2col(&input.data()[i * in_per..(i + 1) * in_per], &mut cols);
        if let Some(b) = bias {
            for (co, row) in out_img.chunks_mut(p).enumerate() {
                row.fill(b.data()[co]);
            }
        }
        gemm_rows(g.out_c, k, p, weight.data(), k, 1, &cols, p, 1, out_img, bias.is_some());
    });
    Tensor::new(Shape::new(n, g.out_c, g.out_h, g.out_w), out)
}

pub struct ConvGrads<T> {
    pub input: Option<Tensor<T>>,
    pub weight: Option<Tensor<T>>,
    pub bias: Option<Tensor<T>>,
}

pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
    stride: usize,
    padding: usize,
    need: [bool; 3],
) -> Result<ConvGrads<T>> {
    let g = ConvGeometry::new(input.shape(), weight.shape(), stride, padding)?;
    let n = input.shape().n;
    let (k, p) = (g.patch_len(), g.out_plane());
    let in_per = g.in_c * g.in_h * g.in_w;
    let go = grad_out.data();

    let d_bias = need[2].then(|| {
        (0..g.out_c)
            .map(|co| {
                (0..n).fold(T::zero(), |acc, i| {
                    let row = &go[(i * g.out_c + co) * p..(i * g.out_c + co + 1) * p];
                    acc + row.iter().copied().sum::<T>()
                })
            })
            .collect::<Vec<T>>()
    });

    // Per-image partials computed in parallel, weight gradients reduced in image order.
    type Partial<T> = (Option<Vec<T>>, Option<Vec<T>>);
    let partials: Vec<Partial<T>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let go_img = &go[i * g.out_c * p..(i + 1) * g.out_c * p];
            let mut cols = vec![T::zero(); k * p];
            let dw = need[1].then(|| {
                g.im2col(&input.data()[i * in_per..(i + 1) * in_per], &mut cols);
                let mut dw = vec![T::zero(); g.out_c * k];
                // dW[co, k] = Σ_p gout[co, p] · cols[k, p]
                gemm_rows(g.out_c, p, k, go_img, p, 1, &cols, 1, p, &mut dw, false);
                dw
            });
            let dx = need[0].then(|| {
                // dcols[k, p] = Σ_co W[co, k] · gout[co, p]
                gemm_rows(k, g.out_c, p, weight.data(), 1, k, go_img, p, 1, &mut cols, false);
                let mut dx = vec![T::zero(); in_per];
                g.col2im(&cols, &mut dx);
                dx
            });
            (dx, dw)
        })
        .collect();

    let mut d_input = need[0].then(|| Vec::with_capacity(input.len()));
    let mut d_weight = need[1].then(|| vec![T::zero(); weight.len()]);
    for (dx, dw) in partials {
        if let (Some(acc), Some(dx)) = (d_input.as_mut(), dx) {
            acc.extend_from_slice(&dx);
        }
        if let (Some(acc), Some(dw)) = (d_weight.as_mut(), dw) {
            for (a, v) in acc.iter_mut().zip(dw) {
                *a = *a + v;
            }
        }
    }

    Ok(ConvGrads {
        input: d_input.map(|d| Tensor::new(input.shape(), d)).transpose()?,
        weight: d_weight.map(|d| Tensor::new(weight.shape(), d)).transpose()?,
        bias: d_bias
            .map(|d| Tensor::new(Shape::new(g.out_c, 1, 1, 1), d))
            .transpose()?,
    })
}

pub fn nearest_upsample<T: Scalar>(x: &Tensor<T>, factor: usize) -> Tensor<T> {
    let s = x.shape();
    let out_shape = Shape::new(s.n, s.c, s.h * factor, s.w * factor);
    let mut out = vec![T::zero(); out_shape.numel()];
    out.par_chunks_mut(out_shape.plane())
        .zip(x.data().par_chunks(s.plane()))
        .for_each(|(dst, src)| {
            for (oy, row) in dst.chunks_mut(out_shape.w).enumerate() {
                let src_row = &src[(oy / factor) * s.w..(oy / factor + 1) * s.w];
                for (ox, v) in row.iter_mut().enumerate() {
                    *v = src_row[ox / factor];
                }
            }
        });
    Tensor::new(out_shape, out).expect("shape computed above")
}

pub fn nearest_upsample_backward<T: Scalar>(grad: &Tensor<T>, factor: usize) -> Tensor<T> {
    let s = grad.shape();
    let in_shape = Shape::new(s.n, s.c, s.h / factor, s.w / factor);
    let mut out = vec![T::zero(); in_shape.numel()];
    out.par_chunks_mut(in_shape.plane())
        .zip(grad.data().par_chunks(s.plane()))
        .for_each(|(dst, src)| {
            for oy in 0..s.h {
                for ox in 0..s.w {
                    let d = &mut dst[(oy / factor) * in_shape.w + ox / factor];
                    *d = *d + src[oy * s.w + ox];
                }
            }
        });
    Tensor::new(in_shape, out).expect("shape computed above")
}

/// Source taps `(i0, i1, w0, w1)` for half-pixel-centred linear upsampling.
fn linear_taps(in_len: usize, factor: usize) -> Vec<(usize, usize, f64, f64)> {
    (0..in_len * factor)
        .map(|o| {
            let src = ((o as f64 + 0.5) / factor as f64 - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(in_len - 1);
            let i1 = (i0 + 1).min(in_len - 1);
            let frac = src - i0 as f64;
            (i0, i1, 1.0 - frac, frac)
        })
        .collect()
}

/// Bilinear upsampling by an integer factor (half-pixel centres, edge clamp).
pub fn bilinear_upsample<T: Scalar>(x: &Tensor<T>, factor: usize) -> Tensor<T> {
    let s = x.shape();
    let out_shape = Shape::new(s.n, s.c, s.h * factor, s.w * factor);
    let ty = linear_taps(s.h, factor);
    let tx = linear_taps(s.w, factor);
    let mut out = vec![T::zero(); out_shape.numel()];
    out.par_chunks_mut(out_shape.plane())
        .zip(x.data().par_chunks(s.plane()))
        .for_each(|(dst, src)| {
            for (oy, &(y0, y1, wy0, wy1)) in ty.iter().enumerate() {
                let (wy0, wy1) = (T::from_f64(wy0), T::from_f64(wy1));
                for (ox, &(x0, x1, wx0, wx1)) in tx.iter().enumerate() {
                    let (wx0, wx1) = (T::from_f64(wx0), T::from_f64(wx1));
                    let top = src[y0 * s.w + x0] * wx0 + src[y0 * s.w + x1] * wx1;
                    let bottom = src[y1 * s.w + x0] * wx0 + src[y1 * s.w + x1] * wx1;
                    dst[oy * out_shape.w + ox] = top * wy0 + bottom * wy1;
                }
            }
        });
    Tensor::new(out_shape, out).expect("shape computed above")
}

pub fn bilinear_upsample_backward<T: Scalar>(grad: &Tensor<T>, factor: usize) -> Tensor<T> {
    let s = grad.shape();
    let in_shape = Shape::new(s.n, s.c, s.h / factor, s.w / factor);
    let ty = linear_taps(in_shape.h, factor);
    let tx = linear_taps(in_shape.w, factor);
    let w = in_shape.w;
    let mut out = vec![T::zero(); in_shape.numel()];
    out.par_chunks_mut(in_shape.plane())
        .zip(grad.data().par_chunks(s.plane()))
        .for_each(|(dst, src)| {
            for (oy, &(y0, y1, wy0, wy1)) in ty.iter().enumerate() {
                let (wy0, wy1) = (T::from_f64(wy0), T::from_f64(wy1));
                for (ox, &(x0, x1, wx0, wx1)) in tx.iter().enumerate() {
                    let (wx0, wx1) = (T::from_f64(wx0), T::from_f64(wx1));
                    let g = src[oy * s.w + ox];
                    dst[y0 * w + x0] = dst[y0 * w + x0] + g * wy0 * wx0;
                    dst[y0 * w + x1] = dst[y0 * w + x1] + g * wy0 * wx1;
                    dst[y1 * w + x0] = dst[y1 * w + x0] + g * wy1 * wx0;
                    dst[y1 * w + x1] = dst[y1 * w + x1] + g * wy1 * wx1;
                }
            }
        });
    Tensor::new(in_shape, out).expect("shape computed above")
}

/// Space-to-depth: `out[n, c·f² + i·f + j, y, x] = in[n, c, y·f + i, x·f + j]`.
pub fn pixel_unshuffle<T: Scalar>(x: &Tensor<T>, factor: usize) -> Result<Tensor<T>> {
    let s = x.shape();
    if factor == 0 || !s.h.is_multiple_of(factor) || !s.w.is_multiple_of(factor) {
        return Err(Error::shape(
            "pixel_unshuffle",
            format!("spatial size {}x{} not divisible by {factor}", s.h, s.w),
        ));
    }
    let out_shape = Shape::new(s.n, s.c * factor * factor, s.h / factor, s.w / factor);
    let src = x.data();
    let out = Tensor::from_fn(out_shape, |n, oc, y, xx| {
        let (c, r) = (oc / (factor * factor), oc % (factor * factor));
        let (i, j) = (r / factor, r % factor);
        src[x.index(n, c, y * factor + i, xx * factor + j)]
    });
    Ok(out)
}

/// Depth-to-space, the inverse of [`pixel_unshuffle`].
pub fn pixel_shuffle<T: Scalar>(x: &Tensor<T>, factor: usize) -> Result<Tensor<T>> {
    let s = x.shape();
    let ff = factor * factor;
    if factor == 0 || !s.c.is_multiple_of(ff) {
        return Err(Error::shape(
            "pixel_shuffle",
            format!("{} channels not divisible by {ff}", s.c),
        ));
    }
    let out_shape = Shape::new(s.n, s.c / ff, s.h * factor, s.w * factor);
    let src = x.data();
    Ok(Tensor::from_fn(out_shape, |n, c, y, xx| {
        let (i, j) = (y % factor, xx % factor);
        src[x.index(n, c * ff + i * factor + j, y / factor, xx / factor)]
    }))
}
