use rayon::prelude::*;

use super::kernel::BlurKernel;
use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

/// Mirror index into `[0, n)` without repeating the edge sample
/// (`… 2 1 | 0 1 2 … n-1 | n-2 …`), folding as often as needed.
pub(crate) fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - m) as usize
    }
}

/// Per-channel 2D filtering with reflect padding; the shape is preserved.
pub fn apply_blur(img: &Tensor<f32>, kernel: &BlurKernel) -> Result<Tensor<f32>> {
    let s = img.shape();
    let r = kernel.radius();
    if r >= s.h || r >= s.w {
        return Err(Error::shape(
            "apply_blur",
            format!(
                "kernel {}x{} too large for reflect-padded {}x{} image",
                kernel.size(),
                kernel.size(),
                s.h,
                s.w
            ),
        ));
    }
    let size = kernel.size();
    let mut out = vec![0.0f32; s.numel()];
    out.par_chunks_mut(s.plane())
        .zip(img.data().par_chunks(s.plane()))
        .for_each(|(dst, src)| {
            for y in 0..s.h {
                for x in 0..s.w {
                    let mut acc = 0.0f64;
                    for ky in 0..size {
                        let sy = reflect(y as isize + ky as isize - r as isize, s.h);
                        let row = &src[sy * s.w..(sy + 1) * s.w];
                        for kx in 0..size {
                            let sx = reflect(x as isize + kx as isize - r as isize, s.w);
                            acc += kernel.at(ky, kx) * row[sx] as f64;
                        }
                    }
                    dst[y * s.w + x] = acc as f32;
                }
            }
        });
    Tensor::new(Shape::new(s.n, s.c, s.h, s.w), out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::degradation::kernel::gen_gaussian_kernel;

    #[test]
    fn reflect_indices() {
        let got: Vec<usize> = (-3..7).map(|i| reflect(i, 4)).collect();
        assert_eq!(got, vec![3, 2, 1, 0, 1, 2, 3, 2, 1, 0]);
    }

    #[test]
    fn delta_is_identity() {
        let img = Tensor::from_fn([1, 3, 9, 9], |_, c, y, x| ((c * 17 + y * 5 + x * 3) % 10) as f32 / 10.0);
        let out = apply_blur(&img, &BlurKernel::delta(7).unwrap()).unwrap();
        assert_eq!(out, img);
    }

    #[test]
    fn constant_image_unchanged() {
        let img = Tensor::full([1, 3, 12, 12], 0.37f32);
        let k = gen_gaussian_kernel(9, 2.0, 0.7, 0.5).unwrap();
        let out = apply_blur(&img, &k).unwrap();
        assert!(out.max_abs_diff(&img) < 1e-5);
    }

    #[test]
    fn box_kernel_hand_values() {
        let img = Tensor::from_fn([1, 1, 4, 4], |_, _, y, x| (y * 4 + x + 1) as f32);
        let k = BlurKernel::from_weights(3, vec![1.0; 9]).unwrap();
        let out = apply_blur(&img, &k).unwrap();
        // corner: rows {1,0,1} × cols {1,0,1} → (6+5+6 + 2+1+2 + 6+5+6) / 9
        assert!((out.at(0, 0, 0, 0) - 39.0 / 9.0).abs() < 1e-5);
        assert!((out.at(0, 0, 1, 1) - 6.0).abs() < 1e-5);
        // right edge: cols {2,3,2}
        assert!((out.at(0, 0, 0, 3) - 54.0 / 9.0).abs() < 1e-5);
        assert!(
            (out.at(0, 0, 3, 3) - (11.0 + 12.0 + 11.0 + 15.0 + 16.0 + 15.0 + 11.0 + 12.0 + 11.0) / 9.0).abs() < 1e-5
        );
    }

    #[test]
    fn oversized_kernel_rejected() {
        let img = Tensor::full([1, 1, 3, 3], 0.5f32);
        let k = gen_gaussian_kernel(7, 1.0, 1.0, 0.0).unwrap();
        assert!(apply_blur(&img, &k).is_err());
    }
}
