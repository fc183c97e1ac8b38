//! Separable smoothing and derivative filters on single planes.
//!
//! Borders are handled by clamping coordinates, so constant planes stay constant.

use crate::scalar::{lit, Scalar};

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil().max(1.0) as isize;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= total);
    k
}

fn convolve_rows<T: Scalar>(plane: &[T], height: usize, width: usize, kernel: &[f64]) -> Vec<T> {
    let radius = (kernel.len() / 2) as isize;
    let mut out = vec![T::zero(); plane.len()];
    for r in 0..height {
        let row = &plane[r * width..(r + 1) * width];
        for c in 0..width {
            let mut acc = T::zero();
            for (k, &wt) in kernel.iter().enumerate() {
                let src = (c as isize + k as isize - radius).clamp(0, width as isize - 1) as usize;
                acc = acc + row[src] * lit::<T>(wt);
            }
            out[r * width + c] = acc;
        }
    }
    out
}

fn transpose<T: Scalar>(plane: &[T], height: usize, width: usize) -> Vec<T> {
    let mut out = vec![T::zero(); plane.len()];
    for r in 0..height {
        for c in 0..width {
            out[c * height + r] = plane[r * width + c];
        }
    }
    out
}

/// Isotropic Gaussian blur. `sigma <= 0` returns the plane unchanged.
pub fn gaussian_blur<T: Scalar>(plane: &[T], height: usize, width: usize, sigma: f64) -> Vec<T> {
    if sigma <= 0.0 {
        return plane.to_vec();
    }
    let kernel = gaussian_kernel(sigma);
    let rows = convolve_rows(plane, height, width, &kernel);
    let t = transpose(&rows, height, width);
    let cols = convolve_rows(&t, width, height, &kernel);
    transpose(&cols, width, height)
}

/// Central-difference derivatives `(d/dx, d/dy)`, with one-sided differences at the border.
pub fn gradients<T: Scalar>(plane: &[T], height: usize, width: usize) -> (Vec<T>, Vec<T>) {
    let half = lit::<T>(0.5);
    let mut gx = vec![T::zero(); plane.len()];
    let mut gy = vec![T::zero(); plane.len()];
    for r in 0..height {
        for c in 0..width {
            let at = |rr: usize, cc: usize| plane[rr * width + cc];
            gx[r * width + c] = if width == 1 {
                T::zero()
            } else if c == 0 {
                at(r, 1) - at(r, 0)
            } else if c == width - 1 {
                at(r, c) - at(r, c - 1)
            } else {
                (at(r, c + 1) - at(r, c - 1)) * half
            };
            gy[r * width + c] = if height == 1 {
                T::zero()
            } else if r == 0 {
                at(1, c) - at(0, c)
            } else if r == height - 1 {
                at(r, c) - at(r - 1, c)
            } else {
                (at(r + 1, c) - at(r - 1, c)) * half
            };
        }
    }
    (gx, gy)
}
