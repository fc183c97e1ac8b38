//! Helpers shared by the integration suites.
#![allow(dead_code)]

use mcncc::filter::gaussian_blur;
use mcncc::FeatureMap;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normals(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

pub fn random_map(rng: &mut ChaCha8Rng, c: usize, h: usize, w: usize) -> FeatureMap<f64> {
    FeatureMap::new(c, h, w, normals(rng, c * h * w), "").unwrap()
}

/// Gaussian noise blurred per channel: smooth enough for bilinear rotation.
pub fn smooth_map(rng: &mut ChaCha8Rng, c: usize, h: usize, w: usize, sigma: f64) -> FeatureMap<f64> {
    let data: Vec<f64> = (0..c)
        .flat_map(|_| gaussian_blur(&normals(rng, h * w), h, w, sigma))
        .collect();
    FeatureMap::new(c, h, w, data, "").unwrap()
}

/// Textbook single-pass Pearson coefficient.
pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (sx, sy) = (x.iter().sum::<f64>(), y.iter().sum::<f64>());
    let sxx = x.iter().map(|v| v * v).sum::<f64>();
    let syy = y.iter().map(|v| v * v).sum::<f64>();
    let sxy = x.iter().zip(y).map(|(a, b)| a * b).sum::<f64>();
    (n * sxy - sx * sy) / ((n * sxx - sx * sx) * (n * syy - sy * sy)).sqrt()
}

/// `k` orthonormal columns of length `n`, each orthogonal to the all-ones vector.
pub fn centered_orthonormal(rng: &mut ChaCha8Rng, n: usize, k: usize) -> Vec<Vec<f64>> {
    let mut m = DMatrix::<f64>::from_fn(n, k + 1, |_, _| rng.sample(StandardNormal));
    m.column_mut(0).fill(1.0);
    let q = m.qr().q();
    (1..=k).map(|j| q.column(j).iter().copied().collect()).collect()
}

/// Central difference of `f` at `x[i]`.
pub fn central_diff(x: &mut [f64], i: usize, h: f64, mut f: impl FnMut(&[f64]) -> f64) -> f64 {
    let orig = x[i];
    x[i] = orig + h;
    let up = f(x);
    x[i] = orig - h;
    let down = f(x);
    x[i] = orig;
    (up - down) / (2.0 * h)
}

/// Entry-wise relative error with a floor on the denominator.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}
