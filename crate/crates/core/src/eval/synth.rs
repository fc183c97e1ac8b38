//! Seeded synthetic cross-domain benchmark.
//!
//! Each group owns a latent texture. Database items are renderings of the
//! whole latent in domain A; each query is a crop of a domain-B rendering of
//! its group's latent at a known position. A feature map has `2 * orientations`
//! informative channels (rectified oriented derivatives of the latent, one per
//! polarity) followed by `noise_channels` channels of pure noise.
//!
//! Domain A and B differ in blur, in a partial mixing of each informative
//! channel with its neighbour (domain B only), in additive clutter blobs
//! (domain B only) and in independent noise. Every rendering also carries a
//! random per-channel gain and offset plus a shared brightness offset.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::correlate::{search_alignments, AlignmentConfig, Scorer};
use crate::learn::{Pair, PairBatch};
use crate::error::{Error, Result};
use crate::filter::{gaussian_blur, gradients};
use crate::scalar::Scalar;
use crate::tensor::{extract_patch, FeatureMap};

pub const DOMAIN_A: &str = "A";
pub const DOMAIN_B: &str = "B";

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkConfig {
    pub groups: usize,
    pub items_per_group: usize,
    /// Side of the square database items.
    pub item_size: usize,
    /// Side of the square queries.
    pub query_size: usize,
    pub orientations: usize,
    pub noise_channels: usize,
    /// Smoothing of the latent texture.
    pub latent_blur: f64,
    /// Extra smoothing applied to the domain-B latent.
    pub query_blur: f64,
    /// Fraction of the neighbouring channel mixed into each domain-B channel.
    pub mixing: f64,
    /// Standard deviation of the log gain per channel.
    pub gain_spread: f64,
    /// Standard deviation of the per-channel offset, in units of signal std.
    pub channel_offset: f64,
    /// Standard deviation of the shared brightness offset, in units of signal std.
    pub brightness: f64,
    /// Pixel noise on informative channels, in units of signal std.
    pub pixel_noise: f64,
    /// Clutter blobs added to each domain-B latent.
    pub clutter: usize,
    /// Query positions are multiples of this stride.
    pub pose_stride: usize,
    pub seed: u64,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            groups: 60,
            items_per_group: 2,
            item_size: 24,
            query_size: 12,
            orientations: 3,
            noise_channels: 8,
            latent_blur: 1.5,
            query_blur: 0.8,
            mixing: 0.35,
            gain_spread: 0.5,
            channel_offset: 0.5,
            brightness: 4.0,
            pixel_noise: 0.6,
            clutter: 3,
            pose_stride: 2,
            seed: 0,
        }
    }
}

impl BenchmarkConfig {
    pub fn channels(&self) -> usize {
        2 * self.orientations + self.noise_channels
    }

    pub fn validate(&self) -> Result<()> {
        if self.groups == 0 || self.items_per_group == 0 {
            return Err(Error::Config("benchmark needs at least one group and item".into()));
        }
        if self.query_size < 2 || self.query_size > self.item_size {
            return Err(Error::Config(format!(
                "query size {} must lie in 2..={}",
                self.query_size, self.item_size
            )));
        }
        if self.orientations == 0 || self.pose_stride == 0 {
            return Err(Error::Config("orientations and pose stride must be positive".into()));
        }
        Ok(())
    }

    /// Search settings matching how queries were placed.
    pub fn alignment(&self) -> AlignmentConfig {
        AlignmentConfig {
            translation_stride: self.pose_stride,
            ..AlignmentConfig::patch()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchQuery<T> {
    pub map: FeatureMap<T>,
    pub group: usize,
    /// True placement of the query inside its group's items.
    pub dy: usize,
    pub dx: usize,
    pub area_ratio: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Benchmark<T> {
    pub database: Vec<FeatureMap<T>>,
    pub db_groups: Vec<usize>,
    pub queries: Vec<BenchQuery<T>>,
    pub alignment: AlignmentConfig,
}

impl<T: Scalar> Benchmark<T> {
    pub fn query_maps(&self) -> Vec<FeatureMap<T>> {
        self.queries.iter().map(|q| q.map.clone()).collect()
    }

    pub fn query_groups(&self) -> Vec<usize> {
        self.queries.iter().map(|q| q.group).collect()
    }

    /// Restriction to the groups accepted by `keep`; group labels are unchanged.
    pub fn subset(&self, keep: impl Fn(usize) -> bool) -> Self {
        let (database, db_groups) = self
            .database
            .iter()
            .zip(&self.db_groups)
            .filter(|(_, &g)| keep(g))
            .map(|(m, &g)| (m.clone(), g))
            .unzip();
        Self {
            database,
            db_groups,
            queries: self.queries.iter().filter(|q| keep(q.group)).cloned().collect(),
            alignment: self.alignment.clone(),
        }
    }

    /// Groups `0..n` and `n..` as two benchmarks.
    pub fn split_groups(&self, n: usize) -> (Self, Self) {
        (self.subset(|g| g < n), self.subset(|g| g >= n))
    }

    /// The database window a query truly corresponds to in item `index`.
    pub fn true_window(&self, query: &BenchQuery<T>, index: usize) -> Result<FeatureMap<T>> {
        let (h, w) = (query.map.height(), query.map.width());
        extract_patch(&self.database[index], query.dy, query.dx, h, w)
    }
}

impl<T: Scalar> Benchmark<T> {
    /// Balanced labelled pairs for training: every query with each of its
    /// group's items cropped at the true pose (`z = +1`), and as many items of
    /// other groups drawn with `seed`, cropped at the pose where untrained
    /// MCNCC scores best (`z = -1`). `x` is the query side.
    pub fn training_pairs(&self, seed: u64) -> Result<PairBatch<T>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scorer = Scorer::<T>::mcncc();
        let mut pairs = vec![];
        for q in &self.queries {
            let own: Vec<usize> = (0..self.database.len())
                .filter(|&i| self.db_groups[i] == q.group)
                .collect();
            let others: Vec<usize> = (0..self.database.len())
                .filter(|&i| self.db_groups[i] != q.group)
                .collect();
            for &i in &own {
                pairs.push(Pair::new(q.map.clone(), self.true_window(q, i)?, 1)?);
            }
            if others.is_empty() {
                continue;
            }
            for _ in 0..own.len() {
                let i = others[rng.random_range(0..others.len())];
                let best = search_alignments(&q.map, &self.database[i], &self.alignment, &scorer)?;
                let (h, w) = (q.map.height(), q.map.width());
                let window = extract_patch(&self.database[i], best.dy as usize, best.dx as usize, h, w)?;
                pairs.push(Pair::new(q.map.clone(), window, -1)?);
            }
        }
        PairBatch::new(pairs)
    }
}

fn noise_plane(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let normal = Normal::new(0.0, 1.0).expect("valid normal");
    (0..n).map(|_| normal.sample(rng)).collect()
}

fn standardize_plane(v: &mut [f64]) {
    let n = v.len() as f64;
    let mu = v.iter().sum::<f64>() / n;
    let sd = (v.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / n).sqrt().max(1e-12);
    v.iter_mut().for_each(|x| *x = (*x - mu) / sd);
}

/// Rectified oriented derivatives, each scaled to unit standard deviation.
fn oriented_responses(latent: &[f64], size: usize, orientations: usize) -> Vec<Vec<f64>> {
    let (gx, gy) = gradients(latent, size, size);
    let mut out = vec![];
    for k in 0..orientations {
        let theta = k as f64 * std::f64::consts::PI / orientations as f64;
        let (c, s) = (theta.cos(), theta.sin());
        let d: Vec<f64> = gx.iter().zip(&gy).map(|(x, y)| c * x + s * y).collect();
        for sign in [1.0, -1.0] {
            let mut r: Vec<f64> = d.iter().map(|v| (sign * v).max(0.0)).collect();
            standardize_plane(&mut r);
            out.push(r);
        }
    }
    out
}

struct Renderer<'a> {
    cfg: &'a BenchmarkConfig,
    rng: ChaCha8Rng,
}

impl Renderer<'_> {
    fn latent(&mut self) -> Vec<f64> {
        let n = self.cfg.item_size;
        let raw = noise_plane(&mut self.rng, n * n);
        let mut l = gaussian_blur(&raw, n, n, self.cfg.latent_blur);
        standardize_plane(&mut l);
        l
    }

    fn clutter(&mut self, latent: &[f64]) -> Vec<f64> {
        let n = self.cfg.item_size;
        let mut out = latent.to_vec();
        for _ in 0..self.cfg.clutter {
            let cy = self.rng.random_range(0.0..n as f64);
            let cx = self.rng.random_range(0.0..n as f64);
            let amp = self.rng.random_range(-2.5..2.5);
            let sigma = self.rng.random_range(1.5..3.0);
            for r in 0..n {
                for c in 0..n {
                    let d2 = (r as f64 - cy).powi(2) + (c as f64 - cx).powi(2);
                    out[r * n + c] += amp * (-d2 / (2.0 * sigma * sigma)).exp();
                }
            }
        }
        out
    }

    /// Feature planes of one rendering, before gain/offset perturbation.
    fn planes(&mut self, latent: &[f64], domain_b: bool) -> Vec<Vec<f64>> {
        let cfg = self.cfg;
        let n = cfg.item_size;
        let source = if domain_b {
            let cl = self.clutter(latent);
            gaussian_blur(&cl, n, n, cfg.query_blur)
        } else {
            latent.to_vec()
        };
        let mut planes = oriented_responses(&source, n, cfg.orientations);
        if domain_b && cfg.mixing > 0.0 {
            let m = planes.len();
            let orig = planes.clone();
            for (i, p) in planes.iter_mut().enumerate() {
                let other = &orig[(i + 2) % m];
                for (v, o) in p.iter_mut().zip(other) {
                    *v = (1.0 - cfg.mixing) * *v + cfg.mixing * o;
                }
            }
        }
        for p in planes.iter_mut() {
            let noise = noise_plane(&mut self.rng, n * n);
            p.iter_mut()
                .zip(noise)
                .for_each(|(v, e)| *v += cfg.pixel_noise * e);
        }
        for _ in 0..cfg.noise_channels {
            let raw = noise_plane(&mut self.rng, n * n);
            let mut p = gaussian_blur(&raw, n, n, cfg.latent_blur);
            standardize_plane(&mut p);
            planes.push(p);
        }
        planes
    }

    fn perturb(&mut self, planes: &mut [Vec<f64>]) {
        let cfg = self.cfg;
        let normal = Normal::new(0.0, 1.0).expect("valid normal");
        let brightness = cfg.brightness * normal.sample(&mut self.rng);
        for p in planes.iter_mut() {
            let gain = (cfg.gain_spread * normal.sample(&mut self.rng)).exp();
            let offset = cfg.channel_offset * normal.sample(&mut self.rng);
            p.iter_mut()
                .for_each(|v| *v = gain * *v + offset + brightness);
        }
    }

    fn render<T: Scalar>(&mut self, latent: &[f64], domain_b: bool) -> Result<FeatureMap<T>> {
        let n = self.cfg.item_size;
        let mut planes = self.planes(latent, domain_b);
        self.perturb(&mut planes);
        let data: Vec<T> = planes.concat().into_iter().map(T::cast_f64).collect();
        let domain = if domain_b { DOMAIN_B } else { DOMAIN_A };
        FeatureMap::new(planes.len(), n, n, data, domain)
    }
}

/// Generates the benchmark for `cfg`; identical configs give identical output.
pub fn generate<T: Scalar>(cfg: &BenchmarkConfig) -> Result<Benchmark<T>> {
    cfg.validate()?;
    let mut r = Renderer {
        cfg,
        rng: ChaCha8Rng::seed_from_u64(cfg.seed),
    };
    let q = cfg.query_size;
    let slots = (cfg.item_size - q) / cfg.pose_stride + 1;
    let mut database = vec![];
    let mut db_groups = vec![];
    let mut queries = vec![];
    for g in 0..cfg.groups {
        let latent = r.latent();
        for _ in 0..cfg.items_per_group {
            database.push(r.render::<T>(&latent, false)?);
            db_groups.push(g);
        }
        let full = r.render::<T>(&latent, true)?;
        let dy = r.rng.random_range(0..slots) * cfg.pose_stride;
        let dx = r.rng.random_range(0..slots) * cfg.pose_stride;
        let map = extract_patch(&full, dy, dx, q, q)?;
        queries.push(BenchQuery {
            map,
            group: g,
            dy,
            dx,
            area_ratio: (q * q) as f64 / (cfg.item_size * cfg.item_size) as f64,
        });
    }
    Ok(Benchmark {
        database,
        db_groups,
        queries,
        alignment: cfg.alignment(),
    })
}
