//! Loading images and tensors from disk and turning them into feature maps.

use std::path::Path;

use anyhow::Context;
use mcncc::io::{
    featurize_pixels, input_kind, load_gray_image, read_feature_map, GrayImage, InputKind,
    Manifest, ManifestEntry, PixelFeaturizerConfig,
};
use mcncc::tensor::rotate;
use mcncc::whiten::apply_projection;
use mcncc::{FeatureMap, Projection, Scalar};
use rayon::prelude::*;

use crate::args::Ctx;

/// One input before featurization.
pub enum Source<T> {
    Image(GrayImage),
    Map(FeatureMap<T>),
}

fn project<T: Scalar>(map: FeatureMap<T>, proj: Option<&Projection<T>>) -> mcncc::Result<FeatureMap<T>> {
    match proj {
        Some(p) => apply_projection(&map, p),
        None => Ok(map),
    }
}

impl<T: Scalar> Source<T> {
    pub fn load(path: &Path, domain: &str, ctx: &Ctx) -> anyhow::Result<Self> {
        let src = match input_kind(path) {
            InputKind::Image => load_gray_image(path).map(Source::Image),
            InputKind::Tensor => read_feature_map(path, ctx.allow_narrowing)
                .map(|m| Source::Map(m.with_domain(domain))),
        };
        src.with_context(|| format!("reading {}", path.display()))
    }

    pub fn is_image(&self) -> bool {
        matches!(self, Source::Image(_))
    }

    /// The unrotated feature map, projected if `proj` is given.
    pub fn map(
        &self,
        feat: &PixelFeaturizerConfig,
        domain: &str,
        proj: Option<&Projection<T>>,
    ) -> mcncc::Result<FeatureMap<T>> {
        match self {
            Source::Image(img) => project(featurize_pixels(img, feat, domain)?, proj),
            Source::Map(m) => project(m.clone(), proj),
        }
    }

    /// `(angle, map)` for every angle. Images are rotated before
    /// featurization; tensors are projected first and rotated in feature space.
    pub fn variants(
        &self,
        angles: &[f64],
        feat: &PixelFeaturizerConfig,
        domain: &str,
        proj: Option<&Projection<T>>,
    ) -> mcncc::Result<Vec<(f64, FeatureMap<T>)>> {
        match self {
            Source::Image(img) => angles
                .iter()
                .map(|&a| {
                    let r = if a == 0.0 { img.clone() } else { img.rotate(a)? };
                    Ok((a, project(featurize_pixels(&r, feat, domain)?, proj)?))
                })
                .collect(),
            Source::Map(m) => {
                let base = project(m.clone(), proj)?;
                angles.iter().map(|&a| Ok((a, rotate(&base, a)?))).collect()
            }
        }
    }
}

/// Manifest entries split by role, with dense group labels.
pub struct Dataset<T> {
    pub manifest: Manifest,
    pub queries: Vec<(ManifestEntry, Source<T>)>,
    pub query_groups: Vec<usize>,
    pub database: Vec<(ManifestEntry, Source<T>)>,
    pub db_groups: Vec<usize>,
}

fn load_all<T: Scalar>(
    manifest: &Manifest,
    entries: Vec<ManifestEntry>,
    ctx: &Ctx,
) -> anyhow::Result<Vec<(ManifestEntry, Source<T>)>> {
    entries
        .into_par_iter()
        .map(|e| {
            let s = Source::load(&manifest.resolve(&e), &e.domain_tag, ctx)
                .with_context(|| format!("manifest entry '{}'", e.id))?;
            Ok((e, s))
        })
        .collect()
}

impl<T: Scalar> Dataset<T> {
    pub fn load(path: &Path, ctx: &Ctx) -> anyhow::Result<Self> {
        let manifest =
            Manifest::load(path).with_context(|| format!("reading manifest {}", path.display()))?;
        let groups = manifest.group_index();
        let (mut qe, mut qg, mut de, mut dg) = (vec![], vec![], vec![], vec![]);
        for (e, g) in manifest.entries.iter().zip(groups) {
            match e.role {
                mcncc::io::Role::Query => {
                    qe.push(e.clone());
                    qg.push(g);
                }
                mcncc::io::Role::Database => {
                    de.push(e.clone());
                    dg.push(g);
                }
            }
        }
        Ok(Self {
            queries: load_all(&manifest, qe, ctx)?,
            query_groups: qg,
            database: load_all(&manifest, de, ctx)?,
            db_groups: dg,
            manifest,
        })
    }

    /// Database feature maps, projected with `proj` if given.
    pub fn database_maps(
        &self,
        feat: &PixelFeaturizerConfig,
        proj: Option<&Projection<T>>,
    ) -> anyhow::Result<Vec<FeatureMap<T>>> {
        self.database
            .par_iter()
            .map(|(e, s)| {
                s.map(feat, &e.domain_tag, proj)
                    .with_context(|| format!("featurizing '{}'", e.id))
            })
            .collect()
    }

    /// Rotation variants of every query.
    pub fn query_variants(
        &self,
        angles: &[f64],
        feat: &PixelFeaturizerConfig,
        proj: Option<&Projection<T>>,
    ) -> anyhow::Result<Vec<Vec<(f64, FeatureMap<T>)>>> {
        self.queries
            .par_iter()
            .map(|(e, s)| {
                s.variants(angles, feat, &e.domain_tag, proj)
                    .with_context(|| format!("featurizing '{}'", e.id))
            })
            .collect()
    }
}
