//! Flag groups shared by several subcommands.

use std::path::PathBuf;

use anyhow::{bail, Context};
use clap::{Args, ValueEnum};
use mcncc::io::{
    global_stats_from_bundle, model_from_bundle, projection_from_bundle, read_tensor, Bundle,
    FeaturizerMode, PixelFeaturizerConfig,
};
use mcncc::{AlignmentConfig, ChannelWeights, NormalizationScheme, Projection, Scalar, Scorer};

/// Options every command sees.
#[derive(Debug, Clone, Copy)]
pub struct Ctx {
    pub allow_narrowing: bool,
    pub seed: u64,
    pub epsilon: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Protocol {
    /// Stride 2, rotations -20..20 in 4 degree steps, half overlap.
    CrossDomain,
    /// Stride 1, no rotation, query fully inside the target.
    Patch,
}

#[derive(Debug, Clone, Args)]
pub struct SearchArgs {
    /// Preset the individual search flags start from.
    #[arg(long, value_enum, default_value_t = Protocol::CrossDomain)]
    pub protocol: Protocol,
    /// Translation stride in pixels.
    #[arg(long)]
    pub stride: Option<usize>,
    #[arg(long, allow_negative_numbers = true)]
    pub rot_min: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub rot_max: Option<f64>,
    #[arg(long)]
    pub rot_stride: Option<f64>,
    /// Minimum fraction of the query that must overlap the target.
    #[arg(long)]
    pub min_overlap: Option<f64>,
}

impl SearchArgs {
    pub fn config(&self) -> anyhow::Result<AlignmentConfig> {
        let mut cfg = match self.protocol {
            Protocol::CrossDomain => AlignmentConfig::cross_domain(),
            Protocol::Patch => AlignmentConfig::patch(),
        };
        if let Some(s) = self.stride {
            cfg.translation_stride = s;
        }
        if let Some(v) = self.rot_min {
            cfg.rotation_min = v;
        }
        if let Some(v) = self.rot_max {
            cfg.rotation_max = v;
        }
        if let Some(v) = self.rot_stride {
            cfg.rotation_stride = v;
        }
        if let Some(v) = self.min_overlap {
            cfg.min_overlap_fraction = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Args)]
pub struct FeatureArgs {
    /// Pixel featurizer for image inputs.
    #[arg(long, default_value = "gradient-bank")]
    pub features: FeaturizerMode,
    #[arg(long, default_value_t = 8)]
    pub orientations: usize,
    /// Gaussian blur applied before differentiation, in pixels.
    #[arg(long, default_value_t = 1.0)]
    pub blur: f64,
}

impl FeatureArgs {
    pub fn config(&self) -> PixelFeaturizerConfig {
        PixelFeaturizerConfig {
            mode: self.features,
            orientations: self.orientations,
            blur_sigma: self.blur,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct ScorerArgs {
    /// Normalization scheme: a preset (raw, mu, mu-sigma, muc, mcncc, gmuc,
    /// gmuc-gsigmac, cosine) or `centering:scaling`.
    #[arg(long, default_value = "mcncc")]
    pub scheme: NormalizationScheme,
    /// Per-channel weights as a tensor file; scores become weighted MCNCC.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    /// Trained model bundle; supplies projections and weights.
    #[arg(long, conflicts_with_all = ["weights", "proj_x", "proj_y"])]
    pub model: Option<PathBuf>,
    /// Projection bundle applied to queries.
    #[arg(long)]
    pub proj_x: Option<PathBuf>,
    /// Projection bundle applied to database items.
    #[arg(long)]
    pub proj_y: Option<PathBuf>,
    /// Global statistics bundle for the query domain.
    #[arg(long)]
    pub stats_x: Option<PathBuf>,
    /// Global statistics bundle for the database domain.
    #[arg(long)]
    pub stats_y: Option<PathBuf>,
}

/// A scorer plus the projections to apply before scoring.
pub struct Matcher<T> {
    pub scorer: Scorer<T>,
    pub proj_x: Option<Projection<T>>,
    pub proj_y: Option<Projection<T>>,
    pub label: Option<String>,
}

fn read_bundle(path: &PathBuf) -> anyhow::Result<Bundle> {
    Bundle::read(path).with_context(|| format!("reading {}", path.display()))
}

impl ScorerArgs {
    pub fn matcher<T: Scalar>(&self, ctx: &Ctx) -> anyhow::Result<Matcher<T>> {
        let eps = T::cast_f64(ctx.epsilon);
        if let Some(path) = &self.model {
            let m = model_from_bundle::<T>(&read_bundle(path)?, ctx.allow_narrowing)?;
            return Ok(Matcher {
                scorer: m.scorer(),
                proj_x: Some(m.proj_x),
                proj_y: Some(m.proj_y),
                label: Some(path.display().to_string()),
            });
        }
        let proj = |p: &Option<PathBuf>| -> anyhow::Result<Option<Projection<T>>> {
            p.as_ref()
                .map(|p| Ok(projection_from_bundle(&read_bundle(p)?, ctx.allow_narrowing)?))
                .transpose()
        };
        let scorer = match &self.weights {
            Some(path) => {
                let w = read_tensor(path)
                    .with_context(|| format!("reading {}", path.display()))?
                    .values::<T>(ctx.allow_narrowing)?;
                Scorer::weighted(ChannelWeights::new(w, T::zero())?)
            }
            None if self.scheme.needs_global() => {
                let (Some(sx), Some(sy)) = (&self.stats_x, &self.stats_y) else {
                    bail!(mcncc::Error::Config(format!(
                        "scheme {} needs --stats-x and --stats-y",
                        self.scheme.label()
                    )));
                };
                let gx = global_stats_from_bundle(&read_bundle(sx)?, ctx.allow_narrowing)?;
                let gy = global_stats_from_bundle(&read_bundle(sy)?, ctx.allow_narrowing)?;
                Scorer::scheme_with_global(self.scheme, gx, gy)
            }
            None => Scorer::scheme(self.scheme),
        };
        Ok(Matcher {
            scorer: scorer.with_epsilon(eps),
            proj_x: proj(&self.proj_x)?,
            proj_y: proj(&self.proj_y)?,
            label: None,
        })
    }
}
