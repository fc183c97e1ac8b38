//! Centering/scaling policies: none, local over the whole feature volume,
//! local per channel, and global per channel (statistics pooled over a dataset).

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{channel_stats, FeatureMap, SupportRegion};

/// Where a centering or scaling statistic comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Statistic {
    None,
    /// One value over all `C * |P|` entries of the local feature volume.
    LocalVolume,
    /// One value per channel over the local support region.
    LocalChannel,
    /// One value per channel pooled over a whole dataset.
    GlobalChannel,
}

impl Statistic {
    fn token(self) -> &'static str {
        match self {
            Statistic::None => "none",
            Statistic::LocalVolume => "volume",
            Statistic::LocalChannel => "channel",
            Statistic::GlobalChannel => "global",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "none" | "." | "·" => Some(Statistic::None),
            "volume" => Some(Statistic::LocalVolume),
            "channel" => Some(Statistic::LocalChannel),
            "global" => Some(Statistic::GlobalChannel),
            _ => None,
        }
    }
}

/// A `[centering, scaling]` pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NormalizationScheme {
    pub centering: Statistic,
    pub scaling: Statistic,
}

impl NormalizationScheme {
    pub const fn new(centering: Statistic, scaling: Statistic) -> Self {
        Self { centering, scaling }
    }

    /// `[·,·]`: plain cross-correlation.
    pub const RAW: Self = Self::new(Statistic::None, Statistic::None);
    /// `[μ,·]`
    pub const VOLUME_CENTERED: Self = Self::new(Statistic::LocalVolume, Statistic::None);
    /// `[μ,σ]`
    pub const VOLUME_STANDARDIZED: Self = Self::new(Statistic::LocalVolume, Statistic::LocalVolume);
    /// `[μc,·]`
    pub const CHANNEL_CENTERED: Self = Self::new(Statistic::LocalChannel, Statistic::None);
    /// `[μc,σc]`: MCNCC.
    pub const MCNCC: Self = Self::new(Statistic::LocalChannel, Statistic::LocalChannel);
    /// `[μ̄c,·]`
    pub const GLOBAL_CENTERED: Self = Self::new(Statistic::GlobalChannel, Statistic::None);
    /// `[μ̄c,σ̄c]`
    pub const GLOBAL_STANDARDIZED: Self =
        Self::new(Statistic::GlobalChannel, Statistic::GlobalChannel);
    /// `[·,σ]`: cosine-style scaling without centering.
    pub const COSINE: Self = Self::new(Statistic::None, Statistic::LocalVolume);

    /// The seven variants of the normalization ablation, in presentation order.
    pub const ABLATION: [Self; 7] = [
        Self::RAW,
        Self::VOLUME_CENTERED,
        Self::VOLUME_STANDARDIZED,
        Self::CHANNEL_CENTERED,
        Self::MCNCC,
        Self::GLOBAL_CENTERED,
        Self::GLOBAL_STANDARDIZED,
    ];

    pub fn needs_global(&self) -> bool {
        self.centering == Statistic::GlobalChannel || self.scaling == Statistic::GlobalChannel
    }

    /// Bracket notation, e.g. `[μc,σc]`.
    pub fn label(&self) -> String {
        let c = match self.centering {
            Statistic::None => "·",
            Statistic::LocalVolume => "μ",
            Statistic::LocalChannel => "μc",
            Statistic::GlobalChannel => "μ̄c",
        };
        let s = match self.scaling {
            Statistic::None => "·",
            Statistic::LocalVolume => "σ",
            Statistic::LocalChannel => "σc",
            Statistic::GlobalChannel => "σ̄c",
        };
        format!("[{c},{s}]")
    }
}

impl Default for NormalizationScheme {
    fn default() -> Self {
        Self::MCNCC
    }
}

impl fmt::Display for NormalizationScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.centering.token(), self.scaling.token())
    }
}

impl FromStr for NormalizationScheme {
    type Err = Error;

    /// Accepts preset names (`raw`, `mu`, `mu-sigma`, `muc`, `mcncc`, `gmuc`,
    /// `gmuc-gsigmac`, `cosine`) or an explicit `centering:scaling` pair using
    /// `none|volume|channel|global`.
    fn from_str(s: &str) -> Result<Self> {
        let preset = match s {
            "raw" | "plain" => Some(Self::RAW),
            "mu" => Some(Self::VOLUME_CENTERED),
            "mu-sigma" => Some(Self::VOLUME_STANDARDIZED),
            "muc" => Some(Self::CHANNEL_CENTERED),
            "mcncc" | "muc-sigmac" => Some(Self::MCNCC),
            "gmuc" => Some(Self::GLOBAL_CENTERED),
            "gmuc-gsigmac" => Some(Self::GLOBAL_STANDARDIZED),
            "cosine" => Some(Self::COSINE),
            _ => None,
        };
        if let Some(p) = preset {
            return Ok(p);
        }
        let (c, sc) = s
            .split_once(':')
            .ok_or_else(|| Error::Config(format!("unknown normalization scheme `{s}`")))?;
        match (Statistic::parse(c), Statistic::parse(sc)) {
            (Some(centering), Some(scaling)) => Ok(Self { centering, scaling }),
            _ => Err(Error::Config(format!("unknown normalization scheme `{s}`"))),
        }
    }
}

/// Per-channel statistics pooled over every valid pixel of a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalStats<T> {
    pub means: Vec<T>,
    pub stddevs: Vec<T>,
    /// Number of maps aggregated.
    pub sample_count: usize,
}

/// Pools per-channel mean and population std over all pixels of all maps.
///
/// Each map contributes its own two-pass moments, merged with the pairwise
/// update so the result does not depend on accumulated round-off from raw sums.
pub fn fit_global_stats<'a, T, I>(dataset: I) -> Result<GlobalStats<T>>
where
    T: Scalar,
    I: IntoIterator<Item = &'a FeatureMap<T>>,
{
    let mut channels = None;
    let mut count = vec![];
    let mut mean: Vec<f64> = vec![];
    let mut m2: Vec<f64> = vec![];
    let mut maps = 0usize;

    for (k, map) in dataset.into_iter().enumerate() {
        let c = *channels.get_or_insert(map.channels());
        if map.channels() != c {
            return Err(Error::DimensionMismatch(format!(
                "map {k} has {} channels, expected {c}",
                map.channels()
            )));
        }
        if count.is_empty() {
            count = vec![0f64; c];
            mean = vec![0f64; c];
            m2 = vec![0f64; c];
        }
        let region = SupportRegion::full(map);
        let n_b = region.size() as f64;
        if n_b == 0.0 {
            continue;
        }
        for ch in 0..c {
            let plane = map.channel(ch);
            let mean_b = region.indices(map.width()).map(|i| plane[i].as_f64()).sum::<f64>() / n_b;
            let m2_b: f64 = region
                .indices(map.width())
                .map(|i| (plane[i].as_f64() - mean_b).powi(2))
                .sum();
            let n_a = count[ch];
            let n = n_a + n_b;
            let delta = mean_b - mean[ch];
            mean[ch] += delta * n_b / n;
            m2[ch] += m2_b + delta * delta * n_a * n_b / n;
            count[ch] = n;
        }
        maps += 1;
    }

    if maps == 0 {
        return Err(Error::Empty("global statistics need at least one map".into()));
    }
    Ok(GlobalStats {
        means: mean.iter().map(|&m| T::cast_f64(m)).collect(),
        stddevs: m2
            .iter()
            .zip(&count)
            .map(|(&s, &n)| T::cast_f64((s / n).sqrt()))
            .collect(),
        sample_count: maps,
    })
}

/// Resolved per-channel affine coefficients: output = `(x - center[c]) / scale[c]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Affine<T> {
    pub center: Vec<T>,
    pub scale: Vec<T>,
}

/// Computes the centering and scaling values a scheme assigns to `map` over `region`.
pub fn resolve_scheme<T: Scalar>(
    map: &FeatureMap<T>,
    region: &SupportRegion,
    scheme: NormalizationScheme,
    global: Option<&GlobalStats<T>>,
    epsilon: T,
) -> Result<Affine<T>> {
    let c = map.channels();
    if scheme.needs_global() {
        match global {
            None => {
                return Err(Error::Config(format!(
                    "scheme {} needs global statistics",
                    scheme.label()
                )))
            }
            Some(g) if g.means.len() != c || g.stddevs.len() != c => {
                return Err(Error::DimensionMismatch(format!(
                    "global statistics for {} channels, map has {c}",
                    g.means.len()
                )))
            }
            _ => {}
        }
    }
    let local = channel_stats(map, region)?;

    let volume_mean = local.means.iter().copied().sum::<T>() / T::count(c);
    let volume_std = || {
        // pooled over channels: E[(x - mu)^2] = mean_c(sigma_c^2 + (mu_c - mu)^2)
        let v = local
            .stddevs
            .iter()
            .zip(&local.means)
            .map(|(&s, &m)| s * s + (m - volume_mean) * (m - volume_mean))
            .sum::<T>()
            / T::count(c);
        v.sqrt()
    };

    let center = match scheme.centering {
        Statistic::None => vec![T::zero(); c],
        Statistic::LocalVolume => vec![volume_mean; c],
        Statistic::LocalChannel => local.means.clone(),
        Statistic::GlobalChannel => global.expect("checked above").means.clone(),
    };
    let scale = match scheme.scaling {
        Statistic::None => vec![T::one(); c],
        Statistic::LocalVolume => vec![volume_std() + epsilon; c],
        Statistic::LocalChannel => local.stddevs.iter().map(|&s| s + epsilon).collect(),
        Statistic::GlobalChannel => global
            .expect("checked above")
            .stddevs
            .iter()
            .map(|&s| s + epsilon)
            .collect(),
    };
    Ok(Affine { center, scale })
}

/// Normalizes `map` under `scheme`; local statistics come from `region` only.
pub fn apply_scheme<T: Scalar>(
    map: &FeatureMap<T>,
    region: &SupportRegion,
    scheme: NormalizationScheme,
    global: Option<&GlobalStats<T>>,
    epsilon: T,
) -> Result<FeatureMap<T>> {
    if scheme == NormalizationScheme::RAW {
        region.validate(map.height(), map.width())?;
        return Ok(map.clone());
    }
    let a = resolve_scheme(map, region, scheme, global, epsilon)?;
    map.map_values(|c, v| (v - a.center[c]) / a.scale[c])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::standardize;
    use approx::assert_abs_diff_eq;

    #[test]
    fn global_stats_pool_pixels() {
        let a = FeatureMap::new(1, 2, 2, vec![1.0; 4], "").unwrap();
        let b = FeatureMap::new(1, 2, 2, vec![3.0; 4], "").unwrap();
        let g = fit_global_stats([&a, &b]).unwrap();
        assert_abs_diff_eq!(g.means[0], 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(g.stddevs[0], 1.0, epsilon = 1e-15);
        assert_eq!(g.sample_count, 2);
    }

    #[test]
    fn global_stats_of_one_map_equal_local_stats() {
        let m = FeatureMap::from_fn(3, 4, 6, |c, r, col| ((c + 2) * r + col * col) as f64).unwrap();
        let g = fit_global_stats([&m]).unwrap();
        let l = channel_stats(&m, &SupportRegion::full(&m)).unwrap();
        for c in 0..3 {
            assert_abs_diff_eq!(g.means[c], l.means[c], epsilon = 1e-12);
            assert_abs_diff_eq!(g.stddevs[c], l.stddevs[c], epsilon = 1e-12);
        }
        let g3 = fit_global_stats([&m, &m, &m]).unwrap();
        for c in 0..3 {
            assert_abs_diff_eq!(g3.stddevs[c], l.stddevs[c], epsilon = 1e-12);
        }
    }

    #[test]
    fn global_stats_errors() {
        let empty: Vec<&FeatureMap<f64>> = vec![];
        assert!(matches!(fit_global_stats(empty), Err(Error::Empty(_))));
        let a = FeatureMap::<f64>::zeros(1, 2, 2).unwrap();
        let b = FeatureMap::<f64>::zeros(2, 2, 2).unwrap();
        assert!(matches!(
            fit_global_stats([&a, &b]),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn raw_scheme_is_identity() {
        let m = FeatureMap::from_fn(2, 3, 3, |c, r, col| (c * 9 + r * 3 + col) as f64).unwrap();
        let out = apply_scheme(&m, &SupportRegion::full(&m), NormalizationScheme::RAW, None, 1e-5)
            .unwrap();
        assert_eq!(out, m);
    }

    #[test]
    fn mcncc_scheme_equals_standardize() {
        let m = FeatureMap::from_fn(2, 3, 4, |c, r, col| ((c + 1) * (r + 2) * (col + 3)) as f64)
            .unwrap();
        let region = SupportRegion::rect(0, 1, 3, 3);
        let a = apply_scheme(&m, &region, NormalizationScheme::MCNCC, None, 1e-5).unwrap();
        let b = standardize(&m, &region, &channel_stats(&m, &region).unwrap(), 1e-5).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn volume_standardization_by_hand() {
        let m = FeatureMap::new(2, 1, 2, vec![0.0, 2.0, 10.0, 12.0], "").unwrap();
        let out = apply_scheme(
            &m,
            &SupportRegion::full(&m),
            NormalizationScheme::VOLUME_STANDARDIZED,
            None,
            0.0,
        )
        .unwrap();
        let s = 26f64.sqrt();
        let want = [-6.0 / s, -4.0 / s, 4.0 / s, 6.0 / s];
        for (a, b) in out.as_slice().iter().zip(want) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-14);
        }
    }

    #[test]
    fn single_channel_volume_equals_channel() {
        let m = FeatureMap::from_fn(1, 4, 4, |_, r, c| (r * r) as f64 - c as f64).unwrap();
        let region = SupportRegion::full(&m);
        for (v, ch) in [
            (NormalizationScheme::VOLUME_CENTERED, NormalizationScheme::CHANNEL_CENTERED),
            (NormalizationScheme::VOLUME_STANDARDIZED, NormalizationScheme::MCNCC),
        ] {
            let a = apply_scheme(&m, &region, v, None, 1e-5).unwrap();
            let b = apply_scheme(&m, &region, ch, None, 1e-5).unwrap();
            for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
                assert_abs_diff_eq!(x, y, epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn global_scheme_requires_stats() {
        let m = FeatureMap::<f64>::zeros(1, 2, 2).unwrap();
        let err = apply_scheme(
            &m,
            &SupportRegion::full(&m),
            NormalizationScheme::GLOBAL_STANDARDIZED,
            None,
            1e-5,
        );
        assert!(matches!(err, Err(Error::Config(_))));
    }

    #[test]
    fn scheme_parsing() {
        for s in NormalizationScheme::ABLATION {
            assert_eq!(s.to_string().parse::<NormalizationScheme>().unwrap(), s);
        }
        assert_eq!("mcncc".parse::<NormalizationScheme>().unwrap(), NormalizationScheme::MCNCC);
        assert_eq!(NormalizationScheme::MCNCC.label(), "[μc,σc]");
        assert!("bogus".parse::<NormalizationScheme>().is_err());
        assert!("channel:bogus".parse::<NormalizationScheme>().is_err());
    }
}
