//! Pairwise correlation scores and dense alignment search.

mod search;
mod trace;

pub use search::{
    admissible_poses, rotation_angles, score_database, score_database_prerotated, search_alignments,
    search_alignments_naive, search_prerotated, AlignmentConfig, MatchScore, Pose, ScoredItem,
    Scorer, ScorerKind,
};
pub(crate) use trace::inverse_sqrt;
pub use trace::multivariate_trace;

use crate::error::{Error, Result};
use crate::normalize::{apply_scheme, GlobalStats, NormalizationScheme};
use crate::scalar::Scalar;
use crate::tensor::{region_moments, ChannelView, FeatureMap, SupportRegion};

/// Per-channel importance weights `W` and the decision bias `b`.
///
/// The bias never enters a similarity score; it only shifts the hinge in the loss.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelWeights<T> {
    pub weights: Vec<T>,
    pub bias: T,
}

impl<T: Scalar> ChannelWeights<T> {
    pub fn new(weights: Vec<T>, bias: T) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::Empty("channel weights".into()));
        }
        if weights.iter().any(|w| !w.is_finite()) || !bias.is_finite() {
            return Err(Error::Config("channel weights must be finite".into()));
        }
        Ok(Self { weights, bias })
    }

    /// `W_c = 1/C`, `b = 0`: the weighted score reduces to plain MCNCC.
    pub fn uniform(channels: usize) -> Self {
        Self {
            weights: vec![T::one() / T::count(channels); channels],
            bias: T::zero(),
        }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

fn check_pair<T: Scalar>(
    x: &ChannelView<'_, T>,
    y: &ChannelView<'_, T>,
    region: &SupportRegion,
) -> Result<()> {
    if x.height != y.height || x.width != y.width {
        return Err(Error::DimensionMismatch(format!(
            "{}x{} vs {}x{}",
            x.height, x.width, y.height, y.width
        )));
    }
    region.validate(x.height, x.width)
}

/// Single-channel NCC with already-validated inputs.
pub(crate) fn ncc_unchecked<T: Scalar>(
    x: &[T],
    y: &[T],
    width: usize,
    region: &SupportRegion,
    epsilon: T,
) -> T {
    let (mx, sx) = region_moments(x, width, region);
    let (my, sy) = region_moments(y, width, region);
    let denom = (sx + epsilon) * (sy + epsilon);
    if denom == T::zero() {
        return T::zero();
    }
    let cross = region
        .indices(width)
        .map(|i| (x[i] - mx) * (y[i] - my))
        .sum::<T>();
    cross / (T::count(region.size()) * denom)
}

/// Normalized cross-correlation of two channels over `region`: the sample
/// Pearson coefficient with population statistics and `epsilon` added to each
/// standard deviation. A zero-variance channel scores 0.
pub fn ncc_single<T: Scalar>(
    x: ChannelView<'_, T>,
    y: ChannelView<'_, T>,
    region: &SupportRegion,
    epsilon: T,
) -> Result<T> {
    check_pair(&x, &y, region)?;
    Ok(ncc_unchecked(x.data, y.data, x.width, region, epsilon))
}

fn check_maps<T: Scalar>(
    x: &FeatureMap<T>,
    y: &FeatureMap<T>,
    region: &SupportRegion,
) -> Result<()> {
    if x.channels() != y.channels() {
        return Err(Error::DimensionMismatch(format!(
            "{} vs {} channels",
            x.channels(),
            y.channels()
        )));
    }
    if x.height() != y.height() || x.width() != y.width() {
        return Err(Error::DimensionMismatch(format!(
            "{}x{} vs {}x{}",
            x.height(),
            x.width(),
            y.height(),
            y.width()
        )));
    }
    region.validate(x.height(), x.width())
}

/// Per-channel NCC values.
pub fn channel_nccs<T: Scalar>(
    x: &FeatureMap<T>,
    y: &FeatureMap<T>,
    region: &SupportRegion,
    epsilon: T,
) -> Result<Vec<T>> {
    check_maps(x, y, region)?;
    Ok((0..x.channels())
        .map(|c| ncc_unchecked(x.channel(c), y.channel(c), x.width(), region, epsilon))
        .collect())
}

/// Multi-channel NCC: the mean of the per-channel NCC values.
pub fn mcncc<T: Scalar>(
    x: &FeatureMap<T>,
    y: &FeatureMap<T>,
    region: &SupportRegion,
    epsilon: T,
) -> Result<T> {
    let v = channel_nccs(x, y, region, epsilon)?;
    Ok(v.iter().copied().sum::<T>() / T::count(v.len()))
}

/// `sum_c W_c * NCC_c`. The bias is not added.
pub fn mcncc_weighted<T: Scalar>(
    x: &FeatureMap<T>,
    y: &FeatureMap<T>,
    region: &SupportRegion,
    weights: &ChannelWeights<T>,
    epsilon: T,
) -> Result<T> {
    if weights.len() != x.channels() {
        return Err(Error::DimensionMismatch(format!(
            "{} weights for {} channels",
            weights.len(),
            x.channels()
        )));
    }
    let v = channel_nccs(x, y, region, epsilon)?;
    Ok(v.iter().zip(&weights.weights).map(|(&n, &w)| n * w).sum())
}

/// Score under an arbitrary normalization scheme: each map is normalized with
/// its own statistics over `region`, then the score is the inner product
/// divided by `C * |P|`. Under `[μc,σc]` this equals [`mcncc`].
pub fn scheme_score<T: Scalar>(
    x: &FeatureMap<T>,
    y: &FeatureMap<T>,
    region: &SupportRegion,
    scheme: NormalizationScheme,
    global_x: Option<&GlobalStats<T>>,
    global_y: Option<&GlobalStats<T>>,
    epsilon: T,
) -> Result<T> {
    check_maps(x, y, region)?;
    let xn = apply_scheme(x, region, scheme, global_x, epsilon)?;
    let yn = apply_scheme(y, region, scheme, global_y, epsilon)?;
    let mut total = T::zero();
    for c in 0..x.channels() {
        let (a, b) = (xn.channel(c), yn.channel(c));
        total = total + region.indices(x.width()).map(|i| a[i] * b[i]).sum::<T>();
    }
    Ok(total / T::count(x.channels() * region.size()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn map1(v: &[f64], h: usize, w: usize) -> FeatureMap<f64> {
        FeatureMap::new(1, h, w, v.to_vec(), "").unwrap()
    }

    #[test]
    fn self_and_anti_correlation() {
        let x = map1(&[0.3, 1.0, -2.0, 4.0, 0.0, 1.5], 2, 3);
        let neg = x.map_values(|_, v| -v).unwrap();
        let r = SupportRegion::full(&x);
        let s = ncc_single(x.channel_view(0), x.channel_view(0), &r, 0.0).unwrap();
        let a = ncc_single(x.channel_view(0), neg.channel_view(0), &r, 0.0).unwrap();
        assert_abs_diff_eq!(s, 1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(a, -1.0, epsilon = 1e-9);
    }

    #[test]
    fn hand_evaluated_ncc() {
        let x = map1(&[1.0, 2.0, 3.0, 4.0], 2, 2);
        let y = map1(&[1.0, 2.0, 2.0, 5.0], 2, 2);
        let r = SupportRegion::full(&x);
        let v = ncc_single(x.channel_view(0), y.channel_view(0), &r, 0.0).unwrap();
        assert_abs_diff_eq!(v, 1.5 / (1.25f64.sqrt() * 2.25f64.sqrt()), epsilon = 1e-15);
        assert_abs_diff_eq!(v, 0.89443, epsilon = 1e-5);
    }

    #[test]
    fn zero_variance_scores_zero() {
        let x = map1(&[2.0; 4], 2, 2);
        let y = map1(&[1.0, 2.0, 3.0, 4.0], 2, 2);
        let r = SupportRegion::full(&x);
        for eps in [0.0, 1e-5] {
            assert_eq!(ncc_single(x.channel_view(0), y.channel_view(0), &r, eps).unwrap(), 0.0);
        }
    }

    #[test]
    fn ncc_errors() {
        let x = map1(&[1.0, 2.0, 3.0, 4.0], 2, 2);
        let y = map1(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0], 2, 3);
        let r = SupportRegion::full(&x);
        assert!(ncc_single(x.channel_view(0), y.channel_view(0), &r, 0.0).is_err());
        let tiny = SupportRegion::rect(0, 0, 1, 1);
        assert!(matches!(
            ncc_single(x.channel_view(0), x.channel_view(0), &tiny, 0.0),
            Err(Error::DegenerateRegion { .. })
        ));
    }

    #[test]
    fn opposing_channels_average_to_zero() {
        let x = FeatureMap::new(2, 1, 3, vec![1.0, 2.0, 4.0, 0.0, 1.0, 5.0], "").unwrap();
        let y = FeatureMap::new(2, 1, 3, vec![1.0, 2.0, 4.0, 0.0, -1.0, -5.0], "").unwrap();
        let r = SupportRegion::full(&x);
        assert_abs_diff_eq!(mcncc(&x, &y, &r, 0.0).unwrap(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn mcncc_channel_mismatch() {
        let x = FeatureMap::<f64>::zeros(2, 2, 2).unwrap();
        let y = FeatureMap::<f64>::zeros(3, 2, 2).unwrap();
        assert!(mcncc(&x, &y, &SupportRegion::full(&x), 1e-5).is_err());
    }

    #[test]
    fn weighted_variants() {
        let x = FeatureMap::from_fn(3, 4, 4, |c, r, col| ((c + 1) * r * r + col) as f64).unwrap();
        let y = FeatureMap::from_fn(3, 4, 4, |c, r, col| ((r + 2 * col) % (c + 2)) as f64).unwrap();
        let r = SupportRegion::full(&x);
        let plain = mcncc(&x, &y, &r, 1e-5).unwrap();
        let uniform = mcncc_weighted(&x, &y, &r, &ChannelWeights::uniform(3), 1e-5).unwrap();
        assert_abs_diff_eq!(plain, uniform, epsilon = 1e-15);

        let double = ChannelWeights::new(vec![2.0 / 3.0; 3], 0.0).unwrap();
        assert_abs_diff_eq!(
            mcncc_weighted(&x, &y, &r, &double, 1e-5).unwrap(),
            2.0 * plain,
            epsilon = 1e-14
        );

        let per = channel_nccs(&x, &y, &r, 1e-5).unwrap();
        let one_hot = ChannelWeights::new(vec![0.0, 1.0, 0.0], 0.7).unwrap();
        assert_eq!(mcncc_weighted(&x, &y, &r, &one_hot, 1e-5).unwrap(), per[1]);

        let short = ChannelWeights::new(vec![1.0; 2], 0.0).unwrap();
        assert!(mcncc_weighted(&x, &y, &r, &short, 1e-5).is_err());
    }
}
