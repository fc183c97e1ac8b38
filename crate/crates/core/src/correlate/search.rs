//! Exhaustive alignment search over a translation grid and a rotation sweep.
//!
//! The fast path reduces every pose to five per-channel moments
//! (`Σx, Σx², Σy, Σy², Σxy`) over the support region. For unmasked maps the
//! four single-map moments come from integral images, leaving only the cross
//! term to accumulate per pose. [`search_alignments_naive`] materializes both
//! windows and scores them with the reference pairwise routines.

use rayon::prelude::*;

use super::{mcncc_weighted, multivariate_trace, scheme_score, ChannelWeights};
use crate::error::{Error, Result};
use crate::normalize::{GlobalStats, NormalizationScheme, Statistic};
use crate::scalar::Scalar;
use crate::tensor::{extract_patch, rotate, FeatureMap, SupportRegion, DEFAULT_EPSILON};

#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentConfig {
    pub translation_stride: usize,
    pub rotation_min: f64,
    pub rotation_max: f64,
    pub rotation_stride: f64,
    /// Poses whose support covers less than this fraction of the (valid) query are skipped.
    pub min_overlap_fraction: f64,
}

impl Default for AlignmentConfig {
    fn default() -> Self {
        Self {
            translation_stride: 1,
            rotation_min: 0.0,
            rotation_max: 0.0,
            rotation_stride: 4.0,
            min_overlap_fraction: 0.5,
        }
    }
}

impl AlignmentConfig {
    /// Translation-only search with stride 1, query fully inside the target.
    pub fn patch() -> Self {
        Self {
            min_overlap_fraction: 1.0,
            ..Self::default()
        }
    }

    /// Stride-2 translations and rotations from -20° to +20° in 4° steps.
    pub fn cross_domain() -> Self {
        Self {
            translation_stride: 2,
            rotation_min: -20.0,
            rotation_max: 20.0,
            rotation_stride: 4.0,
            min_overlap_fraction: 0.5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.translation_stride == 0 {
            return Err(Error::Config("translation stride must be at least 1".into()));
        }
        if !(self.rotation_stride > 0.0) || !self.rotation_stride.is_finite() {
            return Err(Error::Config("rotation stride must be positive".into()));
        }
        if !(self.rotation_min <= self.rotation_max)
            || !self.rotation_min.is_finite()
            || !self.rotation_max.is_finite()
        {
            return Err(Error::Config(format!(
                "rotation range [{}, {}] is empty",
                self.rotation_min, self.rotation_max
            )));
        }
        if !(self.min_overlap_fraction > 0.0 && self.min_overlap_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "min overlap fraction {} not in (0, 1]",
                self.min_overlap_fraction
            )));
        }
        Ok(())
    }
}

/// Angles visited by the rotation sweep, `rotation_min` first.
pub fn rotation_angles(cfg: &AlignmentConfig) -> Vec<f64> {
    let steps = ((cfg.rotation_max - cfg.rotation_min) / cfg.rotation_stride + 1e-9).floor() as usize;
    (0..=steps)
        .map(|k| cfg.rotation_min + k as f64 * cfg.rotation_stride)
        .collect()
}

/// Placement of the (rotated) query's top-left corner in target coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub dy: i64,
    pub dx: i64,
    pub angle: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchScore {
    pub score: f64,
    pub dy: i64,
    pub dx: i64,
    pub angle: f64,
    /// `|P|` at the winning pose.
    pub overlap: usize,
}

impl MatchScore {
    fn beats(&self, other: &MatchScore) -> bool {
        if self.score != other.score {
            return self.score > other.score;
        }
        (self.dy, self.dx)
            .cmp(&(other.dy, other.dx))
            .then(self.angle.total_cmp(&other.angle))
            .is_lt()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ScorerKind<T> {
    /// Normalize both windows under a scheme, then average the inner product.
    Scheme {
        scheme: NormalizationScheme,
        global_query: Option<GlobalStats<T>>,
        global_target: Option<GlobalStats<T>>,
    },
    /// Channel-weighted MCNCC.
    Weighted(ChannelWeights<T>),
    /// Full-covariance trace coefficient (reference only; no fast path).
    Trace { ridge: Option<f64> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scorer<T> {
    pub kind: ScorerKind<T>,
    pub epsilon: T,
}

impl<T: Scalar> Scorer<T> {
    pub fn mcncc() -> Self {
        Self::scheme(NormalizationScheme::MCNCC)
    }

    pub fn scheme(scheme: NormalizationScheme) -> Self {
        Self {
            kind: ScorerKind::Scheme {
                scheme,
                global_query: None,
                global_target: None,
            },
            epsilon: T::cast_f64(DEFAULT_EPSILON),
        }
    }

    /// Scheme scorer with dataset statistics for each side.
    pub fn scheme_with_global(
        scheme: NormalizationScheme,
        global_query: GlobalStats<T>,
        global_target: GlobalStats<T>,
    ) -> Self {
        Self {
            kind: ScorerKind::Scheme {
                scheme,
                global_query: Some(global_query),
                global_target: Some(global_target),
            },
            epsilon: T::cast_f64(DEFAULT_EPSILON),
        }
    }

    pub fn weighted(weights: ChannelWeights<T>) -> Self {
        Self {
            kind: ScorerKind::Weighted(weights),
            epsilon: T::cast_f64(DEFAULT_EPSILON),
        }
    }

    pub fn trace(ridge: Option<f64>) -> Self {
        Self {
            kind: ScorerKind::Trace { ridge },
            epsilon: T::cast_f64(DEFAULT_EPSILON),
        }
    }

    pub fn with_epsilon(mut self, epsilon: T) -> Self {
        self.epsilon = epsilon;
        self
    }

    fn check(&self, query: &FeatureMap<T>, target: &FeatureMap<T>) -> Result<()> {
        if query.channels() != target.channels() {
            return Err(Error::DimensionMismatch(format!(
                "query has {} channels, target {}",
                query.channels(),
                target.channels()
            )));
        }
        let c = query.channels();
        match &self.kind {
            ScorerKind::Weighted(w) if w.len() != c => Err(Error::DimensionMismatch(format!(
                "{} weights for {c} channels",
                w.len()
            ))),
            ScorerKind::Scheme {
                scheme,
                global_query,
                global_target,
            } if scheme.needs_global() => {
                let ok = |g: &Option<GlobalStats<T>>| {
                    g.as_ref().is_some_and(|g| g.means.len() == c && g.stddevs.len() == c)
                };
                if ok(global_query) && ok(global_target) {
                    Ok(())
                } else {
                    Err(Error::Config(format!(
                        "scheme {} needs {c}-channel global statistics for both domains",
                        scheme.label()
                    )))
                }
            }
            _ => Ok(()),
        }
    }

    /// Reference score of two equal-geometry maps over `region`.
    pub fn score_pair(
        &self,
        query: &FeatureMap<T>,
        target: &FeatureMap<T>,
        region: &SupportRegion,
    ) -> Result<T> {
        match &self.kind {
            ScorerKind::Scheme {
                scheme,
                global_query,
                global_target,
            } => scheme_score(
                query,
                target,
                region,
                *scheme,
                global_query.as_ref(),
                global_target.as_ref(),
                self.epsilon,
            ),
            ScorerKind::Weighted(w) => mcncc_weighted(query, target, region, w, self.epsilon),
            ScorerKind::Trace { ridge } => multivariate_trace(query, target, region, *ridge),
        }
    }

    fn has_fast_path(&self) -> bool {
        !matches!(self.kind, ScorerKind::Trace { .. })
    }
}

/// Sums of the five moments for one channel over a support region (shifted data).
#[derive(Debug, Clone, Copy, Default)]
struct Moments {
    sx: f64,
    sxx: f64,
    sy: f64,
    syy: f64,
    sxy: f64,
}

/// Map values in `f64`, shifted per channel, with optional integral images.
struct Prepared {
    channels: usize,
    height: usize,
    width: usize,
    shift: Vec<f64>,
    values: Vec<f64>,
    valid: Option<Vec<bool>>,
    valid_count: usize,
    /// Per channel: integral of values and of squared values, `(H+1) x (W+1)`.
    integrals: Option<Vec<(Vec<f64>, Vec<f64>)>>,
}

fn channel_means<T: Scalar>(map: &FeatureMap<T>) -> Vec<f64> {
    let region = SupportRegion::full(map);
    let n = region.size().max(1) as f64;
    (0..map.channels())
        .map(|c| {
            let plane = map.channel(c);
            region.indices(map.width()).map(|i| plane[i].as_f64()).sum::<f64>() / n
        })
        .collect()
}

fn integral(plane: &[f64], h: usize, w: usize, f: impl Fn(f64) -> f64) -> Vec<f64> {
    let stride = w + 1;
    let mut out = vec![0.0; (h + 1) * stride];
    for r in 0..h {
        let mut row_sum = 0.0;
        for c in 0..w {
            row_sum += f(plane[r * w + c]);
            out[(r + 1) * stride + c + 1] = out[r * stride + c + 1] + row_sum;
        }
    }
    out
}

fn rect_sum(table: &[f64], w: usize, r0: usize, r1: usize, c0: usize, c1: usize) -> f64 {
    let stride = w + 1;
    table[r1 * stride + c1] - table[r0 * stride + c1] - table[r1 * stride + c0]
        + table[r0 * stride + c0]
}

impl Prepared {
    fn new<T: Scalar>(map: &FeatureMap<T>, shift: Vec<f64>) -> Self {
        let (h, w) = (map.height(), map.width());
        let n = h * w;
        let values: Vec<f64> = map
            .as_slice()
            .iter()
            .enumerate()
            .map(|(i, v)| v.as_f64() - shift[i / n])
            .collect();
        let valid = map.validity().map(<[bool]>::to_vec);
        let valid_count = valid.as_ref().map_or(n, |v| v.iter().filter(|&&b| b).count());
        let integrals = valid.is_none().then(|| {
            (0..map.channels())
                .map(|c| {
                    let plane = &values[c * n..(c + 1) * n];
                    (integral(plane, h, w, |v| v), integral(plane, h, w, |v| v * v))
                })
                .collect()
        });
        Self {
            channels: map.channels(),
            height: h,
            width: w,
            shift,
            values,
            valid,
            valid_count,
            integrals,
        }
    }

    fn plane(&self, c: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.values[c * n..(c + 1) * n]
    }
}

/// Overlap rectangle in query coordinates: rows `[r0, r1)`, cols `[c0, c1)`.
fn overlap_rect(
    qh: usize,
    qw: usize,
    th: usize,
    tw: usize,
    dy: i64,
    dx: i64,
) -> Option<(usize, usize, usize, usize)> {
    let r0 = (-dy).max(0);
    let r1 = (qh as i64).min(th as i64 - dy);
    let c0 = (-dx).max(0);
    let c1 = (qw as i64).min(tw as i64 - dx);
    (r0 < r1 && c0 < c1).then(|| (r0 as usize, r1 as usize, c0 as usize, c1 as usize))
}

fn grid(query_extent: usize, target_extent: usize, stride: usize) -> impl Iterator<Item = i64> {
    let s = stride as i64;
    let lo = -(query_extent as i64 - 1);
    let hi = target_extent as i64 - 1;
    let k0 = lo.div_euclid(s) + i64::from(lo.rem_euclid(s) != 0);
    let k1 = hi.div_euclid(s);
    (k0..=k1).map(move |k| k * s)
}

/// Poses of the translation grid (one rotation variant) whose overlap passes the
/// minimum-overlap rule, with the support size at each pose.
pub fn admissible_poses<T: Scalar>(
    query: &FeatureMap<T>,
    target: &FeatureMap<T>,
    cfg: &AlignmentConfig,
) -> Vec<(i64, i64, usize)> {
    let (qh, qw, th, tw) = (query.height(), query.width(), target.height(), target.width());
    let q_area = SupportRegion::full(query).size();
    let mut out = vec![];
    for dy in grid(qh, th, cfg.translation_stride) {
        for dx in grid(qw, tw, cfg.translation_stride) {
            let Some((r0, r1, c0, c1)) = overlap_rect(qh, qw, th, tw, dy, dx) else {
                continue;
            };
            let size = (r0..r1)
                .flat_map(|r| (c0..c1).map(move |c| (r, c)))
                .filter(|&(r, c)| {
                    query.is_valid(r, c)
                        && target.is_valid((r as i64 + dy) as usize, (c as i64 + dx) as usize)
                })
                .count();
            if admissible(size, q_area, cfg) {
                out.push((dy, dx, size));
            }
        }
    }
    out
}

fn admissible(size: usize, query_area: usize, cfg: &AlignmentConfig) -> bool {
    size >= 2 && size as f64 >= cfg.min_overlap_fraction * query_area as f64
}

fn pose_moments(
    q: &Prepared,
    t: &Prepared,
    dy: i64,
    dx: i64,
    rect: (usize, usize, usize, usize),
    out: &mut [Moments],
) -> usize {
    let (r0, r1, c0, c1) = rect;
    let (tr0, tc0) = ((r0 as i64 + dy) as usize, (c0 as i64 + dx) as usize);
    let cols = c1 - c0;
    if let (Some(qi), Some(ti)) = (&q.integrals, &t.integrals) {
        for (c, m) in out.iter_mut().enumerate() {
            let (qs, qss) = &qi[c];
            let (ts, tss) = &ti[c];
            let tr1 = tr0 + (r1 - r0);
            let tc1 = tc0 + cols;
            m.sx = rect_sum(qs, q.width, r0, r1, c0, c1);
            m.sxx = rect_sum(qss, q.width, r0, r1, c0, c1);
            m.sy = rect_sum(ts, t.width, tr0, tr1, tc0, tc1);
            m.syy = rect_sum(tss, t.width, tr0, tr1, tc0, tc1);
            let (qp, tp) = (q.plane(c), t.plane(c));
            let mut sxy = 0.0;
            for r in r0..r1 {
                let qrow = &qp[r * q.width + c0..r * q.width + c1];
                let tr = (r as i64 + dy) as usize;
                let trow = &tp[tr * t.width + tc0..tr * t.width + tc0 + cols];
                sxy += qrow.iter().zip(trow).map(|(a, b)| a * b).sum::<f64>();
            }
            m.sxy = sxy;
        }
        return (r1 - r0) * cols;
    }

    let mut count = 0;
    out.iter_mut().for_each(|m| *m = Moments::default());
    for r in r0..r1 {
        let tr = (r as i64 + dy) as usize;
        for col in c0..c1 {
            let tc = (col as i64 + dx) as usize;
            let qk = r * q.width + col;
            let tk = tr * t.width + tc;
            let ok = q.valid.as_ref().map_or(true, |v| v[qk]) && t.valid.as_ref().map_or(true, |v| v[tk]);
            if !ok {
                continue;
            }
            count += 1;
            for (c, m) in out.iter_mut().enumerate() {
                let x = q.plane(c)[qk];
                let y = t.plane(c)[tk];
                m.sx += x;
                m.sxx += x * x;
                m.sy += y;
                m.syy += y * y;
                m.sxy += x * y;
            }
        }
    }
    count
}

/// Resolved per-channel statistics of one side at a pose (shifted coordinates).
struct Side {
    mean: Vec<f64>,
    var: Vec<f64>,
}

fn volume_stats(side: &Side, shift: &[f64]) -> (f64, f64) {
    let c = side.mean.len() as f64;
    let vol_mean = side.mean.iter().zip(shift).map(|(m, s)| m + s).sum::<f64>() / c;
    let vol_var = side
        .var
        .iter()
        .zip(side.mean.iter().zip(shift))
        .map(|(v, (m, s))| v + (m + s - vol_mean).powi(2))
        .sum::<f64>()
        / c;
    (vol_mean, vol_var.sqrt())
}

fn affine_for(
    stat_c: Statistic,
    stat_s: Statistic,
    side: &Side,
    shift: &[f64],
    global: Option<(Vec<f64>, Vec<f64>)>,
    eps: f64,
) -> (Vec<f64>, Vec<f64>) {
    let n = side.mean.len();
    let (vol_mean, vol_std) = volume_stats(side, shift);
    let center = (0..n)
        .map(|c| match stat_c {
            Statistic::None => -shift[c],
            Statistic::LocalVolume => vol_mean - shift[c],
            Statistic::LocalChannel => side.mean[c],
            Statistic::GlobalChannel => global.as_ref().expect("checked").0[c] - shift[c],
        })
        .collect();
    let scale = (0..n)
        .map(|c| match stat_s {
            Statistic::None => 1.0,
            Statistic::LocalVolume => vol_std + eps,
            Statistic::LocalChannel => side.var[c].sqrt() + eps,
            Statistic::GlobalChannel => global.as_ref().expect("checked").1[c] + eps,
        })
        .collect();
    (center, scale)
}

fn score_from_moments<T: Scalar>(
    scorer: &Scorer<T>,
    moments: &[Moments],
    n: usize,
    q_shift: &[f64],
    t_shift: &[f64],
) -> f64 {
    let nf = n as f64;
    let eps = scorer.epsilon.as_f64();
    let side = |pick: fn(&Moments) -> (f64, f64)| {
        let (mean, var) = moments
            .iter()
            .map(|m| {
                let (s, ss) = pick(m);
                let mean = s / nf;
                (mean, (ss / nf - mean * mean).max(0.0))
            })
            .unzip();
        Side { mean, var }
    };
    let qs = side(|m| (m.sx, m.sxx));
    let ts = side(|m| (m.sy, m.syy));
    let cov: Vec<f64> = moments
        .iter()
        .zip(qs.mean.iter().zip(&ts.mean))
        .map(|(m, (mx, my))| m.sxy / nf - mx * my)
        .collect();

    let ratio = |num: f64, den: f64| if den == 0.0 { 0.0 } else { num / den };
    match &scorer.kind {
        ScorerKind::Weighted(w) => (0..moments.len())
            .map(|c| {
                let den = (qs.var[c].sqrt() + eps) * (ts.var[c].sqrt() + eps);
                w.weights[c].as_f64() * ratio(cov[c], den)
            })
            .sum(),
        ScorerKind::Scheme {
            scheme,
            global_query,
            global_target,
        } => {
            let to64 = |g: &Option<GlobalStats<T>>| {
                g.as_ref().map(|g| {
                    (
                        g.means.iter().map(|v| v.as_f64()).collect::<Vec<_>>(),
                        g.stddevs.iter().map(|v| v.as_f64()).collect::<Vec<_>>(),
                    )
                })
            };
            let (qa, qscale) =
                affine_for(scheme.centering, scheme.scaling, &qs, q_shift, to64(global_query), eps);
            let (ta, tscale) =
                affine_for(scheme.centering, scheme.scaling, &ts, t_shift, to64(global_target), eps);
            (0..moments.len())
                .map(|c| {
                    let num = cov[c] + (qs.mean[c] - qa[c]) * (ts.mean[c] - ta[c]);
                    ratio(num, qscale[c] * tscale[c])
                })
                .sum::<f64>()
                / moments.len() as f64
        }
        ScorerKind::Trace { .. } => unreachable!("trace scorer has no moment form"),
    }
}

struct Variant<T> {
    angle: f64,
    map: FeatureMap<T>,
    prepared: Option<Prepared>,
}

/// A query with its rotation variants prepared for repeated searches.
struct PreparedQuery<T> {
    variants: Vec<Variant<T>>,
}

impl<T: Scalar> PreparedQuery<T> {
    fn new(variants: Vec<(f64, FeatureMap<T>)>, fast: bool) -> Self {
        let shift = variants.first().map(|(_, m)| channel_means(m)).unwrap_or_default();
        let variants = variants
            .into_iter()
            .map(|(angle, map)| {
                let prepared = fast.then(|| Prepared::new(&map, shift.clone()));
                Variant {
                    angle,
                    map,
                    prepared,
                }
            })
            .collect();
        Self { variants }
    }
}

fn search_prepared<T: Scalar>(
    query: &PreparedQuery<T>,
    target: &FeatureMap<T>,
    target_prepared: Option<&Prepared>,
    cfg: &AlignmentConfig,
    scorer: &Scorer<T>,
) -> Result<MatchScore> {
    let mut best: Option<MatchScore> = None;
    let mut consider = |cand: MatchScore| {
        if cand.score.is_nan() {
            return;
        }
        if best.as_ref().map_or(true, |b| cand.beats(b)) {
            best = Some(cand);
        }
    };
    let (th, tw) = (target.height(), target.width());

    for variant in &query.variants {
        let (qh, qw) = (variant.map.height(), variant.map.width());
        match (&variant.prepared, target_prepared) {
            (Some(q), Some(t)) => {
                let mut moments = vec![Moments::default(); q.channels];
                for dy in grid(qh, th, cfg.translation_stride) {
                    for dx in grid(qw, tw, cfg.translation_stride) {
                        let Some(rect) = overlap_rect(qh, qw, th, tw, dy, dx) else {
                            continue;
                        };
                        let area = (rect.1 - rect.0) * (rect.3 - rect.2);
                        if !admissible(area, q.valid_count, cfg) {
                            continue;
                        }
                        let n = pose_moments(q, t, dy, dx, rect, &mut moments);
                        if !admissible(n, q.valid_count, cfg) {
                            continue;
                        }
                        let score = score_from_moments(scorer, &moments, n, &q.shift, &t.shift);
                        consider(MatchScore {
                            score,
                            dy,
                            dx,
                            angle: variant.angle,
                            overlap: n,
                        });
                    }
                }
            }
            _ => {
                for (dy, dx, n, score) in naive_poses(&variant.map, target, cfg, scorer)? {
                    consider(MatchScore {
                        score,
                        dy,
                        dx,
                        angle: variant.angle,
                        overlap: n,
                    });
                }
            }
        }
    }
    best.ok_or_else(|| {
        Error::EmptySearch(format!(
            "no pose reaches {:.0}% overlap between a {}x{} query and a {}x{} target",
            cfg.min_overlap_fraction * 100.0,
            query.variants.first().map_or(0, |v| v.map.height()),
            query.variants.first().map_or(0, |v| v.map.width()),
            th,
            tw
        ))
    })
}

/// Scores every admissible pose of one query variant by materializing windows.
fn naive_poses<T: Scalar>(
    query: &FeatureMap<T>,
    target: &FeatureMap<T>,
    cfg: &AlignmentConfig,
    scorer: &Scorer<T>,
) -> Result<Vec<(i64, i64, usize, f64)>> {
    let (qh, qw, th, tw) = (query.height(), query.width(), target.height(), target.width());
    let mut out = vec![];
    for (dy, dx, _) in admissible_poses(query, target, cfg) {
        let (r0, r1, c0, c1) = overlap_rect(qh, qw, th, tw, dy, dx).expect("admissible");
        let qwin = extract_patch(query, r0, c0, r1 - r0, c1 - c0)?;
        let twin = extract_patch(
            target,
            (r0 as i64 + dy) as usize,
            (c0 as i64 + dx) as usize,
            r1 - r0,
            c1 - c0,
        )?;
        let region = SupportRegion::full(&qwin).restrict_to(twin.validity(), twin.width());
        let score = scorer.score_pair(&qwin, &twin, &region)?.as_f64();
        out.push((dy, dx, region.size(), score));
    }
    Ok(out)
}

fn variants_for<T: Scalar>(
    query: &FeatureMap<T>,
    cfg: &AlignmentConfig,
) -> Result<Vec<(f64, FeatureMap<T>)>> {
    rotation_angles(cfg)
        .into_iter()
        .map(|a| Ok((a, rotate(query, a)?)))
        .collect()
}

/// Best-scoring pose of `query` inside `target`. The query is rotated in
/// feature space for each angle of the sweep; ties go to the smallest
/// `(dy, dx, angle)`.
pub fn search_alignments<T: Scalar>(
    query: &FeatureMap<T>,
    target: &FeatureMap<T>,
    cfg: &AlignmentConfig,
    scorer: &Scorer<T>,
) -> Result<MatchScore> {
    cfg.validate()?;
    scorer.check(query, target)?;
    search_prerotated(variants_for(query, cfg)?, target, cfg, scorer)
}

/// Like [`search_alignments`] but with caller-supplied `(angle, rotated query)`
/// variants, e.g. queries rotated in pixel space before featurization.
pub fn search_prerotated<T: Scalar>(
    variants: Vec<(f64, FeatureMap<T>)>,
    target: &FeatureMap<T>,
    cfg: &AlignmentConfig,
    scorer: &Scorer<T>,
) -> Result<MatchScore> {
    cfg.validate()?;
    if variants.is_empty() {
        return Err(Error::EmptySearch("no query variants".into()));
    }
    for (_, v) in &variants {
        scorer.check(v, target)?;
    }
    let fast = scorer.has_fast_path();
    let q = PreparedQuery::new(variants, fast);
    let t = fast.then(|| Prepared::new(target, channel_means(target)));
    search_prepared(&q, target, t.as_ref(), cfg, scorer)
}

/// Reference search: every pose scored by materializing both windows.
pub fn search_alignments_naive<T: Scalar>(
    query: &FeatureMap<T>,
    target: &FeatureMap<T>,
    cfg: &AlignmentConfig,
    scorer: &Scorer<T>,
) -> Result<MatchScore> {
    cfg.validate()?;
    scorer.check(query, target)?;
    let q = PreparedQuery::new(variants_for(query, cfg)?, false);
    search_prepared(&q, target, None, cfg, scorer)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredItem {
    /// Position in the database slice.
    pub index: usize,
    pub score: MatchScore,
}

/// Scores `query` against every database map (except `exclude`), in database order.
///
/// Items are searched in parallel on the current rayon pool; the output does
/// not depend on the worker count. The first failing item, by index, is reported.
pub fn score_database<T: Scalar>(
    query: &FeatureMap<T>,
    db: &[FeatureMap<T>],
    cfg: &AlignmentConfig,
    scorer: &Scorer<T>,
    exclude: Option<usize>,
) -> Result<Vec<ScoredItem>> {
    cfg.validate()?;
    score_database_prerotated(variants_for(query, cfg)?, db, cfg, scorer, exclude)
}

/// [`score_database`] with caller-supplied `(angle, rotated query)` variants.
pub fn score_database_prerotated<T: Scalar>(
    variants: Vec<(f64, FeatureMap<T>)>,
    db: &[FeatureMap<T>],
    cfg: &AlignmentConfig,
    scorer: &Scorer<T>,
    exclude: Option<usize>,
) -> Result<Vec<ScoredItem>> {
    cfg.validate()?;
    if variants.is_empty() {
        return Err(Error::EmptySearch("no query variants".into()));
    }
    let fast = scorer.has_fast_path();
    let q = PreparedQuery::new(variants, fast);
    let results: Vec<Option<Result<ScoredItem>>> = db
        .par_iter()
        .enumerate()
        .map(|(index, target)| {
            if Some(index) == exclude {
                return None;
            }
            let run = || -> Result<ScoredItem> {
                for v in &q.variants {
                    scorer.check(&v.map, target)?;
                }
                let t = fast.then(|| Prepared::new(target, channel_means(target)));
                let score = search_prepared(&q, target, t.as_ref(), cfg, scorer)?;
                Ok(ScoredItem { index, score })
            };
            Some(run().map_err(|e| Error::Item {
                index,
                source: Box::new(e),
            }))
        })
        .collect();
    results.into_iter().flatten().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn textured(c: usize, h: usize, w: usize, seed: u64) -> FeatureMap<f64> {
        let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        FeatureMap::from_fn(c, h, w, |_, _, _| {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64
        })
        .unwrap()
    }

    #[test]
    fn grid_is_anchored_at_zero() {
        assert_eq!(grid(3, 5, 1).collect::<Vec<_>>(), vec![-2, -1, 0, 1, 2, 3, 4]);
        assert_eq!(grid(3, 5, 2).collect::<Vec<_>>(), vec![-2, 0, 2, 4]);
        assert_eq!(grid(4, 5, 3).collect::<Vec<_>>(), vec![-3, 0, 3]);
    }

    #[test]
    fn rotation_sweep_angles() {
        let a = rotation_angles(&AlignmentConfig::cross_domain());
        assert_eq!(a.len(), 11);
        assert_eq!(a[0], -20.0);
        assert_eq!(a[10], 20.0);
        assert_eq!(rotation_angles(&AlignmentConfig::default()), vec![0.0]);
    }

    #[test]
    fn config_validation() {
        let mut c = AlignmentConfig::default();
        c.translation_stride = 0;
        assert!(c.validate().is_err());
        let mut c = AlignmentConfig::default();
        c.rotation_min = 5.0;
        assert!(c.validate().is_err());
        let mut c = AlignmentConfig::default();
        c.min_overlap_fraction = 0.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn planted_copy_is_found() {
        let target = textured(2, 16, 14, 3);
        let query = extract_patch(&target, 5, 3, 6, 7).unwrap();
        let m = search_alignments(&query, &target, &AlignmentConfig::patch(), &Scorer::mcncc().with_epsilon(0.0))
            .unwrap();
        assert_eq!((m.dy, m.dx, m.angle), (5, 3, 0.0));
        assert_abs_diff_eq!(m.score, 1.0, epsilon = 1e-6);
        assert_eq!(m.overlap, 42);
    }

    #[test]
    fn fast_path_matches_naive_on_every_scheme() {
        let target = textured(3, 12, 11, 9);
        let query = textured(3, 6, 5, 10);
        let g_q = crate::normalize::fit_global_stats([&query]).unwrap();
        let g_t = crate::normalize::fit_global_stats([&target]).unwrap();
        let cfg = AlignmentConfig {
            min_overlap_fraction: 0.3,
            ..AlignmentConfig::default()
        };
        for scheme in NormalizationScheme::ABLATION
            .into_iter()
            .chain([NormalizationScheme::COSINE])
        {
            let scorer = Scorer::scheme_with_global(scheme, g_q.clone(), g_t.clone());
            let fast = search_alignments(&query, &target, &cfg, &scorer).unwrap();
            let slow = search_alignments_naive(&query, &target, &cfg, &scorer).unwrap();
            assert_abs_diff_eq!(fast.score, slow.score, epsilon = 1e-9);
            assert_eq!((fast.dy, fast.dx), (slow.dy, slow.dx), "{}", scheme.label());
        }
    }

    #[test]
    fn empty_search_space() {
        let target = textured(1, 4, 4, 1);
        let query = textured(1, 10, 10, 2);
        let err = search_alignments(&query, &target, &AlignmentConfig::patch(), &Scorer::mcncc());
        assert!(matches!(err, Err(Error::EmptySearch(_))));
    }

    #[test]
    fn weighted_scorer_length_is_checked() {
        let target = textured(2, 8, 8, 1);
        let query = textured(2, 4, 4, 2);
        let s = Scorer::weighted(ChannelWeights::new(vec![1.0; 3], 0.0).unwrap());
        assert!(search_alignments(&query, &target, &AlignmentConfig::patch(), &s).is_err());
    }

    #[test]
    fn database_scoring_excludes_and_reports_item_errors() {
        let db = vec![textured(2, 8, 8, 1), textured(2, 8, 8, 2), textured(3, 8, 8, 3)];
        let query = extract_patch(&db[1], 2, 2, 4, 4).unwrap();
        let err = score_database(&query, &db, &AlignmentConfig::patch(), &Scorer::mcncc(), None);
        assert!(matches!(err, Err(Error::Item { index: 2, .. })));
        let ok = score_database(&query, &db[..2], &AlignmentConfig::patch(), &Scorer::mcncc().with_epsilon(0.0), Some(0))
            .unwrap();
        assert_eq!(ok.len(), 1);
        assert_eq!(ok[0].index, 1);
        assert_abs_diff_eq!(ok[0].score.score, 1.0, epsilon = 1e-9);
    }
}
