use std::collections::{BTreeMap, HashSet};

use rand::{Rng, SeedableRng};
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::metrics::{average_precision, cmc, items_for_fraction, CmcCurve, RankedItem, RankedList};
use crate::correlate::{
    rotation_angles, score_database_prerotated, search_prerotated, AlignmentConfig, MatchScore, Scorer,
};
use crate::learn::{Pair, PairBatch};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{channel_stats, extract_patch, rotate, FeatureMap, SupportRegion};

/// Query-to-reference area ratio classes used to report partial-query performance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OcclusionBin {
    Full,
    ThreeQuarter,
    Half,
    Quarter,
}

impl OcclusionBin {
    pub const ALL: [OcclusionBin; 4] = [
        OcclusionBin::Full,
        OcclusionBin::ThreeQuarter,
        OcclusionBin::Half,
        OcclusionBin::Quarter,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OcclusionBin::Full => "full",
            OcclusionBin::ThreeQuarter => "three_quarter",
            OcclusionBin::Half => "half",
            OcclusionBin::Quarter => "quarter",
        }
    }

    /// `(low, high, high_inclusive)`.
    pub fn interval(self) -> (f64, f64, bool) {
        match self {
            OcclusionBin::Full => (0.875, 1.0, true),
            OcclusionBin::ThreeQuarter => (0.625, 0.875, false),
            OcclusionBin::Half => (0.375, 0.625, false),
            OcclusionBin::Quarter => (0.0, 0.375, false),
        }
    }

    pub fn of(ratio: f64) -> Option<Self> {
        Self::ALL.into_iter().find(|b| {
            let (lo, hi, incl) = b.interval();
            ratio >= lo && (ratio < hi || (incl && ratio == hi))
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OcclusionRow {
    pub bin: OcclusionBin,
    pub count: usize,
    /// Percent of the bin's queries matched within the top 1% of the database;
    /// `None` for an empty bin.
    pub recall_top1: Option<f64>,
    pub recall_top10: Option<f64>,
}

/// Recall at 1% and 10% of the database reviewed, per occlusion bin.
/// `outcomes` holds `(rank of true match, area ratio)` per query.
pub fn occlusion_binned_report(outcomes: &[(usize, f64)], db_size: usize) -> Result<Vec<OcclusionRow>> {
    if let Some(&(_, r)) = outcomes.iter().find(|(_, r)| !(0.0..=1.0).contains(r)) {
        return Err(Error::Config(format!("area ratio {r} outside [0, 1]")));
    }
    if let Some(&(k, _)) = outcomes.iter().find(|(k, _)| *k == 0 || *k > db_size) {
        return Err(Error::Config(format!("rank {k} outside 1..={db_size}")));
    }
    let k1 = items_for_fraction(0.01, db_size);
    let k10 = items_for_fraction(0.10, db_size);
    Ok(OcclusionBin::ALL
        .into_iter()
        .map(|bin| {
            let ranks: Vec<usize> = outcomes
                .iter()
                .filter(|(_, r)| OcclusionBin::of(*r) == Some(bin))
                .map(|(k, _)| *k)
                .collect();
            let pct = |k: usize| {
                (!ranks.is_empty())
                    .then(|| 100.0 * ranks.iter().filter(|&&r| r <= k).count() as f64 / ranks.len() as f64)
            };
            OcclusionRow {
                bin,
                count: ranks.len(),
                recall_top1: pct(k1),
                recall_top10: pct(k10),
            }
        })
        .collect())
}

/// Spread of per-patch channel statistics across a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelStatsReport {
    /// `(channel, std over patches of the per-patch mean)`, ascending by std.
    pub mean_spread: Vec<(usize, f64)>,
    /// `scatter[p][c] = (mean, std)` of channel `c` in patch `p`.
    pub scatter: Vec<Vec<(f64, f64)>>,
}

pub fn channel_stats_report<'a, T: Scalar + 'a>(
    patches: impl IntoIterator<Item = &'a FeatureMap<T>>,
) -> Result<ChannelStatsReport> {
    let mut scatter: Vec<Vec<(f64, f64)>> = vec![];
    for p in patches {
        if let Some(first) = scatter.first() {
            if first.len() != p.channels() {
                return Err(Error::DimensionMismatch(format!(
                    "patch {} has {} channels, expected {}",
                    scatter.len(),
                    p.channels(),
                    first.len()
                )));
            }
        }
        let s = channel_stats(p, &SupportRegion::full(p))?;
        scatter.push(
            s.means
                .iter()
                .zip(&s.stddevs)
                .map(|(m, d)| (m.as_f64(), d.as_f64()))
                .collect(),
        );
    }
    if scatter.len() < 2 {
        return Err(Error::Empty(format!(
            "channel statistics need at least 2 patches, got {}",
            scatter.len()
        )));
    }
    let n = scatter.len() as f64;
    let mut mean_spread: Vec<(usize, f64)> = (0..scatter[0].len())
        .map(|c| {
            let mu = scatter.iter().map(|p| p[c].0).sum::<f64>() / n;
            let var = scatter.iter().map(|p| (p[c].0 - mu).powi(2)).sum::<f64>() / n;
            (c, var.sqrt())
        })
        .collect();
    mean_spread.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    Ok(ChannelStatsReport { mean_spread, scatter })
}

/// Outcome of one query against a database.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryOutcome {
    pub ranked: RankedList,
    /// Best pose per database item, in database order (`None` for excluded items).
    pub matches: Vec<Option<MatchScore>>,
    /// Rank of the first relevant item.
    pub rank: usize,
    pub ap: f64,
}

impl QueryOutcome {
    /// The top-ranked item and its pose.
    pub fn best(&self) -> (usize, MatchScore) {
        let id = self.ranked.items()[0].id;
        (id, self.matches[id].expect("ranked items were scored"))
    }
}

/// Ranks the database for one query given as `(angle, map)` variants.
pub fn rank_query<T: Scalar>(
    variants: Vec<(f64, FeatureMap<T>)>,
    group: usize,
    database: &[FeatureMap<T>],
    db_groups: &[usize],
    cfg: &AlignmentConfig,
    scorer: &Scorer<T>,
    exclude: Option<usize>,
) -> Result<QueryOutcome> {
    if database.len() != db_groups.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} database items, {} group labels",
            database.len(),
            db_groups.len()
        )));
    }
    let scored = score_database_prerotated(variants, database, cfg, scorer, exclude)?;
    let mut matches = vec![None; database.len()];
    let items: Vec<RankedItem> = scored
        .iter()
        .map(|s| {
            matches[s.index] = Some(s.score);
            RankedItem {
                id: s.index,
                score: s.score.score,
                relevant: db_groups[s.index] == group,
            }
        })
        .collect();
    let ranked = RankedList::new(items)?;
    let ap = average_precision(&ranked)?;
    let rank = ranked.first_relevant_rank().expect("has relevant items");
    Ok(QueryOutcome {
        ranked,
        matches,
        rank,
        ap,
    })
}

/// Aggregate of a retrieval run over many queries.
#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalRun {
    pub outcomes: Vec<QueryOutcome>,
    pub mean_ap: f64,
    pub cmc: CmcCurve,
}

impl RetrievalRun {
    pub fn from_outcomes(outcomes: Vec<QueryOutcome>, db_size: usize) -> Result<Self> {
        if outcomes.is_empty() {
            return Err(Error::Empty("retrieval run has no queries".into()));
        }
        let mean_ap = outcomes.iter().map(|o| o.ap).sum::<f64>() / outcomes.len() as f64;
        let ranks: Vec<usize> = outcomes.iter().map(|o| o.rank).collect();
        let cmc = cmc(&ranks, db_size)?;
        Ok(Self {
            outcomes,
            mean_ap,
            cmc,
        })
    }
}

/// Every query against the whole database; queries are searched with the
/// alignment sweep of `cfg` (rotation in feature space).
pub fn retrieval_run<T: Scalar>(
    queries: &[FeatureMap<T>],
    query_groups: &[usize],
    database: &[FeatureMap<T>],
    db_groups: &[usize],
    cfg: &AlignmentConfig,
    scorer: &Scorer<T>,
) -> Result<RetrievalRun> {
    if queries.len() != query_groups.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} queries, {} group labels",
            queries.len(),
            query_groups.len()
        )));
    }
    let mut outcomes = Vec::with_capacity(queries.len());
    for (q, &g) in queries.iter().zip(query_groups) {
        let variants = rotation_angles(cfg)
            .into_iter()
            .map(|a| Ok((a, rotate(q, a)?)))
            .collect::<Result<Vec<_>>>()?;
        outcomes.push(rank_query(variants, g, database, db_groups, cfg, scorer, None)?);
    }
    RetrievalRun::from_outcomes(outcomes, database.len())
}

/// The overlapping parts of `query` placed with its top-left corner at
/// `(dy, dx)` in `target`, as two equal-size maps.
pub fn aligned_crops<T: Scalar>(
    query: &FeatureMap<T>,
    target: &FeatureMap<T>,
    dy: i64,
    dx: i64,
) -> Result<(FeatureMap<T>, FeatureMap<T>)> {
    let r0 = dy.max(0);
    let c0 = dx.max(0);
    let r1 = (dy + query.height() as i64).min(target.height() as i64);
    let c1 = (dx + query.width() as i64).min(target.width() as i64);
    if r1 <= r0 || c1 <= c0 {
        return Err(Error::EmptySearch(format!("no overlap at offset ({dy}, {dx})")));
    }
    let (h, w) = ((r1 - r0) as usize, (c1 - c0) as usize);
    Ok((
        extract_patch(query, (r0 - dy) as usize, (c0 - dx) as usize, h, w)?,
        extract_patch(target, r0 as usize, c0 as usize, h, w)?,
    ))
}

fn best_crops<T: Scalar>(
    variants: &[(f64, FeatureMap<T>)],
    target: &FeatureMap<T>,
    cfg: &AlignmentConfig,
    scorer: &Scorer<T>,
) -> Result<(FeatureMap<T>, FeatureMap<T>)> {
    let best = search_prerotated(variants.to_vec(), target, cfg, scorer)?;
    let (_, q) = variants
        .iter()
        .find(|(a, _)| *a == best.angle)
        .expect("winning angle comes from the variants");
    aligned_crops(q, target, best.dy, best.dx)
}

/// Labelled pairs found by search, for training or CCA fitting when true
/// poses are unknown. Each query (given as `(angle, map)` variants) is paired
/// with every same-group item at its best pose (`z = +1`) and with as many
/// other-group items, drawn with `seed`, at their best pose (`z = -1`).
/// `x` is the query side.
pub fn mine_pairs<T: Scalar>(
    queries: &[Vec<(f64, FeatureMap<T>)>],
    query_groups: &[usize],
    database: &[FeatureMap<T>],
    db_groups: &[usize],
    cfg: &AlignmentConfig,
    scorer: &Scorer<T>,
    seed: u64,
) -> Result<PairBatch<T>> {
    if queries.len() != query_groups.len() || database.len() != db_groups.len() {
        return Err(Error::DimensionMismatch("group labels do not match inputs".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pairs = vec![];
    for (variants, &g) in queries.iter().zip(query_groups) {
        let own: Vec<usize> = (0..database.len()).filter(|&i| db_groups[i] == g).collect();
        let others: Vec<usize> = (0..database.len()).filter(|&i| db_groups[i] != g).collect();
        for &i in &own {
            let (x, y) = best_crops(variants, &database[i], cfg, scorer)?;
            pairs.push(Pair::new(x, y, 1)?);
        }
        if others.is_empty() {
            continue;
        }
        for _ in 0..own.len() {
            let i = others[rng.random_range(0..others.len())];
            let (x, y) = best_crops(variants, &database[i], cfg, scorer)?;
            pairs.push(Pair::new(x, y, -1)?);
        }
    }
    PairBatch::new(pairs)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatchProtocol {
    /// Square patch side in pixels.
    pub patch_size: usize,
    pub n_queries: usize,
    pub seed: u64,
    pub stride: usize,
}

impl Default for PatchProtocol {
    fn default() -> Self {
        Self {
            patch_size: 16,
            n_queries: 64,
            seed: 0,
            stride: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatchQuery {
    pub source: usize,
    pub top: usize,
    pub left: usize,
    pub outcome: QueryOutcome,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatchProtocolResult {
    pub mean_ap: f64,
    pub queries: Vec<PatchQuery>,
}

/// Partial-query retrieval within one dataset: random square patches are cut
/// from items whose group has at least one other member, then matched against
/// every other item with a translation-only search (patch fully inside).
///
/// Sources cycle through a seeded shuffle of the eligible items; positions are
/// drawn uniformly without replacement per source.
pub fn patch_retrieval_protocol<T: Scalar>(
    items: &[FeatureMap<T>],
    groups: &[usize],
    protocol: &PatchProtocol,
    scorer: &Scorer<T>,
) -> Result<PatchProtocolResult> {
    if items.len() != groups.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} items, {} group labels",
            items.len(),
            groups.len()
        )));
    }
    if protocol.n_queries == 0 {
        return Err(Error::Empty("patch protocol with zero queries".into()));
    }
    let p = protocol.patch_size;
    if p == 0 {
        return Err(Error::Config("patch size must be positive".into()));
    }
    let mut sizes: BTreeMap<usize, usize> = BTreeMap::new();
    for &g in groups {
        *sizes.entry(g).or_default() += 1;
    }
    let mut eligible: Vec<usize> = (0..items.len())
        .filter(|&i| sizes[&groups[i]] >= 2 && items[i].height() >= p && items[i].width() >= p)
        .collect();
    if eligible.is_empty() {
        return Err(Error::Empty(
            "no item with a same-group partner is large enough for the patch size".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(protocol.seed);
    eligible.shuffle(&mut rng);

    let mut used: Vec<HashSet<(usize, usize)>> = vec![HashSet::new(); items.len()];
    let mut picks = Vec::with_capacity(protocol.n_queries);
    for q in 0..protocol.n_queries {
        let src = eligible[q % eligible.len()];
        let (h, w) = (items[src].height(), items[src].width());
        let capacity = (h - p + 1) * (w - p + 1);
        if used[src].len() == capacity {
            return Err(Error::Config(format!(
                "item {src} has only {capacity} distinct {p}x{p} patches"
            )));
        }
        let pos = loop {
            let pos = (rng.random_range(0..=h - p), rng.random_range(0..=w - p));
            if used[src].insert(pos) {
                break pos;
            }
        };
        picks.push((src, pos));
    }

    let cfg = AlignmentConfig {
        translation_stride: protocol.stride,
        ..AlignmentConfig::patch()
    };
    let mut queries = Vec::with_capacity(picks.len());
    for (src, (top, left)) in picks {
        let patch = extract_patch(&items[src], top, left, p, p)?;
        let outcome = rank_query(vec![(0.0, patch)], groups[src], items, groups, &cfg, scorer, Some(src))?;
        queries.push(PatchQuery {
            source: src,
            top,
            left,
            outcome,
        });
    }
    let mean_ap = queries.iter().map(|q| q.outcome.ap).sum::<f64>() / queries.len() as f64;
    Ok(PatchProtocolResult { mean_ap, queries })
}

/// Expected AP of a uniformly random ranking of `n` items with `r` relevant.
pub fn random_ranking_ap(n: usize, r: usize) -> f64 {
    assert!(r >= 1 && r <= n);
    let (nf, rf) = (n as f64, r as f64);
    let pair = if n > 1 { rf * (rf - 1.0) / (nf * (nf - 1.0)) } else { 0.0 };
    (1..=n)
        .map(|k| {
            let kf = k as f64;
            (rf / nf + (kf - 1.0) * pair) / kf
        })
        .sum::<f64>()
        / rf
}
