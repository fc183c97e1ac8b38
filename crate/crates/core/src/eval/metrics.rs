use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankedItem {
    /// Database index of the item.
    pub id: usize,
    pub score: f64,
    pub relevant: bool,
}

/// Database items in descending score order; equal scores keep ascending id order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedList {
    items: Vec<RankedItem>,
}

impl RankedList {
    /// Sorts `items` by descending score, breaking ties by id.
    pub fn new(mut items: Vec<RankedItem>) -> Result<Self> {
        if items.is_empty() {
            return Err(Error::Empty("ranked list".into()));
        }
        if let Some(index) = items.iter().position(|it| it.score.is_nan()) {
            return Err(Error::NonFinite { index });
        }
        items.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.id.cmp(&b.id)));
        Ok(Self { items })
    }

    /// Item `i` gets id `i`.
    pub fn from_scores(scores: &[f64], relevant: &[bool]) -> Result<Self> {
        if scores.len() != relevant.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} scores, {} relevance flags",
                scores.len(),
                relevant.len()
            )));
        }
        Self::new(
            scores
                .iter()
                .zip(relevant)
                .enumerate()
                .map(|(id, (&score, &relevant))| RankedItem { id, score, relevant })
                .collect(),
        )
    }

    pub fn items(&self) -> &[RankedItem] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn relevant_count(&self) -> usize {
        self.items.iter().filter(|it| it.relevant).count()
    }

    /// 1-based position of the first relevant item.
    pub fn first_relevant_rank(&self) -> Option<usize> {
        self.items.iter().position(|it| it.relevant).map(|p| p + 1)
    }

    fn require_relevant(&self) -> Result<usize> {
        match self.relevant_count() {
            0 => Err(Error::Empty("ranked list has no relevant items".into())),
            r => Ok(r),
        }
    }
}

/// Mean over relevant items of `i / r_i`, where the `i`-th relevant item sits at rank `r_i`.
pub fn average_precision(ranked: &RankedList) -> Result<f64> {
    let total = ranked.require_relevant()?;
    let mut found = 0usize;
    let mut sum = 0.0;
    for (pos, it) in ranked.items.iter().enumerate() {
        if it.relevant {
            found += 1;
            sum += found as f64 / (pos + 1) as f64;
        }
    }
    Ok(sum / total as f64)
}

/// Mean of [`average_precision`] over several lists.
pub fn mean_average_precision(lists: &[RankedList]) -> Result<f64> {
    if lists.is_empty() {
        return Err(Error::Empty("no ranked lists".into()));
    }
    let mut sum = 0.0;
    for l in lists {
        sum += average_precision(l)?;
    }
    Ok(sum / lists.len() as f64)
}

/// `(recall, precision)` after each block of equal scores, sweeping the
/// threshold from the highest score down.
pub fn pr_curve(ranked: &RankedList) -> Result<Vec<(f64, f64)>> {
    let total = ranked.require_relevant()? as f64;
    let items = &ranked.items;
    let mut out = vec![];
    let mut hits = 0usize;
    let mut i = 0;
    while i < items.len() {
        let s = items[i].score;
        while i < items.len() && items[i].score == s {
            hits += items[i].relevant as usize;
            i += 1;
        }
        out.push((hits as f64 / total, hits as f64 / i as f64));
    }
    Ok(out)
}

/// Cumulative match characteristic: `recall_at_k[k-1]` is the fraction of
/// queries whose true match appears within the top `k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CmcCurve {
    pub recall_at_k: Vec<f64>,
}

impl CmcCurve {
    pub fn db_size(&self) -> usize {
        self.recall_at_k.len()
    }

    /// Recall after reviewing `k` items (`k` clamped to `1..=db_size`).
    pub fn recall_at(&self, k: usize) -> f64 {
        self.recall_at_k[k.clamp(1, self.db_size()) - 1]
    }

    /// Recall after reviewing `ceil(fraction * db_size)` items.
    pub fn recall_at_fraction(&self, fraction: f64) -> f64 {
        self.recall_at(items_for_fraction(fraction, self.db_size()))
    }
}

/// `ceil(fraction * db_size)`, at least 1.
pub fn items_for_fraction(fraction: f64, db_size: usize) -> usize {
    // Guard against 0.1 * 30 = 3.0000000000000004 style round-up.
    let x = fraction * db_size as f64;
    let k = if (x - x.round()).abs() < 1e-9 { x.round() } else { x.ceil() };
    (k as usize).max(1)
}

pub fn cmc(ranks: &[usize], db_size: usize) -> Result<CmcCurve> {
    if ranks.is_empty() {
        return Err(Error::Empty("no query ranks".into()));
    }
    if let Some(&bad) = ranks.iter().find(|&&r| r == 0 || r > db_size) {
        return Err(Error::Config(format!("rank {bad} outside 1..={db_size}")));
    }
    let mut counts = vec![0usize; db_size];
    for &r in ranks {
        counts[r - 1] += 1;
    }
    let n = ranks.len() as f64;
    let mut acc = 0;
    Ok(CmcCurve {
        recall_at_k: counts
            .into_iter()
            .map(|c| {
                acc += c;
                acc as f64 / n
            })
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn by_pattern(p: &[u8]) -> RankedList {
        let scores: Vec<f64> = (0..p.len()).map(|i| (p.len() - i) as f64).collect();
        let rel: Vec<bool> = p.iter().map(|&v| v == 1).collect();
        RankedList::from_scores(&scores, &rel).unwrap()
    }

    #[test]
    fn ap_examples() {
        assert_eq!(average_precision(&by_pattern(&[1, 1, 0, 0])).unwrap(), 1.0);
        let v = average_precision(&by_pattern(&[1, 0, 1, 0])).unwrap();
        assert!((v - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-15);
        assert!((average_precision(&by_pattern(&[0, 0, 1])).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert!(average_precision(&by_pattern(&[0, 0])).is_err());
    }

    #[test]
    fn pr_examples() {
        assert_eq!(pr_curve(&by_pattern(&[1, 0])).unwrap(), vec![(1.0, 1.0), (1.0, 0.5)]);
        let all = pr_curve(&by_pattern(&[1, 1, 1])).unwrap();
        assert!(all.iter().all(|&(_, p)| p == 1.0));
        let flat = RankedList::from_scores(&[0.5; 4], &[true, false, false, true]).unwrap();
        assert_eq!(pr_curve(&flat).unwrap(), vec![(1.0, 0.5)]);
    }

    #[test]
    fn ties_break_by_id() {
        let l = RankedList::from_scores(&[0.2, 0.9, 0.2, 0.9], &[false; 4]).unwrap();
        let ids: Vec<usize> = l.items().iter().map(|it| it.id).collect();
        assert_eq!(ids, vec![1, 3, 0, 2]);
        assert!(RankedList::from_scores(&[f64::NAN], &[true]).is_err());
    }

    #[test]
    fn cmc_examples() {
        let c = cmc(&[1, 3, 2], 4).unwrap();
        assert_eq!(c.recall_at_k, vec![1.0 / 3.0, 2.0 / 3.0, 1.0, 1.0]);
        assert_eq!(cmc(&[1, 1], 3).unwrap().recall_at_k, vec![1.0; 3]);
        assert_eq!(cmc(&[5], 5).unwrap().recall_at_k, vec![0.0, 0.0, 0.0, 0.0, 1.0]);
        assert!(cmc(&[0], 3).is_err());
        assert!(cmc(&[4], 3).is_err());
        assert!(cmc(&[], 3).is_err());
    }

    #[test]
    fn fraction_rounding() {
        assert_eq!(items_for_fraction(0.01, 300), 3);
        assert_eq!(items_for_fraction(0.10, 30), 3);
        assert_eq!(items_for_fraction(0.01, 50), 1);
        assert_eq!(items_for_fraction(0.10, 45), 5);
    }
}
