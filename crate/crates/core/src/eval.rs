//! Retrieval metrics over ranked lists: AP / mAP@M, top-k precision and the
//! 11-point interpolated precision-recall curve.
//!
//! A database item is relevant to a query when the two share at least one
//! class label.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;

/// How the AP normalizer `L` is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormalizerRule {
    /// `L = min(total relevant, M)`: a perfect top-M list scores 1.
    #[default]
    MinCutoff,
    /// `L = total relevant in the database`.
    AllRelevant,
}

/// Relevance of every database column to one query label vector.
pub fn relevant(query_labels: &[f64], db_labels: &DenseMatrix) -> Result<Vec<bool>> {
    if query_labels.len() != db_labels.rows() {
        return Err(Error::shape(
            "relevant",
            format!(
                "query has {} classes, database {}",
                query_labels.len(),
                db_labels.rows()
            ),
        ));
    }
    let mut rel = vec![false; db_labels.cols()];
    for (c, &q) in query_labels.iter().enumerate() {
        if q != 0.0 {
            for (r, &d) in rel.iter_mut().zip(db_labels.row(c)) {
                *r |= d != 0.0;
            }
        }
    }
    Ok(rel)
}

/// Relevance vectors for every query column of `query_labels`.
pub fn relevance_matrix(
    query_labels: &DenseMatrix,
    db_labels: &DenseMatrix,
) -> Result<Vec<Vec<bool>>> {
    (0..query_labels.cols())
        .map(|q| relevant(&query_labels.column(q), db_labels))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ApResult {
    pub ap: f64,
    /// The query had no relevant item in the database (AP is then 0).
    pub no_relevant: bool,
}

/// Average precision over the first `m` ranks.
///
/// `ranking` lists database indices best-first and must hold at least `m`
/// entries unless it covers the whole database.
pub fn average_precision(
    ranking: &[usize],
    relevance: &[bool],
    m: usize,
    rule: NormalizerRule,
) -> Result<ApResult> {
    if ranking.is_empty() {
        return Err(Error::Argument("empty ranking".into()));
    }
    if m == 0 {
        return Err(Error::Argument("AP cutoff must be >= 1".into()));
    }
    if ranking.len() < m && ranking.len() < relevance.len() {
        return Err(Error::Argument(format!(
            "ranking has {} entries, fewer than cutoff {m} and database size {}",
            ranking.len(),
            relevance.len()
        )));
    }
    let total = relevance.iter().filter(|&&r| r).count();
    if total == 0 {
        return Ok(ApResult {
            ap: 0.0,
            no_relevant: true,
        });
    }
    let normalizer = match rule {
        NormalizerRule::MinCutoff => total.min(m),
        NormalizerRule::AllRelevant => total,
    };
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (pos, &idx) in ranking.iter().take(m).enumerate() {
        let rel = *relevance.get(idx).ok_or_else(|| {
            Error::Argument(format!(
                "ranked index {idx} outside database of {}",
                relevance.len()
            ))
        })?;
        if rel {
            hits += 1;
            sum += hits as f64 / (pos + 1) as f64;
        }
    }
    Ok(ApResult {
        ap: sum / normalizer as f64,
        no_relevant: false,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MapResult {
    pub map: f64,
    pub per_query_ap: Vec<f64>,
    /// Queries without any relevant database item; they count as AP 0.
    pub queries_without_relevant: usize,
}

/// Mean of per-query AP at cutoff `m`, accumulated in query order.
pub fn map_at(
    rankings: &[Vec<usize>],
    relevances: &[Vec<bool>],
    m: usize,
    rule: NormalizerRule,
) -> Result<MapResult> {
    check_queries(rankings, relevances)?;
    let mut per_query_ap = Vec::with_capacity(rankings.len());
    let mut missing = 0;
    for (ranking, rel) in rankings.iter().zip(relevances) {
        let r = average_precision(ranking, rel, m, rule)?;
        missing += usize::from(r.no_relevant);
        per_query_ap.push(r.ap);
    }
    if missing > 0 {
        warn!(
            "{missing} of {} queries have no relevant database item",
            rankings.len()
        );
    }
    let map = per_query_ap.iter().sum::<f64>() / per_query_ap.len() as f64;
    Ok(MapResult {
        map,
        per_query_ap,
        queries_without_relevant: missing,
    })
}

fn check_queries(rankings: &[Vec<usize>], relevances: &[Vec<bool>]) -> Result<()> {
    if rankings.is_empty() {
        return Err(Error::Argument("no queries".into()));
    }
    if rankings.len() != relevances.len() {
        return Err(Error::shape(
            "metrics",
            format!(
                "{} rankings vs {} relevance vectors",
                rankings.len(),
                relevances.len()
            ),
        ));
    }
    Ok(())
}

/// Mean precision over the top `k` ranks, for each requested `k`.
///
/// A `k` beyond the ranking length is clamped to it; values that collapse
/// onto an earlier point after clamping are dropped.
pub fn topk_curve(
    rankings: &[Vec<usize>],
    relevances: &[Vec<bool>],
    ks: &[usize],
) -> Result<Vec<(usize, f64)>> {
    check_queries(rankings, relevances)?;
    if ks.is_empty() || ks[0] == 0 || ks.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Argument(
            "top-k cutoffs must be positive and strictly increasing".into(),
        ));
    }
    let limit = rankings.iter().map(Vec::len).min().unwrap_or(0);
    if limit == 0 {
        return Err(Error::Argument("empty ranking".into()));
    }
    let mut curve: Vec<(usize, f64)> = Vec::with_capacity(ks.len());
    for &k in ks {
        let kk = k.min(limit);
        if kk < k {
            warn!("top-k cutoff {k} exceeds ranking length {limit}; clamped");
        }
        if curve.last().is_some_and(|&(prev, _)| prev == kk) {
            continue;
        }
        let mut sum = 0.0;
        for (ranking, rel) in rankings.iter().zip(relevances) {
            let hits = ranking[..kk].iter().filter(|&&i| rel[i]).count();
            sum += hits as f64 / kk as f64;
        }
        curve.push((kk, sum / rankings.len() as f64));
    }
    Ok(curve)
}

/// The eleven recall levels 0.0, 0.1, ..., 1.0.
pub fn recall_levels() -> Vec<f64> {
    (0..=10).map(|i| i as f64 / 10.0).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrCurve {
    /// `(recall level, mean interpolated precision)`.
    pub points: Vec<(f64, f64)>,
    /// Queries left out because they have no relevant item.
    pub excluded_queries: usize,
}

/// 11-point interpolated precision-recall curve averaged over queries.
///
/// Interpolated precision at level `r` is the best precision at any rank
/// whose recall is at least `r` (0 if the ranking never reaches `r`).
pub fn pr_curve(rankings: &[Vec<usize>], relevances: &[Vec<bool>]) -> Result<PrCurve> {
    check_queries(rankings, relevances)?;
    let mut sums = [0.0f64; 11];
    let mut included = 0usize;
    for (ranking, rel) in rankings.iter().zip(relevances) {
        let total = rel.iter().filter(|&&r| r).count();
        if total == 0 {
            continue;
        }
        included += 1;
        // best[l]: max precision over ranks with recall >= l / 10
        let mut best = [0.0f64; 11];
        let mut hits = 0usize;
        for (pos, &idx) in ranking.iter().enumerate() {
            if rel[idx] {
                hits += 1;
            }
            let precision = hits as f64 / (pos + 1) as f64;
            for (level, b) in best.iter_mut().enumerate() {
                if hits * 10 >= level * total && precision > *b {
                    *b = precision;
                }
            }
        }
        for (s, b) in sums.iter_mut().zip(best) {
            *s += b;
        }
    }
    let excluded = rankings.len() - included;
    if excluded > 0 {
        warn!("{excluded} queries without relevant items excluded from the PR curve");
    }
    let points = recall_levels()
        .into_iter()
        .zip(sums)
        .map(|(r, s)| {
            (
                r,
                if included > 0 {
                    s / included as f64
                } else {
                    0.0
                },
            )
        })
        .collect();
    Ok(PrCurve {
        points,
        excluded_queries: excluded,
    })
}

/// Every metric for one retrieval run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub map_at_m: f64,
    pub m_cutoff: usize,
    pub normalizer: NormalizerRule,
    pub topk_curve: Vec<(usize, f64)>,
    pub pr_curve: Vec<(f64, f64)>,
    pub per_query_ap: Vec<f64>,
    pub queries_without_relevant: usize,
}

impl MetricsReport {
    pub fn topk_csv(&self) -> String {
        let mut out = String::from("k,precision\n");
        for (k, p) in &self.topk_curve {
            out.push_str(&format!("{k},{p}\n"));
        }
        out
    }

    pub fn pr_csv(&self) -> String {
        let mut out = String::from("recall,precision\n");
        for (r, p) in &self.pr_curve {
            out.push_str(&format!("{r},{p}\n"));
        }
        out
    }
}

pub fn evaluate(
    rankings: &[Vec<usize>],
    query_labels: &DenseMatrix,
    db_labels: &DenseMatrix,
    m: usize,
    ks: &[usize],
    rule: NormalizerRule,
) -> Result<MetricsReport> {
    if query_labels.cols() != rankings.len() {
        return Err(Error::shape(
            "evaluate",
            format!(
                "{} rankings for {} query label columns",
                rankings.len(),
                query_labels.cols()
            ),
        ));
    }
    let relevances = relevance_matrix(query_labels, db_labels)?;
    let n_db = db_labels.cols();
    if let Some(bad) = rankings.iter().flatten().find(|&&i| i >= n_db) {
        return Err(Error::shape(
            "evaluate",
            format!("ranked index {bad} outside database of {n_db} label columns"),
        ));
    }
    let map = map_at(rankings, &relevances, m, rule)?;
    let topk = topk_curve(rankings, &relevances, ks)?;
    let pr = pr_curve(rankings, &relevances)?;
    Ok(MetricsReport {
        map_at_m: map.map,
        m_cutoff: m,
        normalizer: rule,
        topk_curve: topk,
        pr_curve: pr.points,
        per_query_ap: map.per_query_ap,
        queries_without_relevant: map.queries_without_relevant,
    })
}
