//! Ranking accuracy and matching-property metrics.

use std::collections::BTreeMap;

use ndarray::{Array2, ArrayView1};
use serde::Serialize;

use crate::combine::MatchSet;
use crate::graph::GroundTruth;
use crate::{Error, Result};

pub const DEFAULT_HITS_K: [usize; 3] = [1, 5, 10];

/// Index of the largest entry, ties to the lowest index; `None` for an all-zero row.
pub fn argmax(row: ArrayView1<'_, f64>) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (k, &v) in row.iter().enumerate() {
        if best.map_or(true, |(_, b)| v > b) {
            best = Some((k, v));
        }
    }
    best.filter(|&(_, v)| v > 0.0).map(|(k, _)| k)
}

/// 1-based rank of `target` in `row`: larger values first, ties to the lower index.
pub fn rank_of(row: ArrayView1<'_, f64>, target: usize) -> usize {
    let v = row[target];
    1 + row
        .iter()
        .enumerate()
        .filter(|&(k, &x)| x > v || (x == v && k < target))
        .count()
}

fn check(t: &Array2<f64>, gt: &GroundTruth) -> Result<()> {
    if gt.is_empty() {
        return Err(Error::Config("ground truth has no anchors".into()));
    }
    gt.check_bounds(t.nrows(), t.ncols())
}

/// Fraction of anchors whose true target is among the top-`k` of the source's row.
pub fn hits_at_k(t: &Array2<f64>, gt: &GroundTruth, k: usize) -> Result<f64> {
    check(t, gt)?;
    if k < 1 || k > t.ncols() {
        return Err(Error::Config(format!("k = {k} must lie in 1..={}", t.ncols())));
    }
    let hit = gt
        .pairs()
        .iter()
        .filter(|&&(u, v)| rank_of(t.row(u), v) <= k)
        .count();
    Ok(hit as f64 / gt.len() as f64)
}

/// Hits@1 of a matching: fraction of anchors predicted exactly.
pub fn match_hits(m: &MatchSet, gt: &GroundTruth) -> Result<f64> {
    if gt.is_empty() {
        return Err(Error::Config("ground truth has no anchors".into()));
    }
    let n1 = gt.pairs().iter().map(|&(u, _)| u + 1).max().unwrap_or(0);
    let pred = m.predictions(n1);
    let hit = gt.pairs().iter().filter(|&&(u, v)| pred[u] == Some(v)).count();
    Ok(hit as f64 / gt.len() as f64)
}

pub fn mean_average_precision(t: &Array2<f64>, gt: &GroundTruth) -> Result<f64> {
    check(t, gt)?;
    let total: f64 = gt
        .pairs()
        .iter()
        .map(|&(u, v)| 1.0 / rank_of(t.row(u), v) as f64)
        .sum();
    Ok(total / gt.len() as f64)
}

/// Row-argmax prediction for every source node.
pub fn row_predictions(t: &Array2<f64>) -> Vec<Option<usize>> {
    t.rows().into_iter().map(argmax).collect()
}

/// Fraction of the considered sources (all of them when `sources` is `None`)
/// whose predicted target is also predicted for another source. Sources
/// without a prediction count in the denominator only.
pub fn one_to_many_ratio(pred: &[Option<usize>], sources: Option<&[usize]>) -> f64 {
    let mut claims: BTreeMap<usize, usize> = BTreeMap::new();
    for p in pred.iter().flatten() {
        *claims.entry(*p).or_default() += 1;
    }
    ratio(pred.len(), sources, |u| pred[u].is_some_and(|v| claims[&v] > 1))
}

/// Fraction of the considered sources `u` whose predicted target's column
/// argmax is not `u` itself.
pub fn mutual_inconsistency_ratio(t: &Array2<f64>, sources: Option<&[usize]>) -> f64 {
    let pred = row_predictions(t);
    let col_best: Vec<Option<usize>> = t.columns().into_iter().map(argmax).collect();
    ratio(t.nrows(), sources, |u| pred[u].is_some_and(|v| col_best[v] != Some(u)))
}

fn ratio(n: usize, sources: Option<&[usize]>, bad: impl Fn(usize) -> bool) -> f64 {
    let (count, total) = match sources {
        Some(s) => (s.iter().filter(|&&u| u < n && bad(u)).count(), s.len()),
        None => ((0..n).filter(|&u| bad(u)).count(), n),
    };
    if total == 0 {
        0.0
    } else {
        count as f64 / total as f64
    }
}

/// Resolves conflicting row-argmax predictions by keeping, for every claimed
/// target, only the source with the highest value (ties to the lower source).
pub fn constrained_predictions(t: &Array2<f64>) -> MatchSet {
    let mut winner: BTreeMap<usize, (usize, f64)> = BTreeMap::new();
    for (u, p) in row_predictions(t).into_iter().enumerate() {
        let Some(v) = p else { continue };
        let val = t[[u, v]];
        match winner.get(&v) {
            Some(&(_, best)) if best >= val => {}
            _ => {
                winner.insert(v, (u, val));
            }
        }
    }
    let pairs = winner.into_iter().map(|(v, (u, _))| (u, v)).collect();
    MatchSet::new(pairs).expect("one winner per target and one target per source")
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub hits: BTreeMap<usize, f64>,
    /// Absent for a bare matching, which defines no ranking.
    pub map_score: Option<f64>,
    pub one_to_many_ratio: f64,
    pub mutual_inconsistency_ratio: f64,
}

impl MetricsReport {
    /// Scores a full alignment matrix: Hits@k for every `k <= n2` in `ks`, MAP,
    /// and the two property ratios over the anchored sources.
    pub fn for_matrix(t: &Array2<f64>, gt: &GroundTruth, ks: &[usize]) -> Result<Self> {
        check(t, gt)?;
        let mut hits = BTreeMap::new();
        for &k in ks.iter().filter(|&&k| k <= t.ncols()) {
            hits.insert(k, hits_at_k(t, gt, k)?);
        }
        let sources = gt.sources();
        Ok(MetricsReport {
            hits,
            map_score: Some(mean_average_precision(t, gt)?),
            one_to_many_ratio: one_to_many_ratio(&row_predictions(t), Some(&sources)),
            mutual_inconsistency_ratio: mutual_inconsistency_ratio(t, Some(&sources)),
        })
    }

    pub fn for_matching(m: &MatchSet, n1: usize, n2: usize, gt: &GroundTruth) -> Result<Self> {
        if gt.is_empty() {
            return Err(Error::Config("ground truth has no anchors".into()));
        }
        gt.check_bounds(n1, n2)?;
        let indicator = m.indicator(n1, n2);
        let sources = gt.sources();
        Ok(MetricsReport {
            hits: BTreeMap::from([(1, match_hits(m, gt)?)]),
            map_score: None,
            one_to_many_ratio: one_to_many_ratio(&m.predictions(n1), Some(&sources)),
            mutual_inconsistency_ratio: mutual_inconsistency_ratio(&indicator, Some(&sources)),
        })
    }

    /// `(key, value)` pairs in output order: `hits@k` ascending, `map`,
    /// `one_to_many_ratio`, `mutual_inconsistency_ratio`.
    pub fn entries(&self) -> Vec<(String, f64)> {
        let mut out: Vec<(String, f64)> = self.hits.iter().map(|(k, v)| (format!("hits@{k}"), *v)).collect();
        if let Some(m) = self.map_score {
            out.push(("map".into(), m));
        }
        out.push(("one_to_many_ratio".into(), self.one_to_many_ratio));
        out.push(("mutual_inconsistency_ratio".into(), self.mutual_inconsistency_ratio));
        out
    }
}

/// One `key = value` line per entry, keys prefixed with `prefix` when nonempty.
pub fn format_key_values(sections: &[(&str, &MetricsReport)]) -> String {
    let mut s = String::new();
    for (prefix, report) in sections {
        for (k, v) in report.entries() {
            s.push_str(&format!("{}{k} = {v}\n", dotted(prefix)));
        }
    }
    s
}

/// The same entries as a single-line JSON object, in the same order.
pub fn format_json_line(sections: &[(&str, &MetricsReport)]) -> String {
    let mut map = serde_json::Map::new();
    for (prefix, report) in sections {
        for (k, v) in report.entries() {
            map.insert(format!("{}{k}", dotted(prefix)), serde_json::Value::from(v));
        }
    }
    let mut s = serde_json::Value::Object(map).to_string();
    s.push('\n');
    s
}

fn dotted(prefix: &str) -> String {
    if prefix.is_empty() {
        String::new()
    } else {
        format!("{prefix}.")
    }
}
