//! Ensembling two alignment matrices into a one-to-one matching.
//!
//! The ensemble weights live on a sparse bipartite graph that keeps, for each
//! source node, only its top-`r` targets under the transport plan. A maximum
//! weight matching on that graph is one-to-one and mutual by construction.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fmt;
use std::str::FromStr;

use ndarray::Array2;

use crate::alignment::AlignmentMatrix;
use crate::{Error, Result};

pub const DEFAULT_TOP_R: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnsembleMode {
    /// Element-wise product: both predictors must be confident.
    Product,
    Average,
}

impl fmt::Display for EnsembleMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EnsembleMode::Product => "product",
            EnsembleMode::Average => "average",
        })
    }
}

impl FromStr for EnsembleMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "product" => Ok(EnsembleMode::Product),
            "average" => Ok(EnsembleMode::Average),
            other => Err(Error::Config(format!("unknown ensemble mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightedBipartite {
    pub n1: usize,
    pub n2: usize,
    /// `(source, target, weight)`, grouped by source in increasing order.
    pub edges: Vec<(usize, usize, f64)>,
}

/// Disjoint `(source, target)` pairs, sorted by source.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct MatchSet {
    pairs: Vec<(usize, usize)>,
}

impl MatchSet {
    pub fn new(mut pairs: Vec<(usize, usize)>) -> Result<Self> {
        pairs.sort_unstable();
        let mut targets: Vec<_> = pairs.iter().map(|&(_, t)| t).collect();
        targets.sort_unstable();
        let dup_src = pairs.windows(2).any(|w| w[0].0 == w[1].0);
        let dup_dst = targets.windows(2).any(|w| w[0] == w[1]);
        if dup_src || dup_dst {
            return Err(Error::Shape("a matching may use each node at most once".into()));
        }
        Ok(MatchSet { pairs })
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Predicted target per source node, `None` when unmatched.
    pub fn predictions(&self, n1: usize) -> Vec<Option<usize>> {
        let mut out = vec![None; n1];
        for &(s, t) in &self.pairs {
            if s < n1 {
                out[s] = Some(t);
            }
        }
        out
    }

    /// 0/1 matrix with a one at every matched pair.
    pub fn indicator(&self, n1: usize, n2: usize) -> Array2<f64> {
        let mut m = Array2::zeros((n1, n2));
        for &(s, t) in &self.pairs {
            m[[s, t]] = 1.0;
        }
        m
    }

    pub fn total_weight(&self, weights: &Array2<f64>) -> f64 {
        self.pairs.iter().map(|&(s, t)| weights[[s, t]]).sum()
    }
}

pub fn ensemble_weights(
    t_wl: &AlignmentMatrix,
    t_gw: &AlignmentMatrix,
    mode: EnsembleMode,
) -> Result<Array2<f64>> {
    if t_wl.dim() != t_gw.dim() {
        return Err(Error::Shape(format!(
            "cannot ensemble a {:?} matrix with a {:?} matrix",
            t_wl.dim(),
            t_gw.dim()
        )));
    }
    Ok(match mode {
        EnsembleMode::Product => t_wl.values() * t_gw.values(),
        EnsembleMode::Average => (t_wl.values() + t_gw.values()) * 0.5,
    })
}

/// Keeps, for each source, the `r` targets with the largest plan entries
/// (ties to the lower index), weighted by `weights`. `r` is clamped to `n2`.
pub fn build_bipartite(weights: &Array2<f64>, t_gw: &AlignmentMatrix, r: usize) -> Result<WeightedBipartite> {
    if weights.dim() != t_gw.dim() {
        return Err(Error::Shape(format!(
            "weights are {:?} but the plan is {:?}",
            weights.dim(),
            t_gw.dim()
        )));
    }
    if r == 0 {
        return Err(Error::Config("top-r must be at least 1".into()));
    }
    let (n1, n2) = weights.dim();
    let r = r.min(n2);
    let mut edges = Vec::with_capacity(n1 * r);
    for (i, row) in t_gw.rows().into_iter().enumerate() {
        for k in top_indices(row.iter().copied(), r) {
            let w = weights[[i, k]];
            if !(w.is_finite() && w >= 0.0) {
                return Err(Error::Numerical(format!("edge weight {w} at ({i}, {k})")));
            }
            edges.push((i, k, w));
        }
    }
    Ok(WeightedBipartite { n1, n2, edges })
}

/// Indices of the `r` largest values, ordered by decreasing value then increasing index.
pub(crate) fn top_indices(values: impl Iterator<Item = f64>, r: usize) -> Vec<usize> {
    let mut idx: Vec<(usize, f64)> = values.enumerate().collect();
    let cmp = |a: &(usize, f64), b: &(usize, f64)| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0));
    if r < idx.len() {
        idx.select_nth_unstable_by(r, cmp);
        idx.truncate(r);
    }
    idx.sort_by(cmp);
    idx.into_iter().map(|(k, _)| k).collect()
}

#[derive(Clone, Copy, PartialEq)]
struct Entry {
    dist: f64,
    col: usize,
}

impl Eq for Entry {}

impl Ord for Entry {
    // Min-heap on (dist, col).
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .dist
            .total_cmp(&self.dist)
            .then_with(|| other.col.cmp(&self.col))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Exact maximum-weight matching on a sparse bipartite graph with nonnegative weights.
///
/// Every source gets a private zero-weight "unmatched" column, turning the
/// problem into a rectangular assignment that is solved by successive shortest
/// augmenting paths (Dijkstra with potentials) over the sparse edge set.
/// Sources whose best option is staying unmatched are left out of the result.
pub fn max_weight_matching(b: &WeightedBipartite) -> Result<MatchSet> {
    let (n1, n2) = (b.n1, b.n2);
    let mut adj: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n1];
    let mut w_max: f64 = 0.0;
    for &(s, t, w) in &b.edges {
        if s >= n1 || t >= n2 {
            return Err(Error::NodeRange {
                id: if s >= n1 { s } else { t },
                n: if s >= n1 { n1 } else { n2 },
            });
        }
        if !(w.is_finite() && w >= 0.0) {
            return Err(Error::Numerical(format!("edge weight {w} must be finite and nonnegative")));
        }
        adj[s].push((t, w));
        w_max = w_max.max(w);
    }
    // Costs: w_max - w on real edges, w_max on the private dummy column n2 + s.
    let ncols = n2 + n1;
    let cost_of = |s: usize, col: usize, w: f64| -> f64 {
        debug_assert!(col < n2 || col == n2 + s);
        w_max - w
    };
    for (s, list) in adj.iter_mut().enumerate() {
        list.sort_by(|a, b| a.0.cmp(&b.0));
        list.push((n2 + s, 0.0));
    }

    let mut u = vec![0.0; n1];
    let mut v = vec![0.0; ncols];
    let mut row_of: Vec<Option<usize>> = vec![None; ncols];
    let mut col_of: Vec<usize> = vec![usize::MAX; n1];

    let mut dist = vec![f64::INFINITY; ncols];
    let mut pred = vec![usize::MAX; ncols];
    let mut done = vec![false; ncols];
    let mut touched: Vec<usize> = Vec::new();
    let mut finalized: Vec<usize> = Vec::new();

    for s in 0..n1 {
        for &c in &touched {
            dist[c] = f64::INFINITY;
            pred[c] = usize::MAX;
            done[c] = false;
        }
        touched.clear();
        finalized.clear();

        let mut heap = BinaryHeap::new();
        for &(c, w) in &adj[s] {
            let d = (cost_of(s, c, w) - u[s] - v[c]).max(0.0);
            if d < dist[c] {
                if dist[c].is_infinite() {
                    touched.push(c);
                }
                dist[c] = d;
                pred[c] = s;
                heap.push(Entry { dist: d, col: c });
            }
        }
        let (sink, total) = loop {
            let Some(Entry { dist: d, col: c }) = heap.pop() else {
                // Unreachable: every source has its dummy column.
                return Err(Error::Numerical("augmenting path search exhausted".into()));
            };
            if done[c] || d > dist[c] {
                continue;
            }
            done[c] = true;
            finalized.push(c);
            let Some(i) = row_of[c] else {
                break (c, d);
            };
            for &(c2, w) in &adj[i] {
                if done[c2] {
                    continue;
                }
                let nd = d + (cost_of(i, c2, w) - u[i] - v[c2]).max(0.0);
                if nd < dist[c2] {
                    if dist[c2].is_infinite() {
                        touched.push(c2);
                    }
                    dist[c2] = nd;
                    pred[c2] = i;
                    heap.push(Entry { dist: nd, col: c2 });
                }
            }
        };

        for &c in &finalized {
            let delta = total - dist[c];
            v[c] -= delta;
            if let Some(i) = row_of[c] {
                u[i] += delta;
            }
        }
        u[s] += total;

        let mut c = sink;
        loop {
            let i = pred[c];
            let prev = col_of[i];
            row_of[c] = Some(i);
            col_of[i] = c;
            if i == s {
                break;
            }
            c = prev;
        }
    }

    let pairs = col_of
        .iter()
        .enumerate()
        .filter(|&(_, &c)| c < n2)
        .map(|(s, &c)| (s, c))
        .collect();
    MatchSet::new(pairs)
}

/// Result of combining the two alignment matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct Combined {
    pub matches: MatchSet,
    pub weights: Array2<f64>,
    pub unmatched_sources: usize,
}

pub fn combine(
    t_wl: &AlignmentMatrix,
    t_gw: &AlignmentMatrix,
    r: usize,
    mode: EnsembleMode,
) -> Result<Combined> {
    let weights = ensemble_weights(t_wl, t_gw, mode)?;
    let bipartite = build_bipartite(&weights, t_gw, r)?;
    let matches = max_weight_matching(&bipartite)?;
    Ok(Combined {
        unmatched_sources: t_gw.n1() - matches.len(),
        matches,
        weights,
    })
}
