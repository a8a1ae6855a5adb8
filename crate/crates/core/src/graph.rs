//! Undirected attributed graphs and the symmetric-normalized propagation operator.

use std::collections::BTreeSet;

use ndarray::{Array2, ArrayView2, Axis};

use crate::{Error, Result};

/// An undirected, unweighted graph with a dense node-feature matrix.
///
/// Edges are stored once as `(lo, hi)` with `lo < hi`, sorted. Self-loops are
/// dropped on construction; the propagation operator adds its own.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    n: usize,
    edges: Vec<(usize, usize)>,
    neighbors: Vec<Vec<usize>>,
    features: Array2<f64>,
}

impl Graph {
    pub fn new<I>(n: usize, edges: I, features: Array2<f64>) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, usize)>,
    {
        if features.nrows() != n {
            return Err(Error::Shape(format!(
                "feature matrix has {} rows but the graph has {} nodes",
                features.nrows(),
                n
            )));
        }
        let mut set = BTreeSet::new();
        for (u, v) in edges {
            for id in [u, v] {
                if id >= n {
                    return Err(Error::NodeRange { id, n });
                }
            }
            if u != v {
                set.insert((u.min(v), u.max(v)));
            }
        }
        let edges: Vec<_> = set.into_iter().collect();
        let mut neighbors = vec![Vec::new(); n];
        for &(u, v) in &edges {
            neighbors[u].push(v);
            neighbors[v].push(u);
        }
        for list in &mut neighbors {
            list.sort_unstable();
        }
        Ok(Graph {
            n,
            edges,
            neighbors,
            features,
        })
    }

    /// Graph with `n` nodes, the given edges, and an all-zero `n x 1` feature matrix.
    pub fn featureless<I>(n: usize, edges: I) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, usize)>,
    {
        Graph::new(n, edges, Array2::zeros((n, 1)))
    }

    /// Same graph with one-hot features (identity feature matrix).
    pub fn with_one_hot_features(self) -> Self {
        let n = self.n;
        self.with_features(Array2::eye(n))
            .expect("identity has n rows")
    }

    pub fn with_features(self, features: Array2<f64>) -> Result<Self> {
        Graph::new(self.n, self.edges, features)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn neighbors(&self, u: usize) -> &[usize] {
        &self.neighbors[u]
    }

    pub fn degree(&self, u: usize) -> usize {
        self.neighbors[u].len()
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.neighbors[u].binary_search(&v).is_ok()
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn feature_dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn adjacency(&self) -> Array2<f64> {
        let mut a = Array2::zeros((self.n, self.n));
        for &(u, v) in &self.edges {
            a[[u, v]] = 1.0;
            a[[v, u]] = 1.0;
        }
        a
    }

    /// Dense `D^-1/2 (A + I) D^-1/2` with `D` the row sums of `A + I`.
    pub fn normalized_adjacency(&self) -> Array2<f64> {
        let inv_sqrt = self.inv_sqrt_degrees();
        let mut p = Array2::zeros((self.n, self.n));
        for u in 0..self.n {
            p[[u, u]] = inv_sqrt[u] * inv_sqrt[u];
            for &v in &self.neighbors[u] {
                p[[u, v]] = inv_sqrt[u] * inv_sqrt[v];
            }
        }
        p
    }

    /// Sparse product `P x` with the normalized propagation operator.
    pub fn propagate(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        assert_eq!(x.nrows(), self.n, "propagate: row count mismatch");
        let inv_sqrt = self.inv_sqrt_degrees();
        let mut out = Array2::zeros(x.raw_dim());
        for (u, mut row) in out.axis_iter_mut(Axis(0)).enumerate() {
            row.scaled_add(inv_sqrt[u] * inv_sqrt[u], &x.row(u));
            for &v in &self.neighbors[u] {
                row.scaled_add(inv_sqrt[u] * inv_sqrt[v], &x.row(v));
            }
        }
        out
    }

    /// Sparse product `A x` with the (unnormalized) adjacency matrix.
    pub fn adjacency_mul(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        assert_eq!(x.nrows(), self.n, "adjacency_mul: row count mismatch");
        let mut out = Array2::zeros(x.raw_dim());
        for (u, mut row) in out.axis_iter_mut(Axis(0)).enumerate() {
            for &v in &self.neighbors[u] {
                row += &x.row(v);
            }
        }
        out
    }

    /// Relabel nodes so that old node `i` becomes node `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Graph> {
        check_permutation(perm, self.n)?;
        let mut features = Array2::zeros(self.features.raw_dim());
        for (i, &p) in perm.iter().enumerate() {
            features.row_mut(p).assign(&self.features.row(i));
        }
        Graph::new(
            self.n,
            self.edges.iter().map(|&(u, v)| (perm[u], perm[v])),
            features,
        )
    }

    pub fn degree_sequence(&self) -> Vec<usize> {
        let mut d: Vec<_> = (0..self.n).map(|u| self.degree(u)).collect();
        d.sort_unstable();
        d
    }

    fn inv_sqrt_degrees(&self) -> Vec<f64> {
        (0..self.n)
            .map(|u| 1.0 / ((self.degree(u) + 1) as f64).sqrt())
            .collect()
    }
}

pub(crate) fn check_permutation(perm: &[usize], n: usize) -> Result<()> {
    if perm.len() != n {
        return Err(Error::Shape(format!(
            "permutation has length {} but the graph has {} nodes",
            perm.len(),
            n
        )));
    }
    let mut seen = vec![false; n];
    for &p in perm {
        if p >= n || seen[p] {
            return Err(Error::Shape(format!("not a permutation of 0..{n}")));
        }
        seen[p] = true;
    }
    Ok(())
}

/// Known one-to-one correspondence between source and target nodes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroundTruth {
    pairs: Vec<(usize, usize)>,
}

impl GroundTruth {
    pub fn new(pairs: Vec<(usize, usize)>) -> Result<Self> {
        let mut src = BTreeSet::new();
        let mut dst = BTreeSet::new();
        for &(s, t) in &pairs {
            if !src.insert(s) {
                return Err(Error::Shape(format!("source node {s} anchored twice")));
            }
            if !dst.insert(t) {
                return Err(Error::Shape(format!("target node {t} anchored twice")));
            }
        }
        Ok(GroundTruth { pairs })
    }

    /// The identity correspondence on `n` nodes.
    pub fn identity(n: usize) -> Self {
        GroundTruth {
            pairs: (0..n).map(|i| (i, i)).collect(),
        }
    }

    /// Correspondence `i -> perm[i]`.
    pub fn from_permutation(perm: &[usize]) -> Self {
        GroundTruth {
            pairs: perm.iter().copied().enumerate().collect(),
        }
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

    pub fn sources(&self) -> Vec<usize> {
        self.pairs.iter().map(|&(s, _)| s).collect()
    }

    pub(crate) fn check_bounds(&self, n1: usize, n2: usize) -> Result<()> {
        for &(s, t) in &self.pairs {
            if s >= n1 {
                return Err(Error::NodeRange { id: s, n: n1 });
            }
            if t >= n2 {
                return Err(Error::NodeRange { id: t, n: n2 });
            }
        }
        Ok(())
    }
}
