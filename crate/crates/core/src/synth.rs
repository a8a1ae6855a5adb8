//! Synthetic graphs and noisy permuted copies with known correspondence.

use std::collections::BTreeSet;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::graph::{Graph, GroundTruth};
use crate::{Error, Result};

/// Node features for [`random_graph`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FeatureKind {
    /// Identity feature matrix, `n` columns.
    OneHot,
    /// I.i.d. standard normal entries.
    Gaussian(usize),
    /// I.i.d. uniform entries on `[0, 1)`.
    Uniform(usize),
}

/// Erdos-Renyi `G(n, m)` graph with the requested features.
pub fn random_graph(n: usize, m: usize, features: FeatureKind, seed: u64) -> Result<Graph> {
    let total = n * n.saturating_sub(1) / 2;
    if m > total {
        return Err(Error::Config(format!(
            "{m} edges requested but a simple graph on {n} nodes has at most {total}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let edges = sample_pairs(n, m, &BTreeSet::new(), &mut rng);
    let x = match features {
        FeatureKind::OneHot => Array2::eye(n),
        FeatureKind::Gaussian(d) => Array2::from_shape_fn((n, d), |_| standard_normal(&mut rng)),
        FeatureKind::Uniform(d) => Array2::from_shape_fn((n, d), |_| rng.gen::<f64>()),
    };
    Graph::new(n, edges, x)
}

/// Builds a noisy relabelled copy of `g`.
///
/// Each edge is dropped with probability `p_edge` and replaced by a random
/// non-edge of `g` (so the expected edge count is preserved), each feature
/// entry is resampled from its column with probability `p_feat`, and the
/// result is relabelled by a uniformly random permutation. Returns
/// `(source, target, ground truth)` where the source is `g` itself.
pub fn gen_synthetic_pair(
    g: &Graph,
    p_edge: f64,
    p_feat: f64,
    seed: u64,
) -> Result<(Graph, Graph, GroundTruth)> {
    for (name, p) in [("p_edge", p_edge), ("p_feat", p_feat)] {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::Config(format!("{name} must lie in [0, 1], got {p}")));
        }
    }
    let n = g.n();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng);

    let mut kept = Vec::with_capacity(g.num_edges());
    let mut removed = 0;
    for &e in g.edges() {
        if rng.gen::<f64>() < p_edge {
            removed += 1;
        } else {
            kept.push(e);
        }
    }
    let original: BTreeSet<_> = g.edges().iter().copied().collect();
    kept.extend(sample_pairs(n, removed, &original, &mut rng));

    let x = g.features();
    let mut noisy = x.clone();
    if p_feat > 0.0 && n > 0 {
        for ((_, c), v) in noisy.indexed_iter_mut() {
            if rng.gen::<f64>() < p_feat {
                *v = x[[rng.gen_range(0..n), c]];
            }
        }
    }

    let target = Graph::new(n, kept, noisy)?.permuted(&perm)?;
    Ok((g.clone(), target, GroundTruth::from_permutation(&perm)))
}

/// Up to `count` distinct node pairs not in `exclude`, sampled uniformly.
fn sample_pairs(
    n: usize,
    count: usize,
    exclude: &BTreeSet<(usize, usize)>,
    rng: &mut ChaCha8Rng,
) -> Vec<(usize, usize)> {
    let total = n * n.saturating_sub(1) / 2;
    let available = total - exclude.len();
    let count = count.min(available);
    if count == 0 {
        return Vec::new();
    }
    if 2 * count > available {
        let mut all: Vec<_> = (0..n)
            .flat_map(|u| (u + 1..n).map(move |v| (u, v)))
            .filter(|e| !exclude.contains(e))
            .collect();
        all.shuffle(rng);
        all.truncate(count);
        all.sort_unstable();
        return all;
    }
    let mut chosen = BTreeSet::new();
    while chosen.len() < count {
        let u = rng.gen_range(0..n);
        let v = rng.gen_range(0..n);
        if u == v {
            continue;
        }
        let e = (u.min(v), u.max(v));
        if !exclude.contains(&e) {
            chosen.insert(e);
        }
    }
    chosen.into_iter().collect()
}

pub(crate) fn standard_normal<R: Rng>(rng: &mut R) -> f64 {
    // Box-Muller; the open interval keeps ln() finite.
    let u1: f64 = 1.0 - rng.gen::<f64>();
    let u2: f64 = rng.gen::<f64>();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}
