//! Intra-graph and inter-graph costs.

use log::warn;
use ndarray::{Array1, Array2, Axis};

use crate::embed::Embedding;
use crate::graph::Graph;
use crate::marginals::Marginals;
use crate::{Error, Result};

/// Per-graph mixing weights of the three intra-cost views
/// (adjacency, feature similarity, embedding similarity).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostCoefficients {
    pub beta_s: [f64; 3],
    pub beta_t: [f64; 3],
}

impl CostCoefficients {
    pub fn uniform() -> Self {
        let b = [1.0 / 3.0; 3];
        CostCoefficients { beta_s: b, beta_t: b }
    }

    pub fn adjacency_only() -> Self {
        let b = [1.0, 0.0, 0.0];
        CostCoefficients { beta_s: b, beta_t: b }
    }

    pub fn is_feasible(&self, tol: f64) -> bool {
        [self.beta_s, self.beta_t]
            .iter()
            .all(|b| b.iter().all(|&v| v >= 0.0) && (b.iter().sum::<f64>() - 1.0).abs() <= tol)
    }

    pub fn project(&mut self) {
        project_simplex(&mut self.beta_s);
        project_simplex(&mut self.beta_t);
    }
}

/// Euclidean projection onto the probability simplex (sort and threshold).
pub fn project_simplex(v: &mut [f64]) {
    if v.is_empty() {
        return;
    }
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (i, &u) in sorted.iter().enumerate() {
        cumsum += u;
        let t = (cumsum - 1.0) / (i + 1) as f64;
        if u - t > 0.0 {
            theta = t;
        }
    }
    for x in v.iter_mut() {
        *x = (*x - theta).max(0.0);
    }
}

/// Scales every row to unit L2 norm; all-zero rows stay zero.
pub fn row_normalize(x: &Array2<f64>) -> Array2<f64> {
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        let norm = row.dot(&row).sqrt();
        if norm > 0.0 {
            row /= norm;
        }
    }
    out
}

/// `b1 A + b2 Xn Xn^T + b3 Zn Zn^T` with `Xn`, `Zn` the row-normalized
/// features and embeddings.
pub fn intra_cost(g: &Graph, z: &Embedding, beta: [f64; 3]) -> Result<Array2<f64>> {
    if z.n() != g.n() {
        return Err(Error::Shape(format!(
            "embedding has {} rows but the graph has {} nodes",
            z.n(),
            g.n()
        )));
    }
    let views = CostViews::new(g, &z.matrix);
    Ok(views.combine(beta))
}

/// The three symmetric views entering the intra-graph cost.
pub(crate) struct CostViews {
    pub adjacency: Array2<f64>,
    pub features: Array2<f64>,
    pub z_hat: Array2<f64>,
    pub embedding: Array2<f64>,
}

impl CostViews {
    pub fn new(g: &Graph, z: &Array2<f64>) -> Self {
        let x_hat = row_normalize(g.features());
        let z_hat = row_normalize(z);
        CostViews {
            adjacency: g.adjacency(),
            features: x_hat.dot(&x_hat.t()),
            embedding: z_hat.dot(&z_hat.t()),
            z_hat,
        }
    }

    pub fn combine(&self, beta: [f64; 3]) -> Array2<f64> {
        &self.adjacency * beta[0] + &self.features * beta[1] + &self.embedding * beta[2]
    }

    pub fn views(&self) -> [&Array2<f64>; 3] {
        [&self.adjacency, &self.features, &self.embedding]
    }
}

/// Inter-graph cost `C(i,k) = sum_{j,l} (Cs(i,j) - Ct(k,l))^2 T(j,l)`, computed in
/// the factored form `(Cs^2 p) 1^T + 1 (Ct^2 q)^T - 2 Cs T Ct^T` with `p = T 1`
/// and `q = T^T 1`.
///
/// When `marg` is given, a warning is logged if `T` does not carry those marginals.
pub fn inter_cost(
    cs: &Array2<f64>,
    ct: &Array2<f64>,
    t: &Array2<f64>,
    marg: Option<&Marginals>,
) -> Result<Array2<f64>> {
    check_shapes(cs, ct, t)?;
    let (p, q) = plan_marginals(t, marg);
    let cs_sq = cs.mapv(|v| v * v);
    let ct_sq = ct.mapv(|v| v * v);
    let row_term = cs_sq.dot(&p);
    let col_term = ct_sq.dot(&q);
    let cross = cs.dot(t).dot(&ct.t());
    Ok(assemble(&row_term, &col_term, cross))
}

/// Inter-graph cost for adjacency-only intra costs, using sparse products:
/// `A^2 = A` for a 0/1 adjacency, and `As T At^T` costs `O(m1 n2 + n1 m2)`.
pub fn inter_cost_adjacency(
    gs: &Graph,
    gt: &Graph,
    t: &Array2<f64>,
    marg: Option<&Marginals>,
) -> Result<Array2<f64>> {
    if t.dim() != (gs.n(), gt.n()) {
        return Err(Error::Shape(format!(
            "plan is {:?} but the graphs have {} and {} nodes",
            t.dim(),
            gs.n(),
            gt.n()
        )));
    }
    let (p, q) = plan_marginals(t, marg);
    let row_term = gs.adjacency_mul(p.view().insert_axis(Axis(1))).remove_axis(Axis(1));
    let col_term = gt.adjacency_mul(q.view().insert_axis(Axis(1))).remove_axis(Axis(1));
    let as_t = gs.adjacency_mul(t.view());
    let cross = gt.adjacency_mul(as_t.t()).reversed_axes();
    Ok(assemble(&row_term, &col_term, cross))
}

/// `<C_gwd(T), T>`: the Gromov-Wasserstein objective at plan `T`.
pub fn gwd_objective(cs: &Array2<f64>, ct: &Array2<f64>, t: &Array2<f64>) -> Result<f64> {
    let c = inter_cost(cs, ct, t, None)?;
    Ok((&c * t).sum())
}

fn assemble(row_term: &Array1<f64>, col_term: &Array1<f64>, cross: Array2<f64>) -> Array2<f64> {
    let mut c = cross * -2.0;
    for ((i, k), v) in c.indexed_iter_mut() {
        *v += row_term[i] + col_term[k];
    }
    c
}

fn plan_marginals(t: &Array2<f64>, marg: Option<&Marginals>) -> (Array1<f64>, Array1<f64>) {
    let p = t.sum_axis(Axis(1));
    let q = t.sum_axis(Axis(0));
    if let Some(m) = marg {
        let dev = |a: &Array1<f64>, b: &Array1<f64>| {
            if a.len() != b.len() {
                return f64::INFINITY;
            }
            a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
        };
        let worst = dev(&p, &m.mu).max(dev(&q, &m.nu));
        if worst > 1e-6 {
            warn!("transport plan deviates from the marginals by {worst:.2e}");
        }
    }
    (p, q)
}

fn check_shapes(cs: &Array2<f64>, ct: &Array2<f64>, t: &Array2<f64>) -> Result<()> {
    if !cs.is_square() || !ct.is_square() {
        return Err(Error::Shape("intra-graph costs must be square".into()));
    }
    if t.dim() != (cs.nrows(), ct.nrows()) {
        return Err(Error::Shape(format!(
            "plan is {:?} but the costs are {}x{} and {}x{}",
            t.dim(),
            cs.nrows(),
            cs.nrows(),
            ct.nrows(),
            ct.nrows()
        )));
    }
    Ok(())
}
