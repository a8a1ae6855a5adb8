use log::debug;
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::cost::{inter_cost, inter_cost_adjacency, CostCoefficients, CostViews};
use super::grad::{update_params, GwParams};
use super::sinkhorn::ProximalSolver;
use super::{CostMode, GwConfig};
use crate::alignment::AlignmentMatrix;
use crate::embed::{feat_prop_trans, GnnParams};
use crate::graph::Graph;
use crate::marginals::Marginals;
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct GraftOutput {
    pub plan: AlignmentMatrix,
    /// Objective `<C_gwd, T>` before the first iteration and after each one.
    pub trajectory: Vec<f64>,
    pub params: GwParams,
    /// Marginals of the returned plan (differ from the input only in adaptive mode).
    pub marginals: Marginals,
    /// Inter-graph cost computed in the first iteration.
    pub first_cost: Array2<f64>,
}

/// Learns the Gromov-Wasserstein plan between `gs` and `gt` under `marg`.
///
/// The encoder weights are drawn from `seed` and projected before the first
/// iteration; `beta` starts uniform on both sides.
pub fn graft(gs: &Graph, gt: &Graph, marg: &Marginals, cfg: &GwConfig, seed: u64) -> Result<GraftOutput> {
    cfg.validate()?;
    if marg.n1() != gs.n() || marg.n2() != gt.n() {
        return Err(Error::Shape(format!(
            "marginals have lengths {}/{} but the graphs have {} and {} nodes",
            marg.n1(),
            marg.n2(),
            gs.n(),
            gt.n()
        )));
    }
    if gs.feature_dim() != gt.feature_dim() {
        return Err(Error::Shape(format!(
            "source features are {}-dimensional, target features {}-dimensional",
            gs.feature_dim(),
            gt.feature_dim()
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let gnn = GnnParams::random(cfg.gnn, gs.feature_dim(), cfg.dim, cfg.layers, true, &mut rng)?;
    let beta = match cfg.cost_mode {
        CostMode::MultiView => CostCoefficients::uniform(),
        CostMode::AdjacencySparse => CostCoefficients::adjacency_only(),
    };
    let mut params = GwParams { beta, gnn };
    let mut marg = marg.prepared();
    let mut plan = product_plan(&marg);

    let mut solver = ProximalSolver::default();
    let mut trajectory = Vec::with_capacity(cfg.iters + 1);
    let mut first_cost = None;
    for iter in 0..cfg.iters {
        if cfg.adaptive_marginals {
            let zs = feat_prop_trans(gs, &params.gnn)?;
            let zt = feat_prop_trans(gt, &params.gnn)?;
            marg = Marginals::adaptive(&zs, &zt, &marg)?.prepared();
        }
        let c_gwd = inter_graph_cost(gs, gt, &plan, &params, &marg, cfg)?;
        let value = (&c_gwd * plan.values()).sum();
        debug!("outer iteration {iter}: objective {value:.6e}");
        trajectory.push(value);
        params = update_params(gs, gt, plan.values(), &params, cfg)?;
        plan = solver.step(&c_gwd, &plan, &marg, cfg)?;
        if first_cost.is_none() {
            first_cost = Some(c_gwd);
        }
    }
    let c_final = inter_graph_cost(gs, gt, &plan, &params, &marg, cfg)?;
    trajectory.push((&c_final * plan.values()).sum());

    Ok(GraftOutput {
        plan,
        trajectory,
        params,
        marginals: marg,
        first_cost: first_cost.unwrap_or(c_final),
    })
}

fn inter_graph_cost(
    gs: &Graph,
    gt: &Graph,
    plan: &AlignmentMatrix,
    params: &GwParams,
    marg: &Marginals,
    cfg: &GwConfig,
) -> Result<Array2<f64>> {
    match cfg.cost_mode {
        CostMode::AdjacencySparse => inter_cost_adjacency(gs, gt, plan.values(), Some(marg)),
        CostMode::MultiView => {
            let zs = feat_prop_trans(gs, &params.gnn)?;
            let zt = feat_prop_trans(gt, &params.gnn)?;
            let cs = CostViews::new(gs, &zs.matrix).combine(params.beta.beta_s);
            let ct = CostViews::new(gt, &zt.matrix).combine(params.beta.beta_t);
            inter_cost(&cs, &ct, plan.values(), Some(marg))
        }
    }
}

fn product_plan(m: &Marginals) -> AlignmentMatrix {
    let t = Array2::from_shape_fn((m.n1(), m.n2()), |(i, k)| m.mu[i] * m.nu[k]);
    AlignmentMatrix::new_unchecked(t)
}
