//! Gromov-Wasserstein learning with learnable intra-graph costs.
//!
//! Each outer iteration embeds both graphs with the shared encoder, builds
//! the multi-view intra costs, evaluates the inter-graph cost under the current
//! plan, takes one projected gradient step on the cost parameters, and then
//! moves the plan with KL-proximal Sinkhorn rounds.

mod cost;
mod grad;
mod graft;
mod sinkhorn;

use std::fmt;
use std::str::FromStr;

pub use cost::{
    gwd_objective, inter_cost, inter_cost_adjacency, intra_cost, project_simplex, row_normalize,
    CostCoefficients,
};
pub use grad::{
    analytic_gradients, finite_difference_gradients, objective, update_params, GradientDeviation,
    Gradients, GwParams, GRADIENT_TOLERANCE,
};
pub use graft::{graft, GraftOutput};
pub use sinkhorn::{sinkhorn_proximal_step, ProximalSolver};

use crate::embed::GnnKind;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CostMode {
    /// Learnable mix of adjacency, feature and embedding similarity.
    MultiView,
    /// Adjacency only, with sparse inter-cost products; parameters stay fixed.
    AdjacencySparse,
}

impl fmt::Display for CostMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CostMode::MultiView => "multi-view",
            CostMode::AdjacencySparse => "adjacency-sparse",
        })
    }
}

impl FromStr for CostMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "multi-view" => Ok(CostMode::MultiView),
            "adjacency-sparse" => Ok(CostMode::AdjacencySparse),
            other => Err(Error::Config(format!("unknown cost mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradMode {
    Analytic,
    /// Central differences; only viable on tiny instances.
    FiniteDifference,
    /// Analytic gradients verified against central differences on every step.
    Checked,
}

impl fmt::Display for GradMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GradMode::Analytic => "analytic",
            GradMode::FiniteDifference => "finite-difference",
            GradMode::Checked => "checked",
        })
    }
}

impl FromStr for GradMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "analytic" => Ok(GradMode::Analytic),
            "finite-difference" => Ok(GradMode::FiniteDifference),
            "checked" => Ok(GradMode::Checked),
            other => Err(Error::Config(format!("unknown gradient mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GwConfig {
    /// Outer iterations.
    pub iters: usize,
    /// Proximal rounds per outer iteration.
    pub ot_iters: usize,
    /// Minimum Sinkhorn sweeps per proximal round.
    pub sinkhorn_iters: usize,
    /// Sweeps continue past `sinkhorn_iters` until the column marginals are
    /// within `sinkhorn_tol`, up to `sinkhorn_max_iters`.
    pub sinkhorn_tol: f64,
    pub sinkhorn_max_iters: usize,
    pub log_domain: bool,
    /// Proximal (entropic) coefficient.
    pub tau_t: f64,
    pub tau_beta: f64,
    pub tau_w: f64,
    pub cost_mode: CostMode,
    pub grad_mode: GradMode,
    pub gnn: GnnKind,
    pub dim: usize,
    pub layers: usize,
    /// Recompute the marginals from the learnable embeddings every iteration.
    pub adaptive_marginals: bool,
}

impl Default for GwConfig {
    fn default() -> Self {
        GwConfig {
            iters: 50,
            ot_iters: 2,
            sinkhorn_iters: 20,
            sinkhorn_tol: 1e-8,
            sinkhorn_max_iters: 10_000,
            log_domain: false,
            tau_t: 0.01,
            tau_beta: 1.0,
            tau_w: 0.01,
            cost_mode: CostMode::MultiView,
            grad_mode: GradMode::Analytic,
            gnn: GnnKind::Gcn,
            dim: 32,
            layers: 3,
            adaptive_marginals: false,
        }
    }
}

impl GwConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("iters", self.iters),
            ("ot_iters", self.ot_iters),
            ("sinkhorn_iters", self.sinkhorn_iters),
            ("dim", self.dim),
            ("layers", self.layers),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if self.sinkhorn_max_iters < self.sinkhorn_iters {
            return Err(Error::Config(
                "sinkhorn_max_iters must be at least sinkhorn_iters".into(),
            ));
        }
        let rates = [
            ("tau_t", self.tau_t),
            ("tau_beta", self.tau_beta),
            ("tau_w", self.tau_w),
        ];
        for (name, v) in rates {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.sinkhorn_tol > 0.0) {
            return Err(Error::Config("sinkhorn_tol must be positive".into()));
        }
        Ok(())
    }
}
