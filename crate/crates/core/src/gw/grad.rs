//! Objective and gradients with respect to the cost parameters, plus the
//! projected gradient step.
//!
//! With the plan `T` held fixed and `p = T 1`, `q = T^T 1`,
//!
//! ```text
//! L = sum (Cs^2 * p p^T) + sum (Ct^2 * q q^T) - 2 <Cs, T Ct T^T>
//! dL/dCs = 2 Cs * p p^T - 2 T Ct T^T
//! dL/dCt = 2 Ct * q q^T - 2 T^T Cs T
//! ```
//!
//! and the chain rule runs through the view weights, the row normalization of
//! the embeddings and the encoder.

use ndarray::{Array1, Array2, Axis, Zip};

use super::cost::{inter_cost, project_simplex, CostCoefficients, CostViews};
use super::{CostMode, GradMode, GwConfig};
use crate::embed::{project_columns, Forward, GnnParams};
use crate::graph::Graph;
use crate::{Error, Result};

/// Maximum relative deviation tolerated between analytic and finite-difference gradients.
pub const GRADIENT_TOLERANCE: f64 = 1e-4;

const FD_STEP: f64 = 1e-6;

/// Roundoff of a central difference, in units of `ulp(L) / (2 h)`.
const FD_NOISE_ULPS: f64 = 16.0;

/// Sufficient-decrease constant of the backtracking line search.
const ARMIJO_C: f64 = 1e-4;
/// Step halvings tried before the parameters are left unchanged.
const MAX_HALVINGS: usize = 30;

/// Learnable parameters of the intra-graph costs.
#[derive(Debug, Clone, PartialEq)]
pub struct GwParams {
    pub beta: CostCoefficients,
    pub gnn: GnnParams,
}

impl GwParams {
    pub fn is_feasible(&self, tol: f64) -> bool {
        self.beta.is_feasible(tol) && self.gnn.is_feasible(tol)
    }

    /// Projects `beta` onto the simplex and every transformation matrix onto
    /// nonnegative unit-sum columns.
    pub fn project(&mut self) {
        self.beta.project();
        self.gnn.project();
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub beta_s: [f64; 3],
    pub beta_t: [f64; 3],
    pub mats: Vec<Array2<f64>>,
}

/// Worst relative deviations between two gradient estimates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradientDeviation {
    pub beta: f64,
    pub weights: f64,
}

impl GradientDeviation {
    /// Block-wise `max |a - b| / max |b|` against finite differences taken at
    /// an objective of size `objective`; a block where both are exactly zero
    /// deviates by 0.
    ///
    /// Central differences cannot resolve gradients below their roundoff
    /// (`FD_NOISE_ULPS` units of `eps |L| / 2h`), so the denominator is floored
    /// at that resolution divided by [`GRADIENT_TOLERANCE`]. Without the floor a
    /// block whose true gradient vanishes compares quantization noise to itself.
    pub fn between(analytic: &Gradients, reference: &Gradients, objective: f64) -> Self {
        let resolution = FD_NOISE_ULPS * f64::EPSILON * objective.abs() / (2.0 * FD_STEP);
        let floor = resolution / GRADIENT_TOLERANCE;
        let beta_a: Vec<f64> = analytic.beta_s.iter().chain(&analytic.beta_t).copied().collect();
        let beta_r: Vec<f64> = reference.beta_s.iter().chain(&reference.beta_t).copied().collect();
        let beta = relative(&beta_a, &beta_r, floor);
        let weights = analytic
            .mats
            .iter()
            .zip(&reference.mats)
            .map(|(a, r)| relative(a.as_slice().unwrap(), r.as_slice().unwrap(), floor))
            .fold(0.0, f64::max);
        GradientDeviation { beta, weights }
    }

    pub fn max(&self) -> f64 {
        self.beta.max(self.weights)
    }
}

fn relative(a: &[f64], b: &[f64], floor: f64) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    if diff == 0.0 {
        return 0.0;
    }
    let scale = b.iter().map(|v| v.abs()).fold(0.0, f64::max);
    diff / scale.max(floor).max(1e-300)
}

/// Everything the backward pass needs for one graph.
struct Side<'g> {
    graph: &'g Graph,
    forward: Forward,
    views: CostViews,
    cost: Array2<f64>,
}

impl<'g> Side<'g> {
    fn new(graph: &'g Graph, gnn: &GnnParams, beta: [f64; 3]) -> Result<Self> {
        let forward = Forward::run(graph, gnn)?;
        let views = CostViews::new(graph, &forward.output);
        let cost = views.combine(beta);
        Ok(Side {
            graph,
            forward,
            views,
            cost,
        })
    }

    /// Gradients for this side's `beta` and (accumulated into `mats`) the encoder,
    /// given `dL/dC` for this side's cost.
    fn backward(&self, d_cost: &Array2<f64>, beta: [f64; 3], gnn: &GnnParams, mats: &mut [Array2<f64>]) -> [f64; 3] {
        let d_beta = self.views.views().map(|v| (v * d_cost).sum());
        if beta[2] != 0.0 {
            // C = b3 Zn Zn^T  =>  dL/dZn = b3 (G + G^T) Zn
            let sym = d_cost + &d_cost.t();
            let d_zhat = sym.dot(&self.views.z_hat) * beta[2];
            let d_z = row_normalize_backward(&self.forward.output, &self.views.z_hat, &d_zhat);
            for (acc, g) in mats.iter_mut().zip(self.forward.backward(self.graph, gnn, &d_z)) {
                *acc += &g;
            }
        }
        d_beta
    }
}

fn row_normalize_backward(z: &Array2<f64>, z_hat: &Array2<f64>, d_hat: &Array2<f64>) -> Array2<f64> {
    let mut out = Array2::zeros(z.raw_dim());
    for (i, mut row) in out.axis_iter_mut(Axis(0)).enumerate() {
        let norm = z.row(i).dot(&z.row(i)).sqrt();
        if norm > 0.0 {
            let u = z_hat.row(i);
            let g = d_hat.row(i);
            let proj = u.dot(&g);
            Zip::from(&mut row)
                .and(&g)
                .and(&u)
                .for_each(|o, &gv, &uv| *o = (gv - uv * proj) / norm);
        }
    }
    out
}

fn plan_sums(t: &Array2<f64>) -> (Array1<f64>, Array1<f64>) {
    (t.sum_axis(Axis(1)), t.sum_axis(Axis(0)))
}

/// Objective `<C_gwd(T), T>` for the multi-view costs under `params`.
pub fn objective(gs: &Graph, gt: &Graph, t: &Array2<f64>, params: &GwParams) -> Result<f64> {
    let s = Side::new(gs, &params.gnn, params.beta.beta_s)?;
    let d = Side::new(gt, &params.gnn, params.beta.beta_t)?;
    let c = inter_cost(&s.cost, &d.cost, t, None)?;
    Ok((&c * t).sum())
}

/// Objective value and exact gradients with respect to `beta` and the encoder weights.
pub fn analytic_gradients(
    gs: &Graph,
    gt: &Graph,
    t: &Array2<f64>,
    params: &GwParams,
) -> Result<(f64, Gradients)> {
    if t.dim() != (gs.n(), gt.n()) {
        return Err(Error::Shape(format!(
            "plan is {:?} but the graphs have {} and {} nodes",
            t.dim(),
            gs.n(),
            gt.n()
        )));
    }
    let s = Side::new(gs, &params.gnn, params.beta.beta_s)?;
    let d = Side::new(gt, &params.gnn, params.beta.beta_t)?;
    let (p, q) = plan_sums(t);

    let ct_proj = t.dot(&d.cost).dot(&t.t());
    let cs_proj = t.t().dot(&s.cost).dot(t);
    let mut g_s = &ct_proj * -2.0;
    Zip::indexed(&mut g_s)
        .and(&s.cost)
        .for_each(|(i, j), g, &c| *g += 2.0 * c * p[i] * p[j]);
    let mut g_t = &cs_proj * -2.0;
    Zip::indexed(&mut g_t)
        .and(&d.cost)
        .for_each(|(k, l), g, &c| *g += 2.0 * c * q[k] * q[l]);

    let value = (&inter_cost(&s.cost, &d.cost, t, None)? * t).sum();

    let mut mats: Vec<Array2<f64>> = params
        .gnn
        .mats()
        .iter()
        .map(|w| Array2::zeros(w.raw_dim()))
        .collect();
    let beta_s = s.backward(&g_s, params.beta.beta_s, &params.gnn, &mut mats);
    let beta_t = d.backward(&g_t, params.beta.beta_t, &params.gnn, &mut mats);
    Ok((value, Gradients { beta_s, beta_t, mats }))
}

/// Central-difference gradients; `O(#params)` objective evaluations.
pub fn finite_difference_gradients(
    gs: &Graph,
    gt: &Graph,
    t: &Array2<f64>,
    params: &GwParams,
) -> Result<Gradients> {
    let h = FD_STEP;
    let eval = |p: &GwParams| objective(gs, gt, t, p);
    let mut beta_s = [0.0; 3];
    let mut beta_t = [0.0; 3];
    for m in 0..3 {
        for (target, out) in [(0, &mut beta_s), (1, &mut beta_t)] {
            let mut plus = params.clone();
            let mut minus = params.clone();
            let (bp, bm) = if target == 0 {
                (&mut plus.beta.beta_s, &mut minus.beta.beta_s)
            } else {
                (&mut plus.beta.beta_t, &mut minus.beta.beta_t)
            };
            bp[m] += h;
            bm[m] -= h;
            out[m] = (eval(&plus)? - eval(&minus)?) / (2.0 * h);
        }
    }
    let mut mats = Vec::with_capacity(params.gnn.mats().len());
    for (layer, w) in params.gnn.mats().iter().enumerate() {
        let mut grad = Array2::zeros(w.raw_dim());
        for idx in 0..w.len() {
            let (r, c) = (idx / w.ncols(), idx % w.ncols());
            let mut plus = params.clone();
            let mut minus = params.clone();
            plus.gnn.mats_mut()[layer][[r, c]] += h;
            minus.gnn.mats_mut()[layer][[r, c]] -= h;
            grad[[r, c]] = (eval(&plus)? - eval(&minus)?) / (2.0 * h);
        }
        mats.push(grad);
    }
    Ok(Gradients { beta_s, beta_t, mats })
}

/// One projected gradient step on the cost parameters with the plan held fixed.
///
/// `beta` moves with rate `tau_beta` and is projected onto the simplex; the
/// encoder weights move with rate `tau_w` and are projected onto nonnegative
/// unit-sum columns. Adjacency-only costs have no parameters to move.
///
/// Both rates are halved together until the projected step satisfies the
/// Armijo condition `L(new) <= L(old) + c * grad . (new - old)`, so the step
/// never increases the objective at fixed `T` even when the nominal rates
/// exceed the inverse Lipschitz constant.
pub fn update_params(
    gs: &Graph,
    gt: &Graph,
    t: &Array2<f64>,
    params: &GwParams,
    cfg: &GwConfig,
) -> Result<GwParams> {
    if cfg.cost_mode == CostMode::AdjacencySparse {
        return Ok(params.clone());
    }
    let (value, grads) = match cfg.grad_mode {
        GradMode::Analytic => analytic_gradients(gs, gt, t, params)?,
        GradMode::FiniteDifference => (
            objective(gs, gt, t, params)?,
            finite_difference_gradients(gs, gt, t, params)?,
        ),
        GradMode::Checked => {
            let (value, analytic) = analytic_gradients(gs, gt, t, params)?;
            let reference = finite_difference_gradients(gs, gt, t, params)?;
            let dev = GradientDeviation::between(&analytic, &reference, value).max();
            if dev > GRADIENT_TOLERANCE {
                return Err(Error::Gradient {
                    deviation: dev,
                    tolerance: GRADIENT_TOLERANCE,
                });
            }
            (value, analytic)
        }
    };
    let mut scale = 1.0;
    for _ in 0..MAX_HALVINGS {
        let next = apply_step(params, &grads, cfg, scale);
        let slope = directional(&grads, params, &next);
        if slope == 0.0 {
            return Ok(next);
        }
        if objective(gs, gt, t, &next)? <= value + ARMIJO_C * slope {
            return Ok(next);
        }
        scale *= 0.5;
    }
    Ok(params.clone())
}

/// `grad . (next - prev)` over all parameters.
fn directional(grads: &Gradients, prev: &GwParams, next: &GwParams) -> f64 {
    let mut s = 0.0;
    for m in 0..3 {
        s += grads.beta_s[m] * (next.beta.beta_s[m] - prev.beta.beta_s[m]);
        s += grads.beta_t[m] * (next.beta.beta_t[m] - prev.beta.beta_t[m]);
    }
    for ((g, a), b) in grads.mats.iter().zip(next.gnn.mats()).zip(prev.gnn.mats()) {
        Zip::from(g).and(a).and(b).for_each(|&g, &a, &b| s += g * (a - b));
    }
    s
}

fn apply_step(params: &GwParams, grads: &Gradients, cfg: &GwConfig, scale: f64) -> GwParams {
    let mut next = params.clone();
    let (tb, tw) = (cfg.tau_beta * scale, cfg.tau_w * scale);
    for m in 0..3 {
        next.beta.beta_s[m] -= tb * grads.beta_s[m];
        next.beta.beta_t[m] -= tb * grads.beta_t[m];
    }
    project_simplex(&mut next.beta.beta_s);
    project_simplex(&mut next.beta.beta_t);
    if next.gnn.is_learnable() {
        for (w, g) in next.gnn.mats_mut().iter_mut().zip(&grads.mats) {
            w.scaled_add(-tw, g);
            project_columns(w);
        }
    }
    next
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::GnnKind;
    use crate::synth::{random_graph, FeatureKind};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn instance(kind: GnnKind, seed: u64) -> (Graph, Graph, Array2<f64>, GwParams) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gs = random_graph(6, 7, FeatureKind::Gaussian(3), seed).unwrap();
        let gt = random_graph(5, 6, FeatureKind::Gaussian(3), seed + 100).unwrap();
        let mut t = Array2::from_shape_fn((6, 5), |_| rng.gen::<f64>() + 0.1);
        t /= t.sum();
        let gnn = GnnParams::random(kind, 3, 3, 2, true, &mut rng).unwrap();
        let beta = CostCoefficients {
            beta_s: [0.2, 0.3, 0.5],
            beta_t: [0.5, 0.1, 0.4],
        };
        (gs, gt, t, GwParams { beta, gnn })
    }

    #[test]
    fn analytic_matches_finite_differences() {
        for kind in [GnnKind::LightweightGcn, GnnKind::Gcn] {
            let (gs, gt, t, params) = instance(kind, 4);
            let (value, analytic) = analytic_gradients(&gs, &gt, &t, &params).unwrap();
            assert!((value - objective(&gs, &gt, &t, &params).unwrap()).abs() < 1e-15);
            let fd = finite_difference_gradients(&gs, &gt, &t, &params).unwrap();
            let dev = GradientDeviation::between(&analytic, &fd, value);
            assert!(dev.max() < GRADIENT_TOLERANCE, "{kind}: {dev:?}");
        }
    }

    #[test]
    fn zero_gradient_leaves_feasible_params_unchanged() {
        // Identical graphs aligned by the identity plan: L = 0 is a minimum.
        let g = random_graph(6, 8, FeatureKind::Uniform(3), 2).unwrap();
        let t = Array2::eye(6) / 6.0;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let gnn = GnnParams::random(GnnKind::Gcn, 3, 4, 2, true, &mut rng).unwrap();
        let params = GwParams { beta: CostCoefficients::uniform(), gnn };
        let (value, grads) = analytic_gradients(&g, &g, &t, &params).unwrap();
        assert!(value.abs() < 1e-15);
        assert!(grads.beta_s.iter().chain(&grads.beta_t).all(|v| v.abs() < 1e-15));
        let next = update_params(&g, &g, &t, &params, &GwConfig::default()).unwrap();
        for (a, b) in next.gnn.mats().iter().zip(params.gnn.mats()) {
            assert!((a - b).iter().all(|v| v.abs() < 1e-15));
        }
        for m in 0..3 {
            assert!((next.beta.beta_s[m] - params.beta.beta_s[m]).abs() < 1e-15);
        }
    }

    #[test]
    fn step_leaving_simplex_is_projected() {
        let (gs, gt, t, params) = instance(GnnKind::LightweightGcn, 9);
        let cfg = GwConfig { tau_beta: 1e3, tau_w: 10.0, ..GwConfig::default() };
        let next = update_params(&gs, &gt, &t, &params, &cfg).unwrap();
        assert!(next.is_feasible(1e-12));
    }

    #[test]
    fn checked_mode_accepts_correct_gradients() {
        let (gs, gt, t, params) = instance(GnnKind::Gcn, 5);
        let cfg = GwConfig { grad_mode: GradMode::Checked, ..GwConfig::default() };
        let a = update_params(&gs, &gt, &t, &params, &cfg).unwrap();
        let b = update_params(&gs, &gt, &t, &params, &GwConfig::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn adjacency_mode_has_no_parameters() {
        let (gs, gt, t, params) = instance(GnnKind::Gcn, 6);
        let cfg = GwConfig { cost_mode: CostMode::AdjacencySparse, ..GwConfig::default() };
        assert_eq!(update_params(&gs, &gt, &t, &params, &cfg).unwrap(), params);
    }

    #[test]
    fn zero_features_give_zero_weight_gradients() {
        let gs = Graph::featureless(5, [(0, 1), (1, 2), (3, 4)]).unwrap();
        let gt = Graph::featureless(5, [(0, 2), (2, 4), (1, 3)]).unwrap();
        let t = Array2::from_elem((5, 5), 1.0 / 25.0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for kind in [GnnKind::Gcn, GnnKind::LightweightGcn] {
            let gnn = GnnParams::random(kind, 1, 3, 2, true, &mut rng).unwrap();
            let params = GwParams { beta: CostCoefficients::uniform(), gnn };
            let (value, a) = analytic_gradients(&gs, &gt, &t, &params).unwrap();
            let fd = finite_difference_gradients(&gs, &gt, &t, &params).unwrap();
            assert!(a.mats.iter().all(|m| m.iter().all(|&v| v == 0.0)));
            assert_eq!(GradientDeviation::between(&a, &fd, value).weights, 0.0);
        }
    }
}
