//! KL-proximal transport updates solved by Sinkhorn-Knopp scaling.

use log::warn;
use ndarray::{Array1, Array2, Axis, Zip};

use super::GwConfig;
use crate::alignment::AlignmentMatrix;
use crate::marginals::Marginals;
use crate::{Error, Result};

/// Floor applied to the previous plan so the proximal kernel stays positive.
const PLAN_FLOOR: f64 = 1e-30;

/// Runs `cfg.ot_iters` proximal rounds starting from `t_prev`:
/// `G = exp(-C/tau) * T`, Sinkhorn scaling `b = nu / (G^T a)`, `a = mu / (G b)`,
/// then `T = diag(a) G diag(b)`. The scaling vector `a` starts at `mu` and is
/// carried across rounds.
///
/// Each cost row and column is shifted by its minimum before exponentiation;
/// the shift is absorbed by the scalings and leaves the result unchanged.
pub fn sinkhorn_proximal_step(
    c_gwd: &Array2<f64>,
    t_prev: &AlignmentMatrix,
    marg: &Marginals,
    cfg: &GwConfig,
) -> Result<AlignmentMatrix> {
    ProximalSolver::default().step(c_gwd, t_prev, marg, cfg)
}

/// Proximal transport solver that remembers its row scaling between calls.
///
/// The first round of each call starts from the previous call's scaling
/// instead of `mu`. The fixed point is the same; only the sweep count changes.
#[derive(Debug, Clone, Default)]
pub struct ProximalSolver {
    /// `log a` expressed for the unshifted cost.
    log_a: Option<Array1<f64>>,
}

impl ProximalSolver {
    pub fn step(
        &mut self,
        c_gwd: &Array2<f64>,
        t_prev: &AlignmentMatrix,
        marg: &Marginals,
        cfg: &GwConfig,
    ) -> Result<AlignmentMatrix> {
        let (n1, n2) = c_gwd.dim();
        if t_prev.dim() != (n1, n2) || marg.n1() != n1 || marg.n2() != n2 {
            return Err(Error::Shape(format!(
                "cost is {n1}x{n2}, plan is {:?}, marginals are {}/{}",
                t_prev.dim(),
                marg.n1(),
                marg.n2()
            )));
        }
        if c_gwd.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("inter-graph cost has non-finite entries".into()));
        }
        let m = marg.prepared();
        let (shifted, row_shift) = shift_costs(c_gwd);
        // a_shifted = a * exp(-row_shift / tau)
        let init = match &self.log_a {
            Some(log_a) if log_a.len() == n1 => {
                let mut l = log_a - &(&row_shift / cfg.tau_t);
                let top = l.fold(f64::NEG_INFINITY, |x, &y| x.max(y));
                l -= top;
                l
            }
            _ => m.mu.mapv(f64::ln),
        };
        let (t, log_a) = if cfg.log_domain {
            log_domain(&shifted, t_prev.values(), &m, cfg, init)?
        } else {
            standard(&shifted, t_prev.values(), &m, cfg, init)?
        };
        self.log_a = Some(log_a + &(&row_shift / cfg.tau_t));
        Ok(t)
    }
}

fn overflow(cfg: &GwConfig) -> Error {
    Error::Numerical(format!(
        "Sinkhorn scaling overflowed (tau_t = {}); use a larger tau_t or the log-domain solver",
        cfg.tau_t
    ))
}

fn standard(
    c: &Array2<f64>,
    t_prev: &Array2<f64>,
    m: &Marginals,
    cfg: &GwConfig,
    log_a0: Array1<f64>,
) -> Result<(AlignmentMatrix, Array1<f64>)> {
    let kernel = c.mapv(|v| (-v / cfg.tau_t).exp());
    let mut t = t_prev.mapv(|v| v.max(PLAN_FLOOR));
    let mut a = log_a0.mapv(f64::exp);
    if a.iter().any(|v| !v.is_finite() || *v <= 0.0) {
        a = m.mu.clone();
    }
    for _ in 0..cfg.ot_iters {
        let g = &kernel * &t;
        let mut b: Option<Array1<f64>> = None;
        let mut sweeps = 0;
        loop {
            let gta = g.t().dot(&a);
            if let Some(b) = &b {
                if sweeps >= cfg.sinkhorn_iters {
                    let err = column_error(&gta, b, &m.nu);
                    if err <= cfg.sinkhorn_tol {
                        break;
                    }
                    if sweeps >= cfg.sinkhorn_max_iters {
                        warn!("Sinkhorn stopped after {sweeps} sweeps with column error {err:.2e}");
                        break;
                    }
                }
            }
            let nb = ratio(&m.nu, &gta);
            a = ratio(&m.mu, &g.dot(&nb));
            b = Some(nb);
            sweeps += 1;
            if a.iter().chain(b.iter().flatten()).any(|v| !v.is_finite()) {
                return Err(overflow(cfg));
            }
        }
        let b = b.expect("at least one sweep");
        t = g;
        Zip::indexed(&mut t).for_each(|(i, k), v| *v *= a[i] * b[k]);
    }
    let log_a = a.mapv(|v| v.max(f64::MIN_POSITIVE).ln());
    Ok((finish(t)?, log_a))
}

fn log_domain(
    c: &Array2<f64>,
    t_prev: &Array2<f64>,
    m: &Marginals,
    cfg: &GwConfig,
    mut f: Array1<f64>,
) -> Result<(AlignmentMatrix, Array1<f64>)> {
    let log_mu = m.mu.mapv(f64::ln);
    let log_nu = m.nu.mapv(f64::ln);
    let mut log_t = t_prev.mapv(|v| v.max(PLAN_FLOOR).ln());
    for _ in 0..cfg.ot_iters {
        let log_k = c.mapv(|v| -v / cfg.tau_t) + &log_t;
        let mut g: Option<Array1<f64>> = None;
        let mut sweeps = 0;
        loop {
            let col = lse_cols(&log_k, &f);
            if let Some(g) = &g {
                if sweeps >= cfg.sinkhorn_iters {
                    let err = (0..g.len())
                        .map(|k| ((col[k] + g[k]).exp() - m.nu[k]).abs())
                        .fold(0.0, f64::max);
                    if err <= cfg.sinkhorn_tol {
                        break;
                    }
                    if sweeps >= cfg.sinkhorn_max_iters {
                        warn!("log-domain Sinkhorn stopped after {sweeps} sweeps with column error {err:.2e}");
                        break;
                    }
                }
            }
            let ng = &log_nu - &col;
            f = &log_mu - &lse_rows(&log_k, &ng);
            g = Some(ng);
            sweeps += 1;
            if f.iter().chain(g.iter().flatten()).any(|v| !v.is_finite()) {
                return Err(Error::Numerical("log-domain Sinkhorn produced non-finite potentials".into()));
            }
        }
        let g = g.expect("at least one sweep");
        log_t = log_k;
        Zip::indexed(&mut log_t).for_each(|(i, k), v| *v += f[i] + g[k]);
    }
    Ok((finish(log_t.mapv(f64::exp))?, f))
}

fn finish(t: Array2<f64>) -> Result<AlignmentMatrix> {
    if t.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("transport plan has non-finite entries".into()));
    }
    Ok(AlignmentMatrix::new_unchecked(t))
}

/// Subtracts each row's minimum, then each column's; returns the row shifts.
fn shift_costs(c: &Array2<f64>) -> (Array2<f64>, Array1<f64>) {
    let mut out = c.clone();
    let mut rows = Array1::zeros(c.nrows());
    for (i, mut row) in out.rows_mut().into_iter().enumerate() {
        let lo = row.fold(f64::INFINITY, |a, &b| a.min(b));
        row -= lo;
        rows[i] = lo;
    }
    for mut col in out.columns_mut() {
        let lo = col.fold(f64::INFINITY, |a, &b| a.min(b));
        col -= lo;
    }
    (out, rows)
}

fn ratio(num: &Array1<f64>, den: &Array1<f64>) -> Array1<f64> {
    Zip::from(num)
        .and(den)
        .map_collect(|&n, &d| n / d.max(f64::MIN_POSITIVE))
}

fn column_error(gta: &Array1<f64>, b: &Array1<f64>, nu: &Array1<f64>) -> f64 {
    Zip::from(gta)
        .and(b)
        .and(nu)
        .fold(0.0, |acc, &s, &bk, &n| f64::max(acc, (s * bk - n).abs()))
}

/// `out[k] = log sum_i exp(log_k[i,k] + f[i])`.
fn lse_cols(log_k: &Array2<f64>, f: &Array1<f64>) -> Array1<f64> {
    let mut out = Array1::zeros(log_k.ncols());
    for (k, col) in log_k.axis_iter(Axis(1)).enumerate() {
        out[k] = lse(col.iter().zip(f).map(|(a, b)| a + b));
    }
    out
}

/// `out[i] = log sum_k exp(log_k[i,k] + g[k])`.
fn lse_rows(log_k: &Array2<f64>, g: &Array1<f64>) -> Array1<f64> {
    let mut out = Array1::zeros(log_k.nrows());
    for (i, row) in log_k.axis_iter(Axis(0)).enumerate() {
        out[i] = lse(row.iter().zip(g).map(|(a, b)| a + b));
    }
    out
}

fn lse(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}
