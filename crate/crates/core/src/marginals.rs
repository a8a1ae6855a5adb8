//! Marginal distributions over the two node sets.

use std::fmt;
use std::str::FromStr;

use log::warn;
use ndarray::{Array1, Axis};

use crate::alignment::AlignmentMatrix;
use crate::embed::Embedding;
use crate::{Error, Result};

/// Floor applied to marginal entries before transport.
pub const MARGINAL_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct Marginals {
    pub mu: Array1<f64>,
    pub nu: Array1<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MarginalMode {
    Uniform,
    /// Row and column sums of the WL prior, fixed for the whole run.
    Wl,
    /// Recomputed from the learnable embeddings at every outer iteration.
    Adaptive,
}

impl fmt::Display for MarginalMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MarginalMode::Uniform => "uniform",
            MarginalMode::Wl => "wl",
            MarginalMode::Adaptive => "adaptive",
        })
    }
}

impl FromStr for MarginalMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(MarginalMode::Uniform),
            "wl" => Ok(MarginalMode::Wl),
            "adaptive" => Ok(MarginalMode::Adaptive),
            other => Err(Error::Config(format!("unknown marginal mode {other:?}"))),
        }
    }
}

impl Marginals {
    pub fn new(mu: Array1<f64>, nu: Array1<f64>) -> Result<Self> {
        if mu.is_empty() || nu.is_empty() {
            return Err(Error::Shape("marginals must be nonempty".into()));
        }
        if mu.iter().chain(nu.iter()).any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Numerical("marginal entries must be finite and nonnegative".into()));
        }
        let (sm, sn) = (mu.sum(), nu.sum());
        if (sm - sn).abs() > 1e-9 * sm.max(sn).max(1.0) {
            return Err(Error::Shape(format!(
                "marginal masses differ: {sm} vs {sn}"
            )));
        }
        Ok(Marginals { mu, nu })
    }

    pub fn uniform(n1: usize, n2: usize) -> Result<Self> {
        if n1 == 0 || n2 == 0 {
            return Err(Error::Shape("uniform marginals need n1, n2 >= 1".into()));
        }
        Ok(Marginals {
            mu: Array1::from_elem(n1, 1.0 / n1 as f64),
            nu: Array1::from_elem(n2, 1.0 / n2 as f64),
        })
    }

    /// Row and column sums of an alignment matrix.
    pub fn from_alignment(t: &AlignmentMatrix) -> Result<Self> {
        let total = t.total_mass();
        if !(total > 0.0) {
            return Err(Error::DegeneratePrior(
                "alignment matrix has zero total mass".into(),
            ));
        }
        Ok(Marginals {
            mu: t.sum_axis(Axis(1)),
            nu: t.sum_axis(Axis(0)),
        })
    }

    /// Marginals of `Norm(Z_s Z_t^T)` for the current embeddings, or `previous`
    /// (with a warning) when no inner product is positive.
    pub fn adaptive(zs: &Embedding, zt: &Embedding, previous: &Marginals) -> Result<Self> {
        if zs.dim() != zt.dim() {
            return Err(Error::Shape(format!(
                "embedding dimensions differ: {} vs {}",
                zs.dim(),
                zt.dim()
            )));
        }
        let sim = zs.matrix.dot(&zt.matrix.t());
        match AlignmentMatrix::from_similarity(&sim) {
            Some(t) => Marginals::from_alignment(&t),
            None => {
                warn!("embedding similarity has no positive entry; keeping previous marginals");
                Ok(previous.clone())
            }
        }
    }

    pub fn n1(&self) -> usize {
        self.mu.len()
    }

    pub fn n2(&self) -> usize {
        self.nu.len()
    }

    /// Entries floored at [`MARGINAL_FLOOR`], each vector rescaled to unit mass.
    pub fn prepared(&self) -> Marginals {
        let fix = |v: &Array1<f64>| {
            let f = v.mapv(|x| x.max(MARGINAL_FLOOR));
            let s = f.sum();
            f / s
        };
        Marginals {
            mu: fix(&self.mu),
            nu: fix(&self.nu),
        }
    }
}
