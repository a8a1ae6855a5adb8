//! Feature propagation and transformation, and the parameter-free WL prior.
//!
//! Two encoders share one interface:
//!
//! * `Gcn`: `Z(k) = relu(P Z(k-1) W(k))` for `k = 1..K`, `Z(0) = X`, output `sum_k Z(k)`.
//! * `LightweightGcn`: `[X, PX, ..., P^K X] W` with a single `(K+1) d_in x d` matrix.
//!
//! `P` is the symmetric-normalized adjacency with self-loops. The WL prior runs
//! the same encoder with frozen random weights on both graphs and turns the
//! inner products into a probability matrix.

use std::fmt;
use std::str::FromStr;

use log::warn;
use ndarray::{concatenate, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::alignment::AlignmentMatrix;
use crate::graph::Graph;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GnnKind {
    LightweightGcn,
    Gcn,
}

impl fmt::Display for GnnKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GnnKind::LightweightGcn => "lgcn",
            GnnKind::Gcn => "gcn",
        })
    }
}

impl FromStr for GnnKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lgcn" | "lightweight-gcn" => Ok(GnnKind::LightweightGcn),
            "gcn" => Ok(GnnKind::Gcn),
            other => Err(Error::Config(format!("unknown gnn kind {other:?}"))),
        }
    }
}

/// Transformation matrices of an encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct GnnParams {
    kind: GnnKind,
    layers: usize,
    mats: Vec<Array2<f64>>,
    learnable: bool,
}

impl GnnParams {
    pub fn new(kind: GnnKind, layers: usize, mats: Vec<Array2<f64>>, learnable: bool) -> Result<Self> {
        if layers == 0 {
            return Err(Error::Config("an encoder needs at least one layer".into()));
        }
        match kind {
            GnnKind::LightweightGcn => {
                if mats.len() != 1 {
                    return Err(Error::Shape(format!(
                        "lightweight GCN takes one matrix, got {}",
                        mats.len()
                    )));
                }
                if mats[0].nrows() % (layers + 1) != 0 {
                    return Err(Error::Shape(format!(
                        "lightweight GCN matrix has {} rows, not a multiple of K+1 = {}",
                        mats[0].nrows(),
                        layers + 1
                    )));
                }
            }
            GnnKind::Gcn => {
                if mats.len() != layers {
                    return Err(Error::Shape(format!(
                        "GCN with {layers} layers needs {layers} matrices, got {}",
                        mats.len()
                    )));
                }
                for pair in mats.windows(2) {
                    if pair[0].ncols() != pair[1].nrows() {
                        return Err(Error::Shape(format!(
                            "layer shapes do not chain: {:?} then {:?}",
                            pair[0].dim(),
                            pair[1].dim()
                        )));
                    }
                }
            }
        }
        Ok(GnnParams {
            kind,
            layers,
            mats,
            learnable,
        })
    }

    /// Entries uniform on `[0, 1/sqrt(dim)]`, then projected to nonnegative
    /// unit-sum columns.
    pub fn random<R: Rng>(
        kind: GnnKind,
        d_in: usize,
        dim: usize,
        layers: usize,
        learnable: bool,
        rng: &mut R,
    ) -> Result<Self> {
        if dim == 0 || d_in == 0 {
            return Err(Error::Config("encoder dimensions must be positive".into()));
        }
        let scale = 1.0 / (dim as f64).sqrt();
        let mut draw = |rows: usize, cols: usize| {
            let mut w = Array2::from_shape_fn((rows, cols), |_| rng.gen::<f64>() * scale);
            project_columns(&mut w);
            w
        };
        let mats = match kind {
            GnnKind::LightweightGcn => vec![draw((layers + 1) * d_in, dim)],
            GnnKind::Gcn => (0..layers)
                .map(|k| draw(if k == 0 { d_in } else { dim }, dim))
                .collect(),
        };
        GnnParams::new(kind, layers, mats, learnable)
    }

    pub fn kind(&self) -> GnnKind {
        self.kind
    }

    pub fn layers(&self) -> usize {
        self.layers
    }

    pub fn mats(&self) -> &[Array2<f64>] {
        &self.mats
    }

    pub fn is_learnable(&self) -> bool {
        self.learnable
    }

    pub fn input_dim(&self) -> usize {
        match self.kind {
            GnnKind::LightweightGcn => self.mats[0].nrows() / (self.layers + 1),
            GnnKind::Gcn => self.mats[0].nrows(),
        }
    }

    pub fn output_dim(&self) -> usize {
        self.mats.last().map_or(0, |w| w.ncols())
    }

    pub(crate) fn mats_mut(&mut self) -> &mut [Array2<f64>] {
        &mut self.mats
    }

    /// ReLU followed by column normalization on every matrix.
    pub fn project(&mut self) {
        for w in &mut self.mats {
            project_columns(w);
        }
    }

    /// Every entry nonnegative and every column summing to 1 within `tol`.
    pub fn is_feasible(&self, tol: f64) -> bool {
        self.mats.iter().all(|w| {
            w.iter().all(|&v| v >= 0.0)
                && w.columns().into_iter().all(|c| (c.sum() - 1.0).abs() <= tol)
        })
    }

    pub fn num_parameters(&self) -> usize {
        self.mats.iter().map(|w| w.len()).sum()
    }
}

/// Projects a matrix onto nonnegative columns summing to one: ReLU, then
/// divide each column by its sum. A column with no positive entry becomes uniform.
pub fn project_columns(w: &mut Array2<f64>) {
    let rows = w.nrows();
    for mut col in w.columns_mut() {
        col.mapv_inplace(|v| if v > 0.0 { v } else { 0.0 });
        let s = col.sum();
        if s > 0.0 {
            col /= s;
        } else {
            col.fill(1.0 / rows as f64);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmbeddingSource {
    /// Encoder output with trained weights.
    Learnable,
    /// Encoder output with frozen random weights.
    ParameterFree,
    /// Propagation without any transformation.
    PropagationOnly,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    pub matrix: Array2<f64>,
    pub source: EmbeddingSource,
}

impl Embedding {
    pub fn new(matrix: Array2<f64>, source: EmbeddingSource) -> Self {
        Embedding { matrix, source }
    }

    pub fn n(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn dim(&self) -> usize {
        self.matrix.ncols()
    }
}

/// Runs the encoder on `g`.
pub fn feat_prop_trans(g: &Graph, params: &GnnParams) -> Result<Embedding> {
    let source = if params.learnable {
        EmbeddingSource::Learnable
    } else {
        EmbeddingSource::ParameterFree
    };
    Ok(Embedding::new(Forward::run(g, params)?.output, source))
}

/// `P^k X`: propagation alone, no transformation.
pub fn propagate_features(g: &Graph, k: usize) -> Embedding {
    let mut r = g.features().clone();
    for _ in 0..k {
        r = g.propagate(r.view());
    }
    Embedding::new(r, EmbeddingSource::PropagationOnly)
}

/// Encoder forward pass with the intermediates needed for backpropagation.
pub(crate) struct Forward {
    pub output: Array2<f64>,
    cache: Cache,
}

enum Cache {
    Stacked(Array2<f64>),
    Layers {
        /// `P Z(k-1)` for each layer.
        inputs: Vec<Array2<f64>>,
        /// `P Z(k-1) W(k)` before the activation.
        pre: Vec<Array2<f64>>,
    },
}

impl Forward {
    pub fn run(g: &Graph, params: &GnnParams) -> Result<Self> {
        let d_in = params.input_dim();
        if g.feature_dim() != d_in {
            return Err(Error::Shape(format!(
                "graph has {}-dimensional features but the encoder expects {d_in}",
                g.feature_dim()
            )));
        }
        let x = g.features();
        let fwd = match params.kind {
            GnnKind::LightweightGcn => {
                let mut blocks = vec![x.clone()];
                for _ in 0..params.layers {
                    let next = g.propagate(blocks.last().unwrap().view());
                    blocks.push(next);
                }
                let views: Vec<_> = blocks.iter().map(|b| b.view()).collect();
                let stacked = concatenate(Axis(1), &views).map_err(|e| Error::Shape(e.to_string()))?;
                let output = stacked.dot(&params.mats[0]);
                Forward {
                    output,
                    cache: Cache::Stacked(stacked),
                }
            }
            GnnKind::Gcn => {
                let mut inputs = Vec::with_capacity(params.layers);
                let mut pre = Vec::with_capacity(params.layers);
                let mut output = Array2::zeros((g.n(), params.output_dim()));
                let mut z = x.clone();
                for w in &params.mats {
                    let input = g.propagate(z.view());
                    let p = input.dot(w);
                    z = p.mapv(relu);
                    output += &z;
                    inputs.push(input);
                    pre.push(p);
                }
                Forward {
                    output,
                    cache: Cache::Layers { inputs, pre },
                }
            }
        };
        if fwd.output.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("encoder produced non-finite embeddings".into()));
        }
        Ok(fwd)
    }

    /// Gradients of a scalar loss with respect to each transformation matrix,
    /// given the gradient `d_out` with respect to the output embedding.
    pub fn backward(&self, g: &Graph, params: &GnnParams, d_out: &Array2<f64>) -> Vec<Array2<f64>> {
        match &self.cache {
            Cache::Stacked(stacked) => vec![stacked.t().dot(d_out)],
            Cache::Layers { inputs, pre } => {
                let k = params.mats.len();
                let mut grads = vec![Array2::zeros((0, 0)); k];
                let mut carry = d_out.clone();
                for layer in (0..k).rev() {
                    let mut d_pre = carry;
                    ndarray::Zip::from(&mut d_pre)
                        .and(&pre[layer])
                        .for_each(|d, &p| {
                            if p <= 0.0 {
                                *d = 0.0;
                            }
                        });
                    grads[layer] = inputs[layer].t().dot(&d_pre);
                    if layer > 0 {
                        let back = d_pre.dot(&params.mats[layer].t());
                        // P is symmetric, so P^T v = P v.
                        carry = g.propagate(back.view()) + d_out;
                    } else {
                        carry = Array2::zeros((0, 0));
                    }
                }
                grads
            }
        }
    }
}

fn relu(v: f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        0.0
    }
}

/// Settings for the parameter-free WL prior.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WlConfig {
    pub kind: GnnKind,
    pub layers: usize,
    pub dim: usize,
    pub seed: u64,
}

impl Default for WlConfig {
    fn default() -> Self {
        WlConfig {
            kind: GnnKind::Gcn,
            layers: 3,
            dim: 32,
            seed: 0,
        }
    }
}

/// Frozen random weights shared by both graphs of the WL prior.
pub fn wl_params(d_in: usize, cfg: &WlConfig) -> Result<GnnParams> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    GnnParams::random(cfg.kind, d_in, cfg.dim, cfg.layers, false, &mut rng)
}

/// Embedding-based alignment prior: `Norm(H_s H_t^T)` with frozen random encoders.
///
/// Falls back to the uniform matrix (with a warning) when no inner product is positive.
pub fn wl_alignment(gs: &Graph, gt: &Graph, cfg: &WlConfig) -> Result<AlignmentMatrix> {
    if gs.feature_dim() != gt.feature_dim() {
        return Err(Error::Shape(format!(
            "source features are {}-dimensional, target features {}-dimensional",
            gs.feature_dim(),
            gt.feature_dim()
        )));
    }
    let params = wl_params(gs.feature_dim(), cfg)?;
    let hs = feat_prop_trans(gs, &params)?;
    let ht = feat_prop_trans(gt, &params)?;
    let sim = hs.matrix.dot(&ht.matrix.t());
    Ok(AlignmentMatrix::from_similarity(&sim).unwrap_or_else(|| {
        warn!("WL similarity has no positive entry; using the uniform prior");
        AlignmentMatrix::uniform(gs.n(), gt.n())
    }))
}
