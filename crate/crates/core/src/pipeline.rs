//! End-to-end runners: alignment, synthetic data generation, gradient checks
//! and scoring of saved results.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::alignment::AlignmentMatrix;
use crate::combine::{combine, EnsembleMode, MatchSet, DEFAULT_TOP_R};
use crate::embed::{wl_alignment, GnnParams, WlConfig};
use crate::eval::{self, MetricsReport, DEFAULT_HITS_K};
use crate::graph::{Graph, GroundTruth};
use crate::gw::{
    analytic_gradients, finite_difference_gradients, graft, CostCoefficients, GradientDeviation,
    GraftOutput, GwConfig, GwParams,
};
use crate::io;
use crate::marginals::{MarginalMode, Marginals};
use crate::synth::{gen_synthetic_pair, random_graph, FeatureKind};
use crate::{Error, Result};

/// Largest graph accepted by the finite-difference gradient check.
pub const GRADCHECK_MAX_NODES: usize = 16;
/// Deviation above which a gradient check is reported as failed.
pub const GRADCHECK_FAIL_THRESHOLD: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub source_edges: Option<PathBuf>,
    pub source_feats: Option<PathBuf>,
    pub target_edges: Option<PathBuf>,
    pub target_feats: Option<PathBuf>,
    pub anchors: Option<PathBuf>,
    /// Encoder kind, width and depth are shared by the prior and the learner.
    pub gw: GwConfig,
    pub marginals: MarginalMode,
    pub top_r: usize,
    pub ensemble: EnsembleMode,
    pub combine: bool,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub dump_matrices: bool,
    pub trajectory: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            source_edges: None,
            source_feats: None,
            target_edges: None,
            target_feats: None,
            anchors: None,
            gw: GwConfig::default(),
            marginals: MarginalMode::Wl,
            top_r: DEFAULT_TOP_R,
            ensemble: EnsembleMode::Product,
            combine: true,
            seed: 0,
            out_dir: PathBuf::from("out"),
            dump_matrices: false,
            trajectory: false,
        }
    }
}

fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| Error::Config(format!("bad value {value:?} for {key}: {e}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::Config(format!("bad boolean {value:?} for {key}"))),
    }
}

impl PipelineConfig {
    /// Applies one `key = value` setting; keys are the long CLI flag names.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let path = || Some(PathBuf::from(value));
        match key {
            "source-edges" => self.source_edges = path(),
            "source-feats" => self.source_feats = path(),
            "target-edges" => self.target_edges = path(),
            "target-feats" => self.target_feats = path(),
            "anchors" => self.anchors = path(),
            "gnn" => self.gw.gnn = value.parse()?,
            "dim" => self.gw.dim = parse_value(key, value)?,
            "layers" => self.gw.layers = parse_value(key, value)?,
            "iters" => self.gw.iters = parse_value(key, value)?,
            "ot-iters" => self.gw.ot_iters = parse_value(key, value)?,
            "sinkhorn-iters" => self.gw.sinkhorn_iters = parse_value(key, value)?,
            "sinkhorn-tol" => self.gw.sinkhorn_tol = parse_value(key, value)?,
            "sinkhorn-max-iters" => self.gw.sinkhorn_max_iters = parse_value(key, value)?,
            "log-domain" => self.gw.log_domain = parse_bool(key, value)?,
            "tau-t" => self.gw.tau_t = parse_value(key, value)?,
            "tau-beta" => self.gw.tau_beta = parse_value(key, value)?,
            "tau-w" => self.gw.tau_w = parse_value(key, value)?,
            "cost-mode" => self.gw.cost_mode = value.parse()?,
            "grad-mode" => self.gw.grad_mode = value.parse()?,
            "marginals" => {
                self.marginals = value.parse()?;
                self.set_marginal_mode();
            }
            "top-r" => self.top_r = parse_value(key, value)?,
            "ensemble" => self.ensemble = value.parse()?,
            "no-combine" => self.combine = !parse_bool(key, value)?,
            "seed" => self.seed = parse_value(key, value)?,
            "out-dir" => self.out_dir = PathBuf::from(value),
            "dump-matrices" => self.dump_matrices = parse_bool(key, value)?,
            "trajectory" => self.trajectory = parse_bool(key, value)?,
            other => return Err(Error::Config(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    /// Parses a flat `key = value` file on top of the defaults. Blank lines
    /// and `#` comments are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = PipelineConfig::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", i + 1)))?;
            self.set(key.trim(), value.trim())
                .map_err(|e| Error::Config(format!("line {}: {e}", i + 1)))?;
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Serializes every setting; `parse(to_text())` reproduces the config.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let paths = [
            ("source-edges", &self.source_edges),
            ("source-feats", &self.source_feats),
            ("target-edges", &self.target_edges),
            ("target-feats", &self.target_feats),
            ("anchors", &self.anchors),
        ];
        for (k, p) in paths {
            if let Some(p) = p {
                let _ = writeln!(s, "{k} = {}", p.display());
            }
        }
        let g = &self.gw;
        let _ = writeln!(s, "gnn = {}", g.gnn);
        let _ = writeln!(s, "dim = {}", g.dim);
        let _ = writeln!(s, "layers = {}", g.layers);
        let _ = writeln!(s, "iters = {}", g.iters);
        let _ = writeln!(s, "ot-iters = {}", g.ot_iters);
        let _ = writeln!(s, "sinkhorn-iters = {}", g.sinkhorn_iters);
        let _ = writeln!(s, "sinkhorn-tol = {:?}", g.sinkhorn_tol);
        let _ = writeln!(s, "sinkhorn-max-iters = {}", g.sinkhorn_max_iters);
        let _ = writeln!(s, "log-domain = {}", g.log_domain);
        let _ = writeln!(s, "tau-t = {:?}", g.tau_t);
        let _ = writeln!(s, "tau-beta = {:?}", g.tau_beta);
        let _ = writeln!(s, "tau-w = {:?}", g.tau_w);
        let _ = writeln!(s, "cost-mode = {}", g.cost_mode);
        let _ = writeln!(s, "grad-mode = {}", g.grad_mode);
        let _ = writeln!(s, "marginals = {}", self.marginals);
        let _ = writeln!(s, "top-r = {}", self.top_r);
        let _ = writeln!(s, "ensemble = {}", self.ensemble);
        let _ = writeln!(s, "no-combine = {}", !self.combine);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "out-dir = {}", self.out_dir.display());
        let _ = writeln!(s, "dump-matrices = {}", self.dump_matrices);
        let _ = writeln!(s, "trajectory = {}", self.trajectory);
        s
    }

    pub fn validate(&self) -> Result<()> {
        self.gw.validate()?;
        if self.top_r == 0 {
            return Err(Error::Config("top-r must be at least 1".into()));
        }
        Ok(())
    }

    fn wl(&self) -> WlConfig {
        WlConfig {
            kind: self.gw.gnn,
            layers: self.gw.layers,
            dim: self.gw.dim,
            seed: self.seed,
        }
    }

    fn set_marginal_mode(&mut self) {
        self.gw.adaptive_marginals = self.marginals == MarginalMode::Adaptive;
    }
}

/// Final prediction of a run.
#[derive(Debug, Clone, PartialEq)]
pub enum Prediction {
    Matching(MatchSet),
    /// Row-argmax of the transport plan, used when combination is disabled.
    RowArgmax(Vec<Option<usize>>),
}

impl Prediction {
    pub fn pairs(&self) -> Vec<(usize, usize)> {
        match self {
            Prediction::Matching(m) => m.pairs().to_vec(),
            Prediction::RowArgmax(p) => p
                .iter()
                .enumerate()
                .filter_map(|(u, v)| v.map(|v| (u, v)))
                .collect(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Alignment {
    pub t_wl: AlignmentMatrix,
    pub graft: GraftOutput,
    pub prediction: Prediction,
    pub unmatched_sources: usize,
}

impl Alignment {
    pub fn t_gw(&self) -> &AlignmentMatrix {
        &self.graft.plan
    }

    /// Scores the final prediction and the ranking given by the plan.
    pub fn evaluate(&self, gt: &GroundTruth) -> Result<Evaluation> {
        let t_gw = self.t_gw();
        let prediction = match &self.prediction {
            Prediction::Matching(m) => MetricsReport::for_matching(m, t_gw.n1(), t_gw.n2(), gt)?,
            Prediction::RowArgmax(_) => {
                let mut r = MetricsReport::for_matrix(t_gw, gt, &[1])?;
                r.map_score = None;
                r
            }
        };
        let ranking = MetricsReport::for_matrix(t_gw, gt, &DEFAULT_HITS_K)?;
        Ok(Evaluation { prediction, ranking })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub prediction: MetricsReport,
    pub ranking: MetricsReport,
}

impl Evaluation {
    fn sections(&self) -> [(&str, &MetricsReport); 2] {
        [("prediction", &self.prediction), ("ranking", &self.ranking)]
    }

    pub fn key_values(&self) -> String {
        eval::format_key_values(&self.sections())
    }

    pub fn json_line(&self) -> String {
        eval::format_json_line(&self.sections())
    }
}

/// Runs prior, marginals, learner and combination on in-memory graphs.
pub fn align(gs: &Graph, gt: &Graph, cfg: &PipelineConfig) -> Result<Alignment> {
    let mut cfg = cfg.clone();
    cfg.set_marginal_mode();
    cfg.validate()?;
    let t_wl = wl_alignment(gs, gt, &cfg.wl())?;
    let marg = match cfg.marginals {
        MarginalMode::Wl => Marginals::from_alignment(&t_wl)?,
        MarginalMode::Uniform | MarginalMode::Adaptive => Marginals::uniform(gs.n(), gt.n())?,
    };
    let out = graft(gs, gt, &marg, &cfg.gw, cfg.seed)?;
    info!(
        "objective {:.6e} -> {:.6e}",
        out.trajectory.first().copied().unwrap_or(f64::NAN),
        out.trajectory.last().copied().unwrap_or(f64::NAN)
    );
    let (prediction, unmatched_sources) = if cfg.combine {
        let c = combine(&t_wl, &out.plan, cfg.top_r, cfg.ensemble)?;
        (Prediction::Matching(c.matches), c.unmatched_sources)
    } else {
        let p = eval::row_predictions(&out.plan);
        let missing = p.iter().filter(|v| v.is_none()).count();
        (Prediction::RowArgmax(p), missing)
    };
    if unmatched_sources > 0 {
        info!("{unmatched_sources} source nodes left without a prediction");
    }
    Ok(Alignment {
        t_wl,
        graft: out,
        prediction,
        unmatched_sources,
    })
}

fn required<'a>(p: &'a Option<PathBuf>, name: &str) -> Result<&'a Path> {
    p.as_deref()
        .ok_or_else(|| Error::Config(format!("missing required setting {name}")))
}

#[derive(Debug, Clone)]
pub struct AlignRun {
    pub alignment: Alignment,
    pub evaluation: Option<Evaluation>,
    pub written: Vec<PathBuf>,
}

/// Loads the inputs named in `cfg`, aligns, scores against the anchors when
/// given, and writes the outputs into `cfg.out_dir`. Nothing is written
/// unless every stage succeeds.
pub fn run_align(cfg: &PipelineConfig) -> Result<AlignRun> {
    cfg.validate_paths()?;
    let gs = io::load_graph(
        required(&cfg.source_edges, "source-edges")?,
        required(&cfg.source_feats, "source-feats")?,
    )?;
    let gt = io::load_graph(
        required(&cfg.target_edges, "target-edges")?,
        required(&cfg.target_feats, "target-feats")?,
    )?;
    let anchors = cfg.anchors.as_ref().map(io::read_anchors).transpose()?;
    info!("source: {} nodes, {} edges; target: {} nodes, {} edges", gs.n(), gs.num_edges(), gt.n(), gt.num_edges());

    let alignment = align(&gs, &gt, cfg)?;
    let evaluation = anchors.as_ref().map(|a| alignment.evaluate(a)).transpose()?;

    let mut files: Vec<(&str, String)> = vec![("matches.tsv", io::format_pairs(&alignment.prediction.pairs()))];
    if let Some(e) = &evaluation {
        files.push(("metrics.txt", e.key_values()));
        files.push(("metrics.json", e.json_line()));
    }
    if cfg.dump_matrices {
        files.push(("t_wl.txt", io::format_matrix(alignment.t_wl.values())));
        files.push(("t_gw.txt", io::format_matrix(alignment.t_gw().values())));
    }
    if cfg.trajectory {
        let mut s = String::new();
        for (i, v) in alignment.graft.trajectory.iter().enumerate() {
            let _ = writeln!(s, "{i}\t{v}");
        }
        files.push(("trajectory.tsv", s));
    }
    let written = write_all(&cfg.out_dir, &files)?;
    Ok(AlignRun {
        alignment,
        evaluation,
        written,
    })
}

impl PipelineConfig {
    fn validate_paths(&self) -> Result<()> {
        self.validate()?;
        for (name, p) in [
            ("source-edges", &self.source_edges),
            ("source-feats", &self.source_feats),
            ("target-edges", &self.target_edges),
            ("target-feats", &self.target_feats),
        ] {
            required(p, name)?;
        }
        Ok(())
    }
}

/// Writes every file to a temporary name first and renames them into place
/// once all writes succeeded.
fn write_all(dir: &Path, files: &[(&str, String)]) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut staged = Vec::with_capacity(files.len());
    for (name, contents) in files {
        let tmp = dir.join(format!(".{name}.tmp"));
        if let Err(e) = io::write_file(&tmp, contents) {
            for (t, _) in &staged {
                let _ = fs::remove_file(t);
            }
            return Err(e);
        }
        staged.push((tmp, dir.join(name)));
    }
    let mut written = Vec::with_capacity(staged.len());
    for (tmp, dst) in staged {
        fs::rename(&tmp, &dst).map_err(|e| Error::io(&dst, e))?;
        written.push(dst);
    }
    Ok(written)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenConfig {
    /// Base graph; a random graph with `nodes`/`edges` is generated when absent.
    pub base_edges: Option<PathBuf>,
    pub base_feats: Option<PathBuf>,
    pub nodes: usize,
    pub edges: usize,
    pub features: FeatureKind,
    pub p_edge: f64,
    pub p_feat: f64,
    pub seed: u64,
    pub out_dir: PathBuf,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            base_edges: None,
            base_feats: None,
            nodes: 100,
            edges: 300,
            features: FeatureKind::Gaussian(8),
            p_edge: 0.0,
            p_feat: 0.0,
            seed: 0,
            out_dir: PathBuf::from("data"),
        }
    }
}

pub const GEN_FILES: [&str; 5] = [
    "source.edges",
    "source.feats",
    "target.edges",
    "target.feats",
    "anchors.tsv",
];

/// Generates a perturbed, permuted copy of a base graph and writes both
/// graphs plus the ground-truth anchors into `cfg.out_dir`.
pub fn run_gen(cfg: &GenConfig) -> Result<Vec<PathBuf>> {
    let base = match (&cfg.base_edges, &cfg.base_feats) {
        (Some(e), Some(f)) => io::load_graph(e, f)?,
        (None, None) => random_graph(cfg.nodes, cfg.edges, cfg.features, cfg.seed)?,
        _ => {
            return Err(Error::Config(
                "a base graph needs both an edge file and a feature file".into(),
            ))
        }
    };
    let (src, dst, anchors) = gen_synthetic_pair(&base, cfg.p_edge, cfg.p_feat, cfg.seed)?;
    let contents = [
        io::format_pairs(src.edges()),
        io::format_matrix(src.features()),
        io::format_pairs(dst.edges()),
        io::format_matrix(dst.features()),
        io::format_pairs(anchors.pairs()),
    ];
    let files: Vec<(&str, String)> = GEN_FILES.iter().copied().zip(contents).collect();
    write_all(&cfg.out_dir, &files)
}

#[derive(Debug, Clone)]
pub struct GradcheckReport {
    pub deviation: GradientDeviation,
    pub objective: f64,
    pub num_parameters: usize,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.deviation.max() <= GRADCHECK_FAIL_THRESHOLD
    }
}

/// Compares analytic and central finite-difference gradients of the
/// objective at a random feasible point (parameters and plan drawn from `seed`).
pub fn run_gradcheck(gs: &Graph, gt: &Graph, gw: &GwConfig, seed: u64) -> Result<GradcheckReport> {
    for g in [gs, gt] {
        if g.n() > GRADCHECK_MAX_NODES {
            return Err(Error::TooLarge(format!(
                "gradient check needs graphs with at most {GRADCHECK_MAX_NODES} nodes, got {}",
                g.n()
            )));
        }
    }
    if gs.feature_dim() != gt.feature_dim() {
        return Err(Error::Shape(format!(
            "feature dimensions differ: {} vs {}",
            gs.feature_dim(),
            gt.feature_dim()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gnn = GnnParams::random(gw.gnn, gs.feature_dim(), gw.dim, gw.layers, true, &mut rng)?;
    let mut beta = CostCoefficients::uniform();
    for b in beta.beta_s.iter_mut().chain(beta.beta_t.iter_mut()) {
        *b = rng.gen_range(0.1..1.0);
    }
    beta.project();
    let params = GwParams { beta, gnn };
    let mut t = Array2::from_shape_simple_fn((gs.n(), gt.n()), || rng.gen_range(0.1..1.0));
    t /= t.sum();

    let (objective, analytic) = analytic_gradients(gs, gt, &t, &params)?;
    let reference = finite_difference_gradients(gs, gt, &t, &params)?;
    Ok(GradcheckReport {
        deviation: GradientDeviation::between(&analytic, &reference, objective),
        objective,
        num_parameters: params.gnn.num_parameters() + 6,
    })
}

/// Scores a saved alignment matrix against anchors.
pub fn evaluate_matrix(path: impl AsRef<Path>, anchors: &GroundTruth, ks: &[usize]) -> Result<MetricsReport> {
    let t = io::read_matrix(path)?;
    let t = AlignmentMatrix::new(t)?;
    MetricsReport::for_matrix(&t, anchors, ks)
}

/// Scores a saved match file against anchors. `n1`/`n2` default to the
/// largest ids seen in the file and the anchors.
pub fn evaluate_matches(path: impl AsRef<Path>, anchors: &GroundTruth) -> Result<MetricsReport> {
    let m = MatchSet::new(io::read_pairs_file(path)?)?;
    let extent = |f: fn(&(usize, usize)) -> usize| {
        m.pairs()
            .iter()
            .chain(anchors.pairs())
            .map(|p| f(p) + 1)
            .max()
            .unwrap_or(0)
    };
    MetricsReport::for_matching(&m, extent(|p| p.0), extent(|p| p.1), anchors)
}
