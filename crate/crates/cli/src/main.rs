use std::path::PathBuf;
use std::process::ExitCode;

use align_core::combine::EnsembleMode;
use align_core::embed::GnnKind;
use align_core::eval::{self, MetricsReport, DEFAULT_HITS_K};
use align_core::gw::GwConfig;
use align_core::io;
use align_core::marginals::MarginalMode;
use align_core::pipeline::{self, GenConfig, PipelineConfig, GRADCHECK_FAIL_THRESHOLD};
use align_core::synth::{random_graph, FeatureKind};
use align_core::AlignmentMatrix;
use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

#[derive(Parser)]
#[command(name = "galign", version, about = "Unsupervised attributed graph alignment")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Align two graphs and write matches (plus metrics when anchors are given).
    Align(AlignArgs),
    /// Generate a permuted, perturbed copy of a graph with ground-truth anchors.
    Gen(GenArgs),
    /// Compare analytic and finite-difference gradients on a tiny instance.
    Gradcheck(GradcheckArgs),
    /// Score a saved alignment matrix or match file against anchors.
    Eval(EvalArgs),
}

#[derive(Args)]
struct AlignArgs {
    /// Flat `key = value` file; flags given on the command line take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    source_edges: Option<PathBuf>,
    #[arg(long)]
    source_feats: Option<PathBuf>,
    #[arg(long)]
    target_edges: Option<PathBuf>,
    #[arg(long)]
    target_feats: Option<PathBuf>,
    #[arg(long)]
    anchors: Option<PathBuf>,
    #[arg(long)]
    gnn: Option<Gnn>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    ot_iters: Option<usize>,
    #[arg(long)]
    sinkhorn_iters: Option<usize>,
    #[arg(long)]
    tau_t: Option<f64>,
    #[arg(long)]
    tau_beta: Option<f64>,
    #[arg(long)]
    tau_w: Option<f64>,
    #[arg(long)]
    marginals: Option<Marginal>,
    #[arg(long)]
    top_r: Option<usize>,
    #[arg(long)]
    ensemble: Option<Ensemble>,
    /// Predict by row-argmax of the transport plan instead of matching.
    #[arg(long)]
    no_combine: bool,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Also write t_wl.txt and t_gw.txt.
    #[arg(long)]
    dump_matrices: bool,
    /// Also write trajectory.tsv.
    #[arg(long)]
    trajectory: bool,
    /// Solve the transport subproblems in the log domain.
    #[arg(long)]
    log_domain: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Gnn {
    Lgcn,
    Gcn,
}

impl From<Gnn> for GnnKind {
    fn from(g: Gnn) -> Self {
        match g {
            Gnn::Lgcn => GnnKind::LightweightGcn,
            Gnn::Gcn => GnnKind::Gcn,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Marginal {
    Uniform,
    Wl,
    Adaptive,
}

impl From<Marginal> for MarginalMode {
    fn from(m: Marginal) -> Self {
        match m {
            Marginal::Uniform => MarginalMode::Uniform,
            Marginal::Wl => MarginalMode::Wl,
            Marginal::Adaptive => MarginalMode::Adaptive,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Ensemble {
    Product,
    Average,
}

impl From<Ensemble> for EnsembleMode {
    fn from(e: Ensemble) -> Self {
        match e {
            Ensemble::Product => EnsembleMode::Product,
            Ensemble::Average => EnsembleMode::Average,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Features {
    Onehot,
    Gaussian,
    Uniform,
}

#[derive(Args)]
struct GenArgs {
    /// Base graph edges; a random graph is generated when omitted.
    #[arg(long, requires = "base_feats")]
    base_edges: Option<PathBuf>,
    #[arg(long, requires = "base_edges")]
    base_feats: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    nodes: usize,
    #[arg(long, default_value_t = 300)]
    edges: usize,
    #[arg(long, value_enum, default_value = "gaussian")]
    features: Features,
    #[arg(long, default_value_t = 8)]
    feature_dim: usize,
    /// Probability of rewiring each edge.
    #[arg(long, default_value_t = 0.0)]
    p_edge: f64,
    /// Probability of resampling each feature entry.
    #[arg(long, default_value_t = 0.0)]
    p_feat: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "data")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, requires_all = ["source_feats", "target_edges", "target_feats"])]
    source_edges: Option<PathBuf>,
    #[arg(long)]
    source_feats: Option<PathBuf>,
    #[arg(long)]
    target_edges: Option<PathBuf>,
    #[arg(long)]
    target_feats: Option<PathBuf>,
    /// Size of the random graphs used when no files are given.
    #[arg(long, default_value_t = 8)]
    nodes: usize,
    #[arg(long, value_enum, default_value = "gcn")]
    gnn: Gnn,
    #[arg(long, default_value_t = 4)]
    dim: usize,
    #[arg(long, default_value_t = 2)]
    layers: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    anchors: PathBuf,
    /// Dense alignment matrix file.
    #[arg(long, conflicts_with = "matches", required_unless_present = "matches")]
    matrix: Option<PathBuf>,
    /// Match file with one `src<TAB>dst` pair per line.
    #[arg(long)]
    matches: Option<PathBuf>,
    /// Resolve colliding row-argmax predictions before scoring (matrix input only).
    #[arg(long, requires = "matrix")]
    constrained: bool,
    /// Print the single-line JSON record instead of key = value lines.
    #[arg(long)]
    json: bool,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Align(a) => align(a),
        Command::Gen(a) => gen(a),
        Command::Gradcheck(a) => gradcheck(a),
        Command::Eval(a) => evaluate(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn align_config(a: &AlignArgs) -> Result<PipelineConfig> {
    let mut cfg = match &a.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    let paths = [
        (&a.source_edges, &mut cfg.source_edges),
        (&a.source_feats, &mut cfg.source_feats),
        (&a.target_edges, &mut cfg.target_edges),
        (&a.target_feats, &mut cfg.target_feats),
        (&a.anchors, &mut cfg.anchors),
    ];
    for (flag, slot) in paths {
        if flag.is_some() {
            *slot = flag.clone();
        }
    }
    let gw = &mut cfg.gw;
    if let Some(v) = a.gnn {
        gw.gnn = v.into();
    }
    if let Some(v) = a.dim {
        gw.dim = v;
    }
    if let Some(v) = a.layers {
        gw.layers = v;
    }
    if let Some(v) = a.iters {
        gw.iters = v;
    }
    if let Some(v) = a.ot_iters {
        gw.ot_iters = v;
    }
    if let Some(v) = a.sinkhorn_iters {
        gw.sinkhorn_iters = v;
    }
    if let Some(v) = a.tau_t {
        gw.tau_t = v;
    }
    if let Some(v) = a.tau_beta {
        gw.tau_beta = v;
    }
    if let Some(v) = a.tau_w {
        gw.tau_w = v;
    }
    if a.log_domain {
        gw.log_domain = true;
    }
    if let Some(v) = a.marginals {
        cfg.set("marginals", &MarginalMode::from(v).to_string())?;
    }
    if let Some(v) = a.top_r {
        cfg.top_r = v;
    }
    if let Some(v) = a.ensemble {
        cfg.ensemble = v.into();
    }
    if a.no_combine {
        cfg.combine = false;
    }
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if let Some(v) = &a.out_dir {
        cfg.out_dir = v.clone();
    }
    if a.dump_matrices {
        cfg.dump_matrices = true;
    }
    if a.trajectory {
        cfg.trajectory = true;
    }
    Ok(cfg)
}

fn align(a: AlignArgs) -> Result<ExitCode> {
    let cfg = align_config(&a)?;
    let run = pipeline::run_align(&cfg)?;
    if run.alignment.unmatched_sources > 0 {
        eprintln!("{} source nodes left unmatched", run.alignment.unmatched_sources);
    }
    if let Some(e) = &run.evaluation {
        print!("{}", e.key_values());
    }
    for p in &run.written {
        info!("wrote {}", p.display());
    }
    Ok(ExitCode::SUCCESS)
}

fn gen(a: GenArgs) -> Result<ExitCode> {
    let features = match a.features {
        Features::Onehot => FeatureKind::OneHot,
        Features::Gaussian => FeatureKind::Gaussian(a.feature_dim),
        Features::Uniform => FeatureKind::Uniform(a.feature_dim),
    };
    let cfg = GenConfig {
        base_edges: a.base_edges,
        base_feats: a.base_feats,
        nodes: a.nodes,
        edges: a.edges,
        features,
        p_edge: a.p_edge,
        p_feat: a.p_feat,
        seed: a.seed,
        out_dir: a.out_dir,
    };
    for p in pipeline::run_gen(&cfg)? {
        println!("{}", p.display());
    }
    Ok(ExitCode::SUCCESS)
}

fn gradcheck(a: GradcheckArgs) -> Result<ExitCode> {
    let (gs, gt) = match (&a.source_edges, &a.source_feats, &a.target_edges, &a.target_feats) {
        (Some(se), Some(sf), Some(te), Some(tf)) => (io::load_graph(se, sf)?, io::load_graph(te, tf)?),
        (None, None, None, None) => {
            let m = a.nodes.saturating_mul(3) / 2;
            let features = FeatureKind::Gaussian(3);
            (
                random_graph(a.nodes, m, features, a.seed)?,
                random_graph(a.nodes, m, features, a.seed.wrapping_add(1))?,
            )
        }
        _ => bail!("give all four graph files or none"),
    };
    let gw = GwConfig {
        gnn: a.gnn.into(),
        dim: a.dim,
        layers: a.layers,
        ..GwConfig::default()
    };
    let report = pipeline::run_gradcheck(&gs, &gt, &gw, a.seed)?;
    println!("parameters = {}", report.num_parameters);
    println!("objective = {}", report.objective);
    println!("beta_deviation = {:e}", report.deviation.beta);
    println!("weight_deviation = {:e}", report.deviation.weights);
    println!("max_deviation = {:e}", report.deviation.max());
    if report.passed() {
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!(
            "gradient check failed: deviation {:e} exceeds {GRADCHECK_FAIL_THRESHOLD:e}",
            report.deviation.max()
        );
        Ok(ExitCode::FAILURE)
    }
}

fn evaluate(a: EvalArgs) -> Result<ExitCode> {
    let anchors = io::read_anchors(&a.anchors)?;
    let report: MetricsReport = match (&a.matrix, &a.matches) {
        (Some(path), _) if a.constrained => {
            let t = AlignmentMatrix::new(io::read_matrix(path)?)
                .with_context(|| format!("reading {}", path.display()))?;
            let m = eval::constrained_predictions(&t);
            MetricsReport::for_matching(&m, t.n1(), t.n2(), &anchors)?
        }
        (Some(path), _) => pipeline::evaluate_matrix(path, &anchors, &DEFAULT_HITS_K)?,
        (None, Some(path)) => pipeline::evaluate_matches(path, &anchors)?,
        (None, None) => bail!("give --matrix or --matches"),
    };
    let sections = [("", &report)];
    if a.json {
        print!("{}", eval::format_json_line(&sections));
    } else {
        print!("{}", eval::format_key_values(&sections));
    }
    Ok(ExitCode::SUCCESS)
}
