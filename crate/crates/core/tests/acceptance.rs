//! Acceptance criteria for the alignment pipeline. Runs without the libtest
//! harness and prints one PASS/FAIL line per criterion.

mod common;

use std::process::ExitCode;
use std::time::{Duration, Instant};

use align_core::combine::{combine, max_weight_matching, EnsembleMode, MatchSet, WeightedBipartite};
use align_core::embed::{wl_alignment, GnnKind, WlConfig};
use align_core::eval::{hits_at_k, match_hits, mutual_inconsistency_ratio, one_to_many_ratio, row_predictions};
use align_core::graph::{Graph, GroundTruth};
use align_core::gw::{graft, inter_cost, sinkhorn_proximal_step, CostMode, GwConfig, GRADIENT_TOLERANCE};
use align_core::marginals::{MarginalMode, Marginals};
use align_core::pipeline::{align, run_gradcheck, Alignment, PipelineConfig, Prediction};
use align_core::synth::{gen_synthetic_pair, random_graph, FeatureKind};
use align_core::AlignmentMatrix;
use ndarray::{Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{brute_force_matching, max_rel_err, quadruple_sum, random_plan, symmetric};

type Outcome = Result<String, String>;

/// Results shared between criteria so the expensive alignments run once.
#[derive(Default)]
struct Runs {
    matchings: Vec<(String, MatchSet, usize, usize)>,
    trajectories: Vec<(String, Vec<f64>)>,
}

impl Runs {
    fn record(&mut self, label: String, a: &Alignment) {
        if let Prediction::Matching(m) = &a.prediction {
            self.matchings
                .push((label.clone(), m.clone(), a.t_wl.n1(), a.t_wl.n2()));
        }
        self.trajectories.push((label, a.graft.trajectory.clone()));
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn inter_cost_oracle() -> Outcome {
    let mut r = rng(1);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let n1 = r.gen_range(2..=8);
        let n2 = r.gen_range(2..=8);
        let cs = symmetric(&mut r, n1);
        let ct = symmetric(&mut r, n2);
        let t = random_plan(&mut r, n1, n2);
        let fast = inter_cost(&cs, &ct, &t, None).map_err(|e| e.to_string())?;
        worst = worst.max(max_rel_err(&fast, &quadruple_sum(&cs, &ct, &t)));
    }
    let detail = format!("200 instances, max relative error {worst:.2e}");
    if worst <= 1e-8 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn sinkhorn_feasibility() -> Outcome {
    let mut r = rng(2);
    let mut worst: f64 = 0.0;
    for case in 0..100 {
        let n1 = r.gen_range(1..=50);
        let n2 = r.gen_range(1..=50);
        let tau_t = [0.05, 0.1, 0.5][case % 3];
        let scale = [1.0, 0.1, 5.0][(case / 3) % 3];
        let c = Array2::from_shape_simple_fn((n1, n2), || scale * r.gen::<f64>());
        let t_prev = AlignmentMatrix::new(random_plan(&mut r, n1, n2)).map_err(|e| e.to_string())?;
        let mu = Array1::from_shape_simple_fn(n1, || r.gen_range(0.1..1.0));
        let nu = Array1::from_shape_simple_fn(n2, || r.gen_range(0.1..1.0));
        let marg = Marginals::new(&mu / mu.sum(), &nu / nu.sum()).map_err(|e| e.to_string())?;
        let cfg = GwConfig {
            tau_t,
            log_domain: case % 2 == 1,
            ..GwConfig::default()
        };
        let t = sinkhorn_proximal_step(&c, &t_prev, &marg, &cfg).map_err(|e| e.to_string())?;
        let rows = t.sum_axis(Axis(1));
        let cols = t.sum_axis(Axis(0));
        for (a, b) in rows.iter().zip(&marg.mu).chain(cols.iter().zip(&marg.nu)) {
            worst = worst.max((a - b).abs());
        }
        if t.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(format!("instance {case}: plan has invalid entries"));
        }
    }
    let detail = format!("100 instances, max marginal violation {worst:.2e}");
    if worst <= 1e-6 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn gradient_correctness() -> Outcome {
    let mut r = rng(3);
    let mut worst: f64 = 0.0;
    for case in 0..20 {
        let gnn = if case % 2 == 0 { GnnKind::Gcn } else { GnnKind::LightweightGcn };
        let n1 = r.gen_range(2..=8);
        let n2 = r.gen_range(2..=8);
        let d_in = r.gen_range(1..=4);
        let m1 = r.gen_range(1..=n1 * (n1 - 1) / 2);
        let m2 = r.gen_range(1..=n2 * (n2 - 1) / 2);
        let gs = random_graph(n1, m1, FeatureKind::Gaussian(d_in), r.gen()).map_err(|e| e.to_string())?;
        let gt = random_graph(n2, m2, FeatureKind::Gaussian(d_in), r.gen()).map_err(|e| e.to_string())?;
        let cfg = GwConfig {
            gnn,
            dim: r.gen_range(1..=4),
            layers: r.gen_range(1..=3),
            ..GwConfig::default()
        };
        let report = run_gradcheck(&gs, &gt, &cfg, r.gen()).map_err(|e| e.to_string())?;
        worst = worst.max(report.deviation.max());
    }
    let detail = format!("20 instances, both encoders, max relative deviation {worst:.2e}");
    if worst <= GRADIENT_TOLERANCE {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn matching_optimality() -> Outcome {
    let mut r = rng(4);
    let mut worst: f64 = 0.0;
    for case in 0..100 {
        let n1 = r.gen_range(1..=7);
        let n2 = r.gen_range(1..=7);
        // Small integer weights force many exact ties; the rest are continuous.
        let ties = case % 2 == 0;
        let w = Array2::from_shape_simple_fn((n1, n2), || {
            if ties {
                r.gen_range(0..4) as f64
            } else {
                r.gen::<f64>()
            }
        });
        let edges = (0..n1)
            .flat_map(|i| (0..n2).map(move |k| (i, k)))
            .map(|(i, k)| (i, k, w[[i, k]]))
            .collect();
        let m = max_weight_matching(&WeightedBipartite { n1, n2, edges }).map_err(|e| e.to_string())?;
        let dense: Vec<Vec<Option<f64>>> = w.rows().into_iter().map(|row| row.iter().map(|&v| Some(v)).collect()).collect();
        let best = brute_force_matching(&dense, n2);
        let got = m.total_weight(&w);
        if ties && got != best {
            return Err(format!("instance {case}: matching weight {got} but optimum is {best}"));
        }
        worst = worst.max((got - best).abs());
    }
    let detail = format!("100 instances, max gap to exhaustive optimum {worst:.2e}");
    if worst <= 1e-12 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn is_one_to_one(m: &MatchSet) -> bool {
    let mut src: Vec<_> = m.pairs().iter().map(|p| p.0).collect();
    let mut dst: Vec<_> = m.pairs().iter().map(|p| p.1).collect();
    src.sort_unstable();
    dst.sort_unstable();
    src.windows(2).all(|w| w[0] != w[1]) && dst.windows(2).all(|w| w[0] != w[1])
}

fn matching_properties(runs: &Runs) -> Outcome {
    // Two sources share their preferred target.
    let t_gw = AlignmentMatrix::new(
        ndarray::array![[0.20, 0.08, 0.05], [0.18, 0.12, 0.03], [0.02, 0.05, 0.27]],
    )
    .map_err(|e| e.to_string())?;
    let t_wl = AlignmentMatrix::uniform(3, 3);
    let raw = one_to_many_ratio(&row_predictions(t_gw.values()), None);
    let fixture = combine(&t_wl, &t_gw, 3, EnsembleMode::Product).map_err(|e| e.to_string())?;

    let mut all: Vec<(String, MatchSet, usize, usize)> = runs.matchings.clone();
    all.push(("fixture".into(), fixture.matches.clone(), 3, 3));
    let mut r = rng(5);
    for case in 0..50 {
        let n1 = r.gen_range(2..=30);
        let n2 = r.gen_range(2..=30);
        let t = AlignmentMatrix::new(random_plan(&mut r, n1, n2)).map_err(|e| e.to_string())?;
        let wl = AlignmentMatrix::new(random_plan(&mut r, n1, n2)).map_err(|e| e.to_string())?;
        let c = combine(&wl, &t, r.gen_range(1..=5), EnsembleMode::Average).map_err(|e| e.to_string())?;
        all.push((format!("random {case}"), c.matches, n1, n2));
    }
    for (label, m, n1, n2) in &all {
        if !is_one_to_one(m) {
            return Err(format!("{label}: matching reuses a node"));
        }
        let mi = mutual_inconsistency_ratio(&m.indicator(*n1, *n2), None);
        if mi != 0.0 {
            return Err(format!("{label}: mutual inconsistency {mi}"));
        }
        let otm = one_to_many_ratio(&m.predictions(*n1), None);
        if otm != 0.0 {
            return Err(format!("{label}: one-to-many ratio {otm}"));
        }
    }
    let detail = format!(
        "{} matchings one-to-one and mutually consistent; row-argmax one-to-many on fixture {raw:.3}",
        all.len()
    );
    if raw > 0.0 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn synthetic_pair(n: usize, features: FeatureKind, p_edge: f64, seed: u64) -> (Graph, Graph, GroundTruth) {
    let g = random_graph(n, 2 * n, features, seed).expect("valid graph size");
    gen_synthetic_pair(&g, p_edge, 0.0, seed + 1000).expect("valid noise level")
}

fn prediction_hits(a: &Alignment, truth: &GroundTruth) -> f64 {
    match &a.prediction {
        Prediction::Matching(m) => match_hits(m, truth).expect("anchors in range"),
        Prediction::RowArgmax(_) => hits_at_k(a.graft.plan.values(), truth, 1).expect("anchors in range"),
    }
}

fn self_alignment(runs: &mut Runs, timing: &mut String) -> Outcome {
    let cfg = PipelineConfig::default();
    let mut lines = Vec::new();
    let mut ok = true;
    let cases = [
        (50, FeatureKind::Gaussian(16)),
        (50, FeatureKind::OneHot),
        (200, FeatureKind::Gaussian(16)),
    ];
    for (n, features) in cases {
        let (gs, gt, truth) = synthetic_pair(n, features, 0.0, 11);
        let start = Instant::now();
        let a = align(&gs, &gt, &cfg).map_err(|e| e.to_string())?;
        let elapsed = start.elapsed();
        let hits = prediction_hits(&a, &truth);
        let name = match features {
            FeatureKind::OneHot => "one-hot",
            _ => "gaussian",
        };
        if n == 200 {
            *timing = format!("{elapsed:.1?} at n=200");
            if elapsed > Duration::from_secs(120) {
                ok = false;
            }
        }
        ok &= hits == 1.0;
        lines.push(format!("n={n} {name} Hits@1 {hits:.3}"));
        runs.record(format!("self n={n} {name}"), &a);
    }
    let detail = format!("{}; {timing}", lines.join(", "));
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn noise_robustness(runs: &mut Runs) -> Outcome {
    const SLACK: f64 = 0.02;
    let levels = [0.0, 0.05, 0.1];
    let seeds = 0..5u64;
    let cfg = PipelineConfig::default();
    let mut full = Vec::new();
    let mut plain = Vec::new();
    for &p in &levels {
        let (mut f, mut g) = (0.0, 0.0);
        for seed in seeds.clone() {
            let (gs, gt, truth) = synthetic_pair(200, FeatureKind::Gaussian(16), p, 100 + seed);
            let a = align(&gs, &gt, &cfg).map_err(|e| e.to_string())?;
            f += prediction_hits(&a, &truth);
            g += hits_at_k(a.graft.plan.values(), &truth, 1).map_err(|e| e.to_string())?;
            runs.record(format!("noise p={p} seed={seed}"), &a);
        }
        full.push(f / seeds.clone().count() as f64);
        plain.push(g / seeds.clone().count() as f64);
    }
    let monotone = full.windows(2).all(|w| w[1] <= w[0] + SLACK);
    let ablation = full.iter().zip(&plain).all(|(f, g)| *f + SLACK >= *g);
    let detail = levels
        .iter()
        .zip(full.iter().zip(&plain))
        .map(|(p, (f, g))| format!("p={p}: full {f:.3} / no-combine {g:.3}"))
        .collect::<Vec<_>>()
        .join(", ");
    if monotone && ablation {
        Ok(detail)
    } else {
        Err(detail)
    }
}

/// Target: hub 0 with two non-adjacent twins 1 and 2 that share the same
/// neighbourhood, plus a tail that breaks every other symmetry. The twins
/// carry different one-hot features.
fn twin_graph() -> Graph {
    let edges = [(0, 1), (0, 2), (1, 3), (2, 3), (0, 4), (4, 5), (5, 6)];
    Graph::featureless(7, edges)
        .expect("valid edges")
        .with_one_hot_features()
}

fn twin_nodes() -> Outcome {
    let (k, k2) = (1, 2);
    let gt = twin_graph();
    let perm = [3, 6, 0, 5, 1, 4, 2];
    let gs = gt.permuted(&perm).map_err(|e| e.to_string())?;
    let cfg = GwConfig {
        cost_mode: CostMode::AdjacencySparse,
        iters: 1,
        ot_iters: 1,
        ..GwConfig::default()
    };

    let uniform = Marginals::uniform(gs.n(), gt.n()).map_err(|e| e.to_string())?;
    let out = graft(&gs, &gt, &uniform, &cfg, 0).map_err(|e| e.to_string())?;
    let c = &out.first_cost;
    let tie = (0..gs.n())
        .map(|i| (c[[i, k]] - c[[i, k2]]).abs())
        .fold(0.0, f64::max);

    let t_wl = wl_alignment(&gs, &gt, &WlConfig::default()).map_err(|e| e.to_string())?;
    let wl = Marginals::from_alignment(&t_wl).map_err(|e| e.to_string())?;
    let nu_gap = (wl.nu[k] - wl.nu[k2]).abs();
    let out = graft(&gs, &gt, &wl, &cfg, 0).map_err(|e| e.to_string())?;
    let t = out.plan.values();
    let split = (0..gs.n())
        .map(|i| (t[[i, k]] - t[[i, k2]]).abs())
        .fold(f64::INFINITY, f64::min);

    let detail = format!(
        "uniform: max column gap {tie:.1e}; wl: marginal gap {nu_gap:.2e}, min |T(i,k)-T(i,k')| {split:.2e}"
    );
    if tie <= 1e-9 && nu_gap > 0.0 && split > 0.0 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn objective_descent(runs: &mut Runs) -> Outcome {
    // A few small runs covering the other encoder and marginal modes.
    for (case, (gnn, marginals)) in [
        (GnnKind::Gcn, MarginalMode::Uniform),
        (GnnKind::LightweightGcn, MarginalMode::Wl),
        (GnnKind::LightweightGcn, MarginalMode::Uniform),
    ]
    .into_iter()
    .enumerate()
    {
        let (gs, gt, _) = synthetic_pair(60, FeatureKind::Uniform(8), 0.05, 300 + case as u64);
        let mut cfg = PipelineConfig::default();
        cfg.gw.gnn = gnn;
        cfg.marginals = marginals;
        let a = align(&gs, &gt, &cfg).map_err(|e| e.to_string())?;
        runs.record(format!("descent {gnn} {marginals}"), &a);
    }
    let mut worst: f64 = f64::NEG_INFINITY;
    let mut worst_label = String::new();
    for (label, tr) in &runs.trajectories {
        for w in tr.windows(2) {
            if w[1] - w[0] > worst {
                worst = w[1] - w[0];
                worst_label = label.clone();
            }
        }
    }
    let detail = format!(
        "{} trajectories, largest per-iteration change {worst:.2e} ({worst_label})",
        runs.trajectories.len()
    );
    if worst <= 1e-6 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn main() -> ExitCode {
    let mut runs = Runs::default();
    let mut failures = 0;
    let mut report = |id: usize, name: &str, limit: Option<Duration>, f: &mut dyn FnMut() -> Outcome| {
        let start = Instant::now();
        let outcome = f();
        let elapsed = start.elapsed();
        let over = limit.is_some_and(|l| elapsed > l);
        let (status, detail) = match outcome {
            Ok(d) if !over => ("PASS", d),
            Ok(d) => ("FAIL", format!("{d}; over the {:?} limit", limit.unwrap_or_default())),
            Err(d) => ("FAIL", d),
        };
        if status == "FAIL" {
            failures += 1;
        }
        println!("{status} criterion {id} {name}: {detail} [{elapsed:.2?}]");
    };

    let secs = |s| Some(Duration::from_secs(s));
    report(1, "inter-cost oracle", secs(10), &mut inter_cost_oracle);
    report(2, "sinkhorn feasibility", secs(30), &mut sinkhorn_feasibility);
    report(3, "gradient correctness", secs(60), &mut gradient_correctness);
    report(4, "matching optimality", secs(30), &mut matching_optimality);
    let mut timing = String::new();
    report(6, "self-alignment", None, &mut || self_alignment(&mut runs, &mut timing));
    report(7, "noise robustness", None, &mut || noise_robustness(&mut runs));
    report(5, "matching properties", None, &mut || matching_properties(&runs));
    report(8, "twin nodes", None, &mut twin_nodes);
    report(9, "objective descent", None, &mut || objective_descent(&mut runs));

    if failures == 0 {
        println!("acceptance: all criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: {failures} criteria failed");
        ExitCode::FAILURE
    }
}
