//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any criterion fails.
//!
//! Set `GDAMN_CORA_MANIFEST` to a dataset manifest to include the Cora check.

mod common;

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use common::*;
use gdamn::attention::{
    fuse_stable, gumbel_noise, gumbel_sample_structure, gumbel_sample_var, hard_attention_probs,
    kl_bernoulli, soft_attention, structure_prior, LabelState,
};
use gdamn::config::{Hyperparams, RunConfig};
use gdamn::em::{p_loss, q_loss, QObjective, Trainer};
use gdamn::experiments::*;
use gdamn::graph::{laplacian_weights, Graph};
use gdamn::io::{load_citation, read_results, DatasetManifest, ExpectedStats};
use gdamn::models::{PNetwork, PVariant, QNetwork, SampleMode};
use gdamn::seed::stream_rng;
use gdamn::tensor::{Matrix, ParamStore, Tape};
use rand::Rng;

struct Outcome {
    pass: Option<bool>,
    detail: String,
}

impl Outcome {
    fn gate(pass: bool, detail: String) -> Self {
        Self {
            pass: Some(pass),
            detail,
        }
    }

    fn skip(detail: String) -> Self {
        Self { pass: None, detail }
    }
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir()
        .join(format!("gdamn-acceptance-{}", std::process::id()))
        .join(name);
    let _ = std::fs::remove_dir_all(&dir);
    dir
}

fn default_spec(command: &str, method: &str, seeds: u64) -> ExperimentSpec {
    let mut cfg = RunConfig::default();
    cfg.method = method.into();
    ExperimentSpec::synthetic(
        command,
        cfg,
        (0..seeds).collect(),
        scratch(&format!("{command}-{method}")),
    )
}

fn within(a: f64, n: f64) -> bool {
    (a - n).abs() <= 1e-4 * a.abs().max(n.abs()).max(1e-4)
}

/// Compares reverse-mode gradients of `loss(store)` against central
/// differences for every entry of every parameter. Returns the worst
/// violation ratio (≤ 1 passes).
fn gradcheck(store: &ParamStore, loss: &dyn Fn(&ParamStore, bool) -> (f64, Vec<Matrix>)) -> f64 {
    let h = 1e-6;
    let (_, grads) = loss(store, true);
    let mut worst: f64 = 0.0;
    for (id, p) in store.iter() {
        for idx in 0..p.value.len() {
            let (r, c) = (idx / p.value.ncols(), idx % p.value.ncols());
            let mut plus = store.clone();
            plus.get_mut(id)[[r, c]] += h;
            let mut minus = store.clone();
            minus.get_mut(id)[[r, c]] -= h;
            let numeric = (loss(&plus, false).0 - loss(&minus, false).0) / (2.0 * h);
            let analytic = grads[id.0][[r, c]];
            let scale = 1e-4 * analytic.abs().max(numeric.abs()).max(1e-4);
            worst = worst.max((analytic - numeric).abs() / scale);
            if !within(analytic, numeric) {
                eprintln!(
                    "  {}[{r},{c}]: analytic {analytic:e} vs numeric {numeric:e}",
                    p.name
                );
            }
        }
    }
    worst
}

fn criterion_gradients() -> Outcome {
    let (mut worst_m, mut worst_e) = (0.0f64, 0.0f64);
    let mut checked = 0;
    for case in 0..100u64 {
        let mut rng = stream_rng(case, 40);
        let n = rng.random_range(6..=10);
        let (c, d) = (3, 4);
        let g = random_graph(&mut rng, n, c, d, 0.4);
        let labels =
            LabelState::from_predictions(&g, random_distributions(&mut rng, n, c)).unwrap();
        let prior = structure_prior(&g, &labels);

        let mut p = PNetwork::new(&mut rng, c, d, &[4], 0.0, 0.0, 0.8, PVariant::default());
        *p.store.get_mut(p.metric) = Matrix::from_shape_fn((c, c), |_| rng.random_range(-2.0..2.0));
        *p.store.get_mut(p.scale) =
            Matrix::from_shape_fn((1, p.store.get(p.scale).ncols()), |_| {
                rng.random_range(0.5..1.5)
            });
        let m_loss = |store: &ParamStore, want_grads: bool| {
            let mut tape = Tape::new();
            let bound = if want_grads {
                store.bind(&mut tape)
            } else {
                store.bind_frozen(&mut tape)
            };
            let out = p
                .forward(
                    &mut tape,
                    &bound,
                    &g,
                    &labels,
                    false,
                    SampleMode::Relaxed,
                    &mut stream_rng(case, 41),
                )
                .unwrap();
            let terms = p_loss(&mut tape, &out, &labels, &prior, 0.4).unwrap();
            let value = tape.item(terms.total);
            let grads = if want_grads {
                let mut grads = tape.backward(terms.total).unwrap();
                store.collect_grads(&bound, &mut grads)
            } else {
                Vec::new()
            };
            (value, grads)
        };
        worst_m = worst_m.max(gradcheck(&p.store, &m_loss));

        let q = QNetwork::new(&mut rng, d, &[4], c, 0.0);
        let targets = random_distributions(&mut rng, n, c);
        let ones = vec![1.0; g.adjacency().n_messages()];
        let proj = Matrix::from_shape_fn((d, d), |_| rng.random_range(-1.0..1.0));
        let soft = soft_attention(&g, &ones, &proj, &Matrix::ones((1, d)), 0.0, 0).unwrap();
        let hard = hard_attention_probs(&g, &labels, &Matrix::eye(c)).unwrap();
        let weights = fuse_stable(g.adjacency(), &hard, &soft);
        let e_loss = |store: &ParamStore, want_grads: bool| {
            let mut tape = Tape::new();
            let bound = if want_grads {
                store.bind(&mut tape)
            } else {
                store.bind_frozen(&mut tape)
            };
            let logits = q
                .forward(
                    &mut tape,
                    &bound,
                    &g,
                    &weights,
                    false,
                    &mut stream_rng(0, 0),
                )
                .unwrap();
            let obj = QObjective {
                gamma: 0.5,
                targets: Some((&targets, 0.8)),
            };
            let loss = q_loss(&mut tape, logits, &g, obj).unwrap();
            let value = tape.item(loss);
            let grads = if want_grads {
                let mut grads = tape.backward(loss).unwrap();
                store.collect_grads(&bound, &mut grads)
            } else {
                Vec::new()
            };
            (value, grads)
        };
        worst_e = worst_e.max(gradcheck(&q.store, &e_loss));
        checked += 1;
    }
    Outcome::gate(
        worst_m <= 1.0 && worst_e <= 1.0,
        format!(
            "{checked} graphs; worst |a-n| / tolerance: M-step {worst_m:.3}, E-step {worst_e:.3}"
        ),
    )
}

fn criterion_gumbel() -> Outcome {
    let draws = 10_000;
    let mut worst: f64 = 0.0;
    for (k, p) in (1..=9).map(|k| (k, k as f64 / 10.0)) {
        let s = gumbel_sample_structure(&vec![p; draws], 1.0, 500 + k, true).unwrap();
        let freq = s.iter().sum::<f64>() / draws as f64;
        worst = worst.max((freq - p).abs());
    }
    // Low temperatures push relaxed samples to {0, 1}, high ones to 1/2.
    let spread: Vec<f64> = [0.1, 1.0, 100.0]
        .iter()
        .map(|&tau| {
            let noise = gumbel_noise(&mut stream_rng(600, 0), draws);
            let mut tape = Tape::new();
            let probs = tape.constant(Matrix::from_elem((draws, 1), 0.3));
            let s = gumbel_sample_var(&mut tape, probs, tau, &noise, false).unwrap();
            tape.value(s).iter().map(|v| (v - 0.5).abs()).sum::<f64>() / draws as f64
        })
        .collect();
    let monotone = spread[0] > spread[1] && spread[1] > spread[2];
    Outcome::gate(
        worst <= 0.02 && monotone,
        format!(
            "max |freq - p| {worst:.4} over 10^4 draws; mean |s - 1/2| at tau 0.1/1/100: {:.4}/{:.4}/{:.4}",
            spread[0], spread[1], spread[2]
        ),
    )
}

fn criterion_oracles() -> Outcome {
    let mut err = [0.0f64; 5];
    for case in 0..200u64 {
        let mut rng = stream_rng(case, 50);
        let n = rng.random_range(1..=12);
        let (c, d) = (rng.random_range(2..=4), rng.random_range(1..=5));
        let p_edge = rng.random_range(0.1..0.9);
        let g = random_graph(&mut rng, n, c, d, p_edge);
        let y = random_distributions(&mut rng, n, c);
        let labels = LabelState::from_predictions(&g, y).unwrap();
        let y = labels.probs();

        let q = QNetwork::new(&mut rng, d, &[5], c, 0.0);
        let w = laplacian_weights(&g);
        let mut tape = Tape::new();
        let bound = q.store.bind_frozen(&mut tape);
        let logits = q
            .forward(&mut tape, &bound, &g, &w, false, &mut stream_rng(0, 0))
            .unwrap();
        let layers: Vec<(Matrix, Matrix)> = q
            .gcn
            .layer_params()
            .iter()
            .map(|&(w, b)| (q.store.get(w).clone(), q.store.get(b).clone()))
            .collect();
        let want = naive_gcn(&dense_weights(&g, &w.values), g.features(), &layers);
        err[0] = err[0].max(max_abs_diff(tape.value(logits), &want));

        let metric = Matrix::from_shape_fn((c, c), |_| rng.random_range(-2.0..2.0));
        let hard = hard_attention_probs(&g, &labels, &metric).unwrap();
        let naive = naive_hard_probs(&g, y, &metric);
        err[1] = err[1].max(
            hard.iter()
                .zip(&naive)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max),
        );

        let per_edge: Vec<f64> = (0..g.n_edges())
            .map(|_| rng.random_range(0.05..1.0))
            .collect();
        let support = dense_support(&g, &per_edge);
        let proj = Matrix::from_shape_fn((d, 3), |_| rng.random_range(-1.0..1.0));
        let scale = Matrix::from_shape_fn((1, 3), |_| rng.random_range(0.2..2.0));
        let soft = soft_attention(&g, &messages_of(&g, &support), &proj, &scale, 0.0, 0).unwrap();
        let naive_soft = naive_soft(&g, &support, &proj, &scale);
        err[2] = err[2].max(max_abs_diff(&dense_weights(&g, &soft.values), &naive_soft));

        let prior = structure_prior(&g, &labels);
        if !hard.is_empty() {
            let kl = kl_bernoulli(&hard, &prior).unwrap();
            err[3] = err[3].max((kl - naive_kl(&hard, &prior)).abs());
        }

        let fused = fuse_stable(g.adjacency(), &hard, &soft);
        let mut want = dense_support(&g, &hard) * &naive_soft;
        for mut row in want.rows_mut() {
            let s = row.sum();
            row /= s;
        }
        err[4] = err[4].max(max_abs_diff(&dense_weights(&g, &fused.values), &want));
    }
    let limits = [1e-12, 1e-12, 1e-10, 1e-10, 1e-10];
    let pass = err.iter().zip(&limits).all(|(e, l)| e <= l);
    Outcome::gate(
        pass,
        format!(
            "200 instances; max abs error gcn {:.1e} (1e-12), hard {:.1e} (1e-12), soft {:.1e}, kl {:.1e}, fusion {:.1e} (1e-10)",
            err[0], err[1], err[2], err[3], err[4]
        ),
    )
}

fn criterion_fig1a() -> Outcome {
    let spec = default_spec("fig1a", "gcn", 10);
    let ratios = [0.0, 0.2, 0.4, 0.6, 0.8, 1.0];
    let rows = cmd_fig1a(&spec, &ratios).unwrap();
    let records = read_results(&spec.out.join("results.csv")).unwrap();
    let x: Vec<f64> = records
        .iter()
        .map(|r| r.derived("target_ratio").unwrap())
        .collect();
    let y: Vec<f64> = records.iter().map(|r| r.test_accuracy).collect();
    let rho = spearman(&x, &y);
    let means: Vec<f64> = rows.iter().map(|r| r.mean_acc).collect();
    let rho_means = spearman(&ratios, &means);
    let gap = 100.0 * (means[0] - means[ratios.len() - 1]);
    let complete = rows.iter().all(|r| r.status == "ok" && r.n == 10);
    let curve: Vec<String> = means.iter().map(|m| format!("{:.1}", 100.0 * m)).collect();
    Outcome::gate(
        complete && rho < -0.7 && gap >= 10.0,
        format!(
            "spearman {rho:.3} over {} runs ({rho_means:.3} on means); ratio 0 minus ratio 1: {gap:.1} pts; curve [{}]",
            x.len(),
            curve.join(", ")
        ),
    )
}

fn criterion_fig1b() -> Outcome {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/fig1b.conf");
    let mut cfg = RunConfig::load(&path).unwrap();
    cfg.method = "gcn".into();
    let spec = ExperimentSpec::synthetic("fig1b", cfg, (0..10).collect(), scratch("fig1b"));
    let rows = cmd_fig1b(&spec).unwrap();
    let acc = |w: &str, a: &str| {
        100.0
            * rows
                .iter()
                .find(|r| r.weights == w && r.adjacency == a)
                .unwrap()
                .mean_acc
    };
    let original = acc("pr", "original") - acc("nr", "original");
    let oracle = acc("nr", "oracle") - acc("pr", "oracle");
    Outcome::gate(
        original >= 1.0 && oracle >= 1.0,
        format!(
            "original: PR {:.2} vs NR {:.2} (PR-NR {original:+.2}); oracle: PR {:.2} vs NR {:.2} (NR-PR {oracle:+.2})",
            acc("pr", "original"),
            acc("nr", "original"),
            acc("pr", "oracle"),
            acc("nr", "oracle")
        ),
    )
}

fn criterion_gain() -> Outcome {
    let mean = |method: &str| {
        100.0
            * cmd_train(&default_spec("train", method, 10))
                .unwrap()
                .summary
                .mean
    };
    let gcn = mean("gcn");
    let full = mean("gdamn");
    let ablations: Vec<(&str, f64)> = ["gdamn-no-hard", "gdamn-no-soft", "gdamn-no-ent"]
        .into_iter()
        .map(|m| (m, mean(m)))
        .collect();
    let pass = full >= gcn + 1.0 && ablations.iter().all(|&(_, a)| a <= full + 0.3);
    let abl: Vec<String> = ablations
        .iter()
        .map(|(m, a)| format!("{m} {a:.2}"))
        .collect();
    Outcome::gate(
        pass,
        format!(
            "gcn {gcn:.2}, gdamn {full:.2} ({:+.2}); {}",
            full - gcn,
            abl.join(", ")
        ),
    )
}

fn criterion_connectivity() -> Outcome {
    let report = cmd_connectivity(&default_spec("connectivity", "gdamn", 10)).unwrap();
    let learned = report.mean_ratio("learned", false);
    let uniform = report.mean_ratio("uniform", false);
    Outcome::gate(
        learned > uniform,
        format!(
            "diag/off-diag of mean class weights: learned {learned:.3} vs uniform {uniform:.3} (laplacian {:.3}); on totals {:.3} vs {:.3}",
            report.mean_ratio("laplacian", false),
            report.mean_ratio("learned", true),
            report.mean_ratio("uniform", true)
        ),
    )
}

fn criterion_fig4() -> Outcome {
    let counts: Vec<usize> = (0..=10).collect();
    let rows = cmd_fig4(&default_spec("fig4", "gdamn", 10), &counts).unwrap();
    let stable = 100.0 * rows[0].mean_acc;
    let (best_s, best) = rows[1..]
        .iter()
        .map(|r| (r.samples, 100.0 * r.mean_acc))
        .fold((0, f64::NEG_INFINITY), |a, b| if b.1 > a.1 { b } else { a });
    Outcome::gate(
        stable >= best - 0.5,
        format!("S=0 {stable:.2}; best sampled S={best_s} {best:.2}"),
    )
}

fn criterion_determinism() -> Outcome {
    let mut a = default_spec("train", "gdamn", 1);
    a.out = scratch("determinism-a");
    let mut b = a.clone();
    b.out = scratch("determinism-b");
    cmd_train(&a).unwrap();
    cmd_train(&b).unwrap();
    let read = |s: &ExperimentSpec| std::fs::read(s.out.join("results.csv")).unwrap();
    let (x, y) = (read(&a), read(&b));
    Outcome::gate(
        x == y,
        format!("results.csv {} bytes, identical: {}", x.len(), x == y),
    )
}

/// Writes a graph in the manifest layout so the citation loader is exercised
/// even without real dataset files.
fn write_manifest(g: &Graph, dir: &Path) -> PathBuf {
    std::fs::create_dir_all(dir).unwrap();
    let edges: String = g
        .edges()
        .iter()
        .map(|(i, j)| format!("{i} {j}\n"))
        .collect();
    std::fs::write(dir.join("edges.txt"), edges).unwrap();
    let mut feats = String::new();
    for ((i, k), v) in g.features().indexed_iter() {
        if *v != 0.0 {
            feats.push_str(&format!("{i} {k} {v}\n"));
        }
    }
    std::fs::write(dir.join("features.txt"), feats).unwrap();
    let labels: String = g.labels().iter().map(|c| format!("{c}\n")).collect();
    std::fs::write(dir.join("labels.txt"), labels).unwrap();
    std::fs::write(
        dir.join("splits.json"),
        serde_json::to_string(g.splits()).unwrap(),
    )
    .unwrap();
    let s = g.splits();
    let manifest = serde_json::json!({
        "name": "synthetic",
        "edges": "edges.txt",
        "features": "features.txt",
        "labels": "labels.txt",
        "splits": "splits.json",
        "n_features": g.n_features(),
        "expected_stats": {
            "n_nodes": g.n_nodes(), "n_edges": g.n_edges(), "d": g.n_features(), "C": g.n_classes(),
            "train": s.train.len(), "val": s.val.len(), "test": s.test.len()
        }
    });
    let path = dir.join("manifest.json");
    std::fs::write(&path, manifest.to_string()).unwrap();
    path
}

fn criterion_citation() -> Outcome {
    let g = gdamn::graph::generate_sbm(&Default::default(), 0).unwrap();
    let path = write_manifest(&g, &scratch("manifest"));
    let loaded = load_citation(&DatasetManifest::read(&path).unwrap());
    let synthetic_ok = loaded.is_ok_and(|l| l.edges() == g.edges() && l.labels() == g.labels());

    let Some(cora) = std::env::var_os("GDAMN_CORA_MANIFEST") else {
        return Outcome::skip(format!(
            "GDAMN_CORA_MANIFEST not set; synthetic manifest round trip ok: {synthetic_ok}"
        ));
    };
    let mut manifest = match DatasetManifest::read(Path::new(&cora)) {
        Ok(m) => m,
        Err(e) => return Outcome::gate(false, format!("cannot read manifest: {e}")),
    };
    manifest.expected_stats = Some(ExpectedStats {
        n_nodes: 2708,
        n_edges: 5278,
        d: 1433,
        n_classes: 7,
        train: 140,
        val: 500,
        test: 1000,
    });
    let g = match load_citation(&manifest) {
        Ok(g) => g,
        Err(e) => return Outcome::gate(false, format!("statistics mismatch: {e}")),
    };
    let acc: Vec<f64> = (0..3)
        .map(|seed| {
            Trainer::new(&g, Hyperparams::citation(), seed)
                .unwrap()
                .run()
                .unwrap()
                .test_accuracy
        })
        .collect();
    let (m, s) = mean_std(&acc);
    Outcome::gate(
        synthetic_ok,
        format!(
            "statistics match; 3-seed test accuracy {:.2} +/- {:.2} (not gated)",
            100.0 * m,
            100.0 * s
        ),
    )
}

type Criterion = (&'static str, Option<Duration>, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 10] = [
        (
            "1 gradient correctness",
            Some(Duration::from_secs(120)),
            criterion_gradients,
        ),
        (
            "2 gumbel sampler fidelity",
            Some(Duration::from_secs(30)),
            criterion_gumbel,
        ),
        (
            "3 oracle equivalence",
            Some(Duration::from_secs(60)),
            criterion_oracles,
        ),
        (
            "4 accuracy vs inter-class ratio",
            Some(Duration::from_secs(600)),
            criterion_fig1a,
        ),
        (
            "5 relativity grid",
            Some(Duration::from_secs(600)),
            criterion_fig1b,
        ),
        (
            "6 end-to-end gain and ablations",
            Some(Duration::from_secs(1200)),
            criterion_gain,
        ),
        (
            "7 connectivity concentration",
            Some(Duration::from_secs(300)),
            criterion_connectivity,
        ),
        (
            "8 stable re-weighting",
            Some(Duration::from_secs(1800)),
            criterion_fig4,
        ),
        ("9 determinism", None, criterion_determinism),
        ("10 citation loader", None, criterion_citation),
    ];
    let filter: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let mut failed = 0;
    for (name, budget, check) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let outcome = check();
        let elapsed = start.elapsed();
        let over = budget.is_some_and(|b| elapsed > b);
        let status = match outcome.pass {
            Some(true) if !over => "PASS",
            Some(_) => {
                failed += 1;
                "FAIL"
            }
            None => "SKIP",
        };
        let budget = budget.map_or(String::new(), |b| format!(" / {}s", b.as_secs()));
        println!(
            "criterion {name}: {status} ({:.1}s{budget}) {}",
            elapsed.as_secs_f64(),
            outcome.detail
        );
    }
    let _ = std::fs::remove_dir_all(
        std::env::temp_dir().join(format!("gdamn-acceptance-{}", std::process::id())),
    );
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
