//! Experiment harness: a registry of trainable methods and the diagnostic
//! sweeps built on top of it. Every command writes `results.csv` (plus its
//! JSON sidecar), command-specific tables, and a `config.txt` snapshot into
//! the output directory.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::attention::connectivity_strength;
use crate::config::{Hyperparams, RunConfig};
use crate::em::{train_supervised, RunOutput, Trainer};
use crate::error::{Error, Result};
use crate::graph::{
    generate_sbm, inter_class_ratio, laplacian_weights, oracle_graph, perturb_inter_class,
    EdgeWeights, Graph, SbmConfig,
};
use crate::io::{
    read_weight_triples, write_matrix, write_results, write_table, write_weight_triples,
    DerivedMetric, ResultRecord,
};
use crate::models::{weight_scheme, RelativityMode, Uniform, WeightScheme};
use crate::seed::derive;
use crate::tensor::Matrix;

/// A trainable node classifier selectable by name.
pub trait Method: Send + Sync {
    fn name(&self) -> &'static str;
    fn run(&self, g: &Graph, hp: &Hyperparams, seed: u64) -> Result<RunOutput>;
}

/// The EM-trained model, optionally with a component switched off.
pub struct Gdamn {
    name: &'static str,
    adjust: fn(&mut Hyperparams),
}

impl Method for Gdamn {
    fn name(&self) -> &'static str {
        self.name
    }

    fn run(&self, g: &Graph, hp: &Hyperparams, seed: u64) -> Result<RunOutput> {
        let mut hp = hp.clone();
        (self.adjust)(&mut hp);
        Trainer::new(g, hp, seed)?.run()
    }
}

/// Supervised GCN under a fixed weight scheme.
pub struct Gcn {
    name: &'static str,
    scheme: Box<dyn WeightScheme>,
}

impl Method for Gcn {
    fn name(&self) -> &'static str {
        self.name
    }

    fn run(&self, g: &Graph, hp: &Hyperparams, seed: u64) -> Result<RunOutput> {
        train_supervised(g, &self.scheme.weights(g)?, hp, seed)
    }
}

const METHODS: &[&str] = &[
    "gdamn",
    "gdamn-no-hard",
    "gdamn-no-soft",
    "gdamn-no-ent",
    "gcn",
    "gcn-uniform",
    "gcn-pr",
    "gcn-nr",
];

pub fn method_names() -> &'static [&'static str] {
    METHODS
}

/// Looks up a method by its registered name.
pub fn method(name: &str) -> Result<Box<dyn Method>> {
    let gdamn = |name, adjust| -> Box<dyn Method> { Box::new(Gdamn { name, adjust }) };
    let gcn = |name, scheme: &str| -> Result<Box<dyn Method>> {
        Ok(Box::new(Gcn {
            name,
            scheme: weight_scheme(scheme)?,
        }))
    };
    match name {
        "gdamn" => Ok(gdamn("gdamn", |_| {})),
        "gdamn-no-hard" => Ok(gdamn("gdamn-no-hard", |h| h.hard = false)),
        "gdamn-no-soft" => Ok(gdamn("gdamn-no-soft", |h| h.soft = false)),
        "gdamn-no-ent" => Ok(gdamn("gdamn-no-ent", |h| h.beta = 0.0)),
        "gcn" => gcn("gcn", "laplacian"),
        "gcn-uniform" => gcn("gcn-uniform", "uniform"),
        "gcn-pr" => gcn("gcn-pr", "pr"),
        "gcn-nr" => gcn("gcn-nr", "nr"),
        other => Err(Error::config(
            "method",
            format!("unknown method `{other}`; known: {}", METHODS.join(", ")),
        )),
    }
}

/// Where each seed's graph comes from.
#[derive(Clone, Debug)]
pub enum GraphSource {
    /// A fresh SBM sample per seed.
    Sbm(SbmConfig),
    /// One fixed graph shared by all seeds.
    Fixed { graph: Arc<Graph>, origin: PathBuf },
}

impl GraphSource {
    pub fn graph_for(&self, seed: u64) -> Result<Graph> {
        match self {
            GraphSource::Sbm(cfg) => generate_sbm(cfg, seed),
            GraphSource::Fixed { graph, .. } => Ok((**graph).clone()),
        }
    }

    fn describe(&self) -> String {
        match self {
            GraphSource::Sbm(_) => "sbm".into(),
            GraphSource::Fixed { origin, .. } => origin.display().to_string(),
        }
    }
}

/// A fully specified command invocation.
#[derive(Clone, Debug)]
pub struct ExperimentSpec {
    pub command: String,
    pub graph: GraphSource,
    pub config: RunConfig,
    pub seeds: Vec<u64>,
    pub out: PathBuf,
}

impl ExperimentSpec {
    /// SBM-backed spec whose generator settings come from the config.
    pub fn synthetic(
        command: &str,
        config: RunConfig,
        seeds: Vec<u64>,
        out: impl Into<PathBuf>,
    ) -> Self {
        Self {
            command: command.into(),
            graph: GraphSource::Sbm(config.sbm.clone()),
            config,
            seeds,
            out: out.into(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        if self.seeds.is_empty() {
            return Err(Error::config("seeds", "at least one seed is required"));
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seeds.len() {
            return Err(Error::config("seeds", "seeds must be distinct"));
        }
        Ok(())
    }

    fn prepare(&self, extra: &[(&str, String)]) -> Result<()> {
        self.validate()?;
        std::fs::create_dir_all(&self.out).map_err(|e| Error::io(&self.out, e))?;
        let seeds: Vec<String> = self.seeds.iter().map(u64::to_string).collect();
        let mut text = format!(
            "# command = {}\n# graph = {}\n# seeds = {}\n",
            self.command,
            self.graph.describe(),
            seeds.join(",")
        );
        for (k, v) in extra {
            text.push_str(&format!("# {k} = {v}\n"));
        }
        text.push_str(&self.config.to_text());
        let path = self.path("config.txt");
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    fn path(&self, file: &str) -> PathBuf {
        self.out.join(file)
    }

    /// Runs `f` for every seed (possibly in parallel) and returns results in
    /// seed order.
    fn per_seed<T: Send>(&self, f: impl Fn(u64) -> Result<T> + Sync) -> Result<Vec<T>> {
        self.seeds.par_iter().map(|&s| f(s)).collect()
    }

    fn record(
        &self,
        experiment: String,
        seed: u64,
        out: &RunOutput,
        derived: Vec<DerivedMetric>,
    ) -> ResultRecord {
        ResultRecord {
            experiment,
            seed,
            hyperparams: self.config.pairs(),
            history: out.history.clone(),
            val_accuracy: out.val_accuracy,
            test_accuracy: out.test_accuracy,
            derived,
        }
    }
}

fn derived(name: &str, value: f64) -> DerivedMetric {
    DerivedMetric {
        name: name.into(),
        value,
    }
}

/// Mean and sample standard deviation (0 for fewer than two values).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut r = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation with average ranks for ties; NaN when either
/// side is constant.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len());
    let (rx, ry) = (ranks(x), ranks(y));
    let (mx, _) = mean_std(&rx);
    let (my, _) = mean_std(&ry);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SummaryRow {
    pub experiment: String,
    pub metric: String,
    pub n: usize,
    pub mean: f64,
    pub std: f64,
}

fn summary_row(experiment: &str, metric: &str, values: &[f64]) -> SummaryRow {
    let (mean, std) = mean_std(values);
    SummaryRow {
        experiment: experiment.into(),
        metric: metric.into(),
        n: values.len(),
        mean,
        std,
    }
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    pub method: String,
    pub test_accuracies: Vec<f64>,
    pub summary: SummaryRow,
    pub records: Vec<ResultRecord>,
}

/// Trains the configured method once per seed.
pub fn cmd_train(spec: &ExperimentSpec) -> Result<TrainReport> {
    let m = method(&spec.config.method)?;
    spec.prepare(&[])?;
    let runs = spec.per_seed(|seed| {
        let g = spec.graph.graph_for(seed)?;
        let out = m.run(&g, &spec.config.hyper, seed)?;
        let c = connectivity_strength(g.adjacency(), &out.weights, g.labels(), g.n_classes())?;
        let extra = vec![
            derived(
                "inter_class_ratio",
                inter_class_ratio(&g, g.labels()).unwrap_or(f64::NAN),
            ),
            derived("connectivity_ratio", c.ratio),
        ];
        Ok(spec.record(m.name().to_string(), seed, &out, extra))
    })?;
    let acc: Vec<f64> = runs.iter().map(|r| r.test_accuracy).collect();
    let summary = summary_row(m.name(), "test_accuracy", &acc);
    write_results(&runs, &spec.path("results.csv"))?;
    write_table(std::slice::from_ref(&summary), &spec.path("summary.csv"))?;
    Ok(TrainReport {
        method: m.name().into(),
        test_accuracies: acc,
        summary,
        records: runs,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RatioRow {
    pub ratio: f64,
    /// `ok`, or `skipped` when the target was infeasible for some seed.
    pub status: String,
    pub achieved_ratio: f64,
    pub n_edges: f64,
    pub n: usize,
    pub mean_acc: f64,
    pub std: f64,
}

/// Supervised GCN accuracy on graphs perturbed to each inter-class ratio.
pub fn cmd_fig1a(spec: &ExperimentSpec, ratios: &[f64]) -> Result<Vec<RatioRow>> {
    if let Some(r) = ratios.iter().find(|r| !(0.0..=1.0).contains(*r)) {
        return Err(Error::config("ratios", format!("{r} is outside [0, 1]")));
    }
    if ratios.is_empty() {
        return Err(Error::config("ratios", "at least one ratio is required"));
    }
    let list: Vec<String> = ratios.iter().map(f64::to_string).collect();
    spec.prepare(&[("ratios", list.join(","))])?;
    let hp = &spec.config.hyper;
    let mut rows = Vec::new();
    let mut records = Vec::new();
    for (ri, &ratio) in ratios.iter().enumerate() {
        let runs = spec.per_seed(|seed| {
            let g = spec.graph.graph_for(seed)?;
            let perturbed = match perturb_inter_class(&g, ratio, derive(seed, 100 + ri as u64)) {
                Ok(p) => p,
                Err(Error::InfeasibleTarget { reason, .. }) => {
                    log::warn!("ratio {ratio} skipped for seed {seed}: {reason}");
                    return Ok(None);
                }
                Err(e) => return Err(e),
            };
            let out = train_supervised(&perturbed, &laplacian_weights(&perturbed), hp, seed)?;
            let achieved = inter_class_ratio(&perturbed, perturbed.labels())?;
            let extra = vec![
                derived("target_ratio", ratio),
                derived("inter_class_ratio", achieved),
                derived("n_edges", perturbed.n_edges() as f64),
            ];
            Ok(Some(spec.record(
                format!("fig1a/ratio={ratio}"),
                seed,
                &out,
                extra,
            )))
        })?;
        if runs.iter().any(Option::is_none) {
            rows.push(RatioRow {
                ratio,
                status: "skipped".into(),
                achieved_ratio: f64::NAN,
                n_edges: f64::NAN,
                n: 0,
                mean_acc: f64::NAN,
                std: f64::NAN,
            });
            continue;
        }
        let runs: Vec<ResultRecord> = runs.into_iter().flatten().collect();
        let acc: Vec<f64> = runs.iter().map(|r| r.test_accuracy).collect();
        let (mean_acc, std) = mean_std(&acc);
        let get = |name: &str| {
            mean_std(
                &runs
                    .iter()
                    .filter_map(|r| r.derived(name))
                    .collect::<Vec<_>>(),
            )
            .0
        };
        rows.push(RatioRow {
            ratio,
            status: "ok".into(),
            achieved_ratio: get("inter_class_ratio"),
            n_edges: get("n_edges"),
            n: acc.len(),
            mean_acc,
            std,
        });
        records.extend(runs);
    }
    write_results(&records, &spec.path("results.csv"))?;
    write_table(&rows, &spec.path("fig1a.csv"))?;
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GridRow {
    pub weights: String,
    pub adjacency: String,
    pub n: usize,
    pub mean_acc: f64,
    pub std: f64,
}

/// Positive- vs negative-relativity weights on the original and the oracle
/// adjacency.
pub fn cmd_fig1b(spec: &ExperimentSpec) -> Result<Vec<GridRow>> {
    spec.prepare(&[])?;
    let hp = &spec.config.hyper;
    let mut rows = Vec::new();
    let mut records = Vec::new();
    for mode in [RelativityMode::Positive, RelativityMode::Negative] {
        let scheme = crate::models::Relativity(mode);
        for adjacency in ["original", "oracle"] {
            let runs = spec.per_seed(|seed| {
                let g = spec.graph.graph_for(seed)?;
                let g = if adjacency == "oracle" {
                    oracle_graph(&g)?
                } else {
                    g
                };
                let out = train_supervised(&g, &scheme.weights(&g)?, hp, seed)?;
                Ok(spec.record(
                    format!("fig1b/{}/{adjacency}", scheme.name()),
                    seed,
                    &out,
                    vec![],
                ))
            })?;
            let acc: Vec<f64> = runs.iter().map(|r| r.test_accuracy).collect();
            let (mean_acc, std) = mean_std(&acc);
            rows.push(GridRow {
                weights: scheme.name().into(),
                adjacency: adjacency.into(),
                n: acc.len(),
                mean_acc,
                std,
            });
            records.extend(runs);
        }
    }
    write_results(&records, &spec.path("results.csv"))?;
    write_table(&rows, &spec.path("fig1b.csv"))?;
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SamplesRow {
    /// Structure samples averaged into the E-step weights; 0 is the stable
    /// fusion.
    pub samples: usize,
    pub n: usize,
    pub mean_acc: f64,
    pub std: f64,
}

/// Stable fusion versus weights averaged from sampled structures.
pub fn cmd_fig4(spec: &ExperimentSpec, sample_counts: &[usize]) -> Result<Vec<SamplesRow>> {
    if sample_counts.is_empty() {
        return Err(Error::config(
            "samples",
            "at least one sample count is required",
        ));
    }
    let list: Vec<String> = sample_counts.iter().map(usize::to_string).collect();
    spec.prepare(&[("samples", list.join(","))])?;
    let mut rows = Vec::new();
    let mut records = Vec::new();
    for &s in sample_counts {
        let mut hp = spec.config.hyper.clone();
        hp.reweight_samples = s;
        let runs = spec.per_seed(|seed| {
            let g = spec.graph.graph_for(seed)?;
            let out = Trainer::new(&g, hp.clone(), seed)?.run()?;
            Ok(spec.record(format!("fig4/samples={s}"), seed, &out, vec![]))
        })?;
        let acc: Vec<f64> = runs.iter().map(|r| r.test_accuracy).collect();
        let (mean_acc, std) = mean_std(&acc);
        rows.push(SamplesRow {
            samples: s,
            n: acc.len(),
            mean_acc,
            std,
        });
        records.extend(runs);
    }
    write_results(&records, &spec.path("results.csv"))?;
    write_table(&rows, &spec.path("fig4.csv"))?;
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConnectivityRow {
    pub seed: u64,
    pub weights: String,
    /// Diagonal-to-off-diagonal ratio of the mean class-pair weights.
    pub ratio: f64,
    /// Same ratio on summed class-pair weights.
    pub total_ratio: f64,
}

#[derive(Clone, Debug)]
pub struct ConnectivityReport {
    pub rows: Vec<ConnectivityRow>,
    /// Seed-averaged mean connectivity matrix per weight source.
    pub matrices: Vec<(String, Matrix)>,
}

impl ConnectivityReport {
    /// Mean over seeds of the chosen ratio for one weight source.
    pub fn mean_ratio(&self, weights: &str, total: bool) -> f64 {
        let v: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| r.weights == weights)
            .map(|r| if total { r.total_ratio } else { r.ratio })
            .collect();
        mean_std(&v).0
    }
}

pub const CONNECTIVITY_SOURCES: [&str; 3] = ["laplacian", "uniform", "learned"];

fn stable_export(dir: &Path, seed: u64) -> PathBuf {
    dir.join(format!("stable_weights_seed{seed}.csv"))
}

/// Class connectivity of Laplacian, uniform, and learned stable weights;
/// exports the learned weights for later retraining.
pub fn cmd_connectivity(spec: &ExperimentSpec) -> Result<ConnectivityReport> {
    spec.prepare(&[])?;
    let hp = &spec.config.hyper;
    let per_seed = spec.per_seed(|seed| {
        let g = spec.graph.graph_for(seed)?;
        let out = Trainer::new(&g, hp.clone(), seed)?.run()?;
        write_weight_triples(g.adjacency(), &out.weights, &stable_export(&spec.out, seed))?;
        let sources = [
            laplacian_weights(&g),
            Uniform.weights(&g)?,
            out.weights.clone(),
        ];
        let mut rows = Vec::new();
        let mut mats = Vec::new();
        for (name, w) in CONNECTIVITY_SOURCES.iter().zip(&sources) {
            let c = connectivity_strength(g.adjacency(), w, g.labels(), g.n_classes())?;
            rows.push(ConnectivityRow {
                seed,
                weights: name.to_string(),
                ratio: c.ratio,
                total_ratio: c.total_ratio,
            });
            mats.push(c.mean);
        }
        let c = connectivity_strength(g.adjacency(), &out.weights, g.labels(), g.n_classes())?;
        let record = spec.record(
            "connectivity/learned".into(),
            seed,
            &out,
            vec![
                derived("ratio", c.ratio),
                derived("total_ratio", c.total_ratio),
            ],
        );
        Ok((rows, mats, record))
    })?;
    let mut rows = Vec::new();
    let mut records = Vec::new();
    let mut matrices: Vec<(String, Matrix)> = Vec::new();
    for (r, mats, record) in per_seed {
        rows.extend(r);
        records.push(record);
        for (k, m) in mats.into_iter().enumerate() {
            match matrices.get_mut(k) {
                Some((_, acc)) if acc.dim() == m.dim() => *acc += &m,
                Some(_) => return Err(Error::Contract("class count differs between seeds".into())),
                None => matrices.push((CONNECTIVITY_SOURCES[k].to_string(), m)),
            }
        }
    }
    for (name, m) in &mut matrices {
        *m /= spec.seeds.len() as f64;
        write_matrix(m, &spec.path(&format!("connectivity_{name}.csv")))?;
    }
    write_results(&records, &spec.path("results.csv"))?;
    write_table(&rows, &spec.path("connectivity.csv"))?;
    Ok(ConnectivityReport { rows, matrices })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CurveRow {
    pub seed: u64,
    pub variant: String,
    pub epoch: usize,
    pub train_loss: f64,
    pub test_accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RetrainRow {
    pub variant: String,
    pub n: usize,
    pub mean_final_acc: f64,
    pub std: f64,
    /// Mean first epoch whose test accuracy reaches 90% of the final one.
    pub mean_epochs_to_90: f64,
}

/// First epoch (1-based) whose test accuracy reaches 90% of `final_acc`.
pub fn epochs_to_fraction(curve: &[f64], final_acc: f64, fraction: f64) -> usize {
    curve
        .iter()
        .position(|&a| a >= fraction * final_acc)
        .map_or(curve.len(), |p| p + 1)
}

pub const RETRAIN_VARIANTS: [&str; 3] = ["original", "oracle", "learned"];

/// Retrains a plain GCN on the original graph, the oracle graph, and the
/// original graph with frozen learned weights. Learned weights are read from
/// `weights_dir` (as exported by `cmd_connectivity`) or trained in place.
pub fn cmd_retrain(spec: &ExperimentSpec, weights_dir: Option<&Path>) -> Result<Vec<RetrainRow>> {
    if let Some(dir) = weights_dir {
        for &seed in &spec.seeds {
            let p = stable_export(dir, seed);
            if !p.is_file() {
                return Err(Error::io(
                    p,
                    std::io::Error::new(
                        std::io::ErrorKind::NotFound,
                        "learned weights were not exported for this seed",
                    ),
                ));
            }
        }
    }
    let source = weights_dir.map_or_else(
        || "trained in place".to_string(),
        |d| d.display().to_string(),
    );
    spec.prepare(&[("weights", source)])?;
    let hp = &spec.config.hyper;
    let per_seed = spec.per_seed(|seed| {
        let g = spec.graph.graph_for(seed)?;
        let learned = match weights_dir {
            Some(dir) => read_weight_triples(g.adjacency(), &stable_export(dir, seed))?,
            None => {
                let out = Trainer::new(&g, hp.clone(), seed)?.run()?;
                write_weight_triples(g.adjacency(), &out.weights, &stable_export(&spec.out, seed))?;
                out.weights
            }
        };
        let oracle = oracle_graph(&g)?;
        let variants: [(&Graph, EdgeWeights); 3] = [
            (&g, laplacian_weights(&g)),
            (&oracle, laplacian_weights(&oracle)),
            (&g, learned),
        ];
        let mut out = Vec::new();
        for (name, (graph, w)) in RETRAIN_VARIANTS.iter().zip(variants) {
            let run = train_supervised(graph, &w, hp, seed)?;
            let curve: Vec<f64> = run.history.iter().map(|m| m.test_accuracy).collect();
            let epochs = epochs_to_fraction(&curve, run.test_accuracy, 0.9);
            let record = spec.record(
                format!("retrain/{name}"),
                seed,
                &run,
                vec![derived("epochs_to_90", epochs as f64)],
            );
            out.push(record);
        }
        Ok(out)
    })?;
    let records: Vec<ResultRecord> = per_seed.into_iter().flatten().collect();
    let mut curves = Vec::new();
    for r in &records {
        let variant = r.experiment.trim_start_matches("retrain/").to_string();
        for m in &r.history {
            curves.push(CurveRow {
                seed: r.seed,
                variant: variant.clone(),
                epoch: m.epoch,
                train_loss: m.train_loss,
                test_accuracy: m.test_accuracy,
            });
        }
    }
    let rows: Vec<RetrainRow> = RETRAIN_VARIANTS
        .iter()
        .map(|v| {
            let of: Vec<&ResultRecord> = records
                .iter()
                .filter(|r| r.experiment == format!("retrain/{v}"))
                .collect();
            let acc: Vec<f64> = of.iter().map(|r| r.test_accuracy).collect();
            let epochs: Vec<f64> = of
                .iter()
                .filter_map(|r| r.derived("epochs_to_90"))
                .collect();
            let (mean_final_acc, std) = mean_std(&acc);
            RetrainRow {
                variant: v.to_string(),
                n: acc.len(),
                mean_final_acc,
                std,
                mean_epochs_to_90: mean_std(&epochs).0,
            }
        })
        .collect();
    write_results(&records, &spec.path("results.csv"))?;
    write_table(&curves, &spec.path("retrain_curves.csv"))?;
    write_table(&rows, &spec.path("retrain.csv"))?;
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_std_examples() {
        assert_eq!(mean_std(&[2.0]), (2.0, 0.0));
        let (m, s) = mean_std(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((s - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn spearman_examples() {
        assert!((spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]) - 1.0).abs() < 1e-12);
        assert!((spearman(&[1.0, 2.0, 3.0], &[3.0, 1.0, 0.0]) + 1.0).abs() < 1e-12);
        // Ties get average ranks: x ranks (1.5, 1.5, 3), y ranks (1, 2, 3).
        let r = spearman(&[1.0, 1.0, 2.0], &[1.0, 2.0, 3.0]);
        assert!((r - 0.75f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn epochs_to_fraction_examples() {
        assert_eq!(epochs_to_fraction(&[0.1, 0.5, 0.8, 0.9], 0.9, 0.9), 4);
        assert_eq!(epochs_to_fraction(&[0.1, 0.82, 0.9], 0.9, 0.9), 2);
    }

    #[test]
    fn registry_names_round_trip() {
        for name in method_names() {
            assert_eq!(method(name).unwrap().name(), *name);
        }
        assert!(matches!(method("gat"), Err(Error::Config { .. })));
    }
}
