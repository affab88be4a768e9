//! File formats: JSON graph bundles, edge lists, citation dataset manifests,
//! result records (long CSV plus JSON sidecar), and weight/matrix exports.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::em::EpochMetric;
use crate::error::{Error, Result};
use crate::graph::{Adjacency, EdgeWeights, Graph, Splits};
use crate::tensor::Matrix;

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| Error::io(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    serde_json::from_reader(BufReader::new(open(path)?))
        .map_err(|e| Error::parse(path, e.to_string()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| Error::parse(path, e.to_string()))?;
    w.write_all(b"\n")
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            _ => unreachable!(),
        }
    } else {
        Error::parse(path, e.to_string())
    }
}

/// Self-contained JSON form of a [`Graph`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphBundle {
    pub n_nodes: usize,
    #[serde(rename = "C")]
    pub n_classes: usize,
    pub edges: Vec<(usize, usize)>,
    /// Dense feature rows.
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub splits: Splits,
}

impl GraphBundle {
    pub fn from_graph(g: &Graph) -> Self {
        Self {
            n_nodes: g.n_nodes(),
            n_classes: g.n_classes(),
            edges: g.edges().to_vec(),
            features: g
                .features()
                .rows()
                .into_iter()
                .map(|r| r.to_vec())
                .collect(),
            labels: g.labels().to_vec(),
            splits: g.splits().clone(),
        }
    }

    pub fn into_graph(self) -> Result<Graph> {
        let d = self.features.first().map_or(0, Vec::len);
        if self.features.len() != self.n_nodes || self.features.iter().any(|r| r.len() != d) {
            return Err(Error::InvalidGraph(format!(
                "features must be {} rows of equal width",
                self.n_nodes
            )));
        }
        let features = Matrix::from_shape_vec((self.n_nodes, d), self.features.concat())
            .map_err(|e| Error::InvalidGraph(e.to_string()))?;
        Graph::new(
            self.n_nodes,
            self.n_classes,
            self.edges,
            features,
            self.labels,
            self.splits,
        )
    }
}

pub fn read_bundle(path: &Path) -> Result<Graph> {
    let bundle: GraphBundle = read_json(path)?;
    bundle.into_graph()
}

pub fn write_bundle(g: &Graph, path: &Path) -> Result<()> {
    write_json(path, &GraphBundle::from_graph(g))
}

/// Reads `i j` pairs, one per line (0-indexed). Blank lines and `#` comments
/// are skipped.
pub fn read_edge_list(path: &Path) -> Result<Vec<(usize, usize)>> {
    let reader = BufReader::new(open(path)?);
    let mut edges = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut it = line.split_whitespace().map(str::parse::<usize>);
        match (it.next(), it.next(), it.next()) {
            (Some(Ok(i)), Some(Ok(j)), None) => edges.push((i, j)),
            _ => {
                return Err(Error::parse(
                    path,
                    format!("line {}: expected `i j`, got `{line}`", n + 1),
                ))
            }
        }
    }
    Ok(edges)
}

pub fn write_edge_list(edges: &[(usize, usize)], path: &Path) -> Result<()> {
    let mut w = create(path)?;
    for (i, j) in edges {
        writeln!(w, "{i} {j}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Published statistics a loaded dataset must reproduce.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpectedStats {
    pub n_nodes: usize,
    pub n_edges: usize,
    pub d: usize,
    #[serde(rename = "C")]
    pub n_classes: usize,
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

/// Citation dataset description. Paths are relative to the manifest file.
///
/// * `edges`: edge list (`i j` per line).
/// * `features`: sparse entries, one `node column value` triple per line.
/// * `labels`: one class id per line; line `i` labels node `i`.
/// * `splits`: JSON object `{"train": [...], "val": [...], "test": [...]}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    pub edges: PathBuf,
    pub features: PathBuf,
    pub labels: PathBuf,
    pub splits: PathBuf,
    /// Feature width; inferred from the largest column index when absent.
    #[serde(default)]
    pub n_features: Option<usize>,
    #[serde(default)]
    pub expected_stats: Option<ExpectedStats>,
}

impl DatasetManifest {
    pub fn read(path: &Path) -> Result<Self> {
        let mut m: Self = read_json(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut m.edges, &mut m.features, &mut m.labels, &mut m.splits] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(m)
    }
}

fn read_labels(path: &Path) -> Result<Vec<usize>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| {
            l.trim().parse().map_err(|_| {
                Error::parse(
                    path,
                    format!("line {}: `{}` is not a class id", n + 1, l.trim()),
                )
            })
        })
        .collect()
}

fn read_sparse_features(path: &Path, n_nodes: usize, width: Option<usize>) -> Result<Matrix> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut entries = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parts: Vec<&str> = line.split_whitespace().collect();
        let bad = || {
            Error::parse(
                path,
                format!("line {}: expected `node column value`, got `{line}`", n + 1),
            )
        };
        if parts.len() != 3 {
            return Err(bad());
        }
        let i: usize = parts[0].parse().map_err(|_| bad())?;
        let k: usize = parts[1].parse().map_err(|_| bad())?;
        let v: f64 = parts[2].parse().map_err(|_| bad())?;
        if i >= n_nodes {
            return Err(Error::parse(
                path,
                format!("line {}: node {i} out of range", n + 1),
            ));
        }
        entries.push((i, k, v));
    }
    let d = width.unwrap_or_else(|| entries.iter().map(|e| e.1 + 1).max().unwrap_or(0));
    let mut x = Matrix::zeros((n_nodes, d));
    for (i, k, v) in entries {
        if k >= d {
            return Err(Error::parse(
                path,
                format!("column {k} exceeds feature width {d}"),
            ));
        }
        x[[i, k]] = v;
    }
    Ok(x)
}

/// Scales every nonzero row to sum 1; all-zero rows are left alone.
pub fn row_normalize(x: &mut Matrix) {
    for mut row in x.rows_mut() {
        let s: f64 = row.sum();
        if s != 0.0 {
            row /= s;
        }
    }
}

fn check_stat(field: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::Integrity {
            field,
            expected,
            found,
        })
    }
}

/// Loads a citation dataset with row-normalized features and its fixed
/// splits, verifying any expected statistics.
pub fn load_citation(manifest: &DatasetManifest) -> Result<Graph> {
    let labels = read_labels(&manifest.labels)?;
    let n = labels.len();
    let mut features = read_sparse_features(&manifest.features, n, manifest.n_features)?;
    row_normalize(&mut features);
    let edges = read_edge_list(&manifest.edges)?;
    let splits: Splits = read_json(&manifest.splits)?;
    let n_classes = labels.iter().copied().max().map_or(0, |c| c + 1);
    let g = Graph::new(n, n_classes, edges, features, labels, splits)?;
    if let Some(s) = &manifest.expected_stats {
        check_stat("n_nodes", s.n_nodes, g.n_nodes())?;
        check_stat("n_edges", s.n_edges, g.n_edges())?;
        check_stat("d", s.d, g.n_features())?;
        check_stat("C", s.n_classes, g.n_classes())?;
        check_stat("train", s.train, g.splits().train.len())?;
        check_stat("val", s.val, g.splits().val.len())?;
        check_stat("test", s.test, g.splits().test.len())?;
    }
    Ok(g)
}

/// Loads either a dataset manifest (an object with a `features` path) or a
/// graph bundle.
pub fn load_graph(path: &Path) -> Result<Graph> {
    let value: serde_json::Value = read_json(path)?;
    if value
        .get("features")
        .is_some_and(serde_json::Value::is_string)
    {
        load_citation(&DatasetManifest::read(path)?)
    } else {
        serde_json::from_value::<GraphBundle>(value)
            .map_err(|e| Error::parse(path, e.to_string()))?
            .into_graph()
    }
}

/// JSON numbers for finite values, strings (`inf`, `-inf`, `NaN`) otherwise.
mod lossless_f64 {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_str(&v.to_string())
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Str(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Str(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DerivedMetric {
    pub name: String,
    #[serde(with = "lossless_f64")]
    pub value: f64,
}

/// Everything recorded about one seeded run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub experiment: String,
    pub seed: u64,
    /// Configuration snapshot as `(key, value)` pairs.
    pub hyperparams: Vec<(String, String)>,
    pub history: Vec<EpochMetric>,
    pub val_accuracy: f64,
    pub test_accuracy: f64,
    pub derived: Vec<DerivedMetric>,
}

impl ResultRecord {
    pub fn validate(&self) -> Result<()> {
        let in_unit = |v: f64| (0.0..=1.0).contains(&v);
        if !in_unit(self.val_accuracy) || !in_unit(self.test_accuracy) {
            return Err(Error::Contract(format!(
                "{}: accuracy outside [0, 1]",
                self.experiment
            )));
        }
        for w in self.history.windows(2) {
            if w[1].epoch <= w[0].epoch {
                return Err(Error::Contract(format!(
                    "{}: epochs must increase strictly",
                    self.experiment
                )));
            }
        }
        if self
            .history
            .iter()
            .any(|m| !in_unit(m.val_accuracy) || !in_unit(m.test_accuracy))
        {
            return Err(Error::Contract(format!(
                "{}: accuracy outside [0, 1]",
                self.experiment
            )));
        }
        Ok(())
    }

    pub fn derived(&self, name: &str) -> Option<f64> {
        self.derived
            .iter()
            .find(|d| d.name == name)
            .map(|d| d.value)
    }
}

pub const RESULT_COLUMNS: [&str; 6] = ["experiment", "seed", "epoch", "split", "metric", "value"];

#[derive(Debug, Serialize, Deserialize)]
struct Row {
    experiment: String,
    seed: u64,
    epoch: Option<usize>,
    split: String,
    metric: String,
    value: String,
}

fn record_rows(r: &ResultRecord) -> Vec<Row> {
    let row = |epoch, split: &str, metric: &str, value: String| Row {
        experiment: r.experiment.clone(),
        seed: r.seed,
        epoch,
        split: split.into(),
        metric: metric.into(),
        value,
    };
    let mut rows = Vec::new();
    for (k, v) in &r.hyperparams {
        rows.push(row(None, "config", k, v.clone()));
    }
    for m in &r.history {
        let e = Some(m.epoch);
        rows.push(row(e, "train", "phase", m.phase.clone()));
        rows.push(row(e, "train", "loss", m.train_loss.to_string()));
        rows.push(row(e, "val", "accuracy", m.val_accuracy.to_string()));
        rows.push(row(e, "test", "accuracy", m.test_accuracy.to_string()));
    }
    rows.push(row(None, "val", "accuracy", r.val_accuracy.to_string()));
    rows.push(row(None, "test", "accuracy", r.test_accuracy.to_string()));
    for d in &r.derived {
        rows.push(row(None, "derived", &d.name, d.value.to_string()));
    }
    rows
}

/// Writes records as a long CSV and the full records as `<path>.json`.
pub fn write_results(records: &[ResultRecord], path: &Path) -> Result<()> {
    let mut seen = std::collections::HashSet::new();
    for r in records {
        r.validate()?;
        if !seen.insert((&r.experiment, r.seed)) {
            return Err(Error::Contract(format!(
                "duplicate record `{}` seed {}",
                r.experiment, r.seed
            )));
        }
    }
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(create(path)?);
    w.write_record(RESULT_COLUMNS)
        .map_err(|e| csv_error(path, e))?;
    for r in records {
        for row in record_rows(r) {
            w.serialize(row).map_err(|e| csv_error(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    write_json(&sidecar_path(path), &records)
}

pub fn sidecar_path(csv_path: &Path) -> PathBuf {
    let mut s = csv_path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

fn parse_num<T: std::str::FromStr>(path: &Path, row: &Row) -> Result<T> {
    row.value.parse().map_err(|_| {
        Error::parse(
            path,
            format!(
                "`{}` for {}/{} is not a number",
                row.value, row.split, row.metric
            ),
        )
    })
}

/// Parses a results CSV back into records.
pub fn read_results(path: &Path) -> Result<Vec<ResultRecord>> {
    let mut reader = csv::Reader::from_reader(BufReader::new(open(path)?));
    let headers = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    if headers.iter().ne(RESULT_COLUMNS) {
        return Err(Error::parse(path, format!("unexpected header {headers:?}")));
    }
    let mut records: Vec<ResultRecord> = Vec::new();
    let mut index: HashMap<(String, u64), usize> = HashMap::new();
    let mut open_epochs: HashMap<(String, u64), usize> = HashMap::new();
    for row in reader.deserialize::<Row>() {
        let row = row.map_err(|e| csv_error(path, e))?;
        let key = (row.experiment.clone(), row.seed);
        let idx = *index.entry(key.clone()).or_insert_with(|| {
            records.push(ResultRecord {
                experiment: row.experiment.clone(),
                seed: row.seed,
                hyperparams: Vec::new(),
                history: Vec::new(),
                val_accuracy: 0.0,
                test_accuracy: 0.0,
                derived: Vec::new(),
            });
            records.len() - 1
        });
        let r = &mut records[idx];
        match (row.epoch, row.split.as_str(), row.metric.as_str()) {
            (None, "config", _) => r.hyperparams.push((row.metric.clone(), row.value.clone())),
            (None, "derived", _) => r.derived.push(DerivedMetric {
                name: row.metric.clone(),
                value: parse_num(path, &row)?,
            }),
            (None, "val", "accuracy") => r.val_accuracy = parse_num(path, &row)?,
            (None, "test", "accuracy") => r.test_accuracy = parse_num(path, &row)?,
            (Some(epoch), "train", "phase") => {
                r.history.push(EpochMetric {
                    epoch,
                    phase: row.value.clone(),
                    train_loss: 0.0,
                    val_accuracy: 0.0,
                    test_accuracy: 0.0,
                });
                open_epochs.insert(key, epoch);
            }
            (Some(epoch), split, metric) => {
                let m = r
                    .history
                    .last_mut()
                    .filter(|m| m.epoch == epoch && open_epochs.get(&key) == Some(&epoch))
                    .ok_or_else(|| {
                        Error::parse(path, format!("epoch {epoch} row before its phase row"))
                    })?;
                match (split, metric) {
                    ("train", "loss") => m.train_loss = parse_num(path, &row)?,
                    ("val", "accuracy") => m.val_accuracy = parse_num(path, &row)?,
                    ("test", "accuracy") => m.test_accuracy = parse_num(path, &row)?,
                    _ => {
                        return Err(Error::parse(
                            path,
                            format!("unknown epoch metric {split}/{metric}"),
                        ))
                    }
                }
            }
            (None, split, metric) => {
                return Err(Error::parse(
                    path,
                    format!("unknown summary metric {split}/{metric}"),
                ))
            }
        }
    }
    Ok(records)
}

/// Reads the JSON sidecar written next to a results CSV.
pub fn read_results_sidecar(csv_path: &Path) -> Result<Vec<ResultRecord>> {
    read_json(&sidecar_path(csv_path))
}

/// Writes message weights as `i,j,weight` rows (`i` receives from `j`),
/// self-loops included.
pub fn write_weight_triples(adj: &Adjacency, weights: &EdgeWeights, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(["i", "j", "weight"])
        .map_err(|e| csv_error(path, e))?;
    for (i, j, v) in weights.triples(adj) {
        w.serialize((i, j, v)).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads weights written by [`write_weight_triples`] for the same graph.
pub fn read_weight_triples(adj: &Adjacency, path: &Path) -> Result<EdgeWeights> {
    let mut reader = csv::Reader::from_reader(BufReader::new(open(path)?));
    let mut lookup: HashMap<(usize, usize), usize> = HashMap::new();
    for k in 0..adj.n_messages() {
        lookup.insert((adj.dst[k], adj.src[k]), k);
    }
    let mut values = vec![f64::NAN; adj.n_messages()];
    for row in reader.deserialize::<(usize, usize, f64)>() {
        let (i, j, v) = row.map_err(|e| csv_error(path, e))?;
        let k = *lookup.get(&(i, j)).ok_or_else(|| {
            Error::parse(path, format!("({i}, {j}) is not a message of this graph"))
        })?;
        values[k] = v;
    }
    if let Some(k) = values.iter().position(|v| v.is_nan()) {
        return Err(Error::parse(
            path,
            format!("missing weight for ({}, {})", adj.dst[k], adj.src[k]),
        ));
    }
    Ok(EdgeWeights { values })
}

/// Writes a matrix as headerless CSV rows.
pub fn write_matrix(m: &Matrix, path: &Path) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(create(path)?);
    for row in m.rows() {
        w.write_record(row.iter().map(|v| v.to_string()))
            .map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes any serializable rows as a CSV with a header.
pub fn write_table<T: Serialize>(rows: &[T], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    for r in rows {
        w.serialize(r).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
