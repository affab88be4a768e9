mod common;

use std::fs;
use std::path::Path;

use common::*;
use gdamn::em::EpochMetric;
use gdamn::graph::laplacian_weights;
use gdamn::io::*;
use gdamn::seed::stream_rng;
use gdamn::Error;
use proptest::prelude::*;

#[test]
fn bundle_round_trips_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("g.json");
    let g = random_graph(&mut stream_rng(1, 0), 15, 3, 5, 0.3);
    write_bundle(&g, &path).unwrap();
    let back = read_bundle(&path).unwrap();
    assert_eq!(back.edges(), g.edges());
    assert_eq!(back.features(), g.features());
    assert_eq!(back.labels(), g.labels());
    assert_eq!(back.splits(), g.splits());
    assert_eq!(load_graph(&path).unwrap().edges(), g.edges());
}

#[test]
fn edge_list_round_trips_and_skips_comments() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("edges.txt");
    let edges = vec![(0, 1), (1, 2), (3, 0)];
    write_edge_list(&edges, &path).unwrap();
    assert_eq!(read_edge_list(&path).unwrap(), edges);

    fs::write(&path, "# header\n0 1\n\n2 3\n").unwrap();
    assert_eq!(read_edge_list(&path).unwrap(), vec![(0, 1), (2, 3)]);
    fs::write(&path, "0 1\n2 x\n").unwrap();
    assert!(matches!(read_edge_list(&path), Err(Error::Parse { .. })));
}

/// Five nodes, two classes, four features; node 4 has no features at all.
fn tiny_dataset(dir: &Path, stats: &str) -> std::path::PathBuf {
    fs::write(dir.join("edges.txt"), "0 1\n1 2\n2 3\n3 4\n0 2\n").unwrap();
    fs::write(
        dir.join("features.txt"),
        "0 0 1\n0 3 3\n1 1 2\n2 2 5\n3 0 1\n3 1 1\n",
    )
    .unwrap();
    fs::write(dir.join("labels.txt"), "0\n0\n1\n1\n0\n").unwrap();
    fs::write(
        dir.join("splits.json"),
        r#"{"train": [0, 2], "val": [1], "test": [3, 4]}"#,
    )
    .unwrap();
    let manifest = format!(
        r#"{{"name": "tiny", "edges": "edges.txt", "features": "features.txt",
            "labels": "labels.txt", "splits": "splits.json", "n_features": 4{stats}}}"#
    );
    let path = dir.join("tiny.json");
    fs::write(&path, manifest).unwrap();
    path
}

const GOOD_STATS: &str = r#", "expected_stats": {"n_nodes": 5, "n_edges": 5, "d": 4, "C": 2, "train": 2, "val": 1, "test": 2}"#;

#[test]
fn manifest_loads_with_row_normalized_sparse_features() {
    let dir = tempfile::tempdir().unwrap();
    let g = load_graph(&tiny_dataset(dir.path(), GOOD_STATS)).unwrap();
    assert_eq!(
        (g.n_nodes(), g.n_edges(), g.n_features(), g.n_classes()),
        (5, 5, 4, 2)
    );
    let x = g.features();
    assert_eq!(x.row(0).to_vec(), vec![0.25, 0.0, 0.0, 0.75]);
    assert_eq!(x.row(2).to_vec(), vec![0.0, 0.0, 1.0, 0.0]);
    // The zero row stays zero instead of turning into NaN.
    assert_eq!(x.row(4).to_vec(), vec![0.0; 4]);
    // Normalization keeps the sparsity pattern.
    assert_eq!(x.iter().filter(|&&v| v != 0.0).count(), 6);
    for i in 0..4 {
        assert!((x.row(i).sum() - 1.0).abs() < 1e-15);
    }
}

#[test]
fn integrity_errors_name_the_mismatched_field() {
    let dir = tempfile::tempdir().unwrap();
    for (field, stats) in [
        (
            "n_edges",
            GOOD_STATS.replace(r#""n_edges": 5"#, r#""n_edges": 6"#),
        ),
        ("d", GOOD_STATS.replace(r#""d": 4"#, r#""d": 3"#)),
        ("test", GOOD_STATS.replace(r#""test": 2"#, r#""test": 9"#)),
    ] {
        match load_graph(&tiny_dataset(dir.path(), &stats)) {
            Err(Error::Integrity { field: f, .. }) => assert_eq!(f, field),
            other => panic!("{field}: {other:?}"),
        }
    }
}

#[test]
fn missing_files_are_io_errors() {
    let dir = tempfile::tempdir().unwrap();
    let path = tiny_dataset(dir.path(), "");
    fs::remove_file(dir.path().join("labels.txt")).unwrap();
    let err = load_graph(&path).unwrap_err();
    assert!(matches!(err, Error::Io { .. }));
    assert!(err.is_config_error());
}

fn record(experiment: &str, seed: u64, epochs: usize) -> ResultRecord {
    ResultRecord {
        experiment: experiment.into(),
        seed,
        hyperparams: vec![
            ("beta".into(), "0.4".into()),
            ("method".into(), "gdamn".into()),
        ],
        history: (1..=epochs)
            .map(|e| EpochMetric {
                epoch: e,
                phase: if e <= 2 {
                    "pretrain".into()
                } else {
                    "e1".into()
                },
                train_loss: 1.0 / (e as f64 + 0.3),
                val_accuracy: 0.1 * (e % 10) as f64,
                test_accuracy: 1.0 / 3.0,
            })
            .collect(),
        val_accuracy: 0.8,
        test_accuracy: 0.7 + 1e-17,
        derived: vec![DerivedMetric {
            name: "connectivity_ratio".into(),
            value: f64::INFINITY,
        }],
    }
}

#[test]
fn empty_results_are_header_only() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("results.csv");
    write_results(&[], &path).unwrap();
    assert_eq!(
        fs::read_to_string(&path).unwrap(),
        "experiment,seed,epoch,split,metric,value\n"
    );
    assert!(read_results(&path).unwrap().is_empty());
}

#[test]
fn one_record_round_trips_through_csv_and_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("results.csv");
    let r = record("gdamn", 3, 5);
    write_results(std::slice::from_ref(&r), &path).unwrap();
    assert_eq!(read_results(&path).unwrap(), vec![r.clone()]);
    assert_eq!(read_results_sidecar(&path).unwrap(), vec![r]);
}

#[test]
fn duplicate_and_invalid_records_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("results.csv");
    let r = record("gcn", 0, 2);
    assert!(matches!(
        write_results(&[r.clone(), r.clone()], &path),
        Err(Error::Contract(_))
    ));
    let mut bad = r.clone();
    bad.val_accuracy = 1.5;
    assert!(write_results(&[bad], &path).is_err());
    let mut bad = r;
    bad.history[1].epoch = 1;
    assert!(write_results(&[bad], &path).is_err());
}

#[test]
fn weight_triples_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("w.csv");
    let g = random_graph(&mut stream_rng(2, 0), 12, 2, 3, 0.4);
    let w = laplacian_weights(&g);
    write_weight_triples(g.adjacency(), &w, &path).unwrap();
    assert_eq!(read_weight_triples(g.adjacency(), &path).unwrap(), w);

    let other = random_graph(&mut stream_rng(3, 0), 12, 2, 3, 0.9);
    assert!(read_weight_triples(other.adjacency(), &path).is_err());
}

fn finite() -> impl Strategy<Value = f64> {
    prop_oneof![
        any::<f64>().prop_filter("finite", |v| v.is_finite()),
        Just(0.0),
        Just(-0.0),
        Just(f64::MIN_POSITIVE)
    ]
}

fn unit() -> impl Strategy<Value = f64> {
    prop_oneof![0.0f64..=1.0, Just(0.0), Just(1.0)]
}

fn record_strategy() -> impl Strategy<Value = ResultRecord> {
    (
        "\\PC{1,12}",
        any::<u64>(),
        prop::collection::vec(("[a-z_.]{1,10}", "\\PC{0,8}"), 0..4),
        prop::collection::vec(("\\PC{1,6}", finite(), unit(), unit()), 0..6),
        unit(),
        unit(),
        prop::collection::vec(
            ("[a-z_]{1,10}", prop_oneof![finite(), Just(f64::INFINITY)]),
            0..3,
        ),
    )
        .prop_map(
            |(experiment, seed, hyperparams, history, val, test, derived)| ResultRecord {
                experiment,
                seed,
                hyperparams,
                history: history
                    .into_iter()
                    .enumerate()
                    .map(
                        |(e, (phase, train_loss, val_accuracy, test_accuracy))| EpochMetric {
                            epoch: 2 * e + 1,
                            phase,
                            train_loss,
                            val_accuracy,
                            test_accuracy,
                        },
                    )
                    .collect(),
                val_accuracy: val,
                test_accuracy: test,
                derived: derived
                    .into_iter()
                    .map(|(name, value)| DerivedMetric { name, value })
                    .collect(),
            },
        )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn results_round_trip_losslessly(records in prop::collection::vec(record_strategy(), 0..4)) {
        let mut seen = std::collections::HashSet::new();
        let records: Vec<_> = records.into_iter().filter(|r| seen.insert((r.experiment.clone(), r.seed))).collect();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("results.csv");
        write_results(&records, &path).unwrap();
        let csv = read_results(&path).unwrap();
        let json = read_results_sidecar(&path).unwrap();
        prop_assert_eq!(csv.len(), records.len());
        for ((a, b), c) in records.iter().zip(&csv).zip(&json) {
            prop_assert_eq!(a, b);
            prop_assert_eq!(a, c);
            // Bitwise, so 0.0 and -0.0 are told apart.
            prop_assert_eq!(a.val_accuracy.to_bits(), b.val_accuracy.to_bits());
            for (x, y) in a.history.iter().zip(&b.history) {
                prop_assert_eq!(x.train_loss.to_bits(), y.train_loss.to_bits());
            }
        }
    }
}
