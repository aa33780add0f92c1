mod common;

use std::fs;
use std::path::Path;

use common::*;
use rand::Rng;
use sgdspar::pipeline::{self, Ablation, PipelineConfig};
use sgdspar::sparsify::MetricsMode;

/// Two tight Gaussian blobs in the plane, ten units apart, label last.
fn write_blobs(path: &Path, per: usize) {
    let mut r = rng(7);
    let mut csv = String::new();
    for label in 0..2 {
        for _ in 0..per {
            let x = 10.0 * label as f64 + r.random::<f64>() - 0.5;
            let y = r.random::<f64>() - 0.5;
            csv.push_str(&format!("{x},{y},{label}\n"));
        }
    }
    fs::write(path, csv).unwrap();
}

fn blob_config(dir: &Path) -> PipelineConfig {
    write_blobs(&dir.join("blobs.csv"), 40);
    let mut cfg = PipelineConfig::default();
    cfg.set("dataset", dir.join("blobs.csv").to_str().unwrap())
        .unwrap();
    cfg.set("output", dir.join("out").to_str().unwrap())
        .unwrap();
    cfg.set("knn_k", "6").unwrap();
    cfg.validate().unwrap();
    cfg
}

#[test]
fn pipeline_separates_two_blobs_and_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = blob_config(dir.path());
    let report = pipeline::cmd_pipeline(&cfg).unwrap();
    assert_eq!(report.n, 80);
    assert_eq!(report.clusters, 2);
    assert_eq!(report.acc, Some(100.0));
    let out = dir.path().join("out");
    for name in [
        "original.graph",
        "tree.graph",
        "sparsified.graph",
        "scaled.graph",
        "labels.csv",
        "acc_vs_budget.csv",
        "ratio_var_vs_budget.csv",
        "metrics.json",
        "MANIFEST",
    ] {
        assert!(out.join(name).is_file(), "missing {name}");
    }
    let manifest = fs::read_to_string(out.join("MANIFEST")).unwrap();
    let stages: Vec<&str> = manifest.lines().collect();
    assert_eq!(stages.first(), Some(&"graph"));
    assert_eq!(stages.last(), Some(&"report"));
    let metrics: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("metrics.json")).unwrap()).unwrap();
    assert_eq!(metrics["acc"], serde_json::json!(100.0));
    let labels = sgdspar::dataio::load_labels(out.join("labels.csv")).unwrap();
    assert_eq!(labels.len(), 80);
}

#[test]
fn pipeline_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = blob_config(dir.path());
    pipeline::cmd_pipeline(&cfg).unwrap();
    cfg.set("output", dir.path().join("again").to_str().unwrap())
        .unwrap();
    pipeline::cmd_pipeline(&cfg).unwrap();
    for name in [
        "sparsified.graph",
        "scaled.graph",
        "labels.csv",
        "acc_vs_budget.csv",
    ] {
        let a = fs::read(dir.path().join("out").join(name)).unwrap();
        let b = fs::read(dir.path().join("again").join(name)).unwrap();
        assert_eq!(a, b, "{name} differs");
    }
}

#[test]
fn config_text_round_trips() {
    let mut cfg = PipelineConfig::default();
    cfg.set("budget", "0.07").unwrap();
    cfg.set("kernel", "gaussian").unwrap();
    cfg.set("acc_budgets", "0.01,0.2").unwrap();
    cfg.set("scaling", "false").unwrap();
    let back = PipelineConfig::from_text(&cfg.to_text()).unwrap();
    assert_eq!(back.to_text(), cfg.to_text());
    assert_eq!(back.budget, 0.07);
    assert!(!back.scaling);
}

#[test]
fn config_rejects_bad_input() {
    let mut cfg = PipelineConfig::default();
    assert!(cfg.set("no_such_key", "1").is_err());
    assert!(cfg.set("budget", "lots").is_err());
    cfg.set("batch_fraction", "0").unwrap();
    assert!(cfg.validate().is_err());
    let err = PipelineConfig::from_text("# comment\nknn_k = 5\nbroken line\n").unwrap_err();
    assert!(err.to_string().contains('3'), "{err}");
}

#[test]
fn full_method_matches_original_graph_on_two_cliques() {
    let dir = tempfile::tempdir().unwrap();
    let (g, labels) = two_cliques(12);
    let prep = pipeline::prepare_graph(g, Some(labels), 2).unwrap();
    let mut cfg = PipelineConfig::default();
    cfg.set("output", dir.path().to_str().unwrap()).unwrap();
    cfg.set("runs", "2").unwrap();
    let report = pipeline::compare_prepared(&prep, &cfg, Ablation::Original).unwrap();
    assert_eq!(report.full.accs, vec![100.0, 100.0]);
    assert_eq!(report.ablation.accs, vec![100.0, 100.0]);
}

#[test]
fn metrics_of_cycle_against_path_tree() {
    let m = pipeline::cmd_metrics(&cycle(4), &path(4), MetricsMode::Exact { cap: 100 }, 0).unwrap();
    assert!((m.lambda1 - 4.0).abs() < 1e-10);
    assert!((m.lambdan - 1.0).abs() < 1e-10);
    assert!((m.kappa - 4.0).abs() < 1e-9);
}
