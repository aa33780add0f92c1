use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn sgdspar(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sgdspar"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = sgdspar(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

/// Two separated blobs of 30 points each, label last.
fn write_blobs(dir: &Path) {
    let mut csv = String::new();
    for label in 0..2 {
        for i in 0..30 {
            let a = i as f64 * 0.7;
            let x = 10.0 * label as f64 + 0.4 * a.cos() * (i % 5) as f64 / 5.0;
            let y = 0.4 * a.sin() * (i % 7) as f64 / 7.0;
            csv.push_str(&format!("{x},{y},{label}\n"));
        }
    }
    fs::write(dir.join("blobs.csv"), csv).unwrap();
}

#[test]
fn stage_commands_chain_to_perfect_accuracy() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_blobs(d);
    ok(d, &["knn-graph", "blobs.csv", "-o", "g.graph", "--k", "5"]);
    assert!(d.join("g.labels.csv").is_file());
    ok(
        d,
        &[
            "sparsify",
            "g.graph",
            "-o",
            "s.graph",
            "--history",
            "rounds.json",
        ],
    );
    ok(
        d,
        &[
            "scale",
            "g.graph",
            "s.graph",
            "-o",
            "sc.graph",
            "--history",
            "sgd.json",
        ],
    );
    ok(
        d,
        &[
            "cluster",
            "sc.graph",
            "--k",
            "2",
            "-o",
            "pred.csv",
            "--original",
            "g.graph",
        ],
    );
    let report: serde_json::Value =
        serde_json::from_str(&ok(d, &["eval", "pred.csv", "g.labels.csv"])).unwrap();
    assert_eq!(report["acc"], serde_json::json!(100.0));
    assert_eq!(report["n"], serde_json::json!(60));
    for f in ["rounds.json", "sgd.json"] {
        serde_json::from_str::<serde_json::Value>(&fs::read_to_string(d.join(f)).unwrap()).unwrap();
    }

    let m: serde_json::Value =
        serde_json::from_str(&ok(d, &["metrics", "g.graph", "s.graph"])).unwrap();
    assert!(m["kappa"].as_f64().unwrap() >= 1.0);
    assert_eq!(m["approximate"], serde_json::json!(false));
}

#[test]
fn pipeline_accepts_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_blobs(d);
    let cfg = "dataset = blobs.csv\noutput = run\nknn_k = 5\n";
    fs::write(d.join("run.cfg"), cfg).unwrap();
    ok(
        d,
        &[
            "pipeline",
            "--config",
            "run.cfg",
            "--set",
            "budget=0.1",
            "--set",
            "acc_budgets=0.05",
        ],
    );
    let metrics: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(d.join("run/metrics.json")).unwrap()).unwrap();
    assert_eq!(metrics["acc"], serde_json::json!(100.0));
    assert_eq!(metrics["params"]["budget"], serde_json::json!(0.1));
    let curve = fs::read_to_string(d.join("run/acc_vs_budget.csv")).unwrap();
    assert_eq!(curve.lines().count(), 2);
}

#[test]
fn failures_name_the_stage() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = sgdspar(
        d,
        &[
            "pipeline",
            "--set",
            "dataset=absent.csv",
            "--set",
            "output=o",
        ],
    );
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(
        err.contains("error [graph]") && err.contains("absent.csv"),
        "{err}"
    );

    let out = sgdspar(d, &["pipeline", "--set", "budget=lots"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("budget"));

    let out = sgdspar(d, &["metrics", "a.graph", "b.graph"]);
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error [metrics]"));
}
