use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn sshpool(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sshpool"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

const TINY: &[&str] = &[
    "--synthetic",
    "protein-like",
    "--synthetic-graphs",
    "24",
    "--hidden",
    "8",
    "--layer-sizes",
    "8,4",
    "--ratio",
    "0.5",
    "--epochs",
    "2",
    "--folds",
    "3",
    "--repeats",
    "1",
];

fn with<'a>(base: &[&'a str], extra: &[&'a str]) -> Vec<&'a str> {
    base.iter().chain(extra).copied().collect()
}

/// A TU-format dataset of two graphs: a single node and a path of three.
fn write_tiny_tu(dir: &Path) {
    let w = |suffix: &str, body: &str| fs::write(dir.join(format!("TINY_{suffix}.txt")), body).unwrap();
    w("A", "2, 3\n3, 2\n3, 4\n4, 3\n");
    w("graph_indicator", "1\n2\n2\n2\n");
    w("graph_labels", "0\n1\n");
    w("node_labels", "0\n1\n0\n1\n");
}

#[test]
fn usage_errors_exit_2() {
    let o = sshpool(&with(TINY, &["train", "--epochs", "0"]));
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    assert!(stderr(&o).contains("epochs must be at least 1"), "{}", stderr(&o));

    let o = sshpool(&["stats"]);
    assert_eq!(code(&o), 2);

    let o = sshpool(&with(TINY, &["pool-trace", "--graph-index", "99"]));
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("out of range"));

    let o = sshpool(&["--layer-sizes", "8,8", "gradcheck"]);
    assert_eq!(code(&o), 2);

    let o = sshpool(&["train", "--arch", "mystery"]);
    assert_eq!(code(&o), 2);

    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.conf");
    fs::write(&cfg, "colour = red\n").unwrap();
    let o = sshpool(&["--config", cfg.to_str().unwrap(), "gradcheck"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("colour"));
}

#[test]
fn ingest_errors_exit_3_and_name_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let o = sshpool(&["--data", dir.path().to_str().unwrap(), "--name", "MISSING", "stats"]);
    assert_eq!(code(&o), 3);
    assert!(stderr(&o).contains("MISSING_graph_indicator.txt"), "{}", stderr(&o));

    write_tiny_tu(dir.path());
    fs::write(dir.path().join("TINY_A.txt"), "2, 3\nseven, 2\n").unwrap();
    let o = sshpool(&["--data", dir.path().to_str().unwrap(), "--name", "TINY", "stats"]);
    assert_eq!(code(&o), 3);
    assert!(stderr(&o).contains("TINY_A.txt"), "{}", stderr(&o));

    let o = sshpool(&with(TINY, &["eval", "--checkpoint", "/nonexistent/model.ckpt"]));
    assert_eq!(code(&o), 3);
}

#[test]
fn gradcheck_reports_groups_and_fails_on_tight_tolerance() {
    let o = sshpool(&["gradcheck"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let out = stdout(&o);
    for group in ["global_conv.0.weight", "sshpool.0.local", "attention.key", "mlp.out.bias"] {
        assert!(out.contains(group), "{out}");
    }
    let o = sshpool(&["gradcheck", "--tolerance", "1e-30"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("gradient mismatch in:"));
}

#[test]
fn train_writes_artifacts_and_config_precedence_holds() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let cfg = dir.path().join("run.conf");
    fs::write(&cfg, "# quick run\nepochs = 5\nlr = 0.002\nbatch-size = 4\n").unwrap();
    let o = sshpool(&with(
        TINY,
        &["--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "train"],
    ));
    assert_eq!(code(&o), 0, "{}", stderr(&o));

    let text = fs::read_to_string(out.join("report.json")).unwrap();
    let report: Value = serde_json::from_str(&text).unwrap();
    // Flag beats file, file beats default.
    assert_eq!(report["train"]["epochs"], 2);
    assert_eq!(report["train"]["lr"], 0.002);
    assert_eq!(report["train"]["batch_size"], 4);
    assert_eq!(report["runs"].as_array().unwrap().len(), 3);
    let keys: Vec<&String> = report.as_object().unwrap().keys().collect();
    let mut sorted = keys.clone();
    sorted.sort();
    assert_eq!(keys, sorted);

    let curves = fs::read_to_string(out.join("curves.csv")).unwrap();
    assert!(curves.starts_with("epoch,split,loss,accuracy\n"));
    assert_eq!(curves.lines().count(), 1 + 2 * 2);

    let ckpt = out.join("model.ckpt");
    let o = sshpool(&with(TINY, &["eval", "--checkpoint", ckpt.to_str().unwrap()]));
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let eval: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(eval["graphs"], 24);
    let acc = eval["accuracy"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&acc));

    // A checkpoint for 3 features cannot read a 64-feature dataset.
    let o = sshpool(&[
        "--synthetic",
        "triangles",
        "--synthetic-graphs",
        "6",
        "eval",
        "--checkpoint",
        ckpt.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 2);
}

#[test]
fn train_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let out = dir.path().join(name);
        let o = sshpool(&with(TINY, &["--workers", "1", "--seed", "7", "--out", out.to_str().unwrap(), "train"]));
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        (
            fs::read(out.join("report.json")).unwrap(),
            fs::read(out.join("curves.csv")).unwrap(),
        )
    };
    assert_eq!(run("a"), run("b"));
    let (report, _) = run("a");
    let o = sshpool(&with(TINY, &["--workers", "1", "--seed", "8", "--out", dir.path().join("c").to_str().unwrap(), "train"]));
    assert_eq!(code(&o), 0);
    assert_ne!(report, fs::read(dir.path().join("c/report.json")).unwrap());
}

fn trace_lines(o: &Output) -> Vec<Value> {
    stdout(o).lines().map(|l| serde_json::from_str(l).unwrap()).collect()
}

#[test]
fn pool_trace_on_fixture() {
    let o = sshpool(&["--hidden", "6", "--layer-sizes", "2,1", "--ratio", "0.5", "pool-trace"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let lines = trace_lines(&o);
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[0]["input_nodes"], 6);
    assert_eq!(lines[0]["clusters"], 2);
    let sizes: Vec<u64> = lines[0]["cluster_sizes"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_u64().unwrap())
        .collect();
    assert_eq!(sizes.iter().sum::<u64>(), 6);
    let mut members: Vec<u64> = lines[0]["members"]
        .as_array()
        .unwrap()
        .iter()
        .flat_map(|m| m.as_array().unwrap().iter().map(|v| v.as_u64().unwrap()))
        .collect();
    members.sort();
    assert_eq!(members, (0..6).collect::<Vec<_>>());
    // 7 edges in total: intra-cluster ones vanish, cut ones appear twice in A'.
    let a = lines[0]["adjacency"].as_array().unwrap();
    let off: f64 = a
        .iter()
        .enumerate()
        .flat_map(|(i, row)| {
            row.as_array()
                .unwrap()
                .iter()
                .enumerate()
                .filter(move |(j, _)| *j != i)
                .map(|(_, v)| v.as_f64().unwrap())
        })
        .sum();
    assert_eq!(off, 2.0 * lines[0]["dropped_edges"].as_f64().unwrap());
    assert_eq!(lines[1]["clusters"], 1);
    assert_eq!(lines[1]["adjacency"], serde_json::json!([[0.0]]));
}

#[test]
fn pool_trace_on_single_node_graph() {
    let dir = tempfile::tempdir().unwrap();
    write_tiny_tu(dir.path());
    let data = dir.path().to_str().unwrap();
    let o = sshpool(&["--data", data, "--name", "TINY", "pool-trace", "--graph-index", "0"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let lines = trace_lines(&o);
    assert_eq!(lines.len(), 3);
    for l in &lines {
        assert_eq!(l["input_nodes"], 1);
        assert_eq!(l["clusters"], 1);
        assert_eq!(l["members"], serde_json::json!([[0]]));
        assert_eq!(l["adjacency"], serde_json::json!([[0.0]]));
        assert_eq!(l["dropped_edges"], 0);
    }

    let o = sshpool(&["--data", data, "--name", "TINY", "stats"]);
    assert_eq!(code(&o), 0);
    let stats: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(stats["graphs"], 2);
    assert_eq!(stats["max_nodes"], 3);
    assert_eq!(stats["total_edges"], 2);
}

#[test]
fn diagnostics_commands() {
    let o = sshpool(&["diagnose", "locality", "--trials", "100"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let report: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(report["passed_trials"], 100);
    assert!(report["violations"].as_array().unwrap().is_empty());

    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = sshpool(&["--hidden", "8", "--layer-sizes", "8,4,2", "--ratio", "0.5", "--out", out, "diagnose", "smoothing", "--graphs", "10"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let cmp: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(cmp["reference"]["layers"].as_array().unwrap().len(), 4);
    let csv = fs::read_to_string(dir.path().join("smoothing_model.csv")).unwrap();
    assert!(csv.starts_with("layer,mean_cosine,nodes,skipped_pairs\n"));
    assert!(dir.path().join("smoothing_reference.csv").exists());
}

#[test]
fn sweep_depth_emits_csv() {
    let o = sshpool(&with(TINY, &["--epochs", "1", "sweep", "depth", "--values", "1,2"]));
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let out = stdout(&o);
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[0].starts_with("parameter,layer_sizes,sshpool_mean"));
    assert!(lines[1].starts_with("1,8,"));
    assert!(lines[2].starts_with("2,8;4,"));
}
