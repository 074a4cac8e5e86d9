use std::ffi::OsStr;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use arbor_core::cloud::{load_cloud, CloudFormat};
use arbor_core::pipeline::PipelineConfig;
use arbor_core::skeleton::{read_labels_csv, SkeletonDoc};
use arbor_core::synthetic::TreeSpec;

fn arbor<S: AsRef<OsStr>>(args: &[S]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_arbor")).args(args).output().expect("binary runs")
}

fn ok<S: AsRef<OsStr> + std::fmt::Debug>(args: &[S]) -> String {
    let out = arbor(args);
    assert!(
        out.status.success(),
        "arbor {args:?} failed: {}\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn small_spec(dir: &Path, seed: u64, branches: usize) -> PathBuf {
    let spec = TreeSpec {
        seed,
        leading_branch_count: branches,
        recursion_depth: 1,
        ground_density: 1500.0,
        sky_noise_count: 300,
        ..TreeSpec::default()
    };
    let path = dir.join(format!("spec_{seed}_{branches}.json"));
    fs::write(&path, serde_json::to_string(&spec).unwrap()).unwrap();
    path
}

/// Trains the three stages on a small synthetic tree; returns model flags.
fn train_models(dir: &Path) -> Vec<String> {
    let spec = small_spec(dir, 50, 3);
    ok(&["synth", "--spec", s(&spec), "--out", s(dir), "--stem", "train"]);
    let mut flags = Vec::new();
    for stage in ["ground", "noise", "branch"] {
        let model = dir.join(format!("{stage}.json"));
        ok(&["train", s(&dir.join("train.ply")), "--stage", stage, "--out", s(&model), "--n-trees", "20"]);
        flags.push(format!("--{stage}-model"));
        flags.push(model.to_str().unwrap().to_string());
    }
    flags
}

#[test]
fn help_lists_every_default() {
    let help = ok(&["pipeline", "--help"]);
    let defaults = serde_json::to_value(PipelineConfig::default()).unwrap();
    for (key, value) in defaults.as_object().unwrap() {
        let shown = match value {
            serde_json::Value::Number(n) => format!("{}", n.as_f64().unwrap()),
            serde_json::Value::Array(a) => {
                a.iter().map(|v| format!("{}", v.as_f64().unwrap())).collect::<Vec<_>>().join(" ")
            }
            serde_json::Value::Null => "none".to_string(),
            _ => continue,
        };
        let flag = format!("--{}", key.replace('_', "-"));
        let line = help
            .lines()
            .find(|l| l.trim_start().starts_with(&format!("{flag} ")))
            .unwrap_or_else(|| panic!("{flag} missing from help"));
        assert!(line.contains(&format!("[default: {shown}]")), "{flag}: {line}");
    }
}

#[test]
fn usage_error_exits_one() {
    assert_eq!(arbor(&["synth", "--no-such-flag"]).status.code(), Some(1));
    assert_eq!(arbor(&["train", "x.ply", "--stage", "bogus", "--out", "m.json"]).status.code(), Some(1));
    assert_eq!(arbor(&["--help"]).status.code(), Some(0));
}

#[test]
fn synth_writes_reloadable_deterministic_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    ok(&["synth", "--out", s(&a), "--seed", "7"]);
    ok(&["synth", "--out", s(&b), "--seed", "7"]);
    let cloud = load_cloud(&a.join("tree.ply"), CloudFormat::PlyAscii).unwrap();
    let doc = SkeletonDoc::load(&a.join("tree_skeleton.json")).unwrap();
    doc.validate().unwrap();
    let labels = read_labels_csv(&a.join("tree_labels.csv")).unwrap();
    assert_eq!(labels.len(), cloud.len());
    for f in ["tree.ply", "tree_skeleton.json", "tree_labels.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn synth_node_count_matches_recursion() {
    let dir = tempfile::tempdir().unwrap();
    let (n, c, sb) = (5, 2, 2);
    let spec = TreeSpec {
        leading_branch_count: n,
        child_branch_count_range: [c, c],
        small_branch_count: sb,
        recursion_depth: 2,
        point_density: 5000.0,
        ..TreeSpec::default()
    };
    let path = dir.path().join("spec.json");
    fs::write(&path, serde_json::to_string(&spec).unwrap()).unwrap();
    ok(&["synth", "--spec", s(&path), "--out", s(dir.path())]);
    let doc = SkeletonDoc::load(&dir.path().join("tree_skeleton.json")).unwrap();
    // One fork and one tip per branch, plus trunk base and top.
    let branches = n + sb + n * c;
    assert_eq!(doc.nodes.len(), 2 * branches + 2);
}

#[test]
fn synth_bad_spec_fails() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    fs::write(&bad, r#"{"trunk_height": -1.0}"#).unwrap();
    let out = arbor(&["synth", "--spec", s(&bad), "--out", s(dir.path())]);
    assert_ne!(out.status.code(), Some(0));
    assert!(!String::from_utf8_lossy(&out.stderr).is_empty());
    fs::write(&bad, "{ not json").unwrap();
    assert_eq!(arbor(&["synth", "--spec", s(&bad), "--out", s(dir.path())]).status.code(), Some(2));
}

#[test]
fn train_reports_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let spec = small_spec(dir.path(), 21, 3);
    ok(&["synth", "--spec", s(&spec), "--out", s(dir.path())]);
    let cloud = dir.path().join("tree.ply");
    let m1 = dir.path().join("m1.json");
    let m2 = dir.path().join("m2.json");
    let out = ok(&["train", s(&cloud), "--stage", "ground", "--out", s(&m1), "--n-trees", "20"]);
    ok(&["train", s(&cloud), "--stage", "1", "--out", s(&m2), "--n-trees", "20"]);
    assert_eq!(fs::read(&m1).unwrap(), fs::read(&m2).unwrap());
    let oa: f64 = out
        .lines()
        .find_map(|l| l.strip_prefix("OA [%]: "))
        .expect("OA line")
        .parse()
        .unwrap();
    assert!(oa >= 99.0, "stage 1 OA {oa}");
    assert!(dir.path().join("m1.json.confusion.csv").exists());

    let out = ok(&["train", s(&cloud), "--stage", "branch", "--out", s(&m1), "--n-trees", "20"]);
    let oa: f64 = out.lines().find_map(|l| l.strip_prefix("OA [%]: ")).unwrap().parse().unwrap();
    assert!(oa >= 95.0, "stage 3 OA {oa}");
}

#[test]
fn train_without_class_field_is_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("plain.csv");
    let mut text = String::from("x,y,z\n");
    for i in 0..200 {
        text.push_str(&format!("{},{},0\n", i % 20, i / 20));
    }
    fs::write(&path, text).unwrap();
    let out = arbor(&["train", s(&path), "--stage", "ground", "--out", s(&dir.path().join("m.json"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("class"));
}

#[test]
fn skeletonize_outputs_validate_and_reproduce() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let models = train_models(d);
    let models: Vec<&str> = models.iter().map(String::as_str).collect();
    let spec = small_spec(d, 51, 3);
    ok(&["synth", "--spec", s(&spec), "--out", s(d), "--stem", "test"]);

    let test_ply = d.join("test.ply");
    let run = |out: &Path, threads: &str, extra: &[&str]| {
        let mut args: Vec<&str> = vec!["--threads", threads, "skeletonize", s(&test_ply), "--out", s(out)];
        args.extend_from_slice(&models);
        args.extend_from_slice(extra);
        ok(&args)
    };
    let a = d.join("run_a");
    let b = d.join("run_b");
    let line = run(&a, "1", &["--keep-intermediate"]);
    assert!(line.contains("nodes") && line.contains("edges") && line.contains("rest"), "{line}");
    run(&b, "3", &[]);

    let doc = SkeletonDoc::load(&a.join("skeleton.json")).unwrap();
    doc.validate().unwrap();
    assert_eq!(doc.edges.len(), doc.nodes.len() - 1);
    for f in ["skeleton.json", "labeled.ply", "labels.csv", "skeleton.dot"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    for f in ["preprocessed.ply", "branches.ply", "features.csv", "config.json", "summary.json"] {
        assert!(a.join(f).exists(), "{f}");
    }
    let cfg = PipelineConfig::load(&a.join("config.json")).unwrap();
    assert!(cfg.models.ground.is_some());

    // Evaluate the run against the ground truth, then against itself.
    let report = d.join("eval");
    ok(&[
        "evaluate",
        "--computed", s(&a.join("skeleton.json")),
        "--reference", s(&d.join("test_skeleton.json")),
        "--computed-labels", s(&a.join("labels.csv")),
        "--reference-labels", s(&d.join("test_labels.csv")),
        "--out", s(&report),
    ]);
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(report.join("report.json")).unwrap()).unwrap();
    for key in ["nodes_true_pct", "edges_true_pct", "edges_length_weighted_pct"] {
        let v = json["skeleton"]["all"][key].as_f64().unwrap();
        assert!((0.0..=100.0).contains(&v), "{key} = {v}");
    }
    let oa = json["points"]["overall_accuracy"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&oa));

    let own = ok(&[
        "evaluate",
        "--computed", s(&a.join("skeleton.json")),
        "--reference", s(&a.join("skeleton.json")),
        "--computed-labels", s(&a.join("labels.csv")),
        "--reference-labels", s(&a.join("labels.csv")),
    ]);
    let all_line = own.lines().find(|l| l.starts_with("Nodes true")).unwrap();
    assert!(all_line.trim_end().ends_with("100.00"), "{all_line}");
    assert!(own.contains("(reference Rest excluded): 100.00"), "{own}");

    // Bare trunk: a chain with no leading branches.
    let bare = small_spec(d, 52, 0);
    let mut spec: TreeSpec = serde_json::from_str(&fs::read_to_string(&bare).unwrap()).unwrap();
    spec.small_branch_count = 0;
    fs::write(&bare, serde_json::to_string(&spec).unwrap()).unwrap();
    ok(&["synth", "--spec", s(&bare), "--out", s(d), "--stem", "bare"]);
    let c = d.join("run_bare");
    let bare_ply = d.join("bare.ply");
    let mut args: Vec<&str> = vec!["skeletonize", s(&bare_ply), "--out", s(&c)];
    args.extend_from_slice(&models);
    let line = ok(&args);
    assert!(line.contains("0 leading branches"), "{line}");
    let doc = SkeletonDoc::load(&c.join("skeleton.json")).unwrap();
    doc.validate().unwrap();
    let mut children = vec![0usize; doc.nodes.len()];
    for e in &doc.edges {
        children[doc.index_of(e.parent).unwrap()] += 1;
    }
    assert!(children.iter().all(|&k| k <= 1), "bare trunk skeleton is not a chain");
}

#[test]
fn evaluate_rejects_mismatched_point_sets() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["synth", "--out", s(d), "--seed", "3", "--stem", "a"]);
    let labels = fs::read_to_string(d.join("a_labels.csv")).unwrap();
    let truncated: String = labels.lines().take(100).map(|l| format!("{l}\n")).collect();
    fs::write(d.join("short.csv"), truncated).unwrap();
    let sk = d.join("a_skeleton.json");
    let out = arbor(&[
        "evaluate",
        "--computed", s(&sk),
        "--reference", s(&sk),
        "--computed-labels", s(&d.join("short.csv")),
        "--reference-labels", s(&d.join("a_labels.csv")),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn trunk_failure_exits_three_naming_the_stage() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("flat.csv");
    let mut text = String::from("x,y,z\n");
    for i in 0..400 {
        text.push_str(&format!("{},{},0.01\n", (i % 20) as f64 * 0.01, (i / 20) as f64 * 0.01));
    }
    fs::write(&path, text).unwrap();
    let out = arbor(&["skeletonize", s(&path), "--preprocessed", "--out", s(&dir.path().join("o"))]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("trunk cylinder"));
}

#[test]
fn flags_override_config_file_and_are_echoed() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg_path = d.join("cfg.json");
    fs::write(&cfg_path, r#"{"sor_k": 9, "edge_max_mm": 25}"#).unwrap();
    let flat = d.join("flat.csv");
    fs::write(&flat, "x,y,z\n0,0,0\n1,0,0\n0,1,0\n").unwrap();
    let out_dir = d.join("o");
    // Fails at the trunk stage, after the effective config has been written.
    let out = arbor(&[
        "skeletonize", s(&flat), "--preprocessed", "--out", s(&out_dir),
        "--config", s(&cfg_path), "--edge-max-mm", "20",
    ]);
    assert_eq!(out.status.code(), Some(3));
    let cfg = PipelineConfig::load(&out_dir.join("config.json")).unwrap();
    assert_eq!(cfg.sor_k, 9);
    assert_eq!(cfg.edge_max_mm, 20.0);
    assert_eq!(cfg.subsample_mm, 5.0);
    let bad = arbor(&["skeletonize", s(&flat), "--out", s(&out_dir), "--edge-max-mm", "0"]);
    assert_eq!(bad.status.code(), Some(1));
}
