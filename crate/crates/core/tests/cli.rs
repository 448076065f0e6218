use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use transport_fusion::io::{load_manifest, read_labels, read_matrix};

fn tfuse(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tfuse")).args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn synth(dir: &Path, extra: &[&str]) -> PathBuf {
    let out = dir.join("data");
    let mut args = vec!["synth", "--out", s(&out)];
    args.extend_from_slice(extra);
    let o = tfuse(&args);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    out.join("manifest.txt")
}

fn dir_contents(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().into_string().unwrap(), fs::read(e.path()).unwrap())
        })
        .collect();
    v.sort();
    v
}

#[test]
fn synth_is_byte_identical_per_seed() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let flags = ["--n", "50", "--k", "4", "--d", "6", "--y-noise", "0.2", "--seed", "11"];
    let ma = synth(a.path(), &flags);
    synth(b.path(), &flags);
    let ca = dir_contents(&a.path().join("data"));
    assert_eq!(ca.len(), 4);
    assert_eq!(ca, dir_contents(&b.path().join("data")));
    let m = load_manifest(&ma).unwrap();
    assert_eq!(m.validate().unwrap(), (50, 4));
}

#[test]
fn synth_rejects_more_classes_than_samples() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x");
    let o = tfuse(&["synth", "--n", "3", "--k", "5", "--out", s(&out)]);
    assert_eq!(code(&o), 2);
    assert!(!out.exists());
}

#[test]
fn run_writes_valid_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(dir.path(), &["--seed", "2"]);
    let out = dir.path().join("run");
    let o = tfuse(&["run", "--manifest", s(&manifest), "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(stdout(&o).trim(), "accuracy 1");

    let q = read_matrix(out.join("q.otm")).unwrap();
    assert_eq!(q.shape(), (300, 3));
    assert!(q.row_sums().iter().all(|s| (s - 1.0).abs() < 1e-12));
    let pred = read_labels(out.join("predictions.otm")).unwrap();
    assert_eq!(pred.len(), 300);
    for f in ["q.otm", "predictions.otm"] {
        let o = tfuse(&["inspect", "--file", s(&out.join(f))]);
        assert_eq!(code(&o), 0);
    }
    let report = fs::read_to_string(out.join("report.txt")).unwrap();
    for key in ["epsilon = 0.01", "lambda = default", "iters = 10", "sinkhorn_iters = 3", "[trace]", "accuracy = 1"] {
        assert!(report.contains(key), "missing {key:?} in\n{report}");
    }
    assert!(!report.contains("time_ms"));
}

#[test]
fn run_missing_manifest_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = tfuse(&["run", "--manifest", s(&dir.path().join("nope.txt")), "--out", s(&out)]);
    assert_eq!(code(&o), 2);
    assert_eq!(stderr(&o).lines().count(), 1);
    assert!(!out.exists());
}

#[test]
fn invalid_config_leaves_no_output() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(dir.path(), &[]);
    let out = dir.path().join("run");
    let o = tfuse(&["run", "--manifest", s(&manifest), "--out", s(&out), "--lambda", "1", "--lambda", "2"]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    assert!(!out.exists());
    let o = tfuse(&["run", "--manifest", s(&manifest), "--out", s(&out), "--epsilon", "0"]);
    assert_eq!(code(&o), 2);
    assert!(!out.exists());
}

#[test]
fn unknown_flags_and_help() {
    assert_eq!(code(&tfuse(&["run", "--manifest", "m", "--out", "o", "--bogus"])), 2);
    assert_eq!(code(&tfuse(&["frobnicate"])), 2);
    assert_eq!(code(&tfuse(&[])), 2);
    let help = tfuse(&["--help"]);
    assert_eq!(code(&help), 0);
    assert!(stdout(&help).contains("compare"));
}

#[test]
fn etas_are_normalized_and_echoed() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(dir.path(), &[]);
    let text = fs::read_to_string(&manifest).unwrap().replace("feature synth features.otm\n", "feature a features.otm\nfeature b features.otm\n");
    fs::write(&manifest, text).unwrap();
    let out = dir.path().join("run");
    let o = tfuse(&["run", "--manifest", s(&manifest), "--out", s(&out), "--eta", "1", "--eta", "3"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let report = fs::read_to_string(out.join("report.txt")).unwrap();
    assert!(report.contains("eta = 0.25,0.75"), "{report}");
    assert!(report.contains("feature_sources = a,b"));
}

#[test]
fn compare_perfect_semantics_all_methods_exact() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(dir.path(), &["--separation", "10"]);
    let out = dir.path().join("cmp");
    let o = tfuse(&["compare", "--manifest", s(&manifest), "--out", s(&out), "--seeds", "2"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let csv = fs::read_to_string(out.join("report.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "method,accuracy,delta,outer_iterations,objective,violation,class:0,class:1,class:2");
    let methods: Vec<&str> = lines.clone().map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(methods, ["y-argmax", "y-only", "fusion", "no-joint"]);
    for l in lines {
        let f: Vec<&str> = l.split(',').collect();
        assert_eq!((f[1], f[2]), ("1", "0"), "{l}");
    }
    let text = fs::read_to_string(out.join("report.txt")).unwrap();
    assert!(text.contains("seeds = 2"));
}

#[test]
fn compare_multi_source_column_order() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(dir.path(), &["--y-noise", "0.3", "--separation", "4"]);
    let text = fs::read_to_string(&manifest).unwrap().replace("feature synth features.otm\n", "feature a features.otm\nfeature b features.otm\n");
    fs::write(&manifest, text).unwrap();
    let out = dir.path().join("cmp");
    let o = tfuse(&["compare", "--manifest", s(&manifest), "--out", s(&out), "--timing"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let csv = fs::read_to_string(out.join("report.csv")).unwrap();
    assert!(csv.starts_with("method,accuracy,delta,outer_iterations,objective,violation,time_ms,"));
    let methods: Vec<&str> = csv.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(methods, ["y-argmax", "y-only", "single:a", "single:b", "concat", "fusion", "no-joint"]);
}

#[test]
fn compare_without_labels_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(dir.path(), &[]);
    let text = fs::read_to_string(&manifest).unwrap().replace("labels labels.otm\n", "");
    fs::write(&manifest, text).unwrap();
    let out = dir.path().join("cmp");
    let o = tfuse(&["compare", "--manifest", s(&manifest), "--out", s(&out)]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("labels"));
    assert!(!out.exists());
}

#[test]
fn inspect_reports_shape_and_row_sums() {
    let o = tfuse(&["inspect", "--file", s(&fixture("stochastic_f64_3x3.otm"))]);
    assert_eq!(code(&o), 0);
    let text = stdout(&o);
    assert!(text.contains("shape: 3 x 3"));
    let dev: f64 = text
        .lines()
        .find_map(|l| l.strip_prefix("max_abs_rowsum_minus_1: "))
        .unwrap()
        .parse()
        .unwrap();
    assert!(dev < 1e-6);
}

#[test]
fn inspect_truncated_names_offset() {
    let o = tfuse(&["inspect", "--file", s(&fixture("truncated_payload.otm"))]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("byte 77"), "{}", stderr(&o));
}

#[test]
fn external_toy_folder_runs() {
    let toy = fixture("toy");
    for f in ["features.otm", "y.otm", "labels.otm"] {
        let o = tfuse(&["inspect", "--file", s(&toy.join(f))]);
        assert_eq!(code(&o), 0, "{f}");
    }
    let y = read_matrix(toy.join("y.otm")).unwrap();
    assert!(y.row_sums().iter().all(|s| (s - 1.0).abs() < 1e-6));
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = tfuse(&["run", "--manifest", s(&toy.join("manifest.txt")), "--out", s(&out), "-v"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stderr(&o).contains("round 1"));
    let report = fs::read_to_string(out.join("report.txt")).unwrap();
    assert!(report.contains("class cat = ") && report.contains("class dog = "));
}
