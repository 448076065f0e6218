use std::fs;
use std::path::Path;

use transport_fusion::io::{encode_labels, encode_matrix, load_dataset, load_manifest, Dtype};
use transport_fusion::{Error, Matrix};

fn write(dir: &Path, name: &str, bytes: &[u8]) {
    fs::write(dir.join(name), bytes).unwrap();
}

fn prob(n: usize, k: usize) -> Vec<u8> {
    encode_matrix(&Matrix::filled(n, k, 1.0 / k as f64), Dtype::F64).unwrap()
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write(d, "x.otm", &encode_matrix(&Matrix::from_fn(4, 3, |i, j| (i * 3 + j) as f64), Dtype::F32).unwrap());
    write(d, "y.otm", &prob(4, 2));
    write(d, "labels.otm", &encode_labels(&[0, 1, 1, 0]));
    dir
}

fn manifest(dir: &Path, text: &str) -> std::path::PathBuf {
    let p = dir.join("m.txt");
    fs::write(&p, text).unwrap();
    p
}

#[test]
fn loads_with_relative_paths() {
    let dir = setup();
    let m = load_manifest(manifest(dir.path(), "# c\n\nname t\nfeature a x.otm\nsemantic v y.otm\nlabels labels.otm\nclass_names cat, dog\n")).unwrap();
    let ds = load_dataset(&m).unwrap();
    assert_eq!((ds.n_samples(), ds.n_classes()), (4, 2));
    assert_eq!(ds.features[0].0, "a");
    assert_eq!(ds.features[0].1.get(3, 2), 11.0);
    assert_eq!(ds.labels, Some(vec![0, 1, 1, 0]));
}

#[test]
fn missing_file_is_a_path_error() {
    let dir = setup();
    let err = load_manifest(manifest(dir.path(), "name t\nsemantic v nope.otm\n")).unwrap_err();
    assert!(matches!(err, Error::Path { .. }), "{err}");
    assert!(err.to_string().contains("nope.otm"));
}

#[test]
fn sample_count_mismatch_names_both_files() {
    let dir = setup();
    write(dir.path(), "short.otm", &encode_matrix(&Matrix::filled(3, 3, 0.0), Dtype::F64).unwrap());
    let err = load_manifest(manifest(dir.path(), "name t\nfeature a short.otm\nsemantic v y.otm\n")).unwrap_err();
    assert!(matches!(err, Error::Consistency(_)));
    let msg = err.to_string();
    assert!(msg.contains("short.otm") && msg.contains("y.otm"), "{msg}");
}

#[test]
fn class_count_mismatches() {
    let dir = setup();
    write(dir.path(), "y3.otm", &prob(4, 3));
    let err = load_manifest(manifest(dir.path(), "name t\nsemantic v y.otm\nsemantic w y3.otm\n")).unwrap_err();
    assert!(matches!(err, Error::Consistency(_)));
    let err = load_manifest(manifest(dir.path(), "name t\nsemantic v y.otm\nclass_names a, b, c\n")).unwrap_err();
    assert!(matches!(err, Error::Consistency(_)));
}

#[test]
fn wrong_dtypes_rejected() {
    let dir = setup();
    assert!(matches!(load_manifest(manifest(dir.path(), "name t\nsemantic v labels.otm\n")), Err(Error::Type(_))));
    assert!(matches!(load_manifest(manifest(dir.path(), "name t\nsemantic v y.otm\nlabels y.otm\n")), Err(Error::Type(_))));
}

#[test]
fn semantic_rows_must_be_distributions() {
    let dir = setup();
    write(dir.path(), "bad.otm", &encode_matrix(&Matrix::filled(4, 2, 0.6), Dtype::F64).unwrap());
    let m = load_manifest(manifest(dir.path(), "name t\nsemantic v bad.otm\n")).unwrap();
    let err = load_dataset(&m).unwrap_err();
    assert!(err.to_string().contains("bad.otm"), "{err}");
}

#[test]
fn labels_out_of_range() {
    let dir = setup();
    write(dir.path(), "l5.otm", &encode_labels(&[0, 1, 5, 0]));
    let m = load_manifest(manifest(dir.path(), "name t\nsemantic v y.otm\nlabels l5.otm\n")).unwrap();
    assert!(load_dataset(&m).is_err());
}
