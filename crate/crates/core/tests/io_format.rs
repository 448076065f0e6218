use std::path::{Path, PathBuf};

use proptest::prelude::*;
use transport_fusion::io::{
    decode, encode_labels, encode_matrix, read_header, read_labels, read_matrix, read_otm, write_labels, write_matrix, Dtype,
    MatrixFileHeader, Payload,
};
use transport_fusion::{Error, Matrix};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

#[test]
fn valid_fixtures_decode_to_known_values() {
    let m = read_matrix(fixture("valid_f64_2x3.otm")).unwrap();
    assert_eq!(m.shape(), (2, 3));
    assert_eq!(m.row(0), &[1.0, -2.5, 3.25]);
    assert_eq!(m.get(1, 1), 1e-300);
    assert!(m.get(1, 2).is_sign_negative());

    let m = read_matrix(fixture("valid_f32_2x2.otm")).unwrap();
    assert_eq!(m.as_slice(), &[0.5, 0.25, -1.5, 3.0]);

    assert_eq!(read_labels(fixture("valid_i64_4x1.otm")).unwrap(), vec![0, 2, 1, 2]);
    let h = read_header(fixture("valid_i64_4x1.otm")).unwrap();
    assert_eq!(h, MatrixFileHeader::new(4, 1, Dtype::I64));
}

#[test]
fn fixture_bytes_match_the_encoder() {
    let m = Matrix::from_rows(&[[1.0, -2.5, 3.25], [0.1, 1e-300, -0.0]]).unwrap();
    assert_eq!(encode_matrix(&m, Dtype::F64).unwrap(), std::fs::read(fixture("valid_f64_2x3.otm")).unwrap());
    assert_eq!(encode_labels(&[0, 2, 1, 2]), std::fs::read(fixture("valid_i64_4x1.otm")).unwrap());
}

#[test]
fn empty_matrix_has_header_only() {
    let f = read_otm(fixture("empty_0x0.otm")).unwrap();
    assert_eq!((f.rows(), f.cols()), (0, 0));
    assert_eq!(f.payload, Payload::F64(vec![]));
}

#[test]
fn corrupt_fixtures_rejected_with_offsets() {
    for (name, offset) in [
        ("bad_magic.otm", 0),
        ("bad_version.otm", 4),
        ("bad_dtype.otm", 24),
        ("bad_padding.otm", 28),
        ("truncated_header.otm", 20),
        ("truncated_payload.otm", 77),
        ("trailing_bytes.otm", 80),
        ("zero_bytes.otm", 0),
        ("overflow_shape.otm", 8),
        ("huge_rows.otm", 32),
    ] {
        match read_otm(fixture(name)) {
            Err(Error::Format { offset: got, .. }) => assert_eq!(got, offset, "{name}"),
            other => panic!("{name}: {other:?}"),
        }
        assert!(read_header(fixture(name)).is_err(), "{name}");
    }
}

#[test]
fn type_mismatches() {
    assert!(matches!(read_matrix(fixture("valid_i64_4x1.otm")), Err(Error::Type(_))));
    assert!(matches!(read_labels(fixture("valid_f64_2x3.otm")), Err(Error::Shape(_))));
    assert!(matches!(read_labels(fixture("stochastic_f64_3x3.otm")), Err(Error::Shape(_))));
}

#[test]
fn missing_file_is_a_path_error() {
    assert!(matches!(read_matrix(fixture("does_not_exist.otm")), Err(Error::Path { .. })));
}

#[test]
fn writes_replace_atomically() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.otm");
    write_matrix(&path, &Matrix::filled(3, 2, 1.5), Dtype::F32).unwrap();
    write_matrix(&path, &Matrix::filled(1, 1, 2.0), Dtype::F64).unwrap();
    assert_eq!(read_matrix(&path).unwrap(), Matrix::filled(1, 1, 2.0));
    write_labels(dir.path().join("l.otm"), &[3, 1]).unwrap();
    assert_eq!(read_labels(dir.path().join("l.otm")).unwrap(), vec![3, 1]);
    assert!(write_matrix(&path, &Matrix::filled(1, 1, f64::NAN), Dtype::F64).is_err());
    assert_eq!(read_matrix(&path).unwrap(), Matrix::filled(1, 1, 2.0));
    let names: Vec<_> = std::fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(names.len(), 2, "stray temporaries: {names:?}");
}

#[test]
fn negative_labels_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("l.otm");
    write_matrix(&path, &Matrix::from_rows(&[[1.0], [-1.0]]).unwrap(), Dtype::I64).unwrap();
    assert!(matches!(read_labels(&path), Err(Error::InvalidInput(_))));
}

proptest! {
    #[test]
    fn f64_roundtrip_is_bit_exact(rows in 0usize..8, cols in 0usize..8, seed in any::<u64>()) {
        let mut rng = transport_fusion::rng::SplitMix64::new(seed);
        let m = Matrix::from_fn(rows, cols, |_, _| f64::from_bits(rng.next_u64() & !(0x7ff << 52)) * 1e3);
        let back = decode(&encode_matrix(&m, Dtype::F64).unwrap()).unwrap().into_real().unwrap();
        prop_assert_eq!(back.shape(), m.shape());
        let bits = |x: &Matrix<f64>| x.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        prop_assert_eq!(bits(&back), bits(&m));
    }

    #[test]
    fn any_truncation_is_rejected(len in 0usize..80) {
        let bytes = encode_matrix(&Matrix::filled(2, 3, 0.5), Dtype::F64).unwrap();
        let rejected = matches!(decode(&bytes[..len]), Err(Error::Format { .. }));
        prop_assert!(rejected);
    }

    #[test]
    fn header_fuzz_never_panics(bytes in proptest::collection::vec(any::<u8>(), 0..96)) {
        let _ = decode(&bytes);
    }
}
