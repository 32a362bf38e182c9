#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use gramdex::barcode::read_vector;
use gramdex::{Tap, VggPrefixModel};

/// Seed used by `fixtures/make_reference.py`.
pub const FIXTURE_SEED: u64 = 1;

pub fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

pub fn fixture_model() -> &'static VggPrefixModel {
    static MODEL: OnceLock<VggPrefixModel> = OnceLock::new();
    MODEL.get_or_init(|| VggPrefixModel::synthetic(FIXTURE_SEED))
}

pub fn reference_activation(tap: Tap) -> Vec<f32> {
    read_vector(fixture_dir().join(format!("{tap}.gbvr"))).expect("fixture present")
}

/// Largest absolute deviation divided by the largest reference magnitude.
pub fn scaled_max_error(got: &[f32], want: &[f32]) -> f64 {
    assert_eq!(got.len(), want.len());
    let scale = want.iter().fold(0.0f64, |m, &v| m.max(f64::from(v).abs()));
    let err = got
        .iter()
        .zip(want)
        .fold(0.0f64, |m, (&a, &b)| m.max((f64::from(a) - f64::from(b)).abs()));
    err / scale
}
