#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use gramdex::image::{Rgb, RgbImage};
use gramdex::{vgg, LayerCombo, VggPrefixModel};
use gramdex_cli::config::RunConfig;
use tempfile::TempDir;

pub const SIDE: u32 = 40;

/// Synthetic weights written once per test binary.
pub fn weights_path() -> &'static Path {
    static DIR: OnceLock<(TempDir, PathBuf)> = OnceLock::new();
    &DIR.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("synthetic.gbwv");
        vgg::save_weights(&VggPrefixModel::synthetic(7), &path).unwrap();
        (dir, path)
    })
    .1
}

pub fn model() -> VggPrefixModel {
    vgg::load_weights(weights_path()).unwrap()
}

/// Distinct texture per (class, instance).
pub fn pattern(class: u32, instance: u32) -> RgbImage {
    RgbImage::from_fn(SIDE, SIDE, |x, y| {
        let stripe = match class {
            0 => x / (2 + instance),
            1 => y / (2 + instance),
            _ => (x + y) / (2 + instance),
        };
        let on = stripe % 2 == 0;
        let base = (40 * class + 13 * instance) as u8;
        if on {
            Rgb([200u8.wrapping_add(base), 60, base])
        } else {
            Rgb([base, 180, 90u8.wrapping_add(base)])
        }
    })
}

/// `root/<class>/<class>_<i>.png` for each `(name, count)`.
pub fn write_dataset(root: &Path, classes: &[(&str, u32)]) {
    for (c, (name, count)) in classes.iter().enumerate() {
        let dir = root.join(name);
        std::fs::create_dir_all(&dir).unwrap();
        for i in 0..*count {
            pattern(c as u32, i).save(dir.join(format!("{name}_{i}.png"))).unwrap();
        }
    }
}

pub fn config(dataset: &Path, index: &Path, combo: &str) -> RunConfig {
    RunConfig {
        weights: Some(weights_path().to_path_buf()),
        layers: vec![combo.parse::<LayerCombo>().unwrap()],
        dataset: Some(dataset.to_path_buf()),
        kind: Some(gramdex::DatasetKind::Generic),
        index: Some(index.to_path_buf()),
        threads: 1,
        ..RunConfig::default()
    }
}
