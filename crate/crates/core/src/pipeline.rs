//! Batch glue between a dataset manifest and the barcode, index and
//! evaluation modules.

use std::sync::atomic::{AtomicUsize, Ordering};

use rayon::prelude::*;

use crate::barcode::{Extractor, LayerCombo, PackedBits};
use crate::error::{Error, Result};
use crate::eval::{holdout_eta, kfold_cv, LabeledBarcode, MetricsReport};
use crate::index::BarcodeIndex;
use crate::ingest::{decode_image, DatasetKind, DatasetManifest, ManifestEntry, Split};
use crate::vgg::VggPrefixModel;

/// Barcodes for every entry and every combo (`result[entry][combo]`), one
/// forward pass per image. Runs on the current rayon pool; output order
/// follows `entries` regardless of thread count. `progress` receives the
/// number of finished images.
pub fn extract_barcodes(
    entries: &[ManifestEntry],
    model: &VggPrefixModel,
    combos: &[LayerCombo],
    progress: &(dyn Fn(usize) + Sync),
) -> Result<Vec<Vec<PackedBits>>> {
    let extractor = Extractor::new(model);
    let done = AtomicUsize::new(0);
    entries
        .par_iter()
        .map(|e| {
            let image = decode_image(&e.path)?;
            let codes = extractor.barcodes(&image, combos).map_err(|source| Error::AtPath {
                path: e.path.clone(),
                source: Box::new(source),
            })?;
            progress(done.fetch_add(1, Ordering::Relaxed) + 1);
            Ok(codes)
        })
        .collect()
}

pub fn labeled(entries: &[ManifestEntry], codes: Vec<PackedBits>) -> Vec<LabeledBarcode> {
    entries
        .iter()
        .zip(codes)
        .map(|(e, bits)| LabeledBarcode {
            id: e.id.clone(),
            label: e.label.clone(),
            bits,
        })
        .collect()
}

/// Index over `entries` in manifest order.
pub fn build_index(entries: &[ManifestEntry], codes: &[PackedBits], combo: &LayerCombo) -> Result<BarcodeIndex> {
    let mut index = BarcodeIndex::for_combo(combo.clone());
    for (e, bits) in entries.iter().zip(codes) {
        index.insert(e.id.clone(), e.label.clone(), bits)?;
    }
    Ok(index)
}

/// Protocol chosen by dataset kind: KimiaPath24 uses its train/test split and
/// scan accuracies; every other kind uses stratified k-fold cross-validation.
/// `codes` are aligned with `manifest.entries`.
pub fn evaluate(
    manifest: &DatasetManifest,
    codes: Vec<PackedBits>,
    combo: &LayerCombo,
    folds: usize,
    seed: u64,
) -> Result<MetricsReport> {
    let name = manifest.kind.to_string();
    let items = labeled(&manifest.entries, codes);
    match manifest.kind {
        DatasetKind::Kimia24 => {
            let (mut train, mut test) = (Vec::new(), Vec::new());
            for (e, item) in manifest.entries.iter().zip(items) {
                match e.split {
                    Some(Split::Train) => train.push(item),
                    Some(Split::Test) => test.push(item),
                    None => {
                        return Err(Error::Config(format!("kimia24 entry {} has no split", e.id)));
                    }
                }
            }
            if train.is_empty() || test.is_empty() {
                return Err(Error::Config(
                    "kimia24 evaluation needs both train and test patches".into(),
                ));
            }
            holdout_eta(&name, &train, &test, combo)
        }
        _ => kfold_cv(&name, &items, folds, combo, seed),
    }
}
