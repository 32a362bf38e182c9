//! The query path shared by `gramdex query` and the HTTP service.

use std::sync::Arc;
use std::time::{Duration, Instant};

use gramdex::barcode::Extractor;
use gramdex::eval::predict_from_hits;
use gramdex::image::RgbImage;
use gramdex::{BarcodeIndex, Error, LayerCombo, QueryResult, VggPrefixModel};

#[derive(Debug, Clone)]
pub struct QueryAnswer {
    pub result: QueryResult,
    /// Mode of the top-3 labels, nearest label when there is no mode.
    pub predicted: Option<String>,
    pub barcode_time: Duration,
}

/// Fails with a config error when a requested combo differs from the index's.
pub fn check_combo(index: &BarcodeIndex, requested: Option<&LayerCombo>) -> Result<(), Error> {
    match requested {
        Some(c) if c != index.combo() => Err(Error::Config(format!(
            "layer combination {c} does not match index combination {}",
            index.combo()
        ))),
        _ => Ok(()),
    }
}

/// Barcodes `image` with the index's layer combination and ranks the index.
pub fn run_query(
    model: &VggPrefixModel,
    index: &BarcodeIndex,
    image: &RgbImage,
    n: usize,
) -> Result<QueryAnswer, Error> {
    let started = Instant::now();
    let bits = Extractor::new(model).barcode(image, index.combo())?;
    let barcode_time = started.elapsed();
    let result = index.search(&bits, n)?;
    let top = &result.hits[..result.hits.len().min(gramdex::eval::TOP_N)];
    Ok(QueryAnswer {
        predicted: predict_from_hits(top),
        result,
        barcode_time,
    })
}

/// Model shared read-only between workers.
pub type SharedModel = Arc<VggPrefixModel>;
