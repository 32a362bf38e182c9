//! Histopathology image retrieval with Gram barcodes.
//!
//! Images pass through the VGG19 prefix ([`vgg`]); the Gram matrices of the
//! tapped layers are vectorized, concatenated and binarized at their median
//! ([`barcode`]); barcodes are searched by Hamming distance ([`index`]) and
//! retrieval quality is scored with the benchmark protocols in [`eval`].

pub mod barcode;
pub mod error;
pub mod eval;
pub mod index;
pub mod ingest;
pub mod pipeline;
pub mod tensor;
pub mod vgg;
mod wire;

pub use image;

pub use barcode::{GramBarcode, LayerCombo, PackedBits};
pub use error::{Error, Result};
pub use index::{BarcodeIndex, Hit, QueryResult};
pub use ingest::{DatasetKind, DatasetManifest, ManifestEntry, Split};
pub use tensor::Tensor;
pub use vgg::{Tap, VggPrefixModel};
