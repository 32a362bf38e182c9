//! Dataset discovery for the benchmark directory layouts, the manifest cache
//! format, and image decoding.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::{Component, Path, PathBuf};
use std::str::FromStr;

use image::RgbImage;
use serde::{Deserialize, Serialize};
use walkdir::WalkDir;

use crate::error::{Error, Result};

const IMAGE_EXTENSIONS: [&str; 6] = ["tif", "tiff", "png", "jpg", "jpeg", "bmp"];

/// Number of whole-slide scans in KimiaPath24.
pub const KIMIA_SCANS: usize = 24;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Kimia24,
    Crc,
    Emc,
    Generic,
}

impl fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DatasetKind::Kimia24 => "kimia24",
            DatasetKind::Crc => "crc",
            DatasetKind::Emc => "emc",
            DatasetKind::Generic => "generic",
        })
    }
}

impl FromStr for DatasetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "kimia24" | "kimiapath24" => Ok(DatasetKind::Kimia24),
            "crc" => Ok(DatasetKind::Crc),
            "emc" => Ok(DatasetKind::Emc),
            "generic" => Ok(DatasetKind::Generic),
            other => Err(Error::Config(format!("unknown dataset kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "train" | "training" => Ok(Split::Train),
            "test" | "testing" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub path: PathBuf,
    /// Path relative to the dataset root, `/`-separated.
    pub id: String,
    pub label: String,
    pub split: Option<Split>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetManifest {
    pub kind: DatasetKind,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn labels(&self) -> BTreeSet<&str> {
        self.entries.iter().map(|e| e.label.as_str()).collect()
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == Some(split))
    }

    pub fn find(&self, id: &str) -> Option<&ManifestEntry> {
        self.entries.iter().find(|e| e.id == id)
    }
}

fn is_image(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        .unwrap_or(false)
}

fn is_hidden(name: &str) -> bool {
    name.starts_with('.')
}

/// Scan index from a name such as `s7`, `s07_12.tif` or `s23-patch`.
fn kimia_scan_index(name: &str) -> Option<usize> {
    let rest = name.strip_prefix('s').or_else(|| name.strip_prefix('S'))?;
    let digits: String = rest.chars().take_while(|c| c.is_ascii_digit()).collect();
    if digits.is_empty() {
        return None;
    }
    let after = &rest[digits.len()..];
    if !(after.is_empty() || after.starts_with(['_', '-', '.', ' '])) {
        return None;
    }
    digits.parse().ok().filter(|&s| s < KIMIA_SCANS)
}

/// Walks `root` and labels every image according to the layout of `kind`:
///
/// * `kimia24`: a `train`/`training` or `test`/`testing` directory gives the
///   split; the scan index comes from the file name (`s12_3.tif`) or the
///   nearest directory named like `s12`. Labels are `s0`..`s23`.
/// * `crc`, `emc`: the class is the directory holding the image; images
///   directly under the root are unmatched.
/// * `generic`: the class is the immediate parent directory name.
///
/// Entries are sorted by path. Any unmatched image, or an empty result, is an
/// error.
pub fn scan_dataset(root: impl AsRef<Path>, kind: DatasetKind) -> Result<DatasetManifest> {
    let root = root.as_ref();
    if !root.is_dir() {
        return Err(Error::Manifest(format!("{} is not a directory", root.display())));
    }
    let mut entries = Vec::new();
    let mut unmatched = Vec::new();
    let walker = WalkDir::new(root)
        .sort_by_file_name()
        .into_iter()
        .filter_entry(|e| e.depth() == 0 || !is_hidden(&e.file_name().to_string_lossy()));
    for item in walker {
        let item = item.map_err(|e| Error::Manifest(e.to_string()))?;
        if !item.file_type().is_file() || !is_image(item.path()) {
            continue;
        }
        let path = item.path().to_path_buf();
        let rel = path.strip_prefix(root).expect("walk stays under root");
        let parts: Vec<String> = rel
            .components()
            .filter_map(|c| match c {
                Component::Normal(s) => Some(s.to_string_lossy().into_owned()),
                _ => None,
            })
            .collect();
        let id = parts.join("/");
        let dirs = &parts[..parts.len() - 1];
        let labelled = match kind {
            DatasetKind::Kimia24 => {
                let split = dirs.iter().rev().find_map(|d| d.parse::<Split>().ok());
                let file = parts.last().unwrap();
                let scan = kimia_scan_index(file)
                    .or_else(|| dirs.iter().rev().find_map(|d| kimia_scan_index(d)));
                match (split, scan) {
                    (Some(split), Some(scan)) => Some((format!("s{scan}"), Some(split))),
                    _ => None,
                }
            }
            DatasetKind::Crc | DatasetKind::Emc => dirs.last().map(|d| (d.clone(), None)),
            DatasetKind::Generic => dirs
                .last()
                .cloned()
                .or_else(|| root.file_name().map(|n| n.to_string_lossy().into_owned()))
                .map(|l| (l, None)),
        };
        match labelled {
            Some((label, split)) => entries.push(ManifestEntry {
                path,
                id,
                label,
                split,
            }),
            None => unmatched.push(id),
        }
    }
    if !unmatched.is_empty() {
        let shown: Vec<&str> = unmatched.iter().take(20).map(String::as_str).collect();
        return Err(Error::Manifest(format!(
            "{} paths under {} do not match the {kind} layout: {}{}",
            unmatched.len(),
            root.display(),
            shown.join(", "),
            if unmatched.len() > shown.len() { ", ..." } else { "" }
        )));
    }
    if entries.is_empty() {
        return Err(Error::Manifest(format!("no images found under {}", root.display())));
    }
    entries.sort_by(|a, b| a.path.cmp(&b.path));
    let manifest = DatasetManifest { kind, entries };
    if kind == DatasetKind::Kimia24 {
        let labels = manifest.labels();
        if labels.len() != KIMIA_SCANS {
            return Err(Error::Manifest(format!(
                "kimia24 layout needs all {KIMIA_SCANS} scans s0..s23, found {}",
                labels.len()
            )));
        }
    }
    Ok(manifest)
}

/// Decodes any supported raster into 8-bit RGB; grayscale is replicated.
pub fn decode_image(path: impl AsRef<Path>) -> Result<RgbImage> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_image_bytes(&bytes).map_err(|reason| Error::Decode {
        path: path.to_path_buf(),
        reason,
    })
}

/// In-memory variant; the error string carries the decoder's reason.
pub fn decode_image_bytes(bytes: &[u8]) -> std::result::Result<RgbImage, String> {
    image::load_from_memory(bytes)
        .map(|img| img.to_rgb8())
        .map_err(|e| e.to_string())
}

/// `path TAB id TAB label TAB split` per line; split is empty when absent.
pub fn write_manifest(manifest: &DatasetManifest, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = format!("# kind\t{}\n", manifest.kind);
    for e in &manifest.entries {
        let split = e.split.map(|s| s.to_string()).unwrap_or_default();
        out.push_str(&format!("{}\t{}\t{}\t{}\n", e.path.display(), e.id, e.label, split));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut kind = DatasetKind::Generic;
    let mut entries = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if let Some(k) = line.strip_prefix("# kind\t") {
            kind = k.parse()?;
            continue;
        }
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let [p, id, label, split] = fields[..] else {
            return Err(Error::Manifest(format!(
                "{}:{}: expected 4 tab-separated fields",
                path.display(),
                n + 1
            )));
        };
        entries.push(ManifestEntry {
            path: PathBuf::from(p),
            id: id.to_string(),
            label: label.to_string(),
            split: if split.is_empty() { None } else { Some(split.parse()?) },
        });
    }
    Ok(DatasetManifest { kind, entries })
}
