//! Gram barcodes: per-layer Gram matrices of the tapped feature maps, their
//! upper triangles concatenated into one vector, and that vector thresholded
//! at its own median.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::vgg::{preprocess, Tap, VggPrefixModel};

/// Row-major `n_maps × map_size` view; row `i` is feature map `i` flattened.
#[derive(Debug, Clone, Copy)]
pub struct FeatureMatrix<'a> {
    n_maps: usize,
    map_size: usize,
    data: &'a [f32],
}

impl<'a> FeatureMatrix<'a> {
    pub fn new(n_maps: usize, map_size: usize, data: &'a [f32]) -> Result<Self> {
        if data.len() != n_maps * map_size {
            return Err(Error::Shape(format!(
                "feature matrix {n_maps}x{map_size} needs {} values, got {}",
                n_maps * map_size,
                data.len()
            )));
        }
        Ok(FeatureMatrix {
            n_maps,
            map_size,
            data,
        })
    }

    /// Channel-major tensors are already laid out as a feature matrix.
    pub fn from_tensor(t: &'a Tensor) -> Self {
        FeatureMatrix {
            n_maps: t.channels(),
            map_size: t.height() * t.width(),
            data: t.data(),
        }
    }

    pub fn n_maps(&self) -> usize {
        self.n_maps
    }

    pub fn map_size(&self) -> usize {
        self.map_size
    }

    pub fn row(&self, i: usize) -> &'a [f32] {
        &self.data[i * self.map_size..(i + 1) * self.map_size]
    }
}

/// Symmetric `n × n` matrix stored densely, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix {
    n: usize,
    entries: Vec<f32>,
}

impl GramMatrix {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f32 {
        self.entries[i * self.n + j]
    }

    pub fn entries(&self) -> &[f32] {
        &self.entries
    }

    /// Builds from a full row-major matrix; rejects asymmetric input.
    pub fn from_entries(n: usize, entries: Vec<f32>) -> Result<Self> {
        if entries.len() != n * n {
            return Err(Error::Shape(format!("{n}x{n} matrix needs {} entries", n * n)));
        }
        for i in 0..n {
            for j in i + 1..n {
                if entries[i * n + j] != entries[j * n + i] {
                    return Err(Error::Input(format!("matrix not symmetric at ({i}, {j})")));
                }
            }
        }
        Ok(GramMatrix { n, entries })
    }
}

fn dot(a: &[f32], b: &[f32]) -> f32 {
    const LANES: usize = 8;
    let mut acc = [0.0f32; LANES];
    let ca = a.chunks_exact(LANES);
    let cb = b.chunks_exact(LANES);
    let tail: f32 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for l in 0..LANES {
            acc[l] += x[l] * y[l];
        }
    }
    acc.iter().sum::<f32>() + tail
}

/// Inner products between all pairs of feature-map rows. The upper triangle
/// is computed and mirrored, so the result is exactly symmetric.
pub fn gram(f: &FeatureMatrix) -> Result<GramMatrix> {
    if f.n_maps == 0 || f.map_size == 0 {
        return Err(Error::Input(format!(
            "empty feature matrix {}x{}",
            f.n_maps, f.map_size
        )));
    }
    let n = f.n_maps;
    let mut entries = vec![0.0f32; n * n];
    for i in 0..n {
        let ri = f.row(i);
        for j in i..n {
            let g = dot(ri, f.row(j));
            entries[i * n + j] = g;
            entries[j * n + i] = g;
        }
    }
    Ok(GramMatrix { n, entries })
}

/// Upper triangle including the diagonal, scanned row by row (`i <= j`).
pub fn triangle_vectorize(g: &GramMatrix) -> Vec<f32> {
    let n = g.n;
    let mut out = Vec::with_capacity(n * (n + 1) / 2);
    for i in 0..n {
        out.extend_from_slice(&g.entries[i * n + i..(i + 1) * n]);
    }
    out
}

pub fn triangle_len(n: usize) -> usize {
    n * (n + 1) / 2
}

/// Non-empty set of taps kept in ascending depth order. Written as
/// comma-separated depth digits, e.g. `2,3,5`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct LayerCombo(Vec<Tap>);

impl LayerCombo {
    pub fn new(taps: impl IntoIterator<Item = Tap>) -> Result<Self> {
        let mut taps: Vec<Tap> = taps.into_iter().collect();
        if taps.is_empty() {
            return Err(Error::Config("layer combination is empty".into()));
        }
        taps.sort();
        let before = taps.len();
        taps.dedup();
        if taps.len() != before {
            return Err(Error::Config("layer combination has duplicates".into()));
        }
        Ok(LayerCombo(taps))
    }

    pub fn taps(&self) -> &[Tap] {
        &self.0
    }

    pub fn deepest(&self) -> Tap {
        *self.0.last().expect("non-empty")
    }

    pub fn bit_len(&self) -> usize {
        self.0.iter().map(|t| triangle_len(t.channels())).sum()
    }
}

impl fmt::Display for LayerCombo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, t) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{}", t.depth())?;
        }
        Ok(())
    }
}

impl FromStr for LayerCombo {
    type Err = Error;

    /// Accepts depth digits (`2,3,5`) or layer names (`conv2_1,conv5_1`).
    fn from_str(s: &str) -> Result<Self> {
        let taps = s
            .split(',')
            .map(str::trim)
            .map(|part| match part.parse::<u8>() {
                Ok(d) => Tap::from_depth(d)
                    .ok_or_else(|| Error::Config(format!("layer depth {d} out of range 1..=5"))),
                Err(_) => part.parse::<Tap>(),
            })
            .collect::<Result<Vec<_>>>()?;
        LayerCombo::new(taps)
    }
}

impl TryFrom<String> for LayerCombo {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<LayerCombo> for String {
    fn from(c: LayerCombo) -> String {
        c.to_string()
    }
}

/// Packed bit sequence: bit `i` lives in word `i / 64` at position `i % 64`;
/// bits past `len` are always zero.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PackedBits {
    words: Vec<u64>,
    len: usize,
}

impl PackedBits {
    pub fn words_for(len: usize) -> usize {
        len.div_ceil(64)
    }

    pub fn zeros(len: usize) -> Self {
        PackedBits {
            words: vec![0; Self::words_for(len)],
            len,
        }
    }

    /// Rejects a word count that does not match `len` or stray high bits.
    pub fn from_words(words: Vec<u64>, len: usize) -> Result<Self> {
        if words.len() != Self::words_for(len) {
            return Err(Error::Shape(format!(
                "{len} bits need {} words, got {}",
                Self::words_for(len),
                words.len()
            )));
        }
        if !len.is_multiple_of(64) {
            let last = *words.last().unwrap();
            if last >> (len % 64) != 0 {
                return Err(Error::Shape("bits set beyond bit length".into()));
            }
        }
        Ok(PackedBits { words, len })
    }

    pub fn from_bools(bits: &[bool]) -> Self {
        let mut out = Self::zeros(bits.len());
        for (i, _) in bits.iter().enumerate().filter(|(_, &b)| b) {
            out.words[i / 64] |= 1 << (i % 64);
        }
        out
    }

    pub fn to_bools(&self) -> Vec<bool> {
        (0..self.len).map(|i| self.get(i)).collect()
    }

    pub fn get(&self, i: usize) -> bool {
        assert!(i < self.len, "bit {i} out of range {}", self.len);
        self.words[i / 64] >> (i % 64) & 1 == 1
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    pub fn into_words(self) -> Vec<u64> {
        self.words
    }

    pub fn count_ones(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }
}

/// Binarized Gram vector plus the metadata needed to index it.
#[derive(Debug, Clone, PartialEq)]
pub struct GramBarcode {
    pub bits: PackedBits,
    pub combo: LayerCombo,
    pub id: String,
    pub label: Option<String>,
}

impl GramBarcode {
    pub fn bit_len(&self) -> usize {
        self.bits.len()
    }
}

/// Concatenated triangles of the Gram matrices of every tap in `combo`,
/// in combo order.
pub fn build_gram_vector(taps: &BTreeMap<Tap, Tensor>, combo: &LayerCombo) -> Result<Vec<f32>> {
    let mut v = Vec::with_capacity(combo.bit_len());
    for tap in combo.taps() {
        let t = taps
            .get(tap)
            .ok_or_else(|| Error::Config(format!("tap {tap} missing from forward pass")))?;
        v.extend(triangle_vectorize(&gram(&FeatureMatrix::from_tensor(t))?));
    }
    Ok(v)
}

/// Median of a non-empty finite sequence; even lengths take the midpoint of
/// the two central order statistics. Computed in `f64` so the midpoint is exact.
pub fn median(v: &[f32]) -> Result<f64> {
    if v.is_empty() {
        return Err(Error::Input("median of empty vector".into()));
    }
    if let Some(pos) = v.iter().position(|x| !x.is_finite()) {
        return Err(Error::Numeric(format!("non-finite Gram value at {pos}")));
    }
    let mut s = v.to_vec();
    let n = s.len();
    let (lower, &mut hi, _) = s.select_nth_unstable_by(n / 2, f32::total_cmp);
    if n % 2 == 1 {
        return Ok(f64::from(hi));
    }
    let lo = lower.iter().copied().max_by(f32::total_cmp).expect("n >= 2");
    Ok((f64::from(lo) + f64::from(hi)) / 2.0)
}

/// `b_i = 1` iff `v_i >= median(v)`, one threshold for the whole vector.
pub fn binarize(v: &[f32]) -> Result<PackedBits> {
    let m = median(v)?;
    let mut out = PackedBits::zeros(v.len());
    for (i, &x) in v.iter().enumerate() {
        if f64::from(x) >= m {
            out.words[i / 64] |= 1 << (i % 64);
        }
    }
    Ok(out)
}

/// Reusable extractor: one forward pass per image feeds any number of combos,
/// and each tap's Gram triangle is computed once.
#[derive(Debug, Clone, Copy)]
pub struct Extractor<'m> {
    model: &'m VggPrefixModel,
}

impl<'m> Extractor<'m> {
    pub fn new(model: &'m VggPrefixModel) -> Self {
        Extractor { model }
    }

    pub fn gram_vectors(&self, image: &RgbImage, combos: &[LayerCombo]) -> Result<Vec<Vec<f32>>> {
        let mut needed: Vec<Tap> = combos.iter().flat_map(|c| c.taps().iter().copied()).collect();
        needed.sort();
        needed.dedup();
        let input = preprocess(image)?;
        let activations = self.model.forward_with_taps(&input, &needed)?;
        let mut triangles = BTreeMap::new();
        for (tap, t) in &activations {
            triangles.insert(*tap, triangle_vectorize(&gram(&FeatureMatrix::from_tensor(t))?));
        }
        drop(activations);
        Ok(combos
            .iter()
            .map(|c| c.taps().iter().flat_map(|t| triangles[t].iter().copied()).collect())
            .collect())
    }

    pub fn barcodes(&self, image: &RgbImage, combos: &[LayerCombo]) -> Result<Vec<PackedBits>> {
        self.gram_vectors(image, combos)?
            .iter()
            .map(|v| binarize(v))
            .collect()
    }

    pub fn barcode(&self, image: &RgbImage, combo: &LayerCombo) -> Result<PackedBits> {
        Ok(self.barcodes(image, std::slice::from_ref(combo))?.remove(0))
    }
}

/// Full pipeline for one image file: decode, preprocess, forward, Gram
/// vector, binarize. The id is the path as given.
pub fn generate_barcode(
    path: impl AsRef<Path>,
    model: &VggPrefixModel,
    combo: &LayerCombo,
) -> Result<GramBarcode> {
    let path = path.as_ref();
    let image = crate::ingest::decode_image(path)?;
    let bits = Extractor::new(model).barcode(&image, combo)?;
    Ok(GramBarcode {
        bits,
        combo: combo.clone(),
        id: path.to_string_lossy().into_owned(),
        label: None,
    })
}

const GBVR_MAGIC: &[u8; 4] = b"GBVR";
const GBVR_VERSION: u32 = 1;

pub fn encode_vector(v: &[f32]) -> Vec<u8> {
    let mut w = crate::wire::Writer::default();
    w.bytes(GBVR_MAGIC);
    w.u32(GBVR_VERSION);
    w.u64(v.len() as u64);
    w.f32s(v);
    w.into_inner()
}

pub fn decode_vector(bytes: &[u8]) -> Result<Vec<f32>> {
    let mut r = crate::wire::Reader::new(bytes);
    if r.bytes(4)? != GBVR_MAGIC {
        return Err(Error::Format("bad magic, expected GBVR".into()));
    }
    let version = r.u32()?;
    if version != GBVR_VERSION {
        return Err(Error::Format(format!("unsupported GBVR version {version}")));
    }
    let len = usize::try_from(r.u64()?).map_err(|_| Error::Format("length overflow".into()))?;
    let v = r.f32s(len)?;
    r.finish()?;
    Ok(v)
}

/// Debug dump of a Gram vector (or any flat float tensor).
pub fn write_vector(v: &[f32], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_vector(v)).map_err(|e| Error::io(path, e))
}

pub fn read_vector(path: impl AsRef<Path>) -> Result<Vec<f32>> {
    let path = path.as_ref();
    decode_vector(&fs::read(path).map_err(|e| Error::io(path, e))?)
}
