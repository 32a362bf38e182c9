//! Pre-indexed barcode database with exact Hamming top-n search.
//!
//! Records are stored as one contiguous word array (fixed stride per record)
//! so a scan is a linear pass over memory. Ranking is by `(distance,
//! insertion index)`, which keeps serial and sharded scans identical.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;

use crate::barcode::{LayerCombo, PackedBits};
use crate::error::{Error, Result};

/// Number of differing bits between two packed sequences of `bit_len` bits.
pub fn hamming(a: &[u64], b: &[u64], bit_len: usize) -> Result<u32> {
    let words = PackedBits::words_for(bit_len);
    if a.len() != words || b.len() != words {
        return Err(Error::Shape(format!(
            "{bit_len} bits need {words} words, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    Ok(hamming_words(a, b))
}

/// Unchecked-length popcount of `a XOR b` over the common prefix.
#[inline]
pub fn hamming_words(a: &[u64], b: &[u64]) -> u32 {
    #[cfg(target_arch = "x86_64")]
    {
        if std::is_x86_feature_detected!("popcnt") {
            // SAFETY: the CPU supports popcnt.
            return unsafe { hamming_popcnt(a, b) };
        }
    }
    hamming_portable(a, b)
}

fn hamming_portable(a: &[u64], b: &[u64]) -> u32 {
    a.iter().zip(b).map(|(x, y)| (x ^ y).count_ones()).sum()
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "popcnt")]
unsafe fn hamming_popcnt(a: &[u64], b: &[u64]) -> u32 {
    // Four independent accumulators hide popcnt latency.
    let mut acc = [0u64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let mut tail = 0u64;
    for (x, y) in ca.remainder().iter().zip(cb.remainder()) {
        tail += u64::from((x ^ y).count_ones());
    }
    for (x, y) in ca.zip(cb) {
        for l in 0..4 {
            acc[l] += u64::from((x[l] ^ y[l]).count_ones());
        }
    }
    (acc[0] + acc[1] + acc[2] + acc[3] + tail) as u32
}

/// Writes the distance from `query` to every `stride`-word record in `words`.
fn scan_into(words: &[u64], stride: usize, query: &[u64], out: &mut [u32]) {
    #[cfg(target_arch = "x86_64")]
    {
        if std::is_x86_feature_detected!("popcnt") {
            // SAFETY: the CPU supports popcnt.
            unsafe { scan_popcnt(words, stride, query, out) };
            return;
        }
    }
    for (d, rec) in out.iter_mut().zip(words.chunks_exact(stride)) {
        *d = hamming_portable(rec, query);
    }
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "popcnt")]
unsafe fn scan_popcnt(words: &[u64], stride: usize, query: &[u64], out: &mut [u32]) {
    for (d, rec) in out.iter_mut().zip(words.chunks_exact(stride)) {
        *d = hamming_popcnt(rec, query);
    }
}

/// Borrowed view of one stored record.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RecordRef<'a> {
    pub id: &'a str,
    pub label: &'a str,
    pub bits: &'a [u64],
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Hit {
    /// Insertion position in the index.
    pub index: usize,
    pub id: String,
    pub label: String,
    pub distance: u32,
}

/// Hits in ascending distance order, ties by insertion order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct QueryResult {
    pub hits: Vec<Hit>,
}

impl QueryResult {
    pub fn labels(&self) -> Vec<&str> {
        self.hits.iter().map(|h| h.label.as_str()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BarcodeIndex {
    bit_len: usize,
    combo: LayerCombo,
    ids: Vec<String>,
    labels: Vec<String>,
    words: Vec<u64>,
    positions: HashMap<String, usize>,
}

impl BarcodeIndex {
    /// Empty index whose bit length is the combo's closed-form length.
    pub fn for_combo(combo: LayerCombo) -> Self {
        let bit_len = combo.bit_len();
        Self::new(combo, bit_len)
    }

    /// Empty index with an explicit bit length.
    pub fn new(combo: LayerCombo, bit_len: usize) -> Self {
        BarcodeIndex {
            bit_len,
            combo,
            ids: Vec::new(),
            labels: Vec::new(),
            words: Vec::new(),
            positions: HashMap::new(),
        }
    }

    pub fn bit_len(&self) -> usize {
        self.bit_len
    }

    pub fn combo(&self) -> &LayerCombo {
        &self.combo
    }

    fn stride(&self) -> usize {
        PackedBits::words_for(self.bit_len)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn insert(&mut self, id: impl Into<String>, label: impl Into<String>, bits: &PackedBits) -> Result<()> {
        if bits.len() != self.bit_len {
            return Err(Error::Shape(format!(
                "barcode has {} bits, index holds {}",
                bits.len(),
                self.bit_len
            )));
        }
        let id = id.into();
        if self.positions.contains_key(&id) {
            return Err(Error::Input(format!("duplicate record id {id:?}")));
        }
        self.positions.insert(id.clone(), self.ids.len());
        self.ids.push(id);
        self.labels.push(label.into());
        self.words.extend_from_slice(bits.words());
        Ok(())
    }

    pub fn get(&self, i: usize) -> RecordRef<'_> {
        let s = self.stride();
        RecordRef {
            id: &self.ids[i],
            label: &self.labels[i],
            bits: &self.words[i * s..(i + 1) * s],
        }
    }

    pub fn records(&self) -> impl ExactSizeIterator<Item = RecordRef<'_>> + '_ {
        (0..self.len()).map(|i| self.get(i))
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.positions.get(id).copied()
    }

    /// Label vocabulary with per-label record counts.
    pub fn label_counts(&self) -> BTreeMap<String, usize> {
        let mut out = BTreeMap::new();
        for l in &self.labels {
            *out.entry(l.clone()).or_insert(0) += 1;
        }
        out
    }

    fn check_query(&self, query: &[u64]) -> Result<()> {
        if query.len() != self.stride() {
            return Err(Error::Shape(format!(
                "query has {} words, index records have {}",
                query.len(),
                self.stride()
            )));
        }
        Ok(())
    }

    /// Distance from the query to every record, in insertion order.
    pub fn distances(&self, query: &PackedBits) -> Result<Vec<u32>> {
        if query.len() != self.bit_len {
            return Err(Error::Shape(format!(
                "query has {} bits, index holds {}",
                query.len(),
                self.bit_len
            )));
        }
        self.check_query(query.words())?;
        let mut out = vec![0u32; self.len()];
        if self.stride() > 0 {
            scan_into(&self.words, self.stride(), query.words(), &mut out);
        }
        Ok(out)
    }

    /// Exhaustive exact top-n scan.
    pub fn search(&self, query: &PackedBits, n: usize) -> Result<QueryResult> {
        let d = self.distances(query)?;
        Ok(self.result(top_n(d.into_iter().enumerate(), n)))
    }

    /// Same result as [`search`](Self::search); records are scanned in
    /// parallel shards whose partial rankings merge by `(distance, index)`.
    pub fn search_parallel(&self, query: &PackedBits, n: usize) -> Result<QueryResult> {
        if query.len() != self.bit_len {
            return Err(Error::Shape(format!(
                "query has {} bits, index holds {}",
                query.len(),
                self.bit_len
            )));
        }
        self.check_query(query.words())?;
        const SHARD: usize = 1024;
        let stride = self.stride().max(1);
        let partial: Vec<(u32, usize)> = self
            .words
            .par_chunks(SHARD * stride)
            .enumerate()
            .flat_map_iter(|(shard, chunk)| {
                let base = shard * SHARD;
                let mut d = vec![0u32; chunk.len() / stride];
                scan_into(chunk, stride, query.words(), &mut d);
                top_n(d.into_iter().enumerate().map(move |(i, x)| (i + base, x)), n)
            })
            .collect();
        let merged = if self.stride() == 0 {
            top_n((0..self.len()).map(|i| (i, 0)), n)
        } else {
            top_n(partial.into_iter().map(|(d, i)| (i, d)), n)
        };
        Ok(self.result(merged))
    }

    fn result(&self, ranked: Vec<(u32, usize)>) -> QueryResult {
        QueryResult {
            hits: ranked
                .into_iter()
                .map(|(distance, index)| Hit {
                    index,
                    id: self.ids[index].clone(),
                    label: self.labels[index].clone(),
                    distance,
                })
                .collect(),
        }
    }
}

/// The `n` smallest `(distance, index)` pairs in ascending order.
pub(crate) fn top_n(items: impl Iterator<Item = (usize, u32)>, n: usize) -> Vec<(u32, usize)> {
    let mut v: Vec<(u32, usize)> = items.map(|(i, d)| (d, i)).collect();
    if n == 0 {
        return Vec::new();
    }
    if v.len() > n {
        v.select_nth_unstable(n - 1);
        v.truncate(n);
    }
    v.sort_unstable();
    v
}

const GBIX_MAGIC: &[u8; 4] = b"GBIX";
const GBIX_VERSION: u32 = 1;

pub fn encode_index(index: &BarcodeIndex) -> Result<Vec<u8>> {
    let mut w = crate::wire::Writer::default();
    w.bytes(GBIX_MAGIC);
    w.u32(GBIX_VERSION);
    w.u32(u32::try_from(index.bit_len).map_err(|_| Error::Format("bit length exceeds u32".into()))?);
    let combo = index.combo.to_string();
    w.u16(combo.len() as u16);
    w.bytes(combo.as_bytes());
    w.u64(index.len() as u64);
    for r in index.records() {
        for s in [r.label, r.id] {
            let len = u16::try_from(s.len())
                .map_err(|_| Error::Format(format!("string longer than 65535 bytes: {s:?}")))?;
            w.u16(len);
            w.bytes(s.as_bytes());
        }
        w.u64s(r.bits);
    }
    Ok(w.into_inner())
}

pub fn decode_index(bytes: &[u8]) -> Result<BarcodeIndex> {
    let mut r = crate::wire::Reader::new(bytes);
    if r.bytes(4)? != GBIX_MAGIC {
        return Err(Error::Format("bad magic, expected GBIX".into()));
    }
    let version = r.u32()?;
    if version != GBIX_VERSION {
        return Err(Error::Format(format!("unsupported GBIX version {version}")));
    }
    let bit_len = r.u32()? as usize;
    let combo_len = r.u16()? as usize;
    let combo: LayerCombo = r
        .string(combo_len)?
        .parse()
        .map_err(|e: Error| Error::Format(e.to_string()))?;
    let count = r.u64()?;
    let stride = PackedBits::words_for(bit_len);
    let record_bytes = 4 + stride * 8;
    if count > (r.remaining() / record_bytes.max(1)) as u64 {
        return Err(Error::Format(format!(
            "record count {count} exceeds file contents"
        )));
    }
    let mut index = BarcodeIndex::new(combo, bit_len);
    let mut words = Vec::with_capacity(stride);
    for _ in 0..count {
        let label_len = r.u16()? as usize;
        let label = r.string(label_len)?;
        let id_len = r.u16()? as usize;
        let id = r.string(id_len)?;
        words.clear();
        r.u64s_into(stride, &mut words)?;
        let bits = PackedBits::from_words(words.clone(), bit_len)
            .map_err(|e| Error::Format(format!("record {id:?}: {e}")))?;
        index
            .insert(id, label, &bits)
            .map_err(|e| Error::Format(e.to_string()))?;
    }
    r.finish()?;
    Ok(index)
}

/// Writes via a temporary sibling file and a rename, so readers never see a
/// partially written index.
pub fn save(index: &BarcodeIndex, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_index(index)?;
    let tmp = path.with_extension("gbix.tmp");
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load(path: impl AsRef<Path>) -> Result<BarcodeIndex> {
    let path = path.as_ref();
    decode_index(&fs::read(path).map_err(|e| Error::io(path, e))?)
}
