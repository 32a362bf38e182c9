//! Acceptance suite. Prints one PASS / FAIL / NOT RUN line per criterion and
//! exits non-zero if any criterion fails.
//!
//! Dataset criteria run only when their inputs are present:
//! `GRAMDEX_WEIGHTS` (VGG19 ImageNet weights as GBWV) plus
//! `GRAMDEX_CRC_ROOT`, `GRAMDEX_EMC_ROOT`, `GRAMDEX_KIMIA_ROOT`.

mod common;

use std::collections::{BTreeSet, HashMap};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::time::{Duration, Instant};

use gramdex::barcode::{binarize, gram, triangle_vectorize, FeatureMatrix};
use gramdex::eval::{auc_macro, confusion_metrics, eta_metrics, LabeledBarcode, Prediction, ReportOutcome};
use gramdex::index::{decode_index, encode_index, hamming};
use gramdex::ingest::{decode_image, scan_dataset, DatasetManifest};
use gramdex::pipeline::{evaluate, extract_barcodes};
use gramdex::tensor::{conv2d, maxpool2, ConvLayerWeights};
use gramdex::vgg::{load_weights, preprocess};
use gramdex::{BarcodeIndex, DatasetKind, LayerCombo, PackedBits, Split, Tap, Tensor, VggPrefixModel};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::*;

const ORACLE_CASES: usize = 1000;
const PROPERTY_CASES: usize = 256;
const MINUTE: Duration = Duration::from_secs(60);

enum Outcome {
    Pass(String),
    Fail(String),
    NotRun(String),
}

fn verdict(ok: bool, detail: String) -> Outcome {
    if ok {
        Outcome::Pass(detail)
    } else {
        Outcome::Fail(detail)
    }
}

/// Runs `f`, failing it if it panics or exceeds `budget`.
fn timed(budget: Duration, f: impl FnOnce() -> Outcome) -> Outcome {
    let started = Instant::now();
    let outcome = match catch_unwind(AssertUnwindSafe(f)) {
        Ok(o) => o,
        Err(p) => {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Outcome::Fail(format!("panicked: {msg}"))
        }
    };
    let elapsed = started.elapsed();
    let stamp = format!("{:.2}s", elapsed.as_secs_f64());
    match outcome {
        Outcome::Pass(d) if elapsed > budget => {
            Outcome::Fail(format!("{d}; {stamp} exceeds {}s budget", budget.as_secs()))
        }
        Outcome::Pass(d) => Outcome::Pass(format!("{d}; {stamp}")),
        Outcome::Fail(d) => Outcome::Fail(format!("{d}; {stamp}")),
        o => o,
    }
}

fn rng(stream: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(0x6772_616d ^ stream)
}

fn uniform(r: &mut impl Rng, n: usize, lo: f32, hi: f32) -> Vec<f32> {
    (0..n).map(|_| r.gen_range(lo..hi)).collect()
}

fn random_bits(r: &mut impl Rng, len: usize) -> PackedBits {
    let bools: Vec<bool> = (0..len).map(|_| r.gen()).collect();
    PackedBits::from_bools(&bools)
}

// ---------------------------------------------------------------------------
// Oracle suites

fn conv_oracle(x: &Tensor, w: &ConvLayerWeights) -> Vec<f64> {
    let (c, h, wd) = x.shape();
    let (ph, pw) = (w.kernel_h as isize / 2, w.kernel_w as isize / 2);
    let mut out = Vec::with_capacity(w.out_channels * h * wd);
    for o in 0..w.out_channels {
        for y in 0..h as isize {
            for xx in 0..wd as isize {
                let mut s = f64::from(w.bias[o]);
                for i in 0..c {
                    for ky in 0..w.kernel_h as isize {
                        for kx in 0..w.kernel_w as isize {
                            let (sy, sx) = (y + ky - ph, xx + kx - pw);
                            if sy >= 0 && sx >= 0 && (sy as usize) < h && (sx as usize) < wd {
                                s += f64::from(w.weight(o, i, ky as usize, kx as usize))
                                    * f64::from(x.get(i, sy as usize, sx as usize));
                            }
                        }
                    }
                }
                out.push(s);
            }
        }
    }
    out
}

fn conv_suite() -> Outcome {
    let mut r = rng(1);
    let mut worst = 0.0f64;
    for case in 0..ORACLE_CASES {
        let (cin, cout) = (r.gen_range(1..=5), r.gen_range(1..=9));
        let (h, w) = (r.gen_range(1..=11), r.gen_range(1..=11));
        let k = [1, 3, 3, 5][r.gen_range(0..4)];
        let x = Tensor::new(cin, h, w, uniform(&mut r, cin * h * w, -1.0, 1.0)).unwrap();
        let layer = ConvLayerWeights::new(
            "c",
            [cout, cin, k, k],
            uniform(&mut r, cout * cin * k * k, -1.0, 1.0),
            uniform(&mut r, cout, -1.0, 1.0),
        )
        .unwrap();
        let got = conv2d(&x, &layer).unwrap();
        if got.shape() != (cout, h, w) {
            return Outcome::Fail(format!("case {case}: shape {:?}", got.shape()));
        }
        for (a, b) in got.data().iter().zip(conv_oracle(&x, &layer)) {
            worst = worst.max((f64::from(*a) - b).abs());
        }
    }
    verdict(worst <= 1e-4, format!("{ORACLE_CASES} cases, max abs error {worst:.2e} (tol 1e-4)"))
}

fn maxpool_suite() -> Outcome {
    let mut r = rng(2);
    for case in 0..ORACLE_CASES {
        let (c, h, w) = (r.gen_range(1..=4), r.gen_range(2..=13), r.gen_range(2..=13));
        let x = Tensor::new(c, h, w, uniform(&mut r, c * h * w, -5.0, 5.0)).unwrap();
        let got = maxpool2(&x).unwrap();
        if got.shape() != (c, h / 2, w / 2) {
            return Outcome::Fail(format!("case {case}: shape {:?}", got.shape()));
        }
        for ch in 0..c {
            for y in 0..h / 2 {
                for xx in 0..w / 2 {
                    let want = [(0, 0), (0, 1), (1, 0), (1, 1)]
                        .iter()
                        .map(|(dy, dx)| x.get(ch, 2 * y + dy, 2 * xx + dx))
                        .fold(f32::NEG_INFINITY, f32::max);
                    if got.get(ch, y, xx) != want {
                        return Outcome::Fail(format!("case {case}: mismatch at ({ch},{y},{xx})"));
                    }
                }
            }
        }
    }
    Outcome::Pass(format!("{ORACLE_CASES} cases, exact"))
}

fn gram_suite() -> Outcome {
    let mut r = rng(3);
    let mut worst = 0.0f64;
    for case in 0..ORACLE_CASES {
        let (n, m) = (r.gen_range(1..=12), r.gen_range(1..=70));
        // Post-ReLU style data: non-negative with exact zeros.
        let data: Vec<f32> = (0..n * m)
            .map(|_| if r.gen_bool(0.3) { 0.0 } else { r.gen_range(0.0..4.0) })
            .collect();
        let g = gram(&FeatureMatrix::new(n, m, &data).unwrap()).unwrap();
        for i in 0..n {
            for j in 0..n {
                let want: f64 = (0..m)
                    .map(|k| f64::from(data[i * m + k]) * f64::from(data[j * m + k]))
                    .sum();
                let got = f64::from(g.get(i, j));
                let rel = if want == 0.0 { got.abs() } else { (got - want).abs() / want };
                if rel > 1e-3 {
                    return Outcome::Fail(format!("case {case}: ({i},{j}) {got} vs {want}"));
                }
                worst = worst.max(rel);
            }
        }
    }
    verdict(true, format!("{ORACLE_CASES} cases, max relative error {worst:.2e} (tol 1e-3)"))
}

fn hamming_suite() -> Outcome {
    let mut r = rng(4);
    for case in 0..ORACLE_CASES {
        let len = r.gen_range(1..=1500);
        let a: Vec<bool> = (0..len).map(|_| r.gen()).collect();
        let b: Vec<bool> = (0..len).map(|_| r.gen()).collect();
        let want = a.iter().zip(&b).filter(|(x, y)| x != y).count() as u32;
        let (pa, pb) = (PackedBits::from_bools(&a), PackedBits::from_bools(&b));
        let got = hamming(pa.words(), pb.words(), len).unwrap();
        if got != want {
            return Outcome::Fail(format!("case {case}: len {len}: {got} vs {want}"));
        }
    }
    Outcome::Pass(format!("{ORACLE_CASES} cases, exact"))
}

// ---------------------------------------------------------------------------
// Properties

fn max_rel(a: &[f32], b: &[f32]) -> f64 {
    let scale = b.iter().fold(0.0f64, |m, &v| m.max(f64::from(v).abs())).max(f64::MIN_POSITIVE);
    a.iter()
        .zip(b)
        .fold(0.0f64, |m, (&x, &y)| m.max((f64::from(x) - f64::from(y)).abs()))
        / scale
}

fn permutation_property() -> Outcome {
    let mut r = rng(5);
    let mut worst = 0.0f64;
    for _ in 0..PROPERTY_CASES {
        let (n, m) = (r.gen_range(1..=10), r.gen_range(2..=80));
        let data = uniform(&mut r, n * m, 0.0, 3.0);
        let mut perm: Vec<usize> = (0..m).collect();
        perm.shuffle(&mut r);
        let shuffled: Vec<f32> = (0..n).flat_map(|i| perm.iter().map(move |&k| (i, k))).map(|(i, k)| data[i * m + k]).collect();
        let g0 = gram(&FeatureMatrix::new(n, m, &data).unwrap()).unwrap();
        let g1 = gram(&FeatureMatrix::new(n, m, &shuffled).unwrap()).unwrap();
        worst = worst.max(max_rel(g1.entries(), g0.entries()));
    }
    verdict(worst <= 1e-4, format!("{PROPERTY_CASES} cases, max relative deviation {worst:.2e} (tol 1e-4)"))
}

fn scaling_property() -> Outcome {
    let mut r = rng(6);
    let mut worst = 0.0f64;
    for _ in 0..PROPERTY_CASES {
        let (n, m) = (r.gen_range(1..=10), r.gen_range(1..=80));
        let a: f32 = r.gen_range(0.05..20.0);
        let data = uniform(&mut r, n * m, 0.0, 3.0);
        let scaled: Vec<f32> = data.iter().map(|v| v * a).collect();
        let g0 = gram(&FeatureMatrix::new(n, m, &data).unwrap()).unwrap();
        let g1 = gram(&FeatureMatrix::new(n, m, &scaled).unwrap()).unwrap();
        let want: Vec<f32> = g0.entries().iter().map(|v| v * a * a).collect();
        worst = worst.max(max_rel(g1.entries(), &want));
    }
    verdict(worst <= 1e-4, format!("{PROPERTY_CASES} cases, max relative deviation {worst:.2e} (tol 1e-4)"))
}

fn rescale_property() -> Outcome {
    let mut r = rng(7);
    for case in 0..PROPERTY_CASES {
        let n = r.gen_range(1..=10);
        let m = r.gen_range(1..=40);
        let data = uniform(&mut r, n * m, 0.0, 3.0);
        let v = triangle_vectorize(&gram(&FeatureMatrix::new(n, m, &data).unwrap()).unwrap());
        let a = 2f32.powi(r.gen_range(-20..=20));
        let scaled: Vec<f32> = v.iter().map(|x| x * a).collect();
        if binarize(&v).unwrap() != binarize(&scaled).unwrap() {
            return Outcome::Fail(format!("case {case}: scale {a} changed the barcode"));
        }
    }
    Outcome::Pass(format!("{PROPERTY_CASES} cases, exact"))
}

fn median_count_property() -> Outcome {
    let mut r = rng(8);
    for case in 0..PROPERTY_CASES {
        let len = 2 * r.gen_range(1..=2000);
        let mut seen = BTreeSet::new();
        let mut v = Vec::with_capacity(len);
        while v.len() < len {
            let x: f32 = r.gen_range(-1e3..1e3);
            if seen.insert(x.to_bits()) {
                v.push(x);
            }
        }
        let ones = binarize(&v).unwrap().count_ones();
        if ones != len / 2 {
            return Outcome::Fail(format!("case {case}: {ones} ones of {len}"));
        }
    }
    Outcome::Pass(format!("{PROPERTY_CASES} cases, exact"))
}

// ---------------------------------------------------------------------------
// Metric identities

fn prediction(id: usize, truth: &str, predicted: &str) -> Prediction {
    Prediction {
        query_id: format!("q{id}"),
        true_label: truth.to_owned(),
        predicted: predicted.to_owned(),
        neighbors: Vec::new(),
    }
}

fn eta_identity() -> Outcome {
    let mut r = rng(9);
    for case in 0..PROPERTY_CASES {
        let scans: Vec<String> = (0..r.gen_range(1..=24)).map(|s| format!("s{s}")).collect();
        let mut preds = Vec::new();
        let mut per_scan = vec![(0usize, 0usize); scans.len()];
        for (s, slot) in per_scan.iter_mut().enumerate() {
            for _ in 0..r.gen_range(1..=20) {
                let guess = r.gen_range(0..scans.len());
                slot.0 += usize::from(guess == s);
                slot.1 += 1;
                preds.push(prediction(preds.len(), &scans[s], &scans[guess]));
            }
        }
        let m = eta_metrics(&preds, &scans).unwrap();
        let eta_p = per_scan.iter().map(|s| s.0).sum::<usize>() as f64 / preds.len() as f64;
        let eta_w = per_scan.iter().map(|&(c, n)| c as f64 / n as f64).sum::<f64>() / scans.len() as f64;
        let ok = (m.eta_p - eta_p).abs() < 1e-12
            && (m.eta_w - eta_w).abs() < 1e-12
            && m.eta_total == m.eta_p * m.eta_w;
        if !ok {
            return Outcome::Fail(format!("case {case}: {m:?} vs ({eta_p}, {eta_w})"));
        }
    }
    Outcome::Pass(format!("{PROPERTY_CASES} cases, exact"))
}

fn balanced_sensitivity_identity() -> Outcome {
    let mut r = rng(10);
    for case in 0..PROPERTY_CASES {
        let k = r.gen_range(2..=8);
        let per_class = r.gen_range(1..=30);
        let labels: Vec<String> = (0..k).map(|c| format!("c{c}")).collect();
        let mut preds = Vec::new();
        for truth in &labels {
            for _ in 0..per_class {
                let guess = if r.gen_bool(0.7) { truth } else { &labels[r.gen_range(0..k)] };
                preds.push(prediction(preds.len(), truth, guess));
            }
        }
        let rep = confusion_metrics(&preds).unwrap();
        if (rep.sensitivity - rep.accuracy).abs() > 1e-12 {
            return Outcome::Fail(format!(
                "case {case}: sensitivity {} vs accuracy {}",
                rep.sensitivity, rep.accuracy
            ));
        }
    }
    Outcome::Pass(format!("{PROPERTY_CASES} cases, exact"))
}

/// Macro AUC by direct enumeration of (positive, negative) query pairs.
fn pairwise_auc(queries: &[LabeledBarcode], db: &BarcodeIndex) -> Option<f64> {
    let classes: BTreeSet<String> = db.records().map(|r| r.label.to_owned()).collect();
    let min_to = |q: &LabeledBarcode, c: &str| {
        db.records()
            .filter(|r| r.label == c)
            .map(|r| hamming(r.bits, q.bits.words(), db.bit_len()).unwrap())
            .min()
            .unwrap()
    };
    let mut aucs = Vec::new();
    for c in &classes {
        let scores: Vec<(bool, f64)> = queries
            .iter()
            .map(|q| (q.label == *c, -f64::from(min_to(q, c))))
            .collect();
        let (mut wins, mut pairs) = (0.0, 0usize);
        for (_, sp) in scores.iter().filter(|s| s.0) {
            for (_, sn) in scores.iter().filter(|s| !s.0) {
                pairs += 1;
                wins += if sp > sn {
                    1.0
                } else if sp == sn {
                    0.5
                } else {
                    0.0
                };
            }
        }
        if pairs > 0 {
            aucs.push(wins / pairs as f64);
        }
    }
    (!aucs.is_empty()).then(|| aucs.iter().sum::<f64>() / aucs.len() as f64)
}

fn auc_identity() -> Outcome {
    let mut r = rng(11);
    let combo: LayerCombo = "1".parse().unwrap();
    for case in 0..PROPERTY_CASES {
        let bit_len = r.gen_range(4..=24);
        let k = r.gen_range(2..=4);
        let mut db = BarcodeIndex::new(combo.clone(), bit_len);
        for i in 0..r.gen_range(k..=3 * k + 6) {
            let label = if i < k { i } else { r.gen_range(0..k) };
            db.insert(format!("d{i}"), format!("c{label}"), &random_bits(&mut r, bit_len))
                .unwrap();
        }
        let queries: Vec<LabeledBarcode> = (0..r.gen_range(2..=20))
            .map(|i| LabeledBarcode {
                id: format!("q{i}"),
                label: format!("c{}", r.gen_range(0..k)),
                bits: random_bits(&mut r, bit_len),
            })
            .collect();
        let got = auc_macro(&queries, &db).unwrap().macro_auc;
        let want = pairwise_auc(&queries, &db);
        let same = match (got, want) {
            (Some(a), Some(b)) => (a - b).abs() < 1e-12,
            (None, None) => true,
            _ => false,
        };
        if !same {
            return Outcome::Fail(format!("case {case}: {got:?} vs {want:?}"));
        }
    }
    Outcome::Pass(format!("{PROPERTY_CASES} instances of <= 20 queries, exact"))
}

// ---------------------------------------------------------------------------
// Index

fn random_index(r: &mut ChaCha8Rng, records: usize, bit_len: usize, labels: usize) -> BarcodeIndex {
    let mut idx = BarcodeIndex::new("2,3,5".parse().unwrap(), bit_len);
    for i in 0..records {
        idx.insert(format!("r{i}"), format!("c{}", r.gen_range(0..labels)), &random_bits(r, bit_len))
            .unwrap();
    }
    idx
}

fn index_round_trip() -> Outcome {
    let mut r = rng(12);
    let dir = tempfile::tempdir().unwrap();
    for case in 0..50 {
        let (records, bit_len) = (r.gen_range(0..200), r.gen_range(1..=700));
        let idx = random_index(&mut r, records, bit_len, 5);
        let decoded = decode_index(&encode_index(&idx).unwrap()).unwrap();
        let path = dir.path().join("x.gbix");
        gramdex::index::save(&idx, &path).unwrap();
        let loaded = gramdex::index::load(&path).unwrap();
        if decoded != idx || loaded != idx {
            return Outcome::Fail(format!("case {case}: round trip differs"));
        }
    }
    Outcome::Pass("50 random indexes through bytes and files, exact".into())
}

fn parallel_equals_serial() -> Outcome {
    let mut r = rng(13);
    // Short barcodes force many distance ties.
    for bit_len in [7, 64, 1000] {
        let idx = random_index(&mut r, 10_000, bit_len, 8);
        for q in 0..20 {
            let query = random_bits(&mut r, bit_len);
            let n = [1, 3, 10, 1500, 10_000, 20_000][q % 6];
            let serial = idx.search(&query, n).unwrap();
            let parallel = idx.search_parallel(&query, n).unwrap();
            if serial != parallel {
                return Outcome::Fail(format!("bit_len {bit_len}, n {n}: rankings differ"));
            }
        }
    }
    Outcome::Pass("10,000 records x 3 bit lengths x 20 queries, identical".into())
}

// ---------------------------------------------------------------------------
// Engine

fn engine_fidelity() -> Outcome {
    let image = decode_image(fixture_dir().join("reference_input.png")).unwrap();
    let input = preprocess(&image).unwrap();
    let taps = fixture_model().forward_with_taps(&input, &Tap::ALL).unwrap();
    let mut parts = Vec::new();
    let mut ok = true;
    for tap in Tap::ALL {
        let err = scaled_max_error(taps[&tap].data(), &reference_activation(tap));
        ok &= err <= 1e-3;
        parts.push(format!("{tap} {err:.1e}"));
    }
    verdict(ok, format!("{} (tol 1e-3)", parts.join(", ")))
}

fn scan_throughput() -> Outcome {
    const RECORDS: usize = 4000;
    const QUERIES: usize = 10;
    let combo = LayerCombo::new(Tap::ALL).unwrap();
    let bit_len = combo.bit_len();
    let mut r = rng(14);
    let words = PackedBits::words_for(bit_len);
    let tail_mask = (1u64 << (bit_len % 64)) - 1;
    let random_code = |r: &mut ChaCha8Rng| {
        let mut w: Vec<u64> = (0..words).map(|_| r.gen()).collect();
        *w.last_mut().unwrap() &= tail_mask;
        PackedBits::from_words(w, bit_len).unwrap()
    };
    let mut idx = BarcodeIndex::new(combo, bit_len);
    for i in 0..RECORDS {
        idx.insert(format!("r{i}"), "x", &random_code(&mut r)).unwrap();
    }
    let queries: Vec<PackedBits> = (0..QUERIES).map(|_| random_code(&mut r)).collect();
    idx.search(&queries[0], 3).unwrap();
    let started = Instant::now();
    for q in &queries {
        std::hint::black_box(idx.search(q, 3).unwrap());
    }
    let rate = (RECORDS * QUERIES) as f64 / started.elapsed().as_secs_f64();
    verdict(
        rate >= 100_000.0,
        format!("{rate:.0} records/s on one thread at {bit_len} bits (gate 100000)"),
    )
}

// ---------------------------------------------------------------------------
// Dataset reproduction

fn env_path(var: &str) -> Option<PathBuf> {
    std::env::var_os(var).map(PathBuf::from).filter(|p| p.exists())
}

struct Datasets {
    model: Option<VggPrefixModel>,
}

impl Datasets {
    fn load() -> Self {
        let model = env_path("GRAMDEX_WEIGHTS").map(|p| load_weights(p).expect("GRAMDEX_WEIGHTS loads"));
        Datasets { model }
    }

    fn require(&self, root_var: &str) -> Result<(&VggPrefixModel, PathBuf), String> {
        let model = self
            .model
            .as_ref()
            .ok_or("GRAMDEX_WEIGHTS (VGG19 ImageNet GBWV) not set")?;
        let root = env_path(root_var).ok_or(format!("{root_var} not set"))?;
        Ok((model, root))
    }
}

/// Mean cross-validated accuracy and sensitivity in percent, one per combo.
fn cv_percent(
    model: &VggPrefixModel,
    manifest: &DatasetManifest,
    combos: &[LayerCombo],
) -> Vec<(f64, f64, f64)> {
    let codes = extract_barcodes(&manifest.entries, model, combos, &|_| {}).unwrap();
    (0..combos.len())
        .map(|c| {
            let col: Vec<PackedBits> = codes.iter().map(|v| v[c].clone()).collect();
            let report = evaluate(manifest, col, &combos[c], 5, 0).unwrap();
            let s = report.cv_summary().unwrap();
            (100.0 * s.accuracy.0, 100.0 * s.accuracy.1, 100.0 * s.sensitivity.0)
        })
        .collect()
}

fn eta_total_percent(model: &VggPrefixModel, manifest: &DatasetManifest, combo: &LayerCombo) -> (f64, usize) {
    let codes = extract_barcodes(&manifest.entries, model, std::slice::from_ref(combo), &|_| {}).unwrap();
    let codes = codes.into_iter().map(|mut v| v.remove(0)).collect();
    match evaluate(manifest, codes, combo, 5, 0).unwrap().outcome {
        ReportOutcome::Holdout { eta, database, .. } => (100.0 * eta.eta_total, database),
        ReportOutcome::CrossValidation { .. } => unreachable!("kimia24 uses the holdout protocol"),
    }
}

fn dataset_criteria(results: &mut Vec<(String, Outcome)>) {
    let data = Datasets::load();
    let all: LayerCombo = "1,2,3,4,5".parse().unwrap();
    let one: LayerCombo = "1".parse().unwrap();
    let five: LayerCombo = "5".parse().unwrap();

    let crc_names = [
        "CRC combo 1,2,3,4,5 accuracy 95.34 +/- 2.0",
        "CRC sensitivity equals accuracy (< 0.01)",
        "CRC combo 5 beats combo 1 by >= 1 point",
    ];
    match data.require("GRAMDEX_CRC_ROOT") {
        Err(why) => {
            for n in crc_names {
                results.push((n.into(), Outcome::NotRun(why.clone())));
            }
        }
        Ok((model, root)) => {
            let manifest = scan_dataset(root, DatasetKind::Crc).unwrap();
            let res = cv_percent(model, &manifest, &[all, one, five]);
            let (acc, std, sens) = res[0];
            results.push((
                crc_names[0].into(),
                verdict((acc - 95.34).abs() <= 2.0, format!("{acc:.2} +/- {std:.2}")),
            ));
            results.push((
                crc_names[1].into(),
                verdict((sens - acc).abs() < 0.01, format!("sensitivity {sens:.4}, accuracy {acc:.4}")),
            ));
            let (a1, a5) = (res[1].0, res[2].0);
            results.push((
                crc_names[2].into(),
                verdict(a5 - a1 >= 1.0, format!("combo 5 {a5:.2}, combo 1 {a1:.2}")),
            ));
        }
    }

    let emc_name = "EMC combo 3,5 accuracy 74.92 +/- 3.0";
    results.push((
        emc_name.into(),
        match data.require("GRAMDEX_EMC_ROOT") {
            Err(why) => Outcome::NotRun(why),
            Ok((model, root)) => {
                let manifest = scan_dataset(root, DatasetKind::Emc).unwrap();
                let (acc, std, _) = cv_percent(model, &manifest, &["3,5".parse().unwrap()])[0];
                verdict((acc - 74.92).abs() <= 3.0, format!("{acc:.2} +/- {std:.2}"))
            }
        },
    ));

    let kimia_names = [
        "KimiaPath24 combo 2,3,5 eta_total 87.79 +/- 3.0",
        "KimiaPath24 10% subsample eta_total >= 70 within 20 min",
    ];
    match data.require("GRAMDEX_KIMIA_ROOT") {
        Err(why) => {
            for n in kimia_names {
                results.push((n.into(), Outcome::NotRun(why.clone())));
            }
        }
        Ok((model, root)) => {
            let combo: LayerCombo = "2,3,5".parse().unwrap();
            let manifest = scan_dataset(root, DatasetKind::Kimia24).unwrap();

            let smoke = timed(Duration::from_secs(20 * 60), || {
                let mut sub = manifest.clone();
                let mut seen: HashMap<Option<Split>, usize> = HashMap::new();
                sub.entries.retain(|e| {
                    let n = seen.entry(e.split).or_default();
                    *n += 1;
                    (*n - 1).is_multiple_of(10)
                });
                let (eta, db) = eta_total_percent(model, &sub, &combo);
                verdict(eta >= 70.0, format!("eta_total {eta:.2}, {db} training patches"))
            });

            let (eta, db) = eta_total_percent(model, &manifest, &combo);
            results.push((
                kimia_names[0].into(),
                verdict((eta - 87.79).abs() <= 3.0, format!("eta_total {eta:.2}, {db} training patches")),
            ));
            results.push((kimia_names[1].into(), smoke));
        }
    }
}

fn main() {
    // `cargo test -- <filter>` style arguments are accepted and ignored.
    let mut results: Vec<(String, Outcome)> = vec![
        ("conv2d matches naive oracle".into(), timed(MINUTE, conv_suite)),
        ("maxpool2 matches naive oracle".into(), timed(MINUTE, maxpool_suite)),
        ("gram matches naive oracle".into(), timed(MINUTE, gram_suite)),
        ("hamming matches naive oracle".into(), timed(MINUTE, hamming_suite)),
        ("gram spatial-permutation invariance".into(), timed(MINUTE, permutation_property)),
        ("gram scale equivariance (a^2)".into(), timed(MINUTE, scaling_property)),
        ("barcode positive-rescaling invariance".into(), timed(MINUTE, rescale_property)),
        ("median threshold sets exactly half the bits".into(), timed(MINUTE, median_count_property)),
        ("eta_total = eta_p * eta_w".into(), timed(MINUTE, eta_identity)),
        ("balanced macro-sensitivity = accuracy".into(), timed(MINUTE, balanced_sensitivity_identity)),
        ("AUC equals pairwise enumeration".into(), timed(MINUTE, auc_identity)),
        ("index save/load round trip".into(), timed(MINUTE, index_round_trip)),
        ("parallel search = serial search".into(), timed(MINUTE, parallel_equals_serial)),
        ("engine matches reference activations".into(), timed(Duration::from_secs(10), engine_fidelity)),
        ("Hamming scan >= 100k records/s/core".into(), timed(MINUTE, scan_throughput)),
    ];
    dataset_criteria(&mut results);

    let mut failed = 0;
    for (name, outcome) in &results {
        let (tag, detail) = match outcome {
            Outcome::Pass(d) => ("PASS", d),
            Outcome::Fail(d) => {
                failed += 1;
                ("FAIL", d)
            }
            Outcome::NotRun(d) => ("NOT RUN", d),
        };
        println!("{tag:<8} {name}: {detail}");
    }
    println!(
        "acceptance: {} passed, {failed} failed, {} not run",
        results.iter().filter(|r| matches!(r.1, Outcome::Pass(_))).count(),
        results.iter().filter(|r| matches!(r.1, Outcome::NotRun(_))).count()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
