use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use anyhow::{bail, Context, Result};
use gramdex::eval::MetricsReport;
use gramdex::ingest::{decode_image, scan_dataset, write_manifest, DatasetManifest};
use gramdex::pipeline::{self, extract_barcodes};
use gramdex::{index, vgg, DatasetKind, LayerCombo, VggPrefixModel};
use serde::Serialize;

use crate::config::{RunConfig, DEFAULT_FOLDS};
use crate::engine::{check_combo, run_query, QueryAnswer};

pub fn load_model(config: &RunConfig) -> Result<VggPrefixModel> {
    let path = config.weights()?;
    vgg::load_weights(path).with_context(|| format!("loading weights {}", path.display()))
}

/// Where `build-index` writes the manifest used to resolve record ids.
pub fn manifest_path_for(index_path: &Path) -> PathBuf {
    let mut name = index_path.as_os_str().to_owned();
    name.push(".manifest.tsv");
    PathBuf::from(name)
}

fn progress(total: usize) -> impl Fn(usize) + Sync {
    move |done| {
        if done % 100 == 0 || done == total {
            eprintln!("barcoded {done}/{total}");
        }
    }
}

#[derive(Debug, Clone)]
pub struct BuildSummary {
    pub index_path: PathBuf,
    pub images: usize,
    pub bit_len: usize,
    pub elapsed: Duration,
}

pub fn cmd_build_index(config: &RunConfig, split: Option<gramdex::Split>) -> Result<BuildSummary> {
    let started = Instant::now();
    let combo = config
        .single_combo()?
        .context("--layers is required")?
        .clone();
    let out = config.index.as_ref().or(config.out.as_ref()).context("--index is required")?;
    let (root, kind) = config.dataset()?;
    let model = load_model(config)?;
    let mut manifest = scan_dataset(root, kind)?;
    if let Some(split) = split {
        manifest.entries.retain(|e| e.split == Some(split));
        if manifest.is_empty() {
            bail!("no {split} entries under {}", root.display());
        }
    }
    let pool = config.thread_pool()?;
    let codes = pool.install(|| {
        extract_barcodes(&manifest.entries, &model, std::slice::from_ref(&combo), &progress(manifest.len()))
    })?;
    let codes: Vec<_> = codes.into_iter().map(|mut c| c.remove(0)).collect();
    let idx = pipeline::build_index(&manifest.entries, &codes, &combo)?;
    index::save(&idx, out)?;
    write_manifest(&manifest, manifest_path_for(out))?;
    Ok(BuildSummary {
        index_path: out.clone(),
        images: idx.len(),
        bit_len: idx.bit_len(),
        elapsed: started.elapsed(),
    })
}

#[derive(Debug, Serialize)]
pub struct QueryDocument {
    pub query_id: String,
    pub n: usize,
    pub combo: String,
    pub hits: Vec<HitDocument>,
    pub predicted_label: Option<String>,
    pub barcode_ms: f64,
}

#[derive(Debug, Serialize)]
pub struct HitDocument {
    pub rank: usize,
    pub id: String,
    pub label: String,
    pub distance: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub image_url: Option<String>,
}

impl QueryDocument {
    pub fn new(query_id: String, n: usize, combo: &LayerCombo, answer: &QueryAnswer, with_urls: bool) -> Self {
        QueryDocument {
            query_id,
            n,
            combo: combo.to_string(),
            hits: answer
                .result
                .hits
                .iter()
                .enumerate()
                .map(|(i, h)| HitDocument {
                    rank: i + 1,
                    id: h.id.clone(),
                    label: h.label.clone(),
                    distance: h.distance,
                    image_url: with_urls.then(|| format!("/api/image/{}", h.id)),
                })
                .collect(),
            predicted_label: answer.predicted.clone(),
            barcode_ms: answer.barcode_time.as_secs_f64() * 1e3,
        }
    }

    pub fn listing(&self) -> String {
        let mut s = String::new();
        for h in &self.hits {
            let _ = writeln!(s, "{:>4}  {:>8}  {:<16}  {}", h.rank, h.distance, h.label, h.id);
        }
        let _ = writeln!(
            s,
            "predicted: {}",
            self.predicted_label.as_deref().unwrap_or("(empty index)")
        );
        s
    }
}

pub fn cmd_query(config: &RunConfig, image_path: &Path) -> Result<QueryDocument> {
    let index_path = config.index()?;
    let idx = index::load(index_path).with_context(|| format!("loading index {}", index_path.display()))?;
    check_combo(&idx, config.single_combo()?)?;
    let model = load_model(config)?;
    let image = decode_image(image_path)?;
    let answer = run_query(&model, &idx, &image, config.top_n)
        .with_context(|| format!("querying with {}", image_path.display()))?;
    let doc = QueryDocument::new(
        image_path.display().to_string(),
        config.top_n,
        idx.combo(),
        &answer,
        false,
    );
    if let Some(out) = &config.out {
        fs::write(out, serde_json::to_string_pretty(&doc)?)
            .with_context(|| format!("writing {}", out.display()))?;
    }
    Ok(doc)
}

/// Evaluates every requested combo with one forward pass per image and
/// writes `<out>.jsonl` and `<out>.txt` when `--out` is given.
pub fn cmd_evaluate(config: &RunConfig) -> Result<Vec<MetricsReport>> {
    if config.layers.is_empty() {
        bail!("--layers is required");
    }
    let (root, kind) = config.dataset()?;
    if kind == DatasetKind::Kimia24 && config.folds.is_some() {
        bail!(gramdex::Error::Config(
            "kimia24 uses its provided train/test split; --folds does not apply".into()
        ));
    }
    let manifest = scan_dataset(root, kind)?;
    let model = load_model(config)?;
    let pool = config.thread_pool()?;
    let reports = pool.install(|| evaluate_manifest(&manifest, &model, &config.layers, config.folds, config.seed))?;
    if let Some(out) = &config.out {
        write_reports(&reports, out)?;
    }
    Ok(reports)
}

pub fn evaluate_manifest(
    manifest: &DatasetManifest,
    model: &VggPrefixModel,
    combos: &[LayerCombo],
    folds: Option<usize>,
    seed: u64,
) -> Result<Vec<MetricsReport>> {
    let codes = extract_barcodes(&manifest.entries, model, combos, &progress(manifest.len()))?;
    let mut per_combo: Vec<Vec<_>> = vec![Vec::with_capacity(codes.len()); combos.len()];
    for image_codes in codes {
        for (slot, c) in per_combo.iter_mut().zip(image_codes) {
            slot.push(c);
        }
    }
    let mut reports = Vec::new();
    for (combo, codes) in combos.iter().zip(per_combo) {
        let mut report = pipeline::evaluate(manifest, codes, combo, folds.unwrap_or(DEFAULT_FOLDS), seed)?;
        report.notes.push(format!("{} images in manifest", manifest.len()));
        reports.push(report);
    }
    Ok(reports)
}

pub fn write_reports(reports: &[MetricsReport], prefix: &Path) -> Result<()> {
    let with_ext = |ext: &str| {
        let mut p = prefix.as_os_str().to_owned();
        p.push(ext);
        PathBuf::from(p)
    };
    let jsonl: String = reports.iter().map(MetricsReport::to_jsonl).collect();
    let table: String = reports.iter().map(|r| r.table() + "\n").collect();
    for (path, body) in [(with_ext(".jsonl"), jsonl), (with_ext(".txt"), table)] {
        fs::write(&path, body).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

pub fn cmd_weights_info(config: &RunConfig) -> Result<String> {
    let model = load_model(config)?;
    let mut s = String::new();
    let _ = writeln!(s, "{:<8} {:>5} {:>5} {:>7} {:>10}", "layer", "out", "in", "kernel", "params");
    let mut total = 0;
    for l in model.layers() {
        let params = l.kernel.len() + l.bias.len();
        total += params;
        let _ = writeln!(
            s,
            "{:<8} {:>5} {:>5} {:>7} {:>10}",
            l.name,
            l.out_channels,
            l.in_channels,
            format!("{}x{}", l.kernel_h, l.kernel_w),
            params
        );
    }
    let _ = writeln!(s, "total parameters: {total}");
    Ok(s)
}
