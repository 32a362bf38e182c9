//! Retrieval-based evaluation: top-n mode prediction, scan-level accuracies
//! for KimiaPath24, one-vs-rest confusion metrics, nearest-distance AUC and
//! stratified k-fold cross-validation.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::barcode::{LayerCombo, PackedBits};
use crate::error::{Error, Result};
use crate::index::{top_n, BarcodeIndex, Hit};

/// Neighbours consulted by the mode rule.
pub const TOP_N: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledBarcode {
    pub id: String,
    pub label: String,
    pub bits: PackedBits,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Prediction {
    pub query_id: String,
    pub true_label: String,
    pub predicted: String,
    /// `(label, distance)` of the neighbours, nearest first.
    pub neighbors: Vec<(String, u32)>,
}

impl Prediction {
    pub fn correct(&self) -> bool {
        self.true_label == self.predicted
    }
}

/// The label occurring strictly more often than every other label, or the
/// first (nearest) label when there is no unique mode. `None` on empty input.
pub fn mode_label<'a>(labels: &[&'a str]) -> Option<&'a str> {
    let first = *labels.first()?;
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for l in labels {
        *counts.entry(l).or_default() += 1;
    }
    let best = *counts.values().max().unwrap();
    let mut winners = counts.iter().filter(|(_, &c)| c == best);
    let (&winner, _) = winners.next().unwrap();
    if winners.next().is_some() {
        Some(first)
    } else {
        Some(winner)
    }
}

/// Applies the mode rule to ranked hits.
pub fn predict_from_hits(hits: &[Hit]) -> Option<String> {
    let labels: Vec<&str> = hits.iter().map(|h| h.label.as_str()).collect();
    mode_label(&labels).map(str::to_owned)
}

/// Classifies `query` by the mode of its `n` nearest database records.
pub fn predict(query: &LabeledBarcode, db: &BarcodeIndex, n: usize) -> Result<Prediction> {
    if db.is_empty() {
        return Err(Error::Evaluation("empty database".into()));
    }
    if db.position(&query.id).is_some() {
        return Err(Error::Evaluation(format!(
            "query {:?} is part of the database",
            query.id
        )));
    }
    let result = db.search(&query.bits, n)?;
    Ok(Prediction {
        query_id: query.id.clone(),
        true_label: query.label.clone(),
        predicted: predict_from_hits(&result.hits).expect("non-empty database"),
        neighbors: result.hits.into_iter().map(|h| (h.label, h.distance)).collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EtaMetrics {
    pub eta_p: f64,
    pub eta_w: f64,
    pub eta_total: f64,
}

/// Patch-to-scan accuracy (correct patches over all patches), whole-scan
/// accuracy (mean per-scan hit rate over `scans`) and their product.
pub fn eta_metrics(predictions: &[Prediction], scans: &[String]) -> Result<EtaMetrics> {
    if scans.is_empty() {
        return Err(Error::Evaluation("no scans given".into()));
    }
    let mut per_scan: BTreeMap<&str, (usize, usize)> =
        scans.iter().map(|s| (s.as_str(), (0, 0))).collect();
    for p in predictions {
        let slot = per_scan.get_mut(p.true_label.as_str()).ok_or_else(|| {
            Error::Evaluation(format!("prediction for unknown scan {:?}", p.true_label))
        })?;
        slot.0 += usize::from(p.correct());
        slot.1 += 1;
    }
    if let Some((s, _)) = per_scan.iter().find(|(_, (_, n))| *n == 0) {
        return Err(Error::Evaluation(format!("scan {s} has no test patches")));
    }
    let hits: usize = per_scan.values().map(|(c, _)| c).sum();
    let eta_p = hits as f64 / predictions.len() as f64;
    let eta_w = per_scan.values().map(|&(c, n)| c as f64 / n as f64).sum::<f64>() / per_scan.len() as f64;
    Ok(EtaMetrics {
        eta_p,
        eta_w,
        eta_total: eta_p * eta_w,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub tn: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl ConfusionCounts {
    pub fn sensitivity(&self) -> Option<f64> {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn specificity(&self) -> Option<f64> {
        ratio(self.tn, self.tn + self.fp)
    }

    pub fn total(&self) -> usize {
        self.tp + self.tn + self.fp + self.fn_
    }
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfusionReport {
    pub accuracy: f64,
    /// Unweighted mean over classes with a defined sensitivity.
    pub sensitivity: f64,
    /// Unweighted mean over classes with a defined specificity.
    pub specificity: f64,
    pub per_class: BTreeMap<String, ConfusionCounts>,
    /// Classes left out of a macro mean because a denominator was zero.
    pub flagged: Vec<String>,
}

/// One-vs-rest counts for every class seen as a true or predicted label,
/// overall accuracy and macro-averaged sensitivity and specificity.
pub fn confusion_metrics(predictions: &[Prediction]) -> Result<ConfusionReport> {
    let classes: BTreeSet<&str> = predictions
        .iter()
        .flat_map(|p| [p.true_label.as_str(), p.predicted.as_str()])
        .collect();
    if classes.len() < 2 {
        return Err(Error::Evaluation(format!(
            "confusion metrics need at least 2 classes, got {}",
            classes.len()
        )));
    }
    let mut per_class: BTreeMap<String, ConfusionCounts> = BTreeMap::new();
    for &c in &classes {
        let mut k = ConfusionCounts::default();
        for p in predictions {
            match (p.true_label == c, p.predicted == c) {
                (true, true) => k.tp += 1,
                (true, false) => k.fn_ += 1,
                (false, true) => k.fp += 1,
                (false, false) => k.tn += 1,
            }
        }
        per_class.insert(c.to_owned(), k);
    }
    let mut flagged = Vec::new();
    let mut macro_mean = |f: fn(&ConfusionCounts) -> Option<f64>, what: &str| {
        let mut vals = Vec::new();
        for (c, k) in &per_class {
            match f(k) {
                Some(v) => vals.push(v),
                None => flagged.push(format!("{c}: {what} undefined")),
            }
        }
        vals.iter().sum::<f64>() / vals.len().max(1) as f64
    };
    let sensitivity = macro_mean(ConfusionCounts::sensitivity, "sensitivity");
    let specificity = macro_mean(ConfusionCounts::specificity, "specificity");
    let correct = predictions.iter().filter(|p| p.correct()).count();
    Ok(ConfusionReport {
        accuracy: correct as f64 / predictions.len() as f64,
        sensitivity,
        specificity,
        per_class,
        flagged,
    })
}

/// Mann–Whitney AUC: probability a positive outscores a negative, ties
/// counted as one half. Computed from mid-ranks; `None` if either side is empty.
pub fn mann_whitney_auc(positives: &[f64], negatives: &[f64]) -> Option<f64> {
    if positives.is_empty() || negatives.is_empty() {
        return None;
    }
    let mut all: Vec<(f64, bool)> = positives
        .iter()
        .map(|&s| (s, true))
        .chain(negatives.iter().map(|&s| (s, false)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    // Twice the rank sum keeps mid-ranks integral.
    let mut rank_sum2 = 0u64;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j < all.len() && all[j].0 == all[i].0 {
            j += 1;
        }
        let mid2 = (i + 1 + j) as u64;
        rank_sum2 += mid2 * all[i..j].iter().filter(|x| x.1).count() as u64;
        i = j;
    }
    let p = positives.len() as u64;
    let u2 = rank_sum2 - p * (p + 1);
    Some(u2 as f64 / (2 * p * negatives.len() as u64) as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AucReport {
    /// Mean over classes with a defined AUC; `None` if there are none.
    pub macro_auc: Option<f64>,
    pub per_class: BTreeMap<String, f64>,
    pub flagged: Vec<String>,
}

/// Per-class nearest distance from one query to the database.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryOutcome {
    pub prediction: Prediction,
    pub class_min: BTreeMap<String, u32>,
}

/// One scan of the database yields both the top-n prediction and the
/// per-class minimum distances used as AUC scores.
pub fn evaluate_query(query: &LabeledBarcode, db: &BarcodeIndex, n: usize) -> Result<QueryOutcome> {
    if db.is_empty() {
        return Err(Error::Evaluation("empty database".into()));
    }
    let d = db.distances(&query.bits)?;
    let mut class_min: BTreeMap<String, u32> = BTreeMap::new();
    for (rec, &dist) in db.records().zip(&d) {
        class_min
            .entry(rec.label.to_owned())
            .and_modify(|m| *m = (*m).min(dist))
            .or_insert(dist);
    }
    let neighbors: Vec<(String, u32)> = top_n(d.into_iter().enumerate(), n)
        .into_iter()
        .map(|(dist, i)| (db.get(i).label.to_owned(), dist))
        .collect();
    let labels: Vec<&str> = neighbors.iter().map(|(l, _)| l.as_str()).collect();
    let predicted = mode_label(&labels).expect("non-empty database").to_owned();
    Ok(QueryOutcome {
        prediction: Prediction {
            query_id: query.id.clone(),
            true_label: query.label.clone(),
            predicted,
            neighbors,
        },
        class_min,
    })
}

/// One-vs-rest AUC per database class with score `-(nearest distance to the
/// class)`, macro-averaged.
pub fn auc_from_outcomes(outcomes: &[QueryOutcome], db_classes: &BTreeSet<String>) -> AucReport {
    let query_classes: BTreeSet<&str> = outcomes.iter().map(|o| o.prediction.true_label.as_str()).collect();
    let mut per_class = BTreeMap::new();
    let mut flagged = Vec::new();
    for c in query_classes.iter().filter(|c| !db_classes.contains(**c)) {
        flagged.push(format!("{c}: absent from database, AUC skipped"));
    }
    for c in db_classes {
        let (mut pos, mut neg) = (Vec::new(), Vec::new());
        for o in outcomes {
            let score = -f64::from(o.class_min[c]);
            if &o.prediction.true_label == c {
                pos.push(score);
            } else {
                neg.push(score);
            }
        }
        match mann_whitney_auc(&pos, &neg) {
            Some(a) => {
                per_class.insert(c.clone(), a);
            }
            None => flagged.push(format!("{c}: no positive or no negative queries, AUC skipped")),
        }
    }
    let macro_auc = (!per_class.is_empty()).then(|| per_class.values().sum::<f64>() / per_class.len() as f64);
    AucReport {
        macro_auc,
        per_class,
        flagged,
    }
}

pub fn auc_macro(queries: &[LabeledBarcode], db: &BarcodeIndex) -> Result<AucReport> {
    let outcomes = queries
        .iter()
        .map(|q| evaluate_query(q, db, TOP_N))
        .collect::<Result<Vec<_>>>()?;
    let classes = db.label_counts().into_keys().collect();
    Ok(auc_from_outcomes(&outcomes, &classes))
}

/// Stratified fold assignment: each class (in sorted label order) is shuffled
/// with one seeded generator and dealt round-robin, continuing the deal
/// position across classes so fold totals stay balanced.
pub fn stratified_folds(labels: &[&str], k: usize, seed: u64) -> Result<Vec<usize>> {
    if k < 2 {
        return Err(Error::Config(format!("need at least 2 folds, got {k}")));
    }
    let mut by_class: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, l) in labels.iter().enumerate() {
        by_class.entry(l).or_default().push(i);
    }
    if let Some((c, members)) = by_class.iter().find(|(_, m)| m.len() < k) {
        return Err(Error::Stratification {
            class: c.to_string(),
            count: members.len(),
            folds: k,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fold_of = vec![0; labels.len()];
    let mut deal = 0;
    for members in by_class.values_mut() {
        members.shuffle(&mut rng);
        for &i in members.iter() {
            fold_of[i] = deal % k;
            deal += 1;
        }
    }
    Ok(fold_of)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FoldMetrics {
    pub fold: usize,
    pub queries: usize,
    pub database: usize,
    pub accuracy: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    pub auc: Option<f64>,
    #[serde(skip)]
    pub flagged: Vec<String>,
}

/// Evaluates `queries` against `db`: predictions, confusion metrics, AUC.
pub fn evaluate_split(
    queries: &[LabeledBarcode],
    db: &BarcodeIndex,
) -> Result<(Vec<Prediction>, ConfusionReport, AucReport)> {
    let outcomes = queries
        .par_iter()
        .map(|q| evaluate_query(q, db, TOP_N))
        .collect::<Result<Vec<_>>>()?;
    let classes = db.label_counts().into_keys().collect();
    let auc = auc_from_outcomes(&outcomes, &classes);
    let predictions: Vec<Prediction> = outcomes.into_iter().map(|o| o.prediction).collect();
    let confusion = confusion_metrics(&predictions)?;
    Ok((predictions, confusion, auc))
}

fn build_index(combo: &LayerCombo, items: &[&LabeledBarcode]) -> Result<BarcodeIndex> {
    let bit_len = items.first().map(|b| b.bits.len()).unwrap_or_else(|| combo.bit_len());
    let mut db = BarcodeIndex::new(combo.clone(), bit_len);
    for b in items {
        db.insert(b.id.clone(), b.label.clone(), &b.bits)?;
    }
    Ok(db)
}

/// Stratified k-fold cross-validation: each fold in turn is the query set and
/// the remaining folds form the database.
pub fn kfold_cv(
    dataset_name: &str,
    data: &[LabeledBarcode],
    k: usize,
    combo: &LayerCombo,
    seed: u64,
) -> Result<MetricsReport> {
    let labels: Vec<&str> = data.iter().map(|d| d.label.as_str()).collect();
    let fold_of = stratified_folds(&labels, k, seed)?;
    let mut folds = Vec::with_capacity(k);
    for f in 0..k {
        let mut queries = Vec::new();
        let mut db_items = Vec::new();
        for (d, &g) in data.iter().zip(&fold_of) {
            if g == f {
                queries.push(d.clone());
            } else {
                db_items.push(d);
            }
        }
        let db = build_index(combo, &db_items)?;
        let (_, confusion, auc) = evaluate_split(&queries, &db)?;
        let mut flagged = confusion.flagged.clone();
        flagged.extend(auc.flagged.iter().cloned());
        folds.push(FoldMetrics {
            fold: f,
            queries: queries.len(),
            database: db.len(),
            accuracy: confusion.accuracy,
            sensitivity: confusion.sensitivity,
            specificity: confusion.specificity,
            auc: auc.macro_auc,
            flagged,
        });
    }
    Ok(MetricsReport {
        dataset: dataset_name.to_owned(),
        combo: combo.clone(),
        outcome: ReportOutcome::CrossValidation { folds },
        notes: Vec::new(),
    })
}

/// Provided train/test protocol: training patches are the database, every
/// test patch is a query, and scores are the scan-level accuracies.
pub fn holdout_eta(
    dataset_name: &str,
    train: &[LabeledBarcode],
    test: &[LabeledBarcode],
    combo: &LayerCombo,
) -> Result<MetricsReport> {
    let db = build_index(combo, &train.iter().collect::<Vec<_>>())?;
    let outcomes = test
        .par_iter()
        .map(|q| evaluate_query(q, &db, TOP_N))
        .collect::<Result<Vec<_>>>()?;
    let predictions: Vec<Prediction> = outcomes.into_iter().map(|o| o.prediction).collect();
    let scans: Vec<String> = test
        .iter()
        .map(|t| t.label.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let eta = eta_metrics(&predictions, &scans)?;
    Ok(MetricsReport {
        dataset: dataset_name.to_owned(),
        combo: combo.clone(),
        outcome: ReportOutcome::Holdout {
            eta,
            database: db.len(),
            queries: test.len(),
        },
        notes: vec![format!("database: {} training patches", db.len())],
    })
}

#[derive(Debug, Clone, PartialEq)]
pub enum ReportOutcome {
    CrossValidation { folds: Vec<FoldMetrics> },
    Holdout { eta: EtaMetrics, database: usize, queries: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub dataset: String,
    pub combo: LayerCombo,
    pub outcome: ReportOutcome,
    pub notes: Vec<String>,
}

/// Mean and sample standard deviation (n - 1 denominator; 0 for one value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

/// One line of the structured report. Unused metrics are `null`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRecord {
    pub dataset: String,
    pub combo: String,
    pub fold: String,
    pub accuracy: Option<f64>,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub auc: Option<f64>,
    pub eta_p: Option<f64>,
    pub eta_w: Option<f64>,
    pub eta_total: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub accuracy_std: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sensitivity_std: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub specificity_std: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub auc_std: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CvSummary {
    pub accuracy: (f64, f64),
    pub sensitivity: (f64, f64),
    pub specificity: (f64, f64),
    pub auc: Option<(f64, f64)>,
}

impl MetricsReport {
    pub fn cv_summary(&self) -> Option<CvSummary> {
        let ReportOutcome::CrossValidation { folds } = &self.outcome else {
            return None;
        };
        let col = |f: fn(&FoldMetrics) -> f64| mean_std(&folds.iter().map(f).collect::<Vec<_>>());
        let aucs: Option<Vec<f64>> = folds.iter().map(|f| f.auc).collect();
        Some(CvSummary {
            accuracy: col(|f| f.accuracy),
            sensitivity: col(|f| f.sensitivity),
            specificity: col(|f| f.specificity),
            auc: aucs.map(|a| mean_std(&a)),
        })
    }

    fn blank(&self, fold: String) -> ReportRecord {
        ReportRecord {
            dataset: self.dataset.clone(),
            combo: self.combo.to_string(),
            fold,
            accuracy: None,
            sensitivity: None,
            specificity: None,
            auc: None,
            eta_p: None,
            eta_w: None,
            eta_total: None,
            accuracy_std: None,
            sensitivity_std: None,
            specificity_std: None,
            auc_std: None,
        }
    }

    /// One record per fold followed by one aggregate record.
    pub fn records(&self) -> Vec<ReportRecord> {
        match &self.outcome {
            ReportOutcome::CrossValidation { folds } => {
                let mut out: Vec<ReportRecord> = folds
                    .iter()
                    .map(|f| ReportRecord {
                        accuracy: Some(f.accuracy),
                        sensitivity: Some(f.sensitivity),
                        specificity: Some(f.specificity),
                        auc: f.auc,
                        ..self.blank(f.fold.to_string())
                    })
                    .collect();
                let s = self.cv_summary().expect("cross-validation");
                out.push(ReportRecord {
                    accuracy: Some(s.accuracy.0),
                    sensitivity: Some(s.sensitivity.0),
                    specificity: Some(s.specificity.0),
                    auc: s.auc.map(|a| a.0),
                    accuracy_std: Some(s.accuracy.1),
                    sensitivity_std: Some(s.sensitivity.1),
                    specificity_std: Some(s.specificity.1),
                    auc_std: s.auc.map(|a| a.1),
                    ..self.blank("aggregate".into())
                });
                out
            }
            ReportOutcome::Holdout { eta, .. } => {
                let rec = ReportRecord {
                    eta_p: Some(eta.eta_p),
                    eta_w: Some(eta.eta_w),
                    eta_total: Some(eta.eta_total),
                    ..self.blank("test".into())
                };
                vec![rec.clone(), ReportRecord { fold: "aggregate".into(), ..rec }]
            }
        }
    }

    /// Line-delimited JSON, one record per line.
    pub fn to_jsonl(&self) -> String {
        self.records()
            .iter()
            .map(|r| serde_json::to_string(r).expect("plain record") + "\n")
            .collect()
    }

    /// Human-readable table; percentages except AUC.
    pub fn table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "dataset {}  layers {}", self.dataset, self.combo);
        match &self.outcome {
            ReportOutcome::CrossValidation { folds } => {
                let _ = writeln!(
                    s,
                    "{:>9} {:>8} {:>12} {:>12} {:>8}  (AUC: nearest-distance construction)",
                    "fold", "accuracy", "sensitivity", "specificity", "AUC"
                );
                let auc = |a: Option<f64>| a.map(|v| format!("{v:.4}")).unwrap_or_else(|| "n/a".into());
                for f in folds {
                    let _ = writeln!(
                        s,
                        "{:>9} {:>8.2} {:>12.2} {:>12.2} {:>8}",
                        f.fold,
                        100.0 * f.accuracy,
                        100.0 * f.sensitivity,
                        100.0 * f.specificity,
                        auc(f.auc)
                    );
                }
                let c = self.cv_summary().unwrap();
                let pm = |(m, sd): (f64, f64)| format!("{:.2} ± {:.2}", 100.0 * m, 100.0 * sd);
                let auc_pm = c
                    .auc
                    .map(|(m, sd)| format!("{m:.4} ± {sd:.4}"))
                    .unwrap_or_else(|| "n/a".into());
                let _ = writeln!(
                    s,
                    "row: {} | {} | {} | {} | {}",
                    self.combo,
                    pm(c.accuracy),
                    pm(c.sensitivity),
                    pm(c.specificity),
                    auc_pm
                );
                for f in folds {
                    for flag in &f.flagged {
                        let _ = writeln!(s, "note: fold {}: {flag}", f.fold);
                    }
                }
            }
            ReportOutcome::Holdout { eta, database, queries } => {
                let _ = writeln!(s, "queries {queries}, database {database}");
                let _ = writeln!(
                    s,
                    "row: {} | eta_p {:.2} | eta_W {:.2} | eta_total {:.2}",
                    self.combo,
                    100.0 * eta.eta_p,
                    100.0 * eta.eta_w,
                    100.0 * eta.eta_total
                );
            }
        }
        for n in &self.notes {
            let _ = writeln!(s, "note: {n}");
        }
        s
    }
}
