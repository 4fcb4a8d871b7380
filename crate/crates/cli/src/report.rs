//! CSV layouts and the summaries derived from raw per-run rows.
//!
//! Raw files (`subsets.csv`, `gtb.csv`, `gu.csv`) are written by the runner;
//! `gtb_curves.csv` and `gu_summary.csv` are recomputed from them alone.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{Context, Result};
use nuisance_core::metrics::mean_std;
use nuisance_core::MetricReport;
use serde::{Deserialize, Serialize};

pub const SUBSETS_CSV: &str = "subsets.csv";
pub const GTB_CSV: &str = "gtb.csv";
pub const GU_CSV: &str = "gu.csv";
pub const GTB_CURVES_CSV: &str = "gtb_curves.csv";
pub const GU_SUMMARY_CSV: &str = "gu_summary.csv";

/// One filtered subset with its MI estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetRow {
    pub dataset: String,
    pub iteration: usize,
    pub n_samples: usize,
    pub n_sources: usize,
    /// Rejection rate that produced this subset; empty for the input.
    pub alpha: Option<f64>,
    pub threshold: Option<f64>,
    pub removed: Option<u64>,
    pub mi: f64,
    pub entropy_term: f64,
    pub cross_entropy_term: f64,
}

/// One trained model evaluated under GTB or GU.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub dataset: String,
    pub iteration: usize,
    pub metric_kind: String,
    /// β for GTB rows, split index for GU rows.
    pub beta_or_seed: String,
    pub acc_same: f64,
    pub acc_shifted: f64,
    pub normalized: f64,
    /// Mean of `disc(y)` over labels.
    pub disc: Option<f64>,
    pub disc_ratio: Option<f64>,
    pub identifiability: Option<f64>,
    pub majority_baseline: Option<f64>,
}

impl MetricRow {
    pub fn new(dataset: &str, iteration: usize, key: String, r: &MetricReport) -> Self {
        let mean = |m: &BTreeMap<usize, f64>| {
            (!m.is_empty()).then(|| m.values().sum::<f64>() / m.len() as f64)
        };
        Self {
            dataset: dataset.to_string(),
            iteration,
            metric_kind: r.kind.as_str().to_string(),
            beta_or_seed: key,
            acc_same: r.acc_same,
            acc_shifted: r.acc_shifted,
            normalized: r.normalized,
            disc: mean(&r.disc_per_label),
            disc_ratio: mean(&r.disc_ratio_per_label),
            identifiability: r.identifiability,
            majority_baseline: r.majority_baseline,
        }
    }
}

/// Normalized GTB per β, per dataset and averaged over datasets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GtbCurveRow {
    /// `dataset` for per-dataset rows, `mean` for unweighted averages.
    pub aggregate: String,
    pub dataset: String,
    pub iteration: usize,
    pub beta: String,
    pub normalized: f64,
    pub acc_same: f64,
    pub acc_shifted: f64,
    pub disc: Option<f64>,
    pub disc_ratio: Option<f64>,
    pub identifiability: Option<f64>,
    pub n_datasets: usize,
}

/// Mean ± population standard deviation over GU splits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuSummaryRow {
    pub dataset: String,
    pub iteration: usize,
    pub n_seeds: usize,
    pub normalized_mean: f64,
    pub normalized_std: f64,
    pub acc_same_mean: f64,
    pub acc_same_std: f64,
    pub acc_shifted_mean: f64,
    pub acc_shifted_std: f64,
    pub n_probe_seeds: usize,
    pub identifiability_mean: Option<f64>,
    pub identifiability_std: Option<f64>,
    pub majority_baseline_mean: Option<f64>,
}

pub fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    let rows = r.deserialize().collect::<std::result::Result<_, _>>();
    rows.with_context(|| format!("parsing {}", path.display()))
}

fn mean_of(values: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = values.collect();
    v.iter().sum::<f64>() / v.len() as f64
}

fn mean_opt(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Option<Vec<f64>> = values.collect();
    v.filter(|v| !v.is_empty()).map(|v| mean_of(v.into_iter()))
}

/// Per-dataset rows in input order, then one unweighted mean row for every
/// `(iteration, β)` present in all datasets.
pub fn gtb_curves(gtb: &[MetricRow]) -> Vec<GtbCurveRow> {
    let mut rows: Vec<GtbCurveRow> = gtb
        .iter()
        .filter(|r| r.metric_kind == "gtb")
        .map(|r| GtbCurveRow {
            aggregate: "dataset".into(),
            dataset: r.dataset.clone(),
            iteration: r.iteration,
            beta: r.beta_or_seed.clone(),
            normalized: r.normalized,
            acc_same: r.acc_same,
            acc_shifted: r.acc_shifted,
            disc: r.disc,
            disc_ratio: r.disc_ratio,
            identifiability: r.identifiability,
            n_datasets: 1,
        })
        .collect();
    let mut datasets: Vec<&str> = Vec::new();
    for r in &rows {
        if !datasets.contains(&r.dataset.as_str()) {
            datasets.push(&r.dataset);
        }
    }
    let mut cells: BTreeMap<(usize, String), Vec<&GtbCurveRow>> = BTreeMap::new();
    for r in &rows {
        cells.entry((r.iteration, r.beta.clone())).or_default().push(r);
    }
    let n = datasets.len();
    let means: Vec<GtbCurveRow> = cells
        .into_iter()
        .filter(|(_, v)| v.len() == n)
        .map(|((iteration, beta), v)| GtbCurveRow {
            aggregate: "mean".into(),
            dataset: "mean".into(),
            iteration,
            beta,
            normalized: mean_of(v.iter().map(|r| r.normalized)),
            acc_same: mean_of(v.iter().map(|r| r.acc_same)),
            acc_shifted: mean_of(v.iter().map(|r| r.acc_shifted)),
            disc: mean_opt(v.iter().map(|r| r.disc)),
            disc_ratio: mean_opt(v.iter().map(|r| r.disc_ratio)),
            identifiability: mean_opt(v.iter().map(|r| r.identifiability)),
            n_datasets: n,
        })
        .collect();
    rows.extend(means);
    rows
}

/// One summary row per `(dataset, iteration)`, in first-seen order.
pub fn gu_summary(gu: &[MetricRow]) -> Vec<GuSummaryRow> {
    let mut keys: Vec<(String, usize)> = Vec::new();
    for r in gu.iter().filter(|r| r.metric_kind == "gu") {
        let k = (r.dataset.clone(), r.iteration);
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    keys.into_iter()
        .map(|(dataset, iteration)| {
            let rows: Vec<&MetricRow> = gu
                .iter()
                .filter(|r| r.metric_kind == "gu" && r.dataset == dataset && r.iteration == iteration)
                .collect();
            let stat = |f: &dyn Fn(&MetricRow) -> f64| {
                mean_std(&rows.iter().map(|r| f(r)).collect::<Vec<_>>()).expect("non-empty group")
            };
            let ids: Vec<f64> = rows.iter().filter_map(|r| r.identifiability).collect();
            let baselines: Vec<f64> = rows.iter().filter_map(|r| r.majority_baseline).collect();
            let id = mean_std(&ids);
            let (normalized_mean, normalized_std) = stat(&|r| r.normalized);
            let (acc_same_mean, acc_same_std) = stat(&|r| r.acc_same);
            let (acc_shifted_mean, acc_shifted_std) = stat(&|r| r.acc_shifted);
            GuSummaryRow {
                dataset,
                iteration,
                n_seeds: rows.len(),
                normalized_mean,
                normalized_std,
                acc_same_mean,
                acc_same_std,
                acc_shifted_mean,
                acc_shifted_std,
                n_probe_seeds: ids.len(),
                identifiability_mean: id.map(|m| m.0),
                identifiability_std: id.map(|m| m.1),
                majority_baseline_mean: mean_std(&baselines).map(|m| m.0),
            }
        })
        .collect()
}

/// Recomputes `gtb_curves.csv` and `gu_summary.csv` from the raw files in `dir`.
/// Missing raw files count as empty.
pub fn write_summaries(dir: &Path) -> Result<()> {
    let load = |name: &str| -> Result<Vec<MetricRow>> {
        let path = dir.join(name);
        if path.exists() {
            read_rows(&path)
        } else {
            Ok(Vec::new())
        }
    };
    write_rows(&dir.join(GTB_CURVES_CSV), &gtb_curves(&load(GTB_CSV)?))?;
    write_rows(&dir.join(GU_SUMMARY_CSV), &gu_summary(&load(GU_CSV)?))?;
    Ok(())
}
