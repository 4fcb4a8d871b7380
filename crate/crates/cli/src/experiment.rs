//! The full pipeline: load, select, balance, filter, then GTB and GU sweeps
//! on every filtered subset.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use nuisance_core::seed::{derive_seed, stream};
use nuisance_core::splits::{gtb_split_with, gu_split_with};
use nuisance_core::{
    balance_labels, filter_sequence, gtb_metric, gu_metric, identifiability_gtb, identifiability_gu, read_jsonl_in_space, select_top_nuisances, train, write_jsonl, Dataset,
    PlanRecord, ProbeConfig,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::artifacts::load_source;
use crate::config::{DatasetSource, ExperimentConfig, FilterSettings};
use crate::report::{self, MetricRow, SubsetRow};

pub const MANIFEST_FILE: &str = "manifest.toml";
const FILTER_STAMP: &str = "filter.toml";

/// Seed of one experiment cell. `role` separates GTB (0) from GU (1).
pub fn cell_seed(master: u64, stream: u64, dataset: usize, subset: usize, role: u64, index: usize) -> u64 {
    let counter = (dataset as u64) << 48 | (subset as u64) << 40 | role << 32 | index as u64;
    derive_seed(master, stream, counter)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GtbCell {
    pub beta: f64,
    pub split_seed: u64,
    pub train_seed: u64,
    pub probe_seed: u64,
    pub plan: PlanRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuCell {
    pub index: usize,
    pub split_seed: u64,
    pub train_seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub probe_seed: Option<u64>,
    pub plan: PlanRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetManifest {
    pub iteration: usize,
    pub file: String,
    pub n_samples: usize,
    pub gu_unknown: usize,
    pub gtb: Vec<GtbCell>,
    pub gu: Vec<GuCell>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    pub n_loaded: usize,
    pub n_selected: usize,
    pub n_balanced: usize,
    pub balance_seed: u64,
    pub filter_seed: u64,
    pub label_space: Vec<String>,
    pub nuisance_space: Vec<String>,
    pub subsets: Vec<SubsetManifest>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub status: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub failed_stage: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub version: String,
    /// How cell seeds are derived from the master seed.
    pub seed_scheme: String,
    pub config: ExperimentConfig,
    pub datasets: Vec<DatasetManifest>,
}

/// Inputs that determine the filtered subsets; a stamp with an equal key lets
/// a re-run reuse them.
#[derive(Serialize)]
struct FilterKey<'a> {
    master_seed: u64,
    dataset_index: usize,
    source: &'a DatasetSource,
    input_bytes: Option<u64>,
    input_modified: Option<u64>,
    k_top_nuisances: usize,
    filter: &'a FilterSettings,
    classifier: &'a nuisance_core::TrainParams,
}

#[derive(Debug, Serialize, Deserialize)]
struct FilterStamp {
    key: String,
    label_space: Vec<String>,
    nuisance_space: Vec<String>,
    n_loaded: usize,
    n_selected: usize,
    subsets: Vec<SubsetRow>,
}

pub struct RunOutcome {
    pub output_dir: PathBuf,
    pub manifest: Manifest,
}

struct Runner<'a> {
    cfg: &'a ExperimentConfig,
    out: PathBuf,
    stage: String,
    subsets: Vec<SubsetRow>,
    gtb: Vec<MetricRow>,
    gu: Vec<MetricRow>,
    manifest: Manifest,
}

/// Runs every configured dataset through the pipeline and writes CSVs and the
/// manifest under `cfg.output_dir`. On failure, completed stages stay on disk
/// and the manifest records the failing stage.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    cfg.validate()?;
    let out = cfg.output_dir.clone();
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    let mut runner = Runner {
        cfg,
        out: out.clone(),
        stage: "setup".into(),
        subsets: Vec::new(),
        gtb: Vec::new(),
        gu: Vec::new(),
        manifest: Manifest {
            status: "running".into(),
            failed_stage: None,
            error: None,
            version: env!("CARGO_PKG_VERSION").into(),
            seed_scheme: "ChaCha8(master) stream/counter; cell counter = dataset<<48 | subset<<40 | role<<32 | index".into(),
            config: cfg.clone(),
            datasets: Vec::new(),
        },
    };
    let result = runner.execute();
    match &result {
        Ok(()) => runner.manifest.status = "complete".into(),
        Err(e) => {
            runner.manifest.status = "failed".into();
            runner.manifest.failed_stage = Some(runner.stage.clone());
            runner.manifest.error = Some(format!("{e:#}"));
        }
    }
    let flushed = runner.flush();
    result.with_context(|| format!("stage {} failed", runner.stage))?;
    flushed?;
    Ok(RunOutcome {
        output_dir: out,
        manifest: runner.manifest,
    })
}

impl Runner<'_> {
    fn flush(&self) -> Result<()> {
        report::write_rows(&self.out.join(report::SUBSETS_CSV), &self.subsets)?;
        report::write_rows(&self.out.join(report::GTB_CSV), &self.gtb)?;
        report::write_rows(&self.out.join(report::GU_CSV), &self.gu)?;
        report::write_summaries(&self.out)?;
        fs::write(self.out.join(MANIFEST_FILE), toml::to_string(&self.manifest)?)?;
        Ok(())
    }

    fn enter(&mut self, stage: String) {
        log::info!("stage {stage}");
        self.stage = stage;
    }

    fn execute(&mut self) -> Result<()> {
        for (di, src) in self.cfg.datasets.iter().enumerate() {
            let subsets = self.prepare(di, src)?;
            for (i, subset) in subsets.iter().enumerate() {
                // Rejection can empty a source entirely; it then leaves the
                // nuisance space of the subset.
                let subset = &subset.compact_nuisances();
                self.enter(format!("gtb ({}, D{i})", src.name));
                let cells = self.gtb_stage(di, i, subset)?;
                self.manifest.datasets[di].subsets[i].gtb = cells;
                self.flush()?;
                self.enter(format!("gu ({}, D{i})", src.name));
                let (k, cells) = self.gu_stage(di, i, subset)?;
                let m = &mut self.manifest.datasets[di].subsets[i];
                m.gu_unknown = k;
                m.gu = cells;
                self.flush()?;
            }
        }
        self.enter("report".into());
        Ok(())
    }

    /// Loading through filtering; reuses persisted subsets when their inputs
    /// are unchanged.
    fn prepare(&mut self, di: usize, src: &DatasetSource) -> Result<Vec<Dataset>> {
        let cfg = self.cfg;
        let dir = self.out.join(&src.name);
        fs::create_dir_all(&dir)?;
        let balance_seed = derive_seed(cfg.master_seed, stream::BALANCE, di as u64);
        let filter_seed = derive_seed(cfg.master_seed, stream::FILTER, di as u64);
        let key = filter_key(cfg, di, src)?;

        let (stamp, subsets) = match load_cached(&dir, &key) {
            Some(cached) => {
                log::info!("reusing filtered subsets of {}", src.name);
                cached
            }
            None => {
                self.enter(format!("ingest ({})", src.name));
                let loaded = load_source(src)?;
                self.enter(format!("select_top_nuisances ({})", src.name));
                let selected = select_top_nuisances(&loaded, cfg.k_top_nuisances)?;
                self.enter(format!("balance_labels ({})", src.name));
                let balanced = balance_labels(&selected, balance_seed)?;
                self.enter(format!("filter ({})", src.name));
                let seq = filter_sequence(&balanced, &cfg.filter_schedule(filter_seed), &cfg.classifier)?;
                let mut rows = Vec::new();
                for (i, (subset, mi)) in seq.subsets.iter().zip(&seq.mi_estimates).enumerate() {
                    write_jsonl(subset, dir.join(subset_file(i)))?;
                    seq.contributions[i].save_csv(dir.join(format!("contributions_D{i}.csv")))?;
                    let log = i.checked_sub(1).map(|j| &seq.removal_logs[j]);
                    rows.push(SubsetRow {
                        dataset: src.name.clone(),
                        iteration: i,
                        n_samples: subset.len(),
                        n_sources: subset.present_nuisances().len(),
                        alpha: log.map(|l| l.alpha),
                        threshold: log.map(|l| l.threshold),
                        removed: log.map(|l| l.total_removed()),
                        mi: mi.value,
                        entropy_term: mi.entropy_term,
                        cross_entropy_term: mi.cross_entropy_term,
                    });
                }
                let stamp = FilterStamp {
                    key,
                    label_space: balanced.label_space().to_vec(),
                    nuisance_space: balanced.nuisance_space().to_vec(),
                    n_loaded: loaded.len(),
                    n_selected: selected.len(),
                    subsets: rows,
                };
                fs::write(dir.join(FILTER_STAMP), toml::to_string(&stamp)?)?;
                (stamp, seq.subsets)
            }
        };
        self.subsets.extend(stamp.subsets.iter().cloned());
        self.manifest.datasets.push(DatasetManifest {
            name: src.name.clone(),
            n_loaded: stamp.n_loaded,
            n_selected: stamp.n_selected,
            n_balanced: subsets[0].len(),
            balance_seed,
            filter_seed,
            label_space: stamp.label_space,
            nuisance_space: stamp.nuisance_space,
            subsets: subsets
                .iter()
                .enumerate()
                .map(|(i, s)| SubsetManifest {
                    iteration: i,
                    file: format!("{}/{}", src.name, subset_file(i)),
                    n_samples: s.len(),
                    gu_unknown: 0,
                    gtb: Vec::new(),
                    gu: Vec::new(),
                })
                .collect(),
        });
        self.flush()?;
        Ok(subsets)
    }

    fn gtb_stage(&mut self, di: usize, i: usize, d: &Dataset) -> Result<Vec<GtbCell>> {
        let cfg = self.cfg;
        let name = &cfg.datasets[di].name;
        let master = cfg.master_seed;
        // One split seed for every β: shared holdout and favored labels, and
        // nested training sets.
        let split_seed = cell_seed(master, stream::GTB, di, i, 0, 0);
        let results: Vec<(MetricRow, GtbCell)> = cfg
            .betas
            .par_iter()
            .enumerate()
            .map(|(b, &beta)| -> Result<_> {
                let sr = gtb_split_with(d, beta, cfg.test_fraction, split_seed)
                    .with_context(|| format!("GTB split at beta {beta}"))?;
                let train_seed = cell_seed(master, stream::TRAIN, di, i, 0, b);
                let probe_seed = cell_seed(master, stream::PROBE, di, i, 0, b);
                let model = train(&sr.train, &cfg.classifier, train_seed)?;
                let probe_cfg = ProbeConfig { seed: probe_seed, ..cfg.probe };
                let report = gtb_metric(&model, &sr)
                    .and_then(|r| Ok(r.with_identifiability(&identifiability_gtb(&model, &sr, &probe_cfg)?)))
                    .with_context(|| format!("GTB metrics at beta {beta}"))?;
                let row = MetricRow::new(name, i, format!("{beta}"), &report);
                let cell = GtbCell {
                    beta,
                    split_seed,
                    train_seed,
                    probe_seed,
                    plan: sr.plan.to_record(d),
                };
                Ok((row, cell))
            })
            .collect::<Result<_>>()?;
        let (rows, cells): (Vec<_>, Vec<_>) = results.into_iter().unzip();
        self.gtb.extend(rows);
        Ok(cells)
    }

    fn gu_stage(&mut self, di: usize, i: usize, d: &Dataset) -> Result<(usize, Vec<GuCell>)> {
        let cfg = self.cfg;
        let name = &cfg.datasets[di].name;
        let master = cfg.master_seed;
        let present = d.n_nuisances();
        let k = cfg.gu_unknown.unwrap_or(present / 2);
        if k == 0 || k >= present {
            bail!("cannot hold out {k} of {present} nuisance values");
        }
        let results: Vec<(MetricRow, GuCell)> = (0..cfg.gu_seeds)
            .into_par_iter()
            .map(|g| -> Result<_> {
                let split_seed = cell_seed(master, stream::GU, di, i, 1, g);
                let train_seed = cell_seed(master, stream::TRAIN, di, i, 1, g);
                let probe_seed = (g < cfg.probe_seeds).then(|| cell_seed(master, stream::PROBE, di, i, 1, g));
                let sr = gu_split_with(d, k, cfg.test_fraction, split_seed)
                    .with_context(|| format!("GU split {g}"))?;
                let model = train(&sr.train, &cfg.classifier, train_seed)?;
                let mut report = gu_metric(&model, &sr).with_context(|| format!("GU metrics for split {g}"))?;
                if let Some(seed) = probe_seed {
                    let probe_cfg = ProbeConfig { seed, ..cfg.probe };
                    let id = identifiability_gu(&model, &sr, &probe_cfg)
                        .with_context(|| format!("GU identifiability for split {g}"))?;
                    report = report.with_identifiability(&id);
                }
                let row = MetricRow::new(name, i, g.to_string(), &report);
                let cell = GuCell {
                    index: g,
                    split_seed,
                    train_seed,
                    probe_seed,
                    plan: sr.plan.to_record(d),
                };
                Ok((row, cell))
            })
            .collect::<Result<_>>()?;
        let (rows, cells): (Vec<_>, Vec<_>) = results.into_iter().unzip();
        self.gu.extend(rows);
        Ok((k, cells))
    }
}

fn subset_file(i: usize) -> String {
    format!("D{i}.jsonl")
}

fn filter_key(cfg: &ExperimentConfig, di: usize, src: &DatasetSource) -> Result<String> {
    let meta = src.path.as_deref().map(fs::metadata).transpose().ok().flatten();
    let key = FilterKey {
        master_seed: cfg.master_seed,
        dataset_index: di,
        source: src,
        input_bytes: meta.as_ref().map(|m| m.len()),
        input_modified: meta
            .as_ref()
            .and_then(|m| m.modified().ok())
            .and_then(|t| t.duration_since(std::time::UNIX_EPOCH).ok())
            .map(|d| d.as_secs()),
        k_top_nuisances: cfg.k_top_nuisances,
        filter: &cfg.filter,
        classifier: &cfg.classifier,
    };
    Ok(toml::to_string(&key)?)
}

fn load_cached(dir: &Path, key: &str) -> Option<(FilterStamp, Vec<Dataset>)> {
    let stamp: FilterStamp = toml::from_str(&fs::read_to_string(dir.join(FILTER_STAMP)).ok()?).ok()?;
    if stamp.key != key {
        return None;
    }
    let subsets: Vec<Dataset> = stamp
        .subsets
        .iter()
        .map(|row| {
            let d = read_jsonl_in_space(dir.join(subset_file(row.iteration)), &stamp.label_space, &stamp.nuisance_space)
                .map_err(|e| anyhow!(e))?;
            if d.len() != row.n_samples {
                bail!("cached subset size changed");
            }
            Ok(d)
        })
        .collect::<Result<_>>()
        .map_err(|e| log::warn!("ignoring cached subsets: {e:#}"))
        .ok()?;
    Some((stamp, subsets))
}
