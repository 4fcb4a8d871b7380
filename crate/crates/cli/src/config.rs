//! Experiment configuration: a TOML file plus `key=value` overrides.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use nuisance_core::{FilterSchedule, ProbeConfig, SynthSpec, TrainParams};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputFormat {
    /// Canonical JSON Lines (`text`, `label`, `nuisance`).
    Jsonl,
    Yelp,
    Amazon,
    Synth,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSource {
    pub name: String,
    pub format: InputFormat,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synth: Option<SynthSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterSettings {
    pub alphas: Vec<f64>,
    pub n_folds: usize,
}

impl Default for FilterSettings {
    fn default() -> Self {
        let s = FilterSchedule::default();
        Self {
            alphas: s.alphas,
            n_folds: s.n_folds,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub master_seed: u64,
    pub output_dir: PathBuf,
    pub datasets: Vec<DatasetSource>,
    pub k_top_nuisances: usize,
    pub filter: FilterSettings,
    pub betas: Vec<f64>,
    pub gu_seeds: usize,
    /// Size of `S*`; half the nuisance values when unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gu_unknown: Option<usize>,
    /// GU identifiability is probed on the first `probe_seeds` GU splits.
    pub probe_seeds: usize,
    pub test_fraction: f64,
    pub classifier: TrainParams,
    /// `probe.seed` is ignored; probe seeds derive from `master_seed`.
    pub probe: ProbeConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            master_seed: 0,
            output_dir: PathBuf::from("out"),
            datasets: Vec::new(),
            k_top_nuisances: 50,
            filter: FilterSettings::default(),
            betas: vec![0.6, 0.7, 0.8, 0.9, 1.0],
            gu_seeds: 50,
            gu_unknown: None,
            probe_seeds: 10,
            test_fraction: nuisance_core::splits::DEFAULT_TEST_FRACTION,
            classifier: TrainParams::default(),
            probe: ProbeConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        Self::from_toml(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    /// Applies `dotted.key=value`. The value is read as a TOML literal and
    /// falls back to a bare string; array elements are addressed by index,
    /// e.g. `datasets.0.path=reviews.json`.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (key, raw) = assignment
            .split_once('=')
            .with_context(|| format!("override {assignment:?} is not key=value"))?;
        let value = parse_literal(raw.trim());
        let mut root = toml::Value::try_from(&*self)?;
        set_path(&mut root, key.trim(), value).with_context(|| format!("override {assignment:?}"))?;
        *self = root
            .try_into()
            .with_context(|| format!("override {assignment:?} does not fit the config"))?;
        Ok(())
    }

    pub fn filter_schedule(&self, seed: u64) -> FilterSchedule {
        FilterSchedule {
            alphas: self.filter.alphas.clone(),
            n_folds: self.filter.n_folds,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.datasets.is_empty() {
            bail!("no datasets configured");
        }
        let mut names: Vec<&str> = self.datasets.iter().map(|d| d.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            bail!("dataset names must be unique");
        }
        for d in &self.datasets {
            let safe = !d.name.is_empty()
                && d.name != "mean"
                && d.name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-');
            if !safe {
                bail!("dataset name {:?} must be non-empty [A-Za-z0-9_-] and not \"mean\"", d.name);
            }
            match d.format {
                InputFormat::Synth => {
                    d.synth
                        .as_ref()
                        .with_context(|| format!("dataset {} has format synth but no [synth] table", d.name))?
                        .validate()?;
                }
                _ if d.path.is_none() => bail!("dataset {} needs a path", d.name),
                _ => {}
            }
        }
        if self.k_top_nuisances < 2 {
            bail!("k_top_nuisances must be at least 2");
        }
        self.filter_schedule(0).validate()?;
        if self.betas.is_empty() || self.betas.iter().any(|b| !(0.5..=1.0).contains(b)) {
            bail!("betas must be a non-empty subset of [0.5, 1]");
        }
        if self.gu_seeds == 0 || self.probe_seeds == 0 {
            bail!("gu_seeds and probe_seeds must be positive");
        }
        if self.probe_seeds > self.gu_seeds {
            bail!("probe_seeds ({}) cannot exceed gu_seeds ({})", self.probe_seeds, self.gu_seeds);
        }
        if self.gu_unknown == Some(0) {
            bail!("gu_unknown must be positive");
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            bail!("test_fraction must be in (0, 1)");
        }
        if self.classifier.dim == 0 || self.classifier.epochs == 0 {
            bail!("classifier dim and epochs must be positive");
        }
        self.classifier.featurizer.validate()?;
        self.probe.validate()?;
        if self.probe.epochs == 0 {
            bail!("probe epochs must be positive");
        }
        Ok(())
    }
}

fn parse_literal(raw: &str) -> toml::Value {
    match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

fn set_path(root: &mut toml::Value, key: &str, value: toml::Value) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        bail!("malformed key {key:?}");
    }
    let mut node = root;
    for (i, part) in parts.iter().enumerate() {
        let last = i + 1 == parts.len();
        node = match node {
            toml::Value::Table(t) => {
                if last {
                    t.insert(part.to_string(), value);
                    return Ok(());
                }
                t.entry(part.to_string())
                    .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            }
            toml::Value::Array(a) => {
                let idx: usize = part
                    .parse()
                    .with_context(|| format!("{part:?} is not an array index"))?;
                let len = a.len();
                let slot = a
                    .get_mut(idx)
                    .with_context(|| format!("index {idx} out of range for array of {len}"))?;
                if last {
                    *slot = value;
                    return Ok(());
                }
                slot
            }
            _ => bail!("{part:?} is below a non-table value"),
        };
    }
    unreachable!("loop returns on the last segment")
}
