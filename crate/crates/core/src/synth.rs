//! Synthetic `(text, label, nuisance)` corpora with planted signals.
//!
//! Every `(y, s)` cell gets exactly `per_cell` samples, so `Y ⊥ S` holds
//! exactly. A text is `background_len` tokens drawn from a shared vocabulary,
//! plus a label token `lab<y>` with probability `label_signal` and a source
//! token `src<s>` with probability `nuisance_signal`, each inserted at a
//! random position.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{default_label_space, Dataset, Sample};
use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub n_sources: usize,
    pub n_labels: usize,
    pub per_cell: usize,
    pub nuisance_signal: f64,
    pub label_signal: f64,
    pub background_vocab: usize,
    pub background_len: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_sources: 10,
            n_labels: 2,
            per_cell: 200,
            nuisance_signal: 0.5,
            label_signal: 0.5,
            background_vocab: 200,
            background_len: 6,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let prob = |p: f64| (0.0..=1.0).contains(&p);
        if !prob(self.nuisance_signal) || !prob(self.label_signal) {
            return Err(Error::InvalidArgument("signal probabilities must be in [0, 1]".into()));
        }
        if self.n_sources == 0 || self.n_labels == 0 || self.per_cell == 0 {
            return Err(Error::InvalidArgument("sources, labels and cell size must be positive".into()));
        }
        if self.background_len > 0 && self.background_vocab == 0 {
            return Err(Error::InvalidArgument("background tokens need a non-empty vocabulary".into()));
        }
        if self.background_len == 0 && self.nuisance_signal < 1.0 && self.label_signal < 1.0 {
            return Err(Error::InvalidArgument(
                "without background tokens one signal must be certain, or texts may be empty".into(),
            ));
        }
        Ok(())
    }

    pub fn nuisance_name(s: usize) -> String {
        format!("p{s:03}")
    }
}

pub fn synth_generate(spec: &SynthSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = seed::rng(seed::derive_seed(spec.seed, seed::stream::SYNTH, 0));
    let mut records = Vec::with_capacity(spec.n_sources * spec.n_labels * spec.per_cell);
    for s in 0..spec.n_sources {
        for y in 0..spec.n_labels {
            for _ in 0..spec.per_cell {
                let mut tokens: Vec<String> = (0..spec.background_len)
                    .map(|_| format!("w{}", rng.random_range(0..spec.background_vocab)))
                    .collect();
                // Draw both coins unconditionally so the stream layout does
                // not depend on the signal strengths.
                let with_label = rng.random_bool(spec.label_signal);
                let with_source = rng.random_bool(spec.nuisance_signal);
                let label_pos = rng.random_range(0..=tokens.len());
                if with_label {
                    tokens.insert(label_pos, format!("lab{y}"));
                }
                let source_pos = rng.random_range(0..=tokens.len());
                if with_source {
                    tokens.insert(source_pos, format!("src{s}"));
                }
                records.push((tokens.join(" "), y, s));
            }
        }
    }
    records.shuffle(&mut rng);
    let samples = records
        .into_iter()
        .enumerate()
        .map(|(id, (text, label, nuisance))| Sample {
            id: id as u64,
            text,
            label,
            nuisance,
        })
        .collect();
    Dataset::new(
        samples,
        default_label_space(spec.n_labels),
        (0..spec.n_sources).map(SynthSpec::nuisance_name).collect(),
    )
}
