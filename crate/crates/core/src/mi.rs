//! Mutual information between text features and the nuisance factor.
//!
//! [`plug_in_mi`] evaluates the exact mutual information of a discrete
//! contingency table. [`contributions`] computes per-sample contributions
//!
//! ```text
//! i(x) = H_P̂(S) − (−ln P̂(s | x))
//! ```
//!
//! where `P̂(S|X)` is trained on the other folds and `H_P̂(S)` is the count
//! entropy of those folds. Their mean lower-bounds `I(X; S)` up to the plug-in
//! approximation of `H(S)`. All quantities are in nats.

use std::fs::File;
use std::io::{BufReader, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{ContingencyTable, Dataset};
use crate::error::{Error, Result};
use crate::seed;
use crate::textmodel::{train_for, Target, TrainParams};

/// Entropy in nats of the empirical distribution given by `counts`.
pub fn entropy(counts: &[u64]) -> f64 {
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return 0.0;
    }
    let n = total as f64;
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// Exact mutual information of the empirical joint distribution in `t`.
pub fn plug_in_mi(t: &ContingencyTable) -> Result<f64> {
    let total = t.total();
    if total == 0 {
        return Err(Error::EmptyDataset("contingency table"));
    }
    let n = total as f64;
    let rows = t.row_totals();
    let cols = t.col_totals();
    let mut mi = 0.0;
    for (r, &row) in rows.iter().enumerate() {
        for (c, &col) in cols.iter().enumerate() {
            let joint = t.get(r, c);
            if joint == 0 {
                continue;
            }
            let joint = joint as f64;
            mi += joint / n * (joint * n / (row as f64 * col as f64)).ln();
        }
    }
    Ok(mi.max(0.0))
}

/// Recipe for the out-of-fold conditional estimator `P̂(S|X)`.
pub trait NuisanceEstimator: Sync {
    /// Fits `P̂(S|X)` on `train` and returns `ln P̂(s|x)` for every sample of
    /// `eval`, evaluated at the sample's own nuisance value.
    fn out_of_fold_log_probs(&self, train: &Dataset, eval: &Dataset, seed: u64) -> Result<Vec<f64>>;
}

impl NuisanceEstimator for TrainParams {
    fn out_of_fold_log_probs(&self, train: &Dataset, eval: &Dataset, seed: u64) -> Result<Vec<f64>> {
        let (model, _) = train_for(train, Target::Nuisance, self, seed)?;
        Ok(eval
            .samples()
            .iter()
            .map(|s| model.log_prob(&s.text, s.nuisance))
            .collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContributionEntry {
    pub sample_index: usize,
    pub fold: usize,
    pub contribution: f64,
}

/// Per-sample contributions, indexed by position in the dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct ContributionTable {
    entries: Vec<ContributionEntry>,
    fold_entropies: Vec<f64>,
    marginal_entropy: f64,
}

impl ContributionTable {
    /// Builds a table from raw entries. Entries are re-ordered by sample index
    /// and must cover `0..len` exactly once.
    pub fn from_entries(
        mut entries: Vec<ContributionEntry>,
        fold_entropies: Vec<f64>,
        marginal_entropy: f64,
    ) -> Result<Self> {
        entries.sort_by_key(|e| e.sample_index);
        for (i, e) in entries.iter().enumerate() {
            if e.sample_index != i {
                return Err(Error::TableMismatch(format!(
                    "sample index {i} is missing or duplicated"
                )));
            }
            if e.fold >= fold_entropies.len() {
                return Err(Error::TableMismatch(format!(
                    "fold {} out of range for {} folds",
                    e.fold,
                    fold_entropies.len()
                )));
            }
        }
        Ok(Self {
            entries,
            fold_entropies,
            marginal_entropy,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn n_folds(&self) -> usize {
        self.fold_entropies.len()
    }

    pub fn entries(&self) -> &[ContributionEntry] {
        &self.entries
    }

    #[inline]
    pub fn contribution(&self, sample_index: usize) -> f64 {
        self.entries[sample_index].contribution
    }

    pub fn values(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.contribution).collect()
    }

    /// `H_P̂(S)` of each fold's training complement.
    pub fn fold_entropies(&self) -> &[f64] {
        &self.fold_entropies
    }

    /// Count entropy of `S` over the whole dataset.
    pub fn marginal_entropy(&self) -> f64 {
        self.marginal_entropy
    }

    /// CSV with header `sample_index,fold,contribution`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for e in &self.entries {
            w.serialize(e)?;
        }
        w.flush().map_err(|e| Error::Serialization(e.to_string()))?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(file)
    }

    /// Reads entries written by [`Self::write_csv`]. Fold entropies are not
    /// part of the CSV and must be supplied.
    pub fn read_csv<R: Read>(input: R, fold_entropies: Vec<f64>, marginal_entropy: f64) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let entries = r.deserialize().collect::<std::result::Result<Vec<ContributionEntry>, _>>()?;
        Self::from_entries(entries, fold_entropies, marginal_entropy)
    }

    pub fn load_csv(path: impl AsRef<Path>, fold_entropies: Vec<f64>, marginal_entropy: f64) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_csv(BufReader::new(file), fold_entropies, marginal_entropy)
    }
}

/// Assigns every sample to one of `n_folds` folds, stratified by `(y, s)`.
///
/// Each cell is shuffled and dealt round-robin, with the dealing position
/// carried across cells, so global fold sizes differ by at most one.
pub fn assign_folds(d: &Dataset, n_folds: usize, seed: u64) -> Result<Vec<usize>> {
    if n_folds < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 folds, got {n_folds}")));
    }
    if d.len() < n_folds {
        return Err(Error::InvalidArgument(format!(
            "{} samples cannot fill {n_folds} non-empty folds",
            d.len()
        )));
    }
    let mut rng = seed::rng(seed);
    let mut folds = vec![0; d.len()];
    let mut next = 0;
    for mut cell in d.cell_indices() {
        cell.shuffle(&mut rng);
        for i in cell {
            folds[i] = next % n_folds;
            next += 1;
        }
    }
    Ok(folds)
}

/// Out-of-fold contributions `i(x)` for every sample of `d`.
///
/// Fold trainings are independent and run in parallel; results are merged
/// by fold index so the table does not depend on scheduling.
pub fn contributions<E: NuisanceEstimator + ?Sized>(
    d: &Dataset,
    n_folds: usize,
    estimator: &E,
    seed: u64,
) -> Result<ContributionTable> {
    let folds = assign_folds(d, n_folds, seed::derive_seed(seed, seed::stream::FOLDS, 0))?;
    let per_fold: Vec<(Vec<ContributionEntry>, f64)> = (0..n_folds)
        .into_par_iter()
        .map(|fold| {
            let eval_idx: Vec<usize> = (0..d.len()).filter(|&i| folds[i] == fold).collect();
            let train = d.subset((0..d.len()).filter(|&i| folds[i] != fold));
            let eval = d.subset(eval_idx.iter().copied());
            let h = entropy(&train.contingency().col_totals());
            let fold_seed = seed::derive_seed(seed, seed::stream::FOLD_TRAIN, fold as u64);
            let log_probs = estimator.out_of_fold_log_probs(&train, &eval, fold_seed)?;
            if log_probs.len() != eval.len() {
                return Err(Error::TableMismatch(format!(
                    "estimator returned {} log-probabilities for {} samples",
                    log_probs.len(),
                    eval.len()
                )));
            }
            let entries = eval_idx
                .iter()
                .zip(log_probs)
                .map(|(&sample_index, lp)| ContributionEntry {
                    sample_index,
                    fold,
                    contribution: h + lp,
                })
                .collect();
            Ok((entries, h))
        })
        .collect::<Result<_>>()?;
    let fold_entropies = per_fold.iter().map(|(_, h)| *h).collect();
    let entries = per_fold.into_iter().flat_map(|(e, _)| e).collect();
    ContributionTable::from_entries(entries, fold_entropies, entropy(&d.contingency().col_totals()))
}

/// Classifier-based lower-bound estimate of `I(X; S)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MiEstimate {
    pub value: f64,
    pub n_folds: usize,
    /// Mean over samples of their fold's `H_P̂(S)`.
    pub entropy_term: f64,
    /// Mean over samples of `−ln P̂(s|x)`.
    pub cross_entropy_term: f64,
}

/// Mean contribution, with its entropy and cross-entropy parts.
pub fn estimate_mi(ct: &ContributionTable) -> Result<MiEstimate> {
    if ct.is_empty() {
        return Err(Error::EmptyDataset("contribution table"));
    }
    let n = ct.len() as f64;
    let entropy_term = ct.entries.iter().map(|e| ct.fold_entropies[e.fold]).sum::<f64>() / n;
    let cross_entropy_term = ct
        .entries
        .iter()
        .map(|e| ct.fold_entropies[e.fold] - e.contribution)
        .sum::<f64>()
        / n;
    Ok(MiEstimate {
        value: entropy_term - cross_entropy_term,
        n_folds: ct.n_folds(),
        entropy_term,
        cross_entropy_term,
    })
}
