//! Rejection filtering: nested subsets with growing `I(X; S)` and `Y ⊥ S`.
//!
//! Each iteration estimates per-sample contributions, takes the empirical
//! α-quantile `ε`, and for every nuisance value `s` removes the
//! `n_s = min_y |{x ∈ D_{y,s} : i(x) < ε}|` lowest-contribution samples from
//! each label cell. Equal removal across labels keeps every `s` balanced.

use serde::{Deserialize, Serialize};

use crate::corpus::{ContingencyTable, Dataset};
use crate::error::{Error, Result};
use crate::mi::{contributions, estimate_mi, ContributionTable, MiEstimate, NuisanceEstimator};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterSchedule {
    pub alphas: Vec<f64>,
    pub n_folds: usize,
    pub seed: u64,
}

impl Default for FilterSchedule {
    fn default() -> Self {
        Self {
            alphas: vec![1.0 / 4.0, 1.0 / 3.0],
            n_folds: 10,
            seed: 0,
        }
    }
}

impl FilterSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.alphas.is_empty() {
            return Err(Error::InvalidArgument("filter schedule needs at least one alpha".into()));
        }
        if let Some(a) = self.alphas.iter().find(|a| !(**a > 0.0 && **a < 1.0)) {
            return Err(Error::InvalidArgument(format!("alpha {a} is not in (0, 1)")));
        }
        if self.n_folds < 2 {
            return Err(Error::InvalidArgument("n_folds must be at least 2".into()));
        }
        Ok(())
    }
}

/// What one rejection step removed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemovalLog {
    pub alpha: f64,
    pub threshold: f64,
    /// Samples strictly below the threshold, before the per-source min rule.
    pub below_threshold: usize,
    /// Removed counts per `(label, nuisance)`.
    pub removed: ContingencyTable,
}

impl RemovalLog {
    pub fn total_removed(&self) -> u64 {
        self.removed.total()
    }
}

/// Value at position `floor(alpha · (n − 1))` of the ascending sort.
pub fn quantile(values: &[f64], alpha: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptyDataset("quantile input"));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidArgument(format!("quantile level {alpha} not in [0, 1]")));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let pos = (alpha * (sorted.len() - 1) as f64).floor() as usize;
    Ok(sorted[pos])
}

/// One rejection step on a per-source balanced dataset.
pub fn reject_iteration(d: &Dataset, alpha: f64, ct: &ContributionTable) -> Result<(Dataset, RemovalLog)> {
    if ct.len() != d.len() {
        return Err(Error::TableMismatch(format!(
            "{} contributions for {} samples",
            ct.len(),
            d.len()
        )));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!("alpha {alpha} is not in (0, 1)")));
    }
    d.check_balanced()?;
    let values = ct.values();
    let threshold = quantile(&values, alpha)?;
    let below_threshold = values.iter().filter(|&&v| v < threshold).count();

    let ns = d.n_nuisances();
    let mut cells = d.cell_indices();
    let mut removed = ContingencyTable::new(d.n_labels(), ns);
    let mut drop = vec![false; d.len()];
    for s in 0..ns {
        let n_s = (0..d.n_labels())
            .map(|y| cells[y * ns + s].iter().filter(|&&i| values[i] < threshold).count())
            .min()
            .unwrap_or(0);
        if n_s == 0 {
            continue;
        }
        for y in 0..d.n_labels() {
            let cell = &mut cells[y * ns + s];
            // Stable: equal contributions keep ascending sample order.
            cell.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
            for &i in &cell[..n_s] {
                drop[i] = true;
                removed.increment(y, s);
            }
        }
    }
    let kept = d.subset((0..d.len()).filter(|&i| !drop[i]));
    Ok((
        kept,
        RemovalLog {
            alpha,
            threshold,
            below_threshold,
            removed,
        },
    ))
}

/// The chain `D_0 ⊇ D_1 ⊇ …` with its estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterSequence {
    pub subsets: Vec<Dataset>,
    pub mi_estimates: Vec<MiEstimate>,
    pub removal_logs: Vec<RemovalLog>,
    /// Contributions computed on each subset, aligned with `subsets`.
    pub contributions: Vec<ContributionTable>,
}

/// Runs the rejection loop, re-estimating contributions from scratch on every
/// subset. The last subset gets an estimate too, so every subset has one.
pub fn filter_sequence<E: NuisanceEstimator + ?Sized>(
    d: &Dataset,
    sched: &FilterSchedule,
    estimator: &E,
) -> Result<FilterSequence> {
    sched.validate()?;
    d.check_balanced()?;
    let mut seq = FilterSequence {
        subsets: vec![d.clone()],
        mi_estimates: Vec::new(),
        removal_logs: Vec::new(),
        contributions: Vec::new(),
    };
    for i in 0..=sched.alphas.len() {
        let current = &seq.subsets[i];
        let iter_seed = seed::derive_seed(sched.seed, seed::stream::FILTER, i as u64);
        let ct = contributions(current, sched.n_folds, estimator, iter_seed)?;
        seq.mi_estimates.push(estimate_mi(&ct)?);
        if let Some(&alpha) = sched.alphas.get(i) {
            let (next, log) = reject_iteration(current, alpha, &ct)?;
            log::info!(
                "filter iteration {}: removed {} of {} samples (threshold {:.4})",
                i + 1,
                log.total_removed(),
                current.len(),
                log.threshold
            );
            seq.subsets.push(next);
            seq.removal_logs.push(log);
        }
        seq.contributions.push(ct);
    }
    Ok(seq)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{default_label_space, Sample};
    use crate::mi::ContributionEntry;

    fn balanced(cells: usize, n_nuisances: usize) -> Dataset {
        let mut samples = Vec::new();
        for s in 0..n_nuisances {
            for y in 0..2 {
                for _ in 0..cells {
                    samples.push(Sample { id: samples.len() as u64, text: format!("t{s}"), label: y, nuisance: s });
                }
            }
        }
        let names = (0..n_nuisances).map(|s| format!("s{s}")).collect();
        Dataset::new(samples, default_label_space(2), names).unwrap()
    }

    fn table(values: &[f64]) -> ContributionTable {
        let entries = values
            .iter()
            .enumerate()
            .map(|(i, &c)| ContributionEntry { sample_index: i, fold: 0, contribution: c })
            .collect();
        ContributionTable::from_entries(entries, vec![0.0], 0.0).unwrap()
    }

    #[test]
    fn quantile_convention() {
        let v = [5.0, 1.0, 4.0, 2.0, 3.0];
        assert_eq!(quantile(&v, 0.0).unwrap(), 1.0);
        assert_eq!(quantile(&v, 0.25).unwrap(), 2.0);
        assert_eq!(quantile(&v, 0.49).unwrap(), 2.0);
        assert_eq!(quantile(&v, 1.0).unwrap(), 5.0);
        assert!(quantile(&[], 0.5).is_err());
    }

    #[test]
    fn equal_contributions_remove_nothing() {
        let d = balanced(5, 2);
        let (kept, log) = reject_iteration(&d, 0.25, &table(&vec![0.7; d.len()])).unwrap();
        assert_eq!(log.threshold, 0.7);
        assert_eq!(log.total_removed(), 0);
        assert_eq!(kept, d);
    }

    #[test]
    fn min_rule_removes_equally_per_label() {
        // One source, 8 samples per label. Label 0 has 3 values below the
        // threshold, label 1 has 5.
        let d = balanced(8, 1);
        let mut values = vec![10.0; 16];
        for i in [1, 3, 5] {
            values[i] = 0.5 + i as f64 * 0.01;
        }
        for i in [8, 9, 10, 12, 15] {
            values[i] = 0.1 + i as f64 * 0.01;
        }
        let (kept, log) = reject_iteration(&d, 0.75, &table(&values)).unwrap();
        assert_eq!(log.threshold, 10.0);
        assert_eq!(log.below_threshold, 8);
        assert_eq!((log.removed.get(0, 0), log.removed.get(1, 0)), (3, 3));
        assert_eq!((kept.count(0, 0), kept.count(1, 0)), (5, 5));
        let gone: Vec<u64> = d
            .samples()
            .iter()
            .filter(|s| !kept.samples().iter().any(|k| k.id == s.id))
            .map(|s| s.id)
            .collect();
        // Lowest three of label 1 are 8, 9, 10.
        assert_eq!(gone, vec![1, 3, 5, 8, 9, 10]);
    }

    #[test]
    fn ties_broken_by_sample_index() {
        let d = balanced(4, 1);
        // Label 0 all below threshold with equal values; label 1 has two below.
        let values = vec![0.0, 0.0, 0.0, 0.0, 0.0, 5.0, 0.0, 5.0];
        let (kept, _) = reject_iteration(&d, 0.9, &table(&values)).unwrap();
        let ids: Vec<u64> = kept.samples().iter().map(|s| s.id).collect();
        assert_eq!(ids, vec![2, 3, 5, 7]);
    }

    #[test]
    fn quarter_quantile_bounds_removal() {
        let d = balanced(125, 4);
        let values: Vec<f64> = (0..d.len()).map(|i| ((i * 7919) % 1000) as f64 / 1000.0).collect();
        let (kept, log) = reject_iteration(&d, 0.25, &table(&values)).unwrap();
        assert_eq!(d.len(), 1000);
        assert!(log.total_removed() <= 250);
        assert!(kept.is_balanced());
    }

    #[test]
    fn rejects_bad_inputs() {
        let d = balanced(3, 2);
        assert!(matches!(reject_iteration(&d, 0.25, &table(&[0.0; 5])), Err(Error::TableMismatch(_))));
        let unbalanced = d.subset(1..d.len());
        let ct = table(&vec![0.0; unbalanced.len()]);
        assert!(matches!(reject_iteration(&unbalanced, 0.25, &ct), Err(Error::Unbalanced { .. })));
        assert!(FilterSchedule { alphas: vec![], ..Default::default() }.validate().is_err());
        assert!(FilterSchedule { alphas: vec![1.0], ..Default::default() }.validate().is_err());
    }
}
