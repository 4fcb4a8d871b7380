//! Samples, datasets and the review preprocessing pipeline.
//!
//! A [`Dataset`] is an ordered list of `(text, label, nuisance)` records with
//! named label and nuisance spaces. Per-cell counts are cached at construction
//! so `|D_{y,s}|` lookups are constant time.

mod io;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

pub use io::{ingest_reviews, read_jsonl, read_jsonl_in_space, write_jsonl, ReviewFields};

/// Label names used for binary polarity datasets.
pub const NEGATIVE: &str = "negative";
pub const POSITIVE: &str = "positive";

/// One `(x, y, s)` record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sample {
    /// Stable identifier, preserved by every subset and split operation.
    pub id: u64,
    pub text: String,
    pub label: usize,
    pub nuisance: usize,
}

/// Dense `rows × cols` grid of counts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContingencyTable {
    rows: usize,
    cols: usize,
    counts: Vec<u64>,
}

impl ContingencyTable {
    pub fn new(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            counts: vec![0; rows * cols],
        }
    }

    /// Builds a table from row vectors, which must all have the same length.
    pub fn from_rows(rows: &[Vec<u64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::InvalidArgument(
                "contingency rows have different lengths".into(),
            ));
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            counts: rows.iter().flatten().copied().collect(),
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> u64 {
        self.counts[row * self.cols + col]
    }

    #[inline]
    pub fn increment(&mut self, row: usize, col: usize) {
        self.counts[row * self.cols + col] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn row_totals(&self) -> Vec<u64> {
        (0..self.rows)
            .map(|r| (0..self.cols).map(|c| self.get(r, c)).sum())
            .collect()
    }

    pub fn col_totals(&self) -> Vec<u64> {
        (0..self.cols)
            .map(|c| (0..self.rows).map(|r| self.get(r, c)).sum())
            .collect()
    }

    /// Row index holding the largest count of column `col`, or `None` when the
    /// maximum is shared by several rows.
    pub fn column_argmax(&self, col: usize) -> Option<usize> {
        let column: Vec<u64> = (0..self.rows).map(|r| self.get(r, col)).collect();
        let max = *column.iter().max()?;
        let mut winners = column.iter().enumerate().filter(|(_, &c)| c == max);
        let (first, _) = winners.next()?;
        match winners.next() {
            Some(_) => None,
            None => Some(first),
        }
    }

    /// True when every row of column `col` holds the same count.
    pub fn column_is_uniform(&self, col: usize) -> bool {
        (1..self.rows).all(|r| self.get(r, col) == self.get(0, col))
    }
}

/// An indexed collection of samples with named label and nuisance spaces.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    samples: Vec<Sample>,
    label_space: Vec<String>,
    nuisance_space: Vec<String>,
    counts: ContingencyTable,
}

impl Dataset {
    /// Validates every sample against the spaces and caches cell counts.
    pub fn new(
        samples: Vec<Sample>,
        label_space: Vec<String>,
        nuisance_space: Vec<String>,
    ) -> Result<Self> {
        for (i, s) in samples.iter().enumerate() {
            if s.label >= label_space.len() {
                return Err(Error::InvalidArgument(format!(
                    "sample {i}: label {} outside label space of size {}",
                    s.label,
                    label_space.len()
                )));
            }
            if s.nuisance >= nuisance_space.len() {
                return Err(Error::InvalidArgument(format!(
                    "sample {i}: nuisance {} outside nuisance space of size {}",
                    s.nuisance,
                    nuisance_space.len()
                )));
            }
            if s.text.trim().is_empty() {
                return Err(Error::InvalidArgument(format!("sample {i}: empty text")));
            }
        }
        Ok(Self::from_parts(samples, label_space, nuisance_space))
    }

    fn from_parts(
        samples: Vec<Sample>,
        label_space: Vec<String>,
        nuisance_space: Vec<String>,
    ) -> Self {
        let mut counts = ContingencyTable::new(label_space.len(), nuisance_space.len());
        for s in &samples {
            counts.increment(s.label, s.nuisance);
        }
        Self {
            samples,
            label_space,
            nuisance_space,
            counts,
        }
    }

    pub fn empty() -> Self {
        Self::from_parts(Vec::new(), Vec::new(), Vec::new())
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn label_space(&self) -> &[String] {
        &self.label_space
    }

    pub fn nuisance_space(&self) -> &[String] {
        &self.nuisance_space
    }

    pub fn n_labels(&self) -> usize {
        self.label_space.len()
    }

    pub fn n_nuisances(&self) -> usize {
        self.nuisance_space.len()
    }

    /// `|D_{y,s}|`.
    #[inline]
    pub fn count(&self, label: usize, nuisance: usize) -> u64 {
        self.counts.get(label, nuisance)
    }

    pub fn contingency(&self) -> &ContingencyTable {
        &self.counts
    }

    /// Samples at `indices`, in ascending index order, over the same spaces.
    pub fn subset(&self, indices: impl IntoIterator<Item = usize>) -> Dataset {
        let mut idx: Vec<usize> = indices.into_iter().collect();
        idx.sort_unstable();
        idx.dedup();
        let samples = idx.into_iter().map(|i| self.samples[i].clone()).collect();
        Self::from_parts(samples, self.label_space.clone(), self.nuisance_space.clone())
    }

    /// Samples for which `keep` returns true, over the same spaces.
    pub fn filter(&self, mut keep: impl FnMut(&Sample) -> bool) -> Dataset {
        let samples = self.samples.iter().filter(|s| keep(s)).cloned().collect();
        Self::from_parts(samples, self.label_space.clone(), self.nuisance_space.clone())
    }

    /// Sample positions grouped per `(label, nuisance)` cell; cell `(y, s)`
    /// lives at `y * n_nuisances + s`.
    pub fn cell_indices(&self) -> Vec<Vec<usize>> {
        let ns = self.n_nuisances();
        let mut cells = vec![Vec::new(); self.n_labels() * ns];
        for (i, s) in self.samples.iter().enumerate() {
            cells[s.label * ns + s.nuisance].push(i);
        }
        cells
    }

    /// Nuisance values that have at least one sample.
    pub fn present_nuisances(&self) -> Vec<usize> {
        self.counts
            .col_totals()
            .iter()
            .enumerate()
            .filter(|(_, &c)| c > 0)
            .map(|(s, _)| s)
            .collect()
    }

    /// Drops nuisance values without samples from the space, keeping the
    /// order of the remaining ones.
    pub fn compact_nuisances(&self) -> Dataset {
        let present = self.present_nuisances();
        if present.len() == self.n_nuisances() {
            return self.clone();
        }
        let mut remap = vec![usize::MAX; self.n_nuisances()];
        for (new, &old) in present.iter().enumerate() {
            remap[old] = new;
        }
        let samples = self
            .samples
            .iter()
            .map(|s| Sample {
                nuisance: remap[s.nuisance],
                ..s.clone()
            })
            .collect();
        let names = present.iter().map(|&s| self.nuisance_space[s].clone()).collect();
        Self::from_parts(samples, self.label_space.clone(), names)
    }

    /// Errors unless every nuisance value has equal counts for all labels.
    pub fn check_balanced(&self) -> Result<()> {
        for s in 0..self.n_nuisances() {
            if !self.counts.column_is_uniform(s) {
                return Err(Error::Unbalanced {
                    nuisance: self.nuisance_space[s].clone(),
                });
            }
        }
        Ok(())
    }

    pub fn is_balanced(&self) -> bool {
        self.check_balanced().is_ok()
    }
}

/// Per-cell counts of `d`.
pub fn contingency(d: &Dataset) -> ContingencyTable {
    d.contingency().clone()
}

/// Label space used when only the number of labels is known.
pub fn default_label_space(n_labels: usize) -> Vec<String> {
    if n_labels == 2 {
        vec![NEGATIVE.to_string(), POSITIVE.to_string()]
    } else {
        (0..n_labels).map(|i| format!("label{i}")).collect()
    }
}

/// Keeps the samples of the `k` most frequent nuisance values.
///
/// Frequency ties go to the value seen first in sample order. The retained
/// values are re-indexed `0..k` in first-seen order.
pub fn select_top_nuisances(d: &Dataset, k: usize) -> Result<Dataset> {
    if k == 0 || k > d.n_nuisances() {
        return Err(Error::InvalidArgument(format!(
            "cannot select {k} nuisance values out of {}",
            d.n_nuisances()
        )));
    }
    let totals = d.contingency().col_totals();
    let mut first_seen = vec![usize::MAX; d.n_nuisances()];
    for (i, s) in d.samples().iter().enumerate() {
        if first_seen[s.nuisance] == usize::MAX {
            first_seen[s.nuisance] = i;
        }
    }
    let mut ranked: Vec<usize> = (0..d.n_nuisances()).collect();
    ranked.sort_by_key(|&s| (std::cmp::Reverse(totals[s]), first_seen[s], s));
    let mut kept: Vec<usize> = ranked[..k].to_vec();
    kept.sort_by_key(|&s| (first_seen[s], s));

    let mut remap = vec![None; d.n_nuisances()];
    for (new, &old) in kept.iter().enumerate() {
        remap[old] = Some(new);
    }
    let samples = d
        .samples()
        .iter()
        .filter_map(|s| {
            remap[s.nuisance].map(|nuisance| Sample {
                nuisance,
                ..s.clone()
            })
        })
        .collect();
    let space = kept.iter().map(|&s| d.nuisance_space()[s].clone()).collect();
    Ok(Dataset::from_parts(samples, d.label_space().to_vec(), space))
}

/// Downsamples every nuisance value to the same count for each label.
///
/// For each `s` the target is `min_y |D_{y,s}|`; samples are kept uniformly at
/// random without replacement. Surviving samples keep their original order.
pub fn balance_labels(d: &Dataset, seed: u64) -> Result<Dataset> {
    let ns = d.n_nuisances();
    for s in 0..ns {
        for y in 0..d.n_labels() {
            if d.count(y, s) == 0 {
                return Err(Error::EmptyCell {
                    label: d.label_space()[y].clone(),
                    nuisance: d.nuisance_space()[s].clone(),
                });
            }
        }
    }
    let mut rng = seed::rng(seed);
    let cells = d.cell_indices();
    let mut keep = Vec::with_capacity(d.len());
    for s in 0..ns {
        let target = (0..d.n_labels()).map(|y| d.count(y, s)).min().unwrap_or(0) as usize;
        for y in 0..d.n_labels() {
            let cell = &cells[y * ns + s];
            if cell.len() == target {
                keep.extend_from_slice(cell);
            } else {
                keep.extend(index::sample(&mut rng, cell.len(), target).into_iter().map(|i| cell[i]));
            }
        }
    }
    Ok(d.subset(keep))
}
