//! Train/test partitions: stratified iid, generalization under target bias
//! (GTB) and generalization onto unknown nuisance values (GU).

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::corpus::Dataset;
use crate::error::{Error, Result};
use crate::seed;

pub const DEFAULT_TEST_FRACTION: f64 = 0.2;

/// `int(x)` for non-negative counts. The small offset absorbs binary
/// representation error so that e.g. `0.1 · 100` truncates to 10, not 9.
fn truncate_count(x: f64) -> usize {
    (x + 1e-9).floor() as usize
}

/// Stratified holdout: each `(y, s)` cell sends `int(fraction · |cell|)`
/// samples to test. Cells of present nuisance values need at least 2 samples.
pub fn iid_split(d: &Dataset, test_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "test fraction must be in (0, 1), got {test_fraction}"
        )));
    }
    for s in d.present_nuisances() {
        for y in 0..d.n_labels() {
            if d.count(y, s) < 2 {
                return Err(Error::InvalidArgument(format!(
                    "cell (label {:?}, nuisance {:?}) has {} samples; need at least 2",
                    d.label_space()[y],
                    d.nuisance_space()[s],
                    d.count(y, s)
                )));
            }
        }
    }
    let mut rng = seed::rng(seed);
    let mut test = Vec::new();
    for mut cell in d.cell_indices() {
        if cell.is_empty() {
            continue;
        }
        cell.shuffle(&mut rng);
        test.extend_from_slice(&cell[..truncate_count(test_fraction * cell.len() as f64)]);
    }
    let mut is_test = vec![false; d.len()];
    test.iter().for_each(|&i| is_test[i] = true);
    Ok((
        d.subset((0..d.len()).filter(|&i| !is_test[i])),
        d.subset(test),
    ))
}

/// A GTB partition: the biased conditional `P_β(Y|S)` with favored labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GtbPlan {
    pub beta: f64,
    pub test_fraction: f64,
    pub seed: u64,
    /// Favored label per nuisance value; `None` for dropped values.
    pub favored: Vec<Option<usize>>,
    /// Groups of `|Y|` nuisance values drawn together.
    pub groups: Vec<Vec<usize>>,
    pub dropped_sources: Vec<usize>,
}

/// A GU partition of the nuisance space into known `S'` and unknown `S*`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuPlan {
    pub known: Vec<usize>,
    pub unknown: Vec<usize>,
    pub holdout_fraction: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SplitPlan {
    Gtb(GtbPlan),
    Gu(GuPlan),
}

/// Name-based, self-contained description of a plan for persisting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanRecord {
    pub kind: String,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    pub test_fraction: f64,
    /// Nuisance name → favored label name (GTB only).
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub favored: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub groups: Vec<Vec<String>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub dropped: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub known: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub unknown: Vec<String>,
    pub label_space: Vec<String>,
    pub nuisance_space: Vec<String>,
}

impl SplitPlan {
    pub fn kind(&self) -> &'static str {
        match self {
            SplitPlan::Gtb(_) => "gtb",
            SplitPlan::Gu(_) => "gu",
        }
    }

    pub fn to_record(&self, d: &Dataset) -> PlanRecord {
        let ns = |s: &usize| d.nuisance_space()[*s].clone();
        let mut record = PlanRecord {
            kind: self.kind().into(),
            seed: 0,
            beta: None,
            test_fraction: 0.0,
            favored: BTreeMap::new(),
            groups: Vec::new(),
            dropped: Vec::new(),
            known: Vec::new(),
            unknown: Vec::new(),
            label_space: d.label_space().to_vec(),
            nuisance_space: d.nuisance_space().to_vec(),
        };
        match self {
            SplitPlan::Gtb(p) => {
                record.seed = p.seed;
                record.beta = Some(p.beta);
                record.test_fraction = p.test_fraction;
                record.favored = p
                    .favored
                    .iter()
                    .enumerate()
                    .filter_map(|(s, y)| y.map(|y| (ns(&s), d.label_space()[y].clone())))
                    .collect();
                record.groups = p.groups.iter().map(|g| g.iter().map(ns).collect()).collect();
                record.dropped = p.dropped_sources.iter().map(ns).collect();
            }
            SplitPlan::Gu(p) => {
                record.seed = p.seed;
                record.test_fraction = p.holdout_fraction;
                record.known = p.known.iter().map(ns).collect();
                record.unknown = p.unknown.iter().map(ns).collect();
            }
        }
        record
    }

    /// Inverse of [`Self::to_record`], resolving names against the record's
    /// own spaces.
    pub fn from_record(rec: &PlanRecord) -> Result<Self> {
        let index = |space: &[String], name: &str| -> Result<usize> {
            space
                .iter()
                .position(|n| n == name)
                .ok_or_else(|| Error::Config(format!("unknown name {name:?} in split plan")))
        };
        let ns = |name: &String| index(&rec.nuisance_space, name);
        let many = |names: &[String]| names.iter().map(ns).collect::<Result<Vec<_>>>();
        match rec.kind.as_str() {
            "gtb" => {
                let beta = rec
                    .beta
                    .ok_or_else(|| Error::Config("GTB plan without beta".into()))?;
                let mut favored = vec![None; rec.nuisance_space.len()];
                for (s, y) in &rec.favored {
                    favored[ns(s)?] = Some(index(&rec.label_space, y)?);
                }
                Ok(SplitPlan::Gtb(GtbPlan {
                    beta,
                    test_fraction: rec.test_fraction,
                    seed: rec.seed,
                    favored,
                    groups: rec.groups.iter().map(|g| many(g)).collect::<Result<_>>()?,
                    dropped_sources: many(&rec.dropped)?,
                }))
            }
            "gu" => Ok(SplitPlan::Gu(GuPlan {
                known: many(&rec.known)?,
                unknown: many(&rec.unknown)?,
                holdout_fraction: rec.test_fraction,
                seed: rec.seed,
            })),
            other => Err(Error::Config(format!("unknown split kind {other:?}"))),
        }
    }
}

/// `train`, a test set following the training distribution (`test_same`) and
/// the shifted test set (`test_shifted`).
#[derive(Debug, Clone, PartialEq)]
pub struct SplitResult {
    pub train: Dataset,
    pub test_shifted: Dataset,
    pub test_same: Dataset,
    pub plan: SplitPlan,
}

fn biased_subset(
    pool: &Dataset,
    groups: &[Vec<usize>],
    favored: &[Option<usize>],
    beta: f64,
    seed: u64,
) -> Dataset {
    let ny = pool.n_labels();
    let ns = pool.n_nuisances();
    let other_share = (1.0 - beta) / (ny - 1) as f64;
    let mut rng = seed::rng(seed);
    let mut cells = pool.cell_indices();
    let mut keep = Vec::new();
    for group in groups {
        let n = group
            .iter()
            .flat_map(|&s| (0..ny).map(move |y| (y, s)))
            .map(|(y, s)| pool.count(y, s))
            .min()
            .unwrap_or(0) as f64;
        for &s in group {
            let fav = favored[s].expect("grouped source has a favored label");
            for y in 0..ny {
                let take = if y == fav {
                    truncate_count(beta * n)
                } else {
                    truncate_count(other_share * n)
                };
                // Full shuffle regardless of `take`, so the draw sequence does
                // not depend on beta and larger shares extend smaller ones.
                let cell = &mut cells[y * ns + s];
                cell.shuffle(&mut rng);
                keep.extend_from_slice(&cell[..take]);
            }
        }
    }
    pool.subset(keep)
}

/// GTB split with the default 20% holdout.
pub fn gtb_split(d: &Dataset, beta: f64, seed: u64) -> Result<SplitResult> {
    gtb_split_with(d, beta, DEFAULT_TEST_FRACTION, seed)
}

/// Samples a biased training set from `P_β(Y|S)`.
///
/// After a stratified holdout, nuisance values are drawn in random groups of
/// `|Y|`; within a group each value gets a distinct favored label. With `N`
/// the smallest cell of the group, each source keeps `int(βN)` samples of its
/// favored label and `int((1−β)/(|Y|−1) · N)` of every other label. Leftover
/// values (`|S| mod |Y|`) are dropped. `test_shifted` is the holdout over the
/// retained values (label-balanced); `test_same` applies the same favored map
/// and β to the holdout.
pub fn gtb_split_with(d: &Dataset, beta: f64, test_fraction: f64, seed: u64) -> Result<SplitResult> {
    if !(0.5..=1.0).contains(&beta) {
        return Err(Error::InvalidArgument(format!("beta {beta} is not in [0.5, 1]")));
    }
    let ny = d.n_labels();
    let ns = d.n_nuisances();
    if ny < 2 {
        return Err(Error::InvalidArgument("GTB needs at least two labels".into()));
    }
    if ns < ny {
        return Err(Error::InvalidArgument(format!(
            "GTB needs at least as many nuisance values ({ns}) as labels ({ny})"
        )));
    }
    for s in 0..ns {
        for y in 0..ny {
            if d.count(y, s) == 0 {
                return Err(Error::EmptyCell {
                    label: d.label_space()[y].clone(),
                    nuisance: d.nuisance_space()[s].clone(),
                });
            }
        }
    }
    d.check_balanced()?;

    let (train_pool, test_pool) = iid_split(d, test_fraction, seed::derive_seed(seed, seed::stream::HOLDOUT, 0))?;
    let mut rng = seed::rng(seed);
    let mut order: Vec<usize> = (0..ns).collect();
    order.shuffle(&mut rng);
    let groups: Vec<Vec<usize>> = order.chunks_exact(ny).map(<[usize]>::to_vec).collect();
    let mut dropped_sources = order.chunks_exact(ny).remainder().to_vec();
    dropped_sources.sort_unstable();
    let mut favored = vec![None; ns];
    for group in &groups {
        let mut labels: Vec<usize> = (0..ny).collect();
        labels.shuffle(&mut rng);
        for (&s, &y) in group.iter().zip(&labels) {
            favored[s] = Some(y);
        }
    }

    let train = biased_subset(&train_pool, &groups, &favored, beta, seed::derive_seed(seed, seed::stream::GTB, 0));
    let test_same = biased_subset(&test_pool, &groups, &favored, beta, seed::derive_seed(seed, seed::stream::GTB, 1));
    let test_shifted = test_pool.filter(|s| favored[s.nuisance].is_some());
    Ok(SplitResult {
        train,
        test_shifted,
        test_same,
        plan: SplitPlan::Gtb(GtbPlan {
            beta,
            test_fraction,
            seed,
            favored,
            groups,
            dropped_sources,
        }),
    })
}

/// GU split with the default 20% holdout of the known sources.
pub fn gu_split(d: &Dataset, k_unknown: usize, seed: u64) -> Result<SplitResult> {
    gu_split_with(d, k_unknown, DEFAULT_TEST_FRACTION, seed)
}

/// Draws `k_unknown` nuisance values as `S*`. Training uses the rest minus a
/// stratified holdout, which becomes `test_same`; `test_shifted` is every
/// sample from `S*`.
pub fn gu_split_with(d: &Dataset, k_unknown: usize, holdout_fraction: f64, seed: u64) -> Result<SplitResult> {
    let ns = d.n_nuisances();
    if k_unknown == 0 || k_unknown >= ns {
        return Err(Error::InvalidArgument(format!(
            "k_unknown must be in 1..{ns}, got {k_unknown}"
        )));
    }
    let mut rng = seed::rng(seed);
    let mut order: Vec<usize> = (0..ns).collect();
    order.shuffle(&mut rng);
    let mut unknown = order[..k_unknown].to_vec();
    let mut known = order[k_unknown..].to_vec();
    unknown.sort_unstable();
    known.sort_unstable();
    let mut is_unknown = vec![false; ns];
    unknown.iter().for_each(|&s| is_unknown[s] = true);

    let known_data = d.filter(|s| !is_unknown[s.nuisance]);
    let test_shifted = d.filter(|s| is_unknown[s.nuisance]);
    let (train, test_same) = iid_split(
        &known_data,
        holdout_fraction,
        seed::derive_seed(seed, seed::stream::HOLDOUT, 0),
    )?;
    Ok(SplitResult {
        train,
        test_shifted,
        test_same,
        plan: SplitPlan::Gu(GuPlan {
            known,
            unknown,
            holdout_fraction,
            seed,
        }),
    })
}
