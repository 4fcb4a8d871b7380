//! Robustness metrics: normalized GTB and GU accuracies, discrimination and
//! identifiability.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::corpus::{ContingencyTable, Dataset};
use crate::error::{Error, Result};
use crate::probe::{held_out_accuracy, HeldOutAccuracy, ProbeConfig};
use crate::seed;
use crate::splits::{SplitPlan, SplitResult};
use crate::textmodel::{Representation, TrainedClassifier};

/// Anything that maps a text to a label.
pub trait LabelPredictor {
    fn predict_label(&self, text: &str) -> usize;
}

/// Anything that maps a text to a fixed-size representation.
pub trait Encoder {
    fn represent(&self, text: &str) -> Representation;
}

impl LabelPredictor for TrainedClassifier {
    fn predict_label(&self, text: &str) -> usize {
        TrainedClassifier::predict_label(self, text)
    }
}

impl Encoder for TrainedClassifier {
    fn represent(&self, text: &str) -> Representation {
        TrainedClassifier::represent(self, text)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricKind {
    Gtb,
    Gu,
}

impl MetricKind {
    pub fn as_str(self) -> &'static str {
        match self {
            MetricKind::Gtb => "gtb",
            MetricKind::Gu => "gu",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub kind: MetricKind,
    /// β for GTB reports.
    pub beta: Option<f64>,
    pub acc_same: f64,
    pub acc_shifted: f64,
    /// `100 · acc_shifted / acc_same`.
    pub normalized: f64,
    pub disc_per_label: BTreeMap<usize, f64>,
    /// `100 · disc(y) / (2β − 1)`; only when β > 0.5.
    pub disc_ratio_per_label: BTreeMap<usize, f64>,
    pub identifiability: Option<f64>,
    pub majority_baseline: Option<f64>,
}

impl MetricReport {
    pub fn with_identifiability(mut self, r: &HeldOutAccuracy) -> Self {
        self.identifiability = Some(r.accuracy);
        self.majority_baseline = Some(r.majority_baseline);
        self
    }
}

/// Fraction of samples whose prediction equals the true label.
pub fn accuracy_of(predictions: &[usize], d: &Dataset) -> Result<f64> {
    if d.is_empty() {
        return Err(Error::EmptyDataset("accuracy"));
    }
    check_len(predictions, d)?;
    let correct = predictions
        .iter()
        .zip(d.samples())
        .filter(|(p, s)| **p == s.label)
        .count();
    Ok(correct as f64 / d.len() as f64)
}

fn check_len(predictions: &[usize], d: &Dataset) -> Result<()> {
    if predictions.len() != d.len() {
        return Err(Error::DimensionMismatch {
            expected: d.len(),
            found: predictions.len(),
        });
    }
    Ok(())
}

/// `100 · acc_shifted / acc_same`.
pub fn normalized(acc_shifted: f64, acc_same: f64) -> Result<f64> {
    if acc_same <= 0.0 {
        return Err(Error::InvalidArgument(
            "same-distribution accuracy is zero; normalization undefined".into(),
        ));
    }
    Ok(100.0 * acc_shifted / acc_same)
}

/// `disc(y)`: difference in the rate of predicting `y` between the protected
/// group (sources whose majority label in `bias_table` is `y`) and the rest.
pub fn discrimination(
    predictions: &[usize],
    d: &Dataset,
    bias_table: &ContingencyTable,
    y: usize,
) -> Result<f64> {
    check_len(predictions, d)?;
    if bias_table.cols() != d.n_nuisances() {
        return Err(Error::DimensionMismatch {
            expected: d.n_nuisances(),
            found: bias_table.cols(),
        });
    }
    let mut majority = vec![None; d.n_nuisances()];
    for s in d.present_nuisances() {
        majority[s] = Some(bias_table.column_argmax(s).ok_or_else(|| Error::ArgmaxTie {
            nuisance: d.nuisance_space()[s].clone(),
        })?);
    }
    let (mut pr, mut pr_hits, mut upr, mut upr_hits) = (0usize, 0usize, 0usize, 0usize);
    for (sample, &pred) in d.samples().iter().zip(predictions) {
        let hit = usize::from(pred == y);
        if majority[sample.nuisance] == Some(y) {
            pr += 1;
            pr_hits += hit;
        } else {
            upr += 1;
            upr_hits += hit;
        }
    }
    if pr == 0 {
        return Err(Error::EmptyGroup(format!("no protected sample for label {y}")));
    }
    if upr == 0 {
        return Err(Error::EmptyGroup(format!("no unprotected sample for label {y}")));
    }
    Ok((pr_hits as f64 / pr as f64 - upr_hits as f64 / upr as f64).abs())
}

/// `100 · disc / (2β − 1)`.
pub fn disc_ratio(disc: f64, beta: f64) -> Result<f64> {
    let denom = 2.0 * beta - 1.0;
    if denom.abs() < 1e-12 {
        return Err(Error::InvalidArgument(
            "disc ratio is undefined at beta = 0.5".into(),
        ));
    }
    Ok(100.0 * disc / denom.abs())
}

/// GTB report for a model trained on `sr.train`.
///
/// Discrimination is measured on `test_same`, with protected groups taken from
/// the training distribution. At β = 0.5 no source has a majority label and
/// discrimination is left empty.
pub fn gtb_metric<M: LabelPredictor + ?Sized>(model: &M, sr: &SplitResult) -> Result<MetricReport> {
    let SplitPlan::Gtb(plan) = &sr.plan else {
        return Err(Error::InvalidArgument("gtb_metric needs a GTB split".into()));
    };
    let predict = |d: &Dataset| -> Vec<usize> { d.samples().iter().map(|s| model.predict_label(&s.text)).collect() };
    let same_preds = predict(&sr.test_same);
    let acc_same = accuracy_of(&same_preds, &sr.test_same)?;
    let acc_shifted = accuracy_of(&predict(&sr.test_shifted), &sr.test_shifted)?;
    let mut disc_per_label = BTreeMap::new();
    let mut disc_ratio_per_label = BTreeMap::new();
    if plan.beta > 0.5 {
        let bias = sr.train.contingency();
        for y in 0..sr.train.n_labels() {
            let disc = discrimination(&same_preds, &sr.test_same, bias, y)?;
            disc_per_label.insert(y, disc);
            disc_ratio_per_label.insert(y, disc_ratio(disc, plan.beta)?);
        }
    }
    Ok(MetricReport {
        kind: MetricKind::Gtb,
        beta: Some(plan.beta),
        acc_same,
        acc_shifted,
        normalized: normalized(acc_shifted, acc_same)?,
        disc_per_label,
        disc_ratio_per_label,
        identifiability: None,
        majority_baseline: None,
    })
}

/// GU report: accuracy on unknown sources relative to the known-source
/// holdout. Discrimination does not apply.
pub fn gu_metric<M: LabelPredictor + ?Sized>(model: &M, sr: &SplitResult) -> Result<MetricReport> {
    if !matches!(sr.plan, SplitPlan::Gu(_)) {
        return Err(Error::InvalidArgument("gu_metric needs a GU split".into()));
    }
    let predict = |d: &Dataset| -> Vec<usize> { d.samples().iter().map(|s| model.predict_label(&s.text)).collect() };
    let acc_same = accuracy_of(&predict(&sr.test_same), &sr.test_same)?;
    let acc_shifted = accuracy_of(&predict(&sr.test_shifted), &sr.test_shifted)?;
    Ok(MetricReport {
        kind: MetricKind::Gu,
        beta: None,
        acc_same,
        acc_shifted,
        normalized: normalized(acc_shifted, acc_same)?,
        disc_per_label: BTreeMap::new(),
        disc_ratio_per_label: BTreeMap::new(),
        identifiability: None,
        majority_baseline: None,
    })
}

const PROBE_TEST_FRACTION: f64 = 0.2;

/// Held-out accuracy of a probe predicting the nuisance value from the
/// representations of the GTB training set.
pub fn identifiability_gtb<M: Encoder + ?Sized>(
    model: &M,
    sr: &SplitResult,
    cfg: &ProbeConfig,
) -> Result<HeldOutAccuracy> {
    if !matches!(sr.plan, SplitPlan::Gtb(_)) {
        return Err(Error::InvalidArgument("identifiability_gtb needs a GTB split".into()));
    }
    let (reps, targets): (Vec<_>, Vec<_>) = sr
        .train
        .samples()
        .iter()
        .map(|s| (model.represent(&s.text), s.nuisance))
        .unzip();
    held_out_accuracy(
        &reps,
        &targets,
        sr.train.nuisance_space().to_vec(),
        cfg,
        PROBE_TEST_FRACTION,
    )
}

/// Held-out accuracy of a binary probe separating known-source samples from
/// unknown-source samples. Only texts the model never trained on are used
/// (`test_same` against `test_shifted`), so the probe cannot key on
/// memorized training rows.
pub fn identifiability_gu<M: Encoder + ?Sized>(
    model: &M,
    sr: &SplitResult,
    cfg: &ProbeConfig,
) -> Result<HeldOutAccuracy> {
    if !matches!(sr.plan, SplitPlan::Gu(_)) {
        return Err(Error::InvalidArgument("identifiability_gu needs a GU split".into()));
    }
    let encode = |d: &Dataset| -> Vec<Representation> { d.samples().iter().map(|s| model.represent(&s.text)).collect() };
    gu_identifiability_from_reps(encode(&sr.test_same), encode(&sr.test_shifted), cfg)
}

/// Balances the two sides by subsampling the larger one, then probes
/// membership (0 = known, 1 = unknown).
pub fn gu_identifiability_from_reps(
    mut known: Vec<Representation>,
    mut unknown: Vec<Representation>,
    cfg: &ProbeConfig,
) -> Result<HeldOutAccuracy> {
    let n = known.len().min(unknown.len());
    if n == 0 {
        return Err(Error::EmptyDataset("GU identifiability side"));
    }
    let mut rng = seed::rng(seed::derive_seed(cfg.seed, seed::stream::HOLDOUT, 1));
    for side in [&mut known, &mut unknown] {
        if side.len() > n {
            side.shuffle(&mut rng);
            side.truncate(n);
        }
    }
    let targets: Vec<usize> = std::iter::repeat_n(0, n).chain(std::iter::repeat_n(1, n)).collect();
    known.extend(unknown);
    held_out_accuracy(
        &known,
        &targets,
        vec!["known".into(), "unknown".into()],
        cfg,
        PROBE_TEST_FRACTION,
    )
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Some((mean, var.sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{default_label_space, Sample};
    use crate::splits::{gtb_split, gu_split};

    /// Reads the label back from texts of the form `"... L<y>"`.
    struct Oracle;
    impl LabelPredictor for Oracle {
        fn predict_label(&self, text: &str) -> usize {
            text.rsplit('L').next().unwrap().parse().unwrap()
        }
    }

    struct Constant(usize);
    impl LabelPredictor for Constant {
        fn predict_label(&self, _: &str) -> usize {
            self.0
        }
    }

    fn balanced(n_nuisances: usize, cell: usize) -> Dataset {
        let mut samples = Vec::new();
        for s in 0..n_nuisances {
            for y in 0..2 {
                for _ in 0..cell {
                    samples.push(Sample { id: samples.len() as u64, text: format!("S{s} L{y}"), label: y, nuisance: s });
                }
            }
        }
        let names = (0..n_nuisances).map(|s| format!("s{s}")).collect();
        Dataset::new(samples, default_label_space(2), names).unwrap()
    }

    #[test]
    fn ratio_values() {
        assert!((disc_ratio(0.169, 0.6).unwrap() - 84.5).abs() < 1e-9);
        assert_eq!(disc_ratio(0.0, 0.8).unwrap(), 0.0);
        let beta: f64 = 0.7;
        assert!((disc_ratio(2.0 * beta - 1.0, beta).unwrap() - 100.0).abs() < 1e-12);
        assert!(disc_ratio(0.1, 0.5).is_err());
    }

    #[test]
    fn discrimination_ground_truth_and_constant() {
        let d = balanced(4, 125);
        let sr = gtb_split(&d, 0.8, 1).unwrap();
        let report = gtb_metric(&Oracle, &sr).unwrap();
        for y in 0..2 {
            assert!((report.disc_per_label[&y] - 0.6).abs() <= 2.0 / 20.0);
        }
        assert_eq!(report.acc_same, 1.0);
        assert_eq!(report.normalized, 100.0);
        let report = gtb_metric(&Constant(1), &sr).unwrap();
        assert_eq!(report.disc_per_label[&0], 0.0);
        assert_eq!(report.disc_per_label[&1], 0.0);
    }

    #[test]
    fn nuisance_memorizer_has_full_discrimination() {
        let d = balanced(4, 50);
        let sr = gtb_split(&d, 0.7, 2).unwrap();
        let bias = sr.train.contingency().clone();
        let preds: Vec<usize> = sr
            .test_same
            .samples()
            .iter()
            .map(|s| bias.column_argmax(s.nuisance).unwrap())
            .collect();
        for y in 0..2 {
            assert_eq!(discrimination(&preds, &sr.test_same, &bias, y).unwrap(), 1.0);
        }
    }

    #[test]
    fn discrimination_errors() {
        let d = balanced(2, 4);
        let tie = d.contingency().clone();
        let preds = vec![0; d.len()];
        assert!(matches!(discrimination(&preds, &d, &tie, 0), Err(Error::ArgmaxTie { .. })));
        let all_zero_major = ContingencyTable::from_rows(&[vec![5, 5], vec![1, 1]]).unwrap();
        assert!(matches!(
            discrimination(&preds, &d, &all_zero_major, 0),
            Err(Error::EmptyGroup(_))
        ));
        assert!(discrimination(&preds[1..], &d, &all_zero_major, 0).is_err());
    }

    #[test]
    fn beta_half_has_no_discrimination() {
        let d = balanced(4, 20);
        let sr = gtb_split(&d, 0.5, 3).unwrap();
        let r = gtb_metric(&Oracle, &sr).unwrap();
        assert!(r.disc_per_label.is_empty());
        assert_eq!(r.normalized, 100.0);
    }

    #[test]
    fn gu_report_and_kind_checks() {
        let d = balanced(6, 10);
        let gu = gu_split(&d, 3, 1).unwrap();
        let r = gu_metric(&Oracle, &gu).unwrap();
        assert_eq!(r.kind, MetricKind::Gu);
        assert_eq!(r.normalized, 100.0);
        assert!(r.disc_per_label.is_empty());
        assert!(gtb_metric(&Oracle, &gu).is_err());
        let gtb = gtb_split(&d, 0.7, 1).unwrap();
        assert!(gu_metric(&Oracle, &gtb).is_err());
        let boundary = gu_split(&d, 5, 2).unwrap();
        assert!(gu_metric(&Constant(0), &boundary).is_ok());
    }

    #[test]
    fn population_std() {
        let (m, s) = mean_std(&[1.0, 3.0]).unwrap();
        assert_eq!((m, s), (2.0, 1.0));
        assert!(mean_std(&[]).is_none());
    }
}
