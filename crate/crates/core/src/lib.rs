//! Controlled-bias datasets and robustness metrics for text classifiers.
//!
//! The pipeline starts from `(text, label, nuisance)` corpora ([`corpus`]),
//! builds nested subsets with increasing dependence between text and nuisance
//! through mutual-information-driven rejection ([`mi`], [`filtering`]), splits
//! them into biased or unseen-nuisance train/test partitions ([`splits`]), and
//! scores a bag-of-n-grams classifier ([`textmodel`]) with normalized
//! accuracies, discrimination and probe-based identifiability ([`metrics`],
//! [`probe`]).

pub mod corpus;
pub mod error;
pub mod filtering;
pub mod metrics;
pub mod mi;
pub mod probe;
pub mod seed;
pub mod splits;
pub mod synth;
pub mod textmodel;

pub use corpus::{
    balance_labels, contingency, ingest_reviews, read_jsonl, read_jsonl_in_space,
    select_top_nuisances, write_jsonl, ContingencyTable, Dataset, ReviewFields, Sample,
};
pub use error::{Error, Result};
pub use filtering::{filter_sequence, reject_iteration, FilterSchedule, FilterSequence, RemovalLog};
pub use metrics::{
    disc_ratio, discrimination, gtb_metric, gu_metric, identifiability_gtb, identifiability_gu,
    MetricKind, MetricReport,
};
pub use mi::{contributions, estimate_mi, plug_in_mi, ContributionTable, MiEstimate, NuisanceEstimator};
pub use probe::{probe_accuracy, train_probe, HeldOutAccuracy, ProbeConfig, TrainedProbe};
pub use splits::{gtb_split, gu_split, iid_split, GtbPlan, GuPlan, PlanRecord, SplitPlan, SplitResult};
pub use synth::{synth_generate, SynthSpec};
pub use textmodel::{
    accuracy, featurize, train, FeaturizerConfig, Representation, TrainParams, TrainedClassifier,
};
