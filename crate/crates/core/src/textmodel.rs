//! Bag-of-n-grams linear text classifier with feature hashing.
//!
//! Unigrams and adjacent bigrams are hashed with 64-bit FNV-1a into a shared
//! bucket space. A text is represented by the mean of its bucket embeddings,
//! followed by a linear softmax layer. Training is plain per-sample SGD on the
//! softmax cross-entropy with a learning rate decaying linearly to zero.
//!
//! The embedding table is logically `bucket_count × dim`, but only rows hit by
//! the training data are stored. Every other row is regenerated on demand from
//! its own ChaCha stream, which yields exactly the values a dense table would
//! have been initialized with.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Dataset, Sample};
use crate::error::{Error, Result};
use crate::seed;

/// Separator inserted between the two tokens of a bigram before hashing.
const BIGRAM_SEPARATOR: u8 = 0x1f;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeaturizerConfig {
    pub bucket_count: usize,
    pub use_bigrams: bool,
    pub lowercase: bool,
}

impl Default for FeaturizerConfig {
    fn default() -> Self {
        Self {
            bucket_count: 2_000_000,
            use_bigrams: true,
            lowercase: true,
        }
    }
}

impl FeaturizerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.bucket_count < 2 || self.bucket_count as u64 > u64::from(u32::MAX) + 1 {
            return Err(Error::InvalidArgument(format!(
                "bucket_count must be in [2, 2^32], got {}",
                self.bucket_count
            )));
        }
        Ok(())
    }
}

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, &b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME))
}

/// Whitespace tokens with leading/trailing ASCII punctuation stripped.
pub fn tokenize(text: &str, lowercase: bool) -> Vec<String> {
    text.split_whitespace()
        .map(|t| t.trim_matches(|c: char| c.is_ascii_punctuation()))
        .filter(|t| !t.is_empty())
        .map(|t| if lowercase { t.to_lowercase() } else { t.to_string() })
        .collect()
}

/// Bucket indices of every unigram, then of every adjacent bigram.
pub fn featurize(text: &str, cfg: &FeaturizerConfig) -> Vec<u32> {
    let tokens = tokenize(text, cfg.lowercase);
    let buckets = cfg.bucket_count as u64;
    let mut out: Vec<u32> = tokens
        .iter()
        .map(|t| (fnv1a64(t.as_bytes()) % buckets) as u32)
        .collect();
    if cfg.use_bigrams {
        let mut buf = Vec::new();
        for pair in tokens.windows(2) {
            buf.clear();
            buf.extend_from_slice(pair[0].as_bytes());
            buf.push(BIGRAM_SEPARATOR);
            buf.extend_from_slice(pair[1].as_bytes());
            out.push((fnv1a64(&buf) % buckets) as u32);
        }
    }
    out
}

/// Training hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainParams {
    pub dim: usize,
    pub lr: f64,
    pub epochs: usize,
    pub featurizer: FeaturizerConfig,
}

impl Default for TrainParams {
    fn default() -> Self {
        Self {
            dim: 20,
            lr: 0.25,
            epochs: 5,
            featurizer: FeaturizerConfig::default(),
        }
    }
}

/// Which field of a sample the classifier predicts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Target {
    Label,
    Nuisance,
}

impl Target {
    fn of(self, s: &Sample) -> usize {
        match self {
            Target::Label => s.label,
            Target::Nuisance => s.nuisance,
        }
    }
}

/// Mean-pooled text embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct Representation(pub Vec<f64>);

impl Representation {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub label: usize,
    pub probs: Vec<f64>,
}

/// Counters from one training run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TrainSummary {
    pub skipped_samples: usize,
    pub updates: usize,
}

/// Gradient of the mean batch loss. Embedding gradients are keyed by bucket.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierGradient {
    pub head: Vec<f64>,
    pub bias: Vec<f64>,
    pub embeddings: Vec<(u32, Vec<f64>)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedClassifier {
    dim: usize,
    featurizer: FeaturizerConfig,
    class_names: Vec<String>,
    init_key: u64,
    /// Sorted buckets whose rows are materialized in `rows`.
    buckets: Vec<u32>,
    rows: Vec<f64>,
    /// `n_classes × dim`, row-major.
    head: Vec<f64>,
    bias: Vec<f64>,
}

struct Scratch {
    hidden: Vec<f64>,
    probs: Vec<f64>,
    grad_hidden: Vec<f64>,
}

impl Scratch {
    fn new(dim: usize, n_classes: usize) -> Self {
        Self {
            hidden: vec![0.0; dim],
            probs: vec![0.0; n_classes],
            grad_hidden: vec![0.0; dim],
        }
    }
}

fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Row of the (virtual) dense table, drawn uniformly in `[-1/dim, 1/dim]`.
fn init_row(init_key: u64, bucket: u32, dim: usize, out: &mut [f64]) {
    let mut rng = ChaCha8Rng::seed_from_u64(init_key);
    rng.set_stream(u64::from(bucket));
    let bound = 1.0 / dim as f64;
    for x in out.iter_mut() {
        *x = rng.random_range(-bound..=bound);
    }
}

impl TrainedClassifier {
    fn untrained(
        params: &TrainParams,
        class_names: Vec<String>,
        mut buckets: Vec<u32>,
        seed: u64,
    ) -> Self {
        buckets.sort_unstable();
        buckets.dedup();
        let dim = params.dim;
        let init_key = seed::derive_seed(seed, seed::stream::TRAIN, 0);
        let mut rows = vec![0.0; buckets.len() * dim];
        for (b, row) in buckets.iter().zip(rows.chunks_exact_mut(dim)) {
            init_row(init_key, *b, dim, row);
        }
        let n = class_names.len();
        Self {
            dim,
            featurizer: params.featurizer,
            class_names,
            init_key,
            buckets,
            rows,
            head: vec![0.0; n * dim],
            bias: vec![0.0; n],
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn featurizer(&self) -> &FeaturizerConfig {
        &self.featurizer
    }

    /// `n_classes × dim` output weights, row-major.
    pub fn head(&self) -> &[f64] {
        &self.head
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn head_mut(&mut self) -> &mut [f64] {
        &mut self.head
    }

    pub fn bias_mut(&mut self) -> &mut [f64] {
        &mut self.bias
    }

    /// Buckets whose embedding rows are stored explicitly.
    pub fn materialized_buckets(&self) -> &[u32] {
        &self.buckets
    }

    /// Embedding row of `bucket`, whether stored or implicit.
    pub fn embedding_row(&self, bucket: u32) -> Vec<f64> {
        match self.buckets.binary_search(&bucket) {
            Ok(p) => self.rows[p * self.dim..(p + 1) * self.dim].to_vec(),
            Err(_) => {
                let mut row = vec![0.0; self.dim];
                init_row(self.init_key, bucket, self.dim, &mut row);
                row
            }
        }
    }

    /// Mutable stored row, `None` for implicit rows.
    pub fn embedding_row_mut(&mut self, bucket: u32) -> Option<&mut [f64]> {
        let p = self.buckets.binary_search(&bucket).ok()?;
        Some(&mut self.rows[p * self.dim..(p + 1) * self.dim])
    }

    fn positions(&self, features: &[u32]) -> Option<Vec<usize>> {
        features
            .iter()
            .map(|b| self.buckets.binary_search(b).ok())
            .collect()
    }

    fn hidden_from_features(&self, features: &[u32], out: &mut [f64]) {
        out.fill(0.0);
        if features.is_empty() {
            return;
        }
        let mut row = vec![0.0; self.dim];
        for b in features {
            match self.buckets.binary_search(b) {
                Ok(p) => {
                    for (o, r) in out.iter_mut().zip(&self.rows[p * self.dim..(p + 1) * self.dim]) {
                        *o += r;
                    }
                }
                Err(_) => {
                    init_row(self.init_key, *b, self.dim, &mut row);
                    for (o, r) in out.iter_mut().zip(&row) {
                        *o += r;
                    }
                }
            }
        }
        let inv = 1.0 / features.len() as f64;
        out.iter_mut().for_each(|x| *x *= inv);
    }

    fn logits_into(&self, hidden: &[f64], out: &mut [f64]) {
        for (k, o) in out.iter_mut().enumerate() {
            let w = &self.head[k * self.dim..(k + 1) * self.dim];
            *o = self.bias[k] + w.iter().zip(hidden).map(|(a, b)| a * b).sum::<f64>();
        }
    }

    /// Forward and backward pass for one sample given stored-row positions.
    /// Leaves `p - onehot(target)` in `s.probs` and `dL/dhidden` in
    /// `s.grad_hidden`; returns the cross-entropy.
    fn forward_backward(&self, positions: &[usize], target: usize, s: &mut Scratch) -> f64 {
        let dim = self.dim;
        s.hidden.fill(0.0);
        if !positions.is_empty() {
            for &p in positions {
                for (h, r) in s.hidden.iter_mut().zip(&self.rows[p * dim..(p + 1) * dim]) {
                    *h += r;
                }
            }
            let inv = 1.0 / positions.len() as f64;
            s.hidden.iter_mut().for_each(|h| *h *= inv);
        }
        self.logits_into(&s.hidden, &mut s.probs);
        softmax_in_place(&mut s.probs);
        let loss = -s.probs[target].ln();
        s.probs[target] -= 1.0;
        s.grad_hidden.fill(0.0);
        for (k, &err) in s.probs.iter().enumerate() {
            let w = &self.head[k * dim..(k + 1) * dim];
            for (g, wk) in s.grad_hidden.iter_mut().zip(w) {
                *g += err * wk;
            }
        }
        loss
    }

    fn sgd_step(&mut self, positions: &[usize], target: usize, lr: f64, s: &mut Scratch) -> f64 {
        let loss = self.forward_backward(positions, target, s);
        let dim = self.dim;
        for (k, &err) in s.probs.iter().enumerate() {
            let w = &mut self.head[k * dim..(k + 1) * dim];
            for (wk, h) in w.iter_mut().zip(&s.hidden) {
                *wk -= lr * err * h;
            }
            self.bias[k] -= lr * err;
        }
        if !positions.is_empty() {
            let scale = lr / positions.len() as f64;
            for &p in positions {
                for (r, g) in self.rows[p * dim..(p + 1) * dim].iter_mut().zip(&s.grad_hidden) {
                    *r -= scale * g;
                }
            }
        }
        loss
    }

    /// Class probabilities and argmax (lowest index on ties).
    pub fn predict(&self, text: &str) -> Prediction {
        let features = featurize(text, &self.featurizer);
        let mut hidden = vec![0.0; self.dim];
        self.hidden_from_features(&features, &mut hidden);
        let mut probs = vec![0.0; self.n_classes()];
        self.logits_into(&hidden, &mut probs);
        softmax_in_place(&mut probs);
        Prediction {
            label: argmax(&probs),
            probs,
        }
    }

    pub fn predict_label(&self, text: &str) -> usize {
        self.predict(text).label
    }

    /// Predicted labels for every sample of `d`, in order.
    pub fn predict_labels(&self, d: &Dataset) -> Vec<usize> {
        d.samples().iter().map(|s| self.predict_label(&s.text)).collect()
    }

    /// Mean of the text's feature embeddings; zero vector for no features.
    pub fn represent(&self, text: &str) -> Representation {
        let features = featurize(text, &self.featurizer);
        let mut hidden = vec![0.0; self.dim];
        self.hidden_from_features(&features, &mut hidden);
        Representation(hidden)
    }

    /// `ln P̂(target | text)`.
    pub fn log_prob(&self, text: &str, target: usize) -> f64 {
        let features = featurize(text, &self.featurizer);
        let mut hidden = vec![0.0; self.dim];
        self.hidden_from_features(&features, &mut hidden);
        let mut logits = vec![0.0; self.n_classes()];
        self.logits_into(&hidden, &mut logits);
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
        logits[target] - lse
    }

    /// Mean cross-entropy over `batch` and its gradient. Every feature of the
    /// batch must hit a stored row.
    pub fn loss_and_gradient(&self, batch: &[(&str, usize)]) -> Result<(f64, ClassifierGradient)> {
        if batch.is_empty() {
            return Err(Error::EmptyDataset("gradient batch"));
        }
        let dim = self.dim;
        let n_classes = self.n_classes();
        let mut s = Scratch::new(dim, n_classes);
        let mut head = vec![0.0; self.head.len()];
        let mut bias = vec![0.0; n_classes];
        let mut emb: std::collections::BTreeMap<u32, Vec<f64>> = Default::default();
        let mut total = 0.0;
        let inv_batch = 1.0 / batch.len() as f64;
        for &(text, target) in batch {
            let features = featurize(text, &self.featurizer);
            let positions = self.positions(&features).ok_or_else(|| {
                Error::InvalidArgument("gradient batch hits an unstored embedding row".into())
            })?;
            total += self.forward_backward(&positions, target, &mut s);
            for (k, &err) in s.probs.iter().enumerate() {
                for j in 0..dim {
                    head[k * dim + j] += inv_batch * err * s.hidden[j];
                }
                bias[k] += inv_batch * err;
            }
            if !features.is_empty() {
                let scale = inv_batch / features.len() as f64;
                for b in &features {
                    let g = emb.entry(*b).or_insert_with(|| vec![0.0; dim]);
                    for (gj, h) in g.iter_mut().zip(&s.grad_hidden) {
                        *gj += scale * h;
                    }
                }
            }
        }
        Ok((
            total * inv_batch,
            ClassifierGradient {
                head,
                bias,
                embeddings: emb.into_iter().collect(),
            },
        ))
    }

    /// Fraction of samples whose predicted label equals the true label.
    pub fn accuracy(&self, d: &Dataset) -> Result<f64> {
        accuracy(self, d)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        serde_json::to_writer(BufWriter::new(file), self)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let model: Self = serde_json::from_reader(BufReader::new(file))?;
        model.check()?;
        Ok(model)
    }

    fn check(&self) -> Result<()> {
        let n = self.n_classes();
        let consistent = self.dim > 0
            && self.rows.len() == self.buckets.len() * self.dim
            && self.head.len() == n * self.dim
            && self.bias.len() == n;
        if !consistent {
            return Err(Error::Serialization("inconsistent classifier shapes".into()));
        }
        let finite = self
            .rows
            .iter()
            .chain(&self.head)
            .chain(&self.bias)
            .all(|x| x.is_finite());
        if !finite {
            return Err(Error::Serialization("non-finite classifier weight".into()));
        }
        Ok(())
    }
}

/// Trains a label classifier on `d`.
pub fn train(d: &Dataset, params: &TrainParams, seed: u64) -> Result<TrainedClassifier> {
    train_for(d, Target::Label, params, seed).map(|(m, _)| m)
}

/// Trains a classifier predicting `target` from the sample text.
///
/// Samples without any feature are skipped and counted in the summary.
pub fn train_for(
    d: &Dataset,
    target: Target,
    params: &TrainParams,
    seed: u64,
) -> Result<(TrainedClassifier, TrainSummary)> {
    if d.is_empty() {
        return Err(Error::EmptyDataset("training set"));
    }
    if params.dim == 0 {
        return Err(Error::InvalidArgument("embedding dim must be positive".into()));
    }
    if !(params.lr.is_finite() && params.lr >= 0.0) {
        return Err(Error::InvalidArgument(format!("invalid learning rate {}", params.lr)));
    }
    params.featurizer.validate()?;
    let class_names = match target {
        Target::Label => d.label_space().to_vec(),
        Target::Nuisance => d.nuisance_space().to_vec(),
    };
    let features: Vec<Vec<u32>> = d
        .samples()
        .iter()
        .map(|s| featurize(&s.text, &params.featurizer))
        .collect();
    let all_buckets = features.iter().flatten().copied().collect();
    let mut model = TrainedClassifier::untrained(params, class_names, all_buckets, seed);

    let examples: Vec<(Vec<usize>, usize)> = features
        .iter()
        .zip(d.samples())
        .filter(|(f, _)| !f.is_empty())
        .map(|(f, s)| (model.positions(f).expect("bucket materialized"), target.of(s)))
        .collect();
    let skipped = d.len() - examples.len();
    if skipped > 0 {
        log::warn!("skipped {skipped} samples without any feature");
    }

    let mut rng = seed::rng(seed);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let total = (params.epochs * examples.len()) as f64;
    let mut scratch = Scratch::new(model.dim, model.n_classes());
    let mut t = 0usize;
    for _ in 0..params.epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            let lr = params.lr * (1.0 - t as f64 / total);
            let (positions, y) = &examples[i];
            model.sgd_step(positions, *y, lr, &mut scratch);
            t += 1;
        }
    }
    Ok((
        model,
        TrainSummary {
            skipped_samples: skipped,
            updates: t,
        },
    ))
}

/// Fraction of samples of `d` classified correctly.
pub fn accuracy(m: &TrainedClassifier, d: &Dataset) -> Result<f64> {
    if d.is_empty() {
        return Err(Error::EmptyDataset("accuracy"));
    }
    let correct = d
        .samples()
        .iter()
        .filter(|s| m.predict_label(&s.text) == s.label)
        .count();
    Ok(correct as f64 / d.len() as f64)
}
