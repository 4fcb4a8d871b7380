//! Identifiability probe: a three-layer perceptron on frozen representations.
//!
//! Layers are `input → hidden1 (ReLU) → hidden2 (ReLU) → softmax`, He-uniform
//! initialized and trained with minibatch Adam on the mean categorical
//! cross-entropy. All parameters live in one flat vector so the optimizer and
//! gradient checks address them uniformly.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;
use crate::textmodel::Representation;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub step_size: f64,
    pub decay1: f64,
    pub decay2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            step_size: 1e-3,
            decay1: 0.9,
            decay2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeConfig {
    pub hidden1: usize,
    pub hidden2: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            hidden1: 100,
            hidden2: 200,
            epochs: 10,
            batch_size: 128,
            adam: AdamConfig::default(),
            seed: 0,
        }
    }
}

impl ProbeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden1 == 0 || self.hidden2 == 0 || self.batch_size == 0 {
            return Err(Error::InvalidArgument(
                "probe layer sizes and batch size must be positive".into(),
            ));
        }
        let a = &self.adam;
        if !(a.step_size > 0.0 && a.epsilon > 0.0 && (0.0..1.0).contains(&a.decay1) && (0.0..1.0).contains(&a.decay2)) {
            return Err(Error::InvalidArgument("invalid Adam hyperparameters".into()));
        }
        Ok(())
    }
}

/// Offsets of one dense layer inside the flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct Layer {
    inputs: usize,
    outputs: usize,
    weights: usize,
    bias: usize,
}

impl Layer {
    fn end(&self) -> usize {
        self.bias + self.outputs
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedProbe {
    layers: [Layer; 3],
    params: Vec<f64>,
    target_space: Vec<String>,
}

/// Per-batch activations, reused across steps.
struct Activations {
    z1: Vec<f64>,
    a1: Vec<f64>,
    z2: Vec<f64>,
    a2: Vec<f64>,
    out: Vec<f64>,
    d1: Vec<f64>,
    d2: Vec<f64>,
}

impl Activations {
    fn new(layers: &[Layer; 3], batch: usize) -> Self {
        let h1 = layers[0].outputs;
        let h2 = layers[1].outputs;
        let k = layers[2].outputs;
        Self {
            z1: vec![0.0; batch * h1],
            a1: vec![0.0; batch * h1],
            z2: vec![0.0; batch * h2],
            a2: vec![0.0; batch * h2],
            out: vec![0.0; batch * k],
            d1: vec![0.0; batch * h1],
            d2: vec![0.0; batch * h2],
        }
    }
}

/// `out[b, o] = bias[o] + Σ_i x[b, i] w[o, i]` for `rows` batch rows.
fn dense_forward(params: &[f64], l: &Layer, x: &[f64], rows: usize, out: &mut [f64]) {
    let w = &params[l.weights..l.bias];
    let bias = &params[l.bias..l.end()];
    for b in 0..rows {
        let xr = &x[b * l.inputs..(b + 1) * l.inputs];
        let or = &mut out[b * l.outputs..(b + 1) * l.outputs];
        for (o, y) in or.iter_mut().enumerate() {
            let wr = &w[o * l.inputs..(o + 1) * l.inputs];
            *y = bias[o] + wr.iter().zip(xr).map(|(a, c)| a * c).sum::<f64>();
        }
    }
}

/// Accumulates `dW += dzᵀ x`, `db += Σ dz` and optionally `dx = dz W`.
fn dense_backward(
    params: &[f64],
    l: &Layer,
    x: &[f64],
    dz: &[f64],
    rows: usize,
    grad: &mut [f64],
    dx: Option<&mut [f64]>,
) {
    {
        let (gw, gb) = grad[l.weights..l.end()].split_at_mut(l.bias - l.weights);
        for b in 0..rows {
            let xr = &x[b * l.inputs..(b + 1) * l.inputs];
            let dr = &dz[b * l.outputs..(b + 1) * l.outputs];
            for (o, &g) in dr.iter().enumerate() {
                if g == 0.0 {
                    continue;
                }
                gb[o] += g;
                for (gwi, xi) in gw[o * l.inputs..(o + 1) * l.inputs].iter_mut().zip(xr) {
                    *gwi += g * xi;
                }
            }
        }
    }
    if let Some(dx) = dx {
        let w = &params[l.weights..l.bias];
        dx[..rows * l.inputs].fill(0.0);
        for b in 0..rows {
            let dr = &dz[b * l.outputs..(b + 1) * l.outputs];
            let xr = &mut dx[b * l.inputs..(b + 1) * l.inputs];
            for (o, &g) in dr.iter().enumerate() {
                if g == 0.0 {
                    continue;
                }
                for (xi, wi) in xr.iter_mut().zip(&w[o * l.inputs..(o + 1) * l.inputs]) {
                    *xi += g * wi;
                }
            }
        }
    }
}

fn relu(z: &[f64], a: &mut [f64]) {
    for (ai, &zi) in a.iter_mut().zip(z) {
        *ai = zi.max(0.0);
    }
}

fn softmax_rows(v: &mut [f64], k: usize) {
    for row in v.chunks_exact_mut(k) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for x in row.iter_mut() {
            *x = (*x - max).exp();
            sum += *x;
        }
        row.iter_mut().for_each(|x| *x /= sum);
    }
}

impl TrainedProbe {
    /// Freshly He-uniform initialized probe with zero biases.
    pub fn untrained(input_dim: usize, target_space: Vec<String>, cfg: &ProbeConfig) -> Result<Self> {
        cfg.validate()?;
        if input_dim == 0 || target_space.is_empty() {
            return Err(Error::InvalidArgument(
                "probe needs a positive input dimension and at least one target".into(),
            ));
        }
        let dims = [input_dim, cfg.hidden1, cfg.hidden2, target_space.len()];
        let mut offset = 0;
        let mut layer = |inputs: usize, outputs: usize| {
            let l = Layer {
                inputs,
                outputs,
                weights: offset,
                bias: offset + inputs * outputs,
            };
            offset = l.end();
            l
        };
        let layers = [layer(dims[0], dims[1]), layer(dims[1], dims[2]), layer(dims[2], dims[3])];
        let mut params = vec![0.0; offset];
        let mut rng = seed::rng(seed::derive_seed(cfg.seed, seed::stream::PROBE, 0));
        for l in &layers {
            let limit = (6.0 / l.inputs as f64).sqrt();
            for w in &mut params[l.weights..l.bias] {
                *w = rng.random_range(-limit..=limit);
            }
        }
        Ok(Self {
            layers,
            params,
            target_space,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn target_space(&self) -> &[String] {
        &self.target_space
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Index ranges of each layer's `(weights, bias)` inside [`Self::params`].
    pub fn layer_ranges(&self) -> [(std::ops::Range<usize>, std::ops::Range<usize>); 3] {
        self.layers
            .map(|l| (l.weights..l.bias, l.bias..l.end()))
    }

    fn forward(&self, x: &[f64], rows: usize, act: &mut Activations) {
        let [l1, l2, l3] = &self.layers;
        dense_forward(&self.params, l1, x, rows, &mut act.z1);
        relu(&act.z1[..rows * l1.outputs], &mut act.a1);
        dense_forward(&self.params, l2, &act.a1, rows, &mut act.z2);
        relu(&act.z2[..rows * l2.outputs], &mut act.a2);
        dense_forward(&self.params, l3, &act.a2, rows, &mut act.out);
        softmax_rows(&mut act.out[..rows * l3.outputs], l3.outputs);
    }

    /// Mean cross-entropy of the batch; writes its gradient into `grad`.
    fn batch_gradient(
        &self,
        x: &[f64],
        targets: &[usize],
        act: &mut Activations,
        grad: &mut [f64],
    ) -> f64 {
        let rows = targets.len();
        let [l1, l2, l3] = &self.layers;
        let k = l3.outputs;
        self.forward(x, rows, act);
        let inv = 1.0 / rows as f64;
        let mut loss = 0.0;
        for (b, &t) in targets.iter().enumerate() {
            let row = &mut act.out[b * k..(b + 1) * k];
            loss -= row[t].ln();
            row[t] -= 1.0;
            row.iter_mut().for_each(|g| *g *= inv);
        }
        grad.fill(0.0);
        dense_backward(&self.params, l3, &act.a2, &act.out, rows, grad, Some(&mut act.d2));
        for (d, &z) in act.d2[..rows * l2.outputs].iter_mut().zip(&act.z2) {
            if z <= 0.0 {
                *d = 0.0;
            }
        }
        dense_backward(&self.params, l2, &act.a1, &act.d2, rows, grad, Some(&mut act.d1));
        for (d, &z) in act.d1[..rows * l1.outputs].iter_mut().zip(&act.z1) {
            if z <= 0.0 {
                *d = 0.0;
            }
        }
        dense_backward(&self.params, l1, x, &act.d1, rows, grad, None);
        loss * inv
    }

    /// Mean cross-entropy over the given examples and its gradient with
    /// respect to [`Self::params`].
    pub fn loss_and_gradient(&self, reps: &[Representation], targets: &[usize]) -> Result<(f64, Vec<f64>)> {
        check_inputs(reps, targets, self.input_dim(), self.target_space.len())?;
        let x = flatten(reps);
        let mut act = Activations::new(&self.layers, targets.len());
        let mut grad = vec![0.0; self.params.len()];
        let loss = self.batch_gradient(&x, targets, &mut act, &mut grad);
        Ok((loss, grad))
    }

    /// Class probabilities for one representation.
    pub fn predict_proba(&self, rep: &Representation) -> Vec<f64> {
        let mut act = Activations::new(&self.layers, 1);
        self.forward(rep.as_slice(), 1, &mut act);
        act.out
    }

    /// Argmax class, lowest index on ties.
    pub fn predict(&self, rep: &Representation) -> usize {
        let p = self.predict_proba(rep);
        let mut best = 0;
        for i in 1..p.len() {
            if p[i] > p[best] {
                best = i;
            }
        }
        best
    }
}

fn flatten(reps: &[Representation]) -> Vec<f64> {
    reps.iter().flat_map(|r| r.as_slice().iter().copied()).collect()
}

fn check_inputs(reps: &[Representation], targets: &[usize], dim: usize, n_targets: usize) -> Result<()> {
    if reps.is_empty() {
        return Err(Error::EmptyDataset("probe inputs"));
    }
    if reps.len() != targets.len() {
        return Err(Error::DimensionMismatch {
            expected: reps.len(),
            found: targets.len(),
        });
    }
    if let Some(r) = reps.iter().find(|r| r.dim() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            found: r.dim(),
        });
    }
    if let Some(&t) = targets.iter().find(|&&t| t >= n_targets) {
        return Err(Error::InvalidArgument(format!(
            "target {t} outside target space of size {n_targets}"
        )));
    }
    Ok(())
}

/// Trains a probe mapping representations to target classes.
pub fn train_probe(
    reps: &[Representation],
    targets: &[usize],
    target_space: Vec<String>,
    cfg: &ProbeConfig,
) -> Result<TrainedProbe> {
    let dim = reps.first().map_or(0, Representation::dim);
    if reps.is_empty() {
        return Err(Error::EmptyDataset("probe training set"));
    }
    check_inputs(reps, targets, dim, target_space.len())?;
    let mut probe = TrainedProbe::untrained(dim, target_space, cfg)?;

    let n_params = probe.params.len();
    let mut grad = vec![0.0; n_params];
    let mut m = vec![0.0; n_params];
    let mut v = vec![0.0; n_params];
    let batch = cfg.batch_size.min(reps.len());
    let mut act = Activations::new(&probe.layers, batch);
    let mut xb = vec![0.0; batch * dim];
    let mut tb = Vec::with_capacity(batch);
    let mut order: Vec<usize> = (0..reps.len()).collect();
    let mut rng = seed::rng(seed::derive_seed(cfg.seed, seed::stream::PROBE, 1));
    let AdamConfig {
        step_size,
        decay1,
        decay2,
        epsilon,
    } = cfg.adam;
    let mut step = 0i32;

    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(batch) {
            tb.clear();
            for (slot, &i) in chunk.iter().enumerate() {
                xb[slot * dim..(slot + 1) * dim].copy_from_slice(reps[i].as_slice());
                tb.push(targets[i]);
            }
            probe.batch_gradient(&xb[..chunk.len() * dim], &tb, &mut act, &mut grad);
            step += 1;
            let c1 = 1.0 - decay1.powi(step);
            let c2 = 1.0 - decay2.powi(step);
            for i in 0..n_params {
                let g = grad[i];
                m[i] = decay1 * m[i] + (1.0 - decay1) * g;
                v[i] = decay2 * v[i] + (1.0 - decay2) * g * g;
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                probe.params[i] -= step_size * m_hat / (v_hat.sqrt() + epsilon);
            }
        }
    }
    Ok(probe)
}

/// Fraction of representations whose predicted class equals the target.
pub fn probe_accuracy(p: &TrainedProbe, reps: &[Representation], targets: &[usize]) -> Result<f64> {
    check_inputs(reps, targets, p.input_dim(), p.target_space.len())?;
    let correct = reps
        .iter()
        .zip(targets)
        .filter(|(r, &t)| p.predict(r) == t)
        .count();
    Ok(correct as f64 / reps.len() as f64)
}

/// Held-out probe evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeldOutAccuracy {
    pub accuracy: f64,
    /// Share of the most frequent class in the held-out part.
    pub majority_baseline: f64,
    pub n_train: usize,
    pub n_test: usize,
}

/// Trains on a target-stratified `1 - test_fraction` share and reports
/// accuracy on the rest.
pub fn held_out_accuracy(
    reps: &[Representation],
    targets: &[usize],
    target_space: Vec<String>,
    cfg: &ProbeConfig,
    test_fraction: f64,
) -> Result<HeldOutAccuracy> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "test fraction must be in (0, 1), got {test_fraction}"
        )));
    }
    let n_targets = target_space.len();
    let dim = reps.first().map_or(0, Representation::dim);
    check_inputs(reps, targets, dim, n_targets)?;
    let mut by_class = vec![Vec::new(); n_targets];
    for (i, &t) in targets.iter().enumerate() {
        by_class[t].push(i);
    }
    let mut rng = seed::rng(seed::derive_seed(cfg.seed, seed::stream::HOLDOUT, 0));
    let (mut train_idx, mut test_idx) = (Vec::new(), Vec::new());
    for class in &mut by_class {
        class.shuffle(&mut rng);
        let n_test = (test_fraction * class.len() as f64).floor() as usize;
        test_idx.extend_from_slice(&class[..n_test]);
        train_idx.extend_from_slice(&class[n_test..]);
    }
    if train_idx.is_empty() || test_idx.is_empty() {
        return Err(Error::EmptyDataset("probe train/test partition"));
    }
    train_idx.sort_unstable();
    test_idx.sort_unstable();
    let pick = |idx: &[usize]| -> (Vec<Representation>, Vec<usize>) {
        idx.iter().map(|&i| (reps[i].clone(), targets[i])).unzip()
    };
    let (tr_x, tr_y) = pick(&train_idx);
    let (te_x, te_y) = pick(&test_idx);
    let probe = train_probe(&tr_x, &tr_y, target_space, cfg)?;
    let accuracy = probe_accuracy(&probe, &te_x, &te_y)?;
    let mut freq = vec![0usize; n_targets];
    te_y.iter().for_each(|&t| freq[t] += 1);
    let majority = *freq.iter().max().unwrap_or(&0);
    Ok(HeldOutAccuracy {
        accuracy,
        majority_baseline: majority as f64 / te_y.len() as f64,
        n_train: tr_y.len(),
        n_test: te_y.len(),
    })
}
