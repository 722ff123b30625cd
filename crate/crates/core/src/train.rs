//! Optimization recipe: cross-entropy, Adam, cosine annealing with
//! restarts, and per-batch augmentation.

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::augment::{augment_batch, AugmentSpec};
use crate::dataio::TrialSet;
use crate::error::{Error, Result};
use crate::model::{DualTsst, Mode};
use crate::rng::{stream, Stream};
use crate::tensor::{Graph, Tensor};

pub const ADAM_EPS: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr_max: f64,
    pub lr_min: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epochs: usize,
    pub batch: usize,
    /// Epochs per cosine cycle.
    pub t_max: usize,
    /// Segments for augmentation; 0 disables it.
    pub augment_r: usize,
    pub seed: u64,
    /// Apply weight decay directly to the weights instead of the gradient.
    pub decoupled_weight_decay: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr_max: 1e-4,
            lr_min: 0.0,
            weight_decay: 0.0012,
            beta1: 0.5,
            beta2: 0.999,
            epochs: 1000,
            batch: 32,
            t_max: 32,
            augment_r: 0,
            seed: 0,
            decoupled_weight_decay: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(0.0 <= self.lr_min && self.lr_min < self.lr_max && self.lr_max.is_finite()) {
            return bad(format!("need 0 <= lr_min < lr_max, got {} and {}", self.lr_min, self.lr_max));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(b > 0.0 && b < 1.0) {
                return bad(format!("{name} = {b} must lie in (0, 1)"));
            }
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!("weight_decay {} must be non-negative", self.weight_decay));
        }
        if self.t_max == 0 || self.batch == 0 {
            return bad("t_max and batch must be positive".into());
        }
        Ok(())
    }
}

/// Mean negative log-likelihood of `labels` under row-wise softmax of
/// `logits[N, C]`.
pub fn cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<f64> {
    let mut g = Graph::new();
    let l = g.constant(logits.clone());
    let loss = g.cross_entropy(l, labels)?;
    Ok(g.value(loss).data()[0])
}

/// Learning rate at position `t_cur` of a cycle.
pub fn cosine_lr(t_cur: usize, cfg: &TrainConfig) -> f64 {
    let frac = t_cur as f64 / cfg.t_max as f64;
    cfg.lr_min + 0.5 * (cfg.lr_max - cfg.lr_min) * (1.0 + (PI * frac).cos())
}

/// Learning rate for a zero-based epoch, restarting every `t_max` epochs.
pub fn epoch_lr(epoch: usize, cfg: &TrainConfig) -> f64 {
    cosine_lr(epoch % cfg.t_max, cfg)
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub step: u64,
}

impl AdamState {
    pub fn new(params: &[Tensor]) -> Self {
        Self {
            m: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            step: 0,
        }
    }
}

/// One Adam update. Gradients containing NaN or infinity abort the step
/// before any state changes.
pub fn adam_step(
    params: &mut [Tensor],
    grads: &[&[f64]],
    state: &mut AdamState,
    lr: f64,
    cfg: &TrainConfig,
) -> Result<()> {
    if grads.len() != params.len() || state.m.len() != params.len() {
        return Err(Error::InvalidArgument(format!(
            "{} gradients and {} moment slots for {} parameters",
            grads.len(),
            state.m.len(),
            params.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.len() != g.len() || state.m[i].len() != g.len() {
            return Err(Error::shape(
                "adam_step",
                format!("parameter {i} has {} values, gradient {}", p.len(), g.len()),
            ));
        }
        if let Some(j) = g.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("gradient of parameter {i} at index {j} is {}", g[j])));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (cfg.beta1, cfg.beta2);
    let (c1, c2) = (1.0 - b1.powi(t), 1.0 - b2.powi(t));
    let wd = cfg.weight_decay;
    for (i, p) in params.iter_mut().enumerate() {
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for (j, theta) in p.data_mut().iter_mut().enumerate() {
            let mut g = grads[i][j];
            if !cfg.decoupled_weight_decay {
                g += wd * *theta;
            }
            m[j] = b1 * m[j] + (1.0 - b1) * g;
            v[j] = b2 * v[j] + (1.0 - b2) * g * g;
            if lr == 0.0 {
                continue;
            }
            if cfg.decoupled_weight_decay {
                *theta -= lr * wd * *theta;
            }
            *theta -= lr * (m[j] / c1) / ((v[j] / c2).sqrt() + ADAM_EPS);
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
    pub train_acc: f64,
    pub test_acc: Option<f64>,
}

/// Optimizer and bookkeeping carried across epochs.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub adam: AdamState,
    pub epoch: usize,
    pub losses: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub log: Vec<EpochLog>,
    /// Best test-accuracy model, or the final one without a test split.
    pub best: DualTsst,
    pub best_epoch: usize,
    pub state: TrainState,
}

/// Predictions over a trial set, evaluated in batches.
#[derive(Clone, Debug)]
pub struct Predictions {
    /// `[N, n_classes]`.
    pub logits: Tensor,
    /// `[N, d2]`.
    pub features: Tensor,
}

impl Predictions {
    pub fn classes(&self) -> Vec<usize> {
        let c = self.logits.shape()[1];
        self.logits.data().chunks(c).map(argmax).collect()
    }
}

pub fn argmax(row: &[f64]) -> usize {
    row.iter().enumerate().fold(0, |best, (i, &v)| if v > row[best] { i } else { best })
}

/// Checks that the trial set matches the model's expected input geometry.
pub fn check_geometry(model: &DualTsst, set: &TrialSet) -> Result<()> {
    let cfg = model.config();
    let Some((ch, t, f)) = set.geometry() else {
        return Err(Error::Dataset("empty trial set".into()));
    };
    if (ch, t, f) != (cfg.channels, cfg.samples, cfg.freqs) {
        return Err(Error::Dataset(format!(
            "data geometry [ch={ch}, T={t}, F={f}] does not match model [ch={}, T={}, F={}]",
            cfg.channels, cfg.samples, cfg.freqs
        )));
    }
    if let Some(&bad) = set.labels().iter().find(|&&y| y >= cfg.n_classes) {
        return Err(Error::Dataset(format!("label {bad} out of range for {} classes", cfg.n_classes)));
    }
    Ok(())
}

pub fn predict_set(model: &DualTsst, set: &TrialSet, batch: usize) -> Result<Predictions> {
    check_geometry(model, set)?;
    let mut logits = Vec::new();
    let mut features = Vec::new();
    let idx: Vec<usize> = (0..set.len()).collect();
    for chunk in idx.chunks(batch.max(1)) {
        let (eeg, tfr, _) = set.batch(chunk)?;
        let (l, f) = model.predict(&eeg, &tfr)?;
        logits.extend_from_slice(l.data());
        features.extend_from_slice(f.data());
    }
    let n = set.len();
    Ok(Predictions {
        logits: Tensor::new(vec![n, model.config().n_classes], logits)?,
        features: Tensor::new(vec![n, model.config().d2], features)?,
    })
}

pub fn accuracy_of(model: &DualTsst, set: &TrialSet, batch: usize) -> Result<f64> {
    let pred = predict_set(model, set, batch)?.classes();
    let hits = pred.iter().zip(set.labels()).filter(|(p, y)| **p == *y).count();
    Ok(hits as f64 / set.len() as f64)
}

/// Trains `model` in place. Each epoch shuffles the training set, appends
/// a class-balanced augmented copy to every batch when `augment_r > 0`,
/// and steps Adam at the epoch's cosine learning rate. `on_epoch` sees
/// each log row as it is produced.
pub fn train_loop(
    model: &mut DualTsst,
    train: &TrialSet,
    test: Option<&TrialSet>,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Dataset("training split is empty".into()));
    }
    check_geometry(model, train)?;
    if let Some(t) = test.filter(|t| !t.is_empty()) {
        check_geometry(model, t)?;
    }
    let test = test.filter(|t| !t.is_empty());
    let mut shuffle_rng = stream(cfg.seed, Stream::Shuffle);
    let mut augment_rng = stream(cfg.seed, Stream::Augment);
    let mut dropout_rng = stream(cfg.seed, Stream::Dropout);
    let mut state = TrainState { adam: AdamState::new(model.params().tensors()), epoch: 0, losses: Vec::new() };
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, DualTsst)> = None;
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 0..cfg.epochs {
        let lr = epoch_lr(epoch, cfg);
        order.shuffle(&mut shuffle_rng);
        let (mut loss_sum, mut hits, mut seen) = (0.0, 0usize, 0usize);
        for (b, chunk) in order.chunks(cfg.batch).enumerate() {
            let mut batch = train.subset(chunk);
            if cfg.augment_r > 0 {
                let spec = AugmentSpec { r: cfg.augment_r, count: chunk.len() };
                batch.extend(augment_batch(train, &batch.labels(), spec, &mut augment_rng)?);
            }
            let idx: Vec<usize> = (0..batch.len()).collect();
            let (eeg, tfr, labels) = batch.batch(&idx)?;
            let mut g = Graph::new();
            let vars = model.bind(&mut g, true);
            let (e, t) = (g.constant(eeg), g.constant(tfr));
            let out = model.forward(&mut g, &vars, e, t, Mode::Train, Some(&mut dropout_rng))?;
            let loss = g.cross_entropy(out.logits, &labels)?;
            let value = g.value(loss).data()[0];
            if !value.is_finite() {
                return Err(Error::NonFinite(format!("loss {value} at epoch {epoch}, batch {b}")));
            }
            g.backward(loss)?;
            let c = model.config().n_classes;
            let real = chunk.len();
            for (row, &y) in g.value(out.logits).data().chunks(c).take(real).zip(&labels) {
                hits += usize::from(argmax(row) == y);
            }
            seen += real;
            loss_sum += value * batch.len() as f64;
            let grads: Vec<&[f64]> = vars
                .iter()
                .map(|&v| g.grad(v).ok_or_else(|| Error::InvalidArgument("parameter without gradient".into())))
                .collect::<Result<_>>()?;
            adam_step(model.params_mut().tensors_mut(), &grads, &mut state.adam, lr, cfg).map_err(|e| match e {
                Error::NonFinite(m) => Error::NonFinite(format!("{m} (epoch {epoch}, batch {b})")),
                other => other,
            })?;
            model.update_running_stats(&out.bn_stats)?;
        }
        let aug = if cfg.augment_r > 0 { 2 } else { 1 };
        let loss = loss_sum / (aug * train.len()) as f64;
        state.losses.push(loss);
        state.epoch = epoch + 1;
        let test_acc = test.map(|t| accuracy_of(model, t, cfg.batch)).transpose()?;
        let row = EpochLog { epoch, lr, loss, train_acc: hits as f64 / seen as f64, test_acc };
        on_epoch(&row);
        if let Some(acc) = test_acc {
            if best.as_ref().is_none_or(|(b, _, _)| acc > *b) {
                best = Some((acc, epoch, model.clone()));
            }
        }
        log.push(row);
    }
    let (best_epoch, best) = match best {
        Some((_, e, m)) => (e, m),
        None => (cfg.epochs.saturating_sub(1), model.clone()),
    };
    Ok(TrainOutcome { log, best, best_epoch, state })
}
