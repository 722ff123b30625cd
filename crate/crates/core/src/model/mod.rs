//! The dual-branch network: a temporal/spatial convolution branch on raw
//! EEG, a two-view convolution branch on the wavelet power, a transformer
//! encoder over the concatenated feature sequences, and an MLP head.

mod checkpoint;
mod config;

pub use checkpoint::{read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::{AttentionScale, ModelConfig};

use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::error::{Error, Result};
use crate::tensor::{BatchNormMode, BatchStats, Graph, Tensor, Var};

pub const BN_MOMENTUM: f64 = 0.1;
pub const POS_INIT_STD: f64 = 0.02;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Ordered registry of named trainable tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamStore {
    fn add(&mut self, name: String, t: Tensor) -> usize {
        self.names.push(name);
        self.tensors.push(t);
        self.tensors.len() - 1
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.names.iter().position(|n| n == name).map(move |i| &mut self.tensors[i])
    }

    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }
}

/// Running statistics of one batch-norm layer.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats {
    pub name: String,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

#[derive(Clone, Copy, Debug)]
struct Bn {
    gamma: usize,
    beta: usize,
    stats: usize,
}

/// TC -> BN -> depthwise collapse -> BN -> ELU -> AvgPool -> pointwise.
#[derive(Clone, Copy, Debug)]
struct ConvBranch {
    time_kernel: usize,
    bn1: Bn,
    collapse: usize,
    bn2: Bn,
    pw_weight: usize,
    pw_bias: usize,
    pool: (usize, usize),
}

#[derive(Clone, Copy, Debug)]
struct EncoderLayer {
    wq: usize,
    bq: usize,
    wk: usize,
    bk: usize,
    wv: usize,
    bv: usize,
    wo: usize,
    bo: usize,
    ln1: (usize, usize),
    mlp1: (usize, usize),
    mlp2: (usize, usize),
    ln2: (usize, usize),
}

#[derive(Clone, Copy, Debug)]
struct Head {
    hidden: (usize, usize),
    out: (usize, usize),
}

/// Network parameters, running statistics, and architecture.
#[derive(Clone, Debug)]
pub struct DualTsst {
    cfg: ModelConfig,
    params: ParamStore,
    running: Vec<RunningStats>,
    branch1: Option<ConvBranch>,
    branch2_in1: Option<ConvBranch>,
    branch2_in2: Option<ConvBranch>,
    pos: Option<usize>,
    layers: Vec<EncoderLayer>,
    head: Head,
}

/// Values recorded by one forward pass.
#[derive(Debug)]
pub struct ForwardOutput {
    /// `[N, n_classes]`.
    pub logits: Var,
    /// Pooled features entering the classifier, `[N, d2]`.
    pub features: Var,
    /// Per-branch sequences `[N, L_i, d2]` in fusion order.
    pub branches: Vec<Var>,
    /// `[N, L, d2]`.
    pub fused: Var,
    /// Attention weights `[N * heads, L, L]` per encoder layer.
    pub attention: Vec<Var>,
    /// Batch statistics of every batch-norm layer (training mode only).
    pub bn_stats: Vec<BatchStats>,
}

struct Builder<'a, R: Rng> {
    params: ParamStore,
    running: Vec<RunningStats>,
    rng: &'a mut R,
}

impl<R: Rng> Builder<'_, R> {
    fn uniform(&mut self, name: String, shape: &[usize], fan_in: usize) -> usize {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| dist.sample(self.rng)).collect();
        self.params.add(name, Tensor::new(shape.to_vec(), data).expect("consistent shape"))
    }

    fn constant(&mut self, name: String, shape: &[usize], value: f64) -> usize {
        self.params.add(name, Tensor::full(shape, value))
    }

    fn linear(&mut self, prefix: &str, din: usize, dout: usize) -> (usize, usize) {
        let w = self.uniform(format!("{prefix}.weight"), &[din, dout], din);
        let b = self.constant(format!("{prefix}.bias"), &[dout], 0.0);
        (w, b)
    }

    fn bn(&mut self, prefix: &str, c: usize) -> Bn {
        let gamma = self.constant(format!("{prefix}.weight"), &[c], 1.0);
        let beta = self.constant(format!("{prefix}.bias"), &[c], 0.0);
        self.running.push(RunningStats { name: prefix.to_string(), mean: vec![0.0; c], var: vec![1.0; c] });
        Bn { gamma, beta, stats: self.running.len() - 1 }
    }

    /// `in_planes` feeds the time convolution; `collapse_extent` is the
    /// height removed by the depthwise convolution.
    fn branch(
        &mut self,
        prefix: &str,
        cfg: &ModelConfig,
        in_planes: usize,
        collapse_extent: usize,
        kernel: usize,
        pool: (usize, usize),
    ) -> ConvBranch {
        let d1 = cfg.d1;
        let time_kernel = self.uniform(format!("{prefix}.time_conv"), &[d1, in_planes, 1, kernel], in_planes * kernel);
        let bn1 = self.bn(&format!("{prefix}.bn1"), d1);
        let collapse = self.uniform(format!("{prefix}.depthwise_conv"), &[d1, 1, collapse_extent, 1], collapse_extent);
        let bn2 = self.bn(&format!("{prefix}.bn2"), d1);
        let pw_weight = self.uniform(format!("{prefix}.pointwise_conv.weight"), &[cfg.d2, d1, 1, 1], d1);
        let pw_bias = self.constant(format!("{prefix}.pointwise_conv.bias"), &[cfg.d2], 0.0);
        ConvBranch { time_kernel, bn1, collapse, bn2, pw_weight, pw_bias, pool }
    }
}

impl DualTsst {
    /// Builds a freshly initialized network. Convolution and linear weights
    /// are `U(+-1/sqrt(fan_in))`, biases zero, normalization scales one, and
    /// the positional encoding `N(0, 0.02^2)`.
    pub fn new<R: Rng>(cfg: ModelConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let mut b = Builder { params: ParamStore::default(), running: Vec::new(), rng };
        let branch1 =
            cfg.use_branch1.then(|| b.branch("branch1", &cfg, 1, cfg.channels, cfg.tc1, (cfg.pool1, cfg.pool1_stride)));
        let pool2 = (cfg.pool2, cfg.pool2_stride);
        let branch2_in1 =
            cfg.use_branch2_in1.then(|| b.branch("branch2_in1", &cfg, cfg.channels, cfg.freqs, cfg.tc2, pool2));
        let branch2_in2 =
            cfg.use_branch2_in2.then(|| b.branch("branch2_in2", &cfg, cfg.freqs, cfg.channels, cfg.tc2, pool2));
        let seq_len = cfg.seq_len().expect("validated geometry");
        let d2 = cfg.d2;
        let mut layers = Vec::new();
        let mut pos = None;
        if cfg.use_transformer {
            let normal = Normal::new(0.0, POS_INIT_STD).expect("valid std");
            let data = (0..seq_len * d2).map(|_| normal.sample(b.rng)).collect();
            pos = Some(b.params.add("encoder.pos".into(), Tensor::new(vec![seq_len, d2], data)?));
            for l in 0..cfg.encoder_layers {
                let p = format!("encoder.layer{l}");
                let (wq, bq) = b.linear(&format!("{p}.attn.q"), d2, d2);
                let (wk, bk) = b.linear(&format!("{p}.attn.k"), d2, d2);
                let (wv, bv) = b.linear(&format!("{p}.attn.v"), d2, d2);
                let (wo, bo) = b.linear(&format!("{p}.attn.out"), d2, d2);
                let ln1 = (
                    b.constant(format!("{p}.ln1.weight"), &[d2], 1.0),
                    b.constant(format!("{p}.ln1.bias"), &[d2], 0.0),
                );
                let hidden = d2 * cfg.encoder_mlp_ratio;
                let mlp1 = b.linear(&format!("{p}.mlp.fc1"), d2, hidden);
                let mlp2 = b.linear(&format!("{p}.mlp.fc2"), hidden, d2);
                let ln2 = (
                    b.constant(format!("{p}.ln2.weight"), &[d2], 1.0),
                    b.constant(format!("{p}.ln2.bias"), &[d2], 0.0),
                );
                layers.push(EncoderLayer { wq, bq, wk, bk, wv, bv, wo, bo, ln1, mlp1, mlp2, ln2 });
            }
        }
        let head = Head {
            hidden: b.linear("head.fc1", d2, cfg.mlp_hidden),
            out: b.linear("head.fc2", cfg.mlp_hidden, cfg.n_classes),
        };
        let Builder { params, running, .. } = b;
        Ok(Self { cfg, params, running, branch1, branch2_in1, branch2_in2, pos, layers, head })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn running_stats(&self) -> &[RunningStats] {
        &self.running
    }

    pub fn running_stats_mut(&mut self) -> &mut [RunningStats] {
        &mut self.running
    }

    pub fn param_count(&self) -> usize {
        self.params.scalar_count()
    }

    /// Records every parameter on `g` as a leaf, in registry order.
    pub fn bind(&self, g: &mut Graph, requires_grad: bool) -> Vec<Var> {
        self.params.tensors.iter().map(|t| g.leaf(t.clone(), requires_grad)).collect()
    }

    /// Folds observed batch statistics into the running averages.
    pub fn update_running_stats(&mut self, stats: &[BatchStats]) -> Result<()> {
        if stats.len() != self.running.len() {
            return Err(Error::InvalidArgument(format!(
                "{} batch statistics for {} batch-norm layers",
                stats.len(),
                self.running.len()
            )));
        }
        for (r, s) in self.running.iter_mut().zip(stats) {
            for (m, b) in r.mean.iter_mut().zip(&s.mean) {
                *m = (1.0 - BN_MOMENTUM) * *m + BN_MOMENTUM * b;
            }
            for (v, b) in r.var.iter_mut().zip(&s.var) {
                *v = (1.0 - BN_MOMENTUM) * *v + BN_MOMENTUM * b;
            }
        }
        Ok(())
    }

    fn bn(&self, g: &mut Graph, vars: &[Var], x: Var, bn: Bn, mode: Mode, stats: &mut Vec<BatchStats>) -> Result<Var> {
        let r = &self.running[bn.stats];
        let m = match mode {
            Mode::Train => BatchNormMode::Train,
            Mode::Eval => BatchNormMode::Eval { mean: &r.mean, var: &r.var },
        };
        let (y, s) = g.batch_norm(x, vars[bn.gamma], vars[bn.beta], m)?;
        stats.extend(s);
        Ok(y)
    }

    /// Runs one convolution branch on `[N, planes, H, T]`, returning the
    /// sequence-major features `[N, L, d2]`.
    fn conv_branch(
        &self,
        g: &mut Graph,
        vars: &[Var],
        x: Var,
        br: ConvBranch,
        mode: Mode,
        stats: &mut Vec<BatchStats>,
    ) -> Result<Var> {
        let d1 = self.cfg.d1;
        let y = g.conv2d(x, vars[br.time_kernel], (1, 1), 1)?;
        let y = self.bn(g, vars, y, br.bn1, mode, stats)?;
        let y = g.conv2d(y, vars[br.collapse], (1, 1), d1)?;
        let y = self.bn(g, vars, y, br.bn2, mode, stats)?;
        let y = g.elu(y)?;
        let y = g.avg_pool2d(y, (1, br.pool.0), (1, br.pool.1))?;
        let y = g.conv2d(y, vars[br.pw_weight], (1, 1), 1)?;
        // [N, d2, 1, L] -> [N, L, d2]
        let s = g.shape(y).to_vec();
        let y = g.reshape(y, &[s[0], s[1], s[3]])?;
        let y = g.permute(y, &[0, 2, 1])?;
        g.add_broadcast(y, vars[br.pw_bias])
    }

    /// Branch I on raw EEG `[N, ch, T]`.
    pub fn branch1_forward(
        &self,
        g: &mut Graph,
        vars: &[Var],
        eeg: Var,
        mode: Mode,
        stats: &mut Vec<BatchStats>,
    ) -> Result<Option<Var>> {
        let Some(br) = self.branch1 else { return Ok(None) };
        let s = g.shape(eeg).to_vec();
        if s.len() != 3 || s[1] != self.cfg.channels || s[2] != self.cfg.samples {
            return Err(Error::shape(
                "branch1",
                format!("EEG batch {s:?}, model expects [N, {}, {}]", self.cfg.channels, self.cfg.samples),
            ));
        }
        let x = g.reshape(eeg, &[s[0], 1, s[1], s[2]])?;
        self.conv_branch(g, vars, x, br, mode, stats).map(Some)
    }

    /// Branch II on the wavelet power `[N, ch, F, T]`; the second view is
    /// the same tensor with channel and frequency axes swapped.
    pub fn branch2_forward(
        &self,
        g: &mut Graph,
        vars: &[Var],
        tfr: Var,
        mode: Mode,
        stats: &mut Vec<BatchStats>,
    ) -> Result<(Option<Var>, Option<Var>)> {
        if self.branch2_in1.is_none() && self.branch2_in2.is_none() {
            return Ok((None, None));
        }
        let s = g.shape(tfr).to_vec();
        let c = &self.cfg;
        if s.len() != 4 || s[1] != c.channels || s[2] != c.freqs || s[3] != c.samples {
            return Err(Error::shape(
                "branch2",
                format!("TFR batch {s:?}, model expects [N, {}, {}, {}]", c.channels, c.freqs, c.samples),
            ));
        }
        let v1 = match self.branch2_in1 {
            Some(br) => Some(self.conv_branch(g, vars, tfr, br, mode, stats)?),
            None => None,
        };
        let v2 = match self.branch2_in2 {
            Some(br) => {
                let x2 = g.permute(tfr, &[0, 2, 1, 3])?;
                Some(self.conv_branch(g, vars, x2, br, mode, stats)?)
            }
            None => None,
        };
        Ok((v1, v2))
    }

    /// Concatenates enabled branch sequences along the sequence axis.
    pub fn fuse(&self, g: &mut Graph, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::InvalidArgument("no enabled branch to fuse".into()));
        }
        if parts.len() == 1 {
            return Ok(parts[0]);
        }
        g.concat(parts, 1)
    }

    /// Adds the positional encoding and runs the post-norm encoder stack.
    /// Returns the encoded sequence and each layer's attention weights.
    pub fn encoder_forward(
        &self,
        g: &mut Graph,
        vars: &[Var],
        x: Var,
        mut dropout: Option<&mut dyn rand::RngCore>,
    ) -> Result<(Var, Vec<Var>)> {
        let Some(pos) = self.pos else { return Ok((x, Vec::new())) };
        let s = g.shape(x).to_vec();
        if s.len() != 3 || g.shape(vars[pos]) != [s[1], s[2]] {
            return Err(Error::shape(
                "encoder",
                format!("input {s:?} with positional encoding {:?}", g.shape(vars[pos])),
            ));
        }
        let (n, l, d) = (s[0], s[1], s[2]);
        let h = self.cfg.heads;
        let dh = d / h;
        let inv_scale = 1.0 / self.cfg.attention_denominator();
        let mut x = g.add_broadcast(x, vars[pos])?;
        let mut attention = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let split = |g: &mut Graph, t: Var| -> Result<Var> {
                let t = g.reshape(t, &[n, l, h, dh])?;
                let t = g.permute(t, &[0, 2, 1, 3])?;
                g.reshape(t, &[n * h, l, dh])
            };
            let q = g.linear(x, vars[layer.wq], Some(vars[layer.bq]))?;
            let k = g.linear(x, vars[layer.wk], Some(vars[layer.bk]))?;
            let v = g.linear(x, vars[layer.wv], Some(vars[layer.bv]))?;
            let (q, k, v) = (split(g, q)?, split(g, k)?, split(g, v)?);
            let scores = g.bmm(q, k, true)?;
            let scores = g.scale(scores, inv_scale)?;
            let attn = g.softmax(scores, 2)?;
            attention.push(attn);
            let ctx = g.bmm(attn, v, false)?;
            let ctx = g.reshape(ctx, &[n, h, l, dh])?;
            let ctx = g.permute(ctx, &[0, 2, 1, 3])?;
            let ctx = g.reshape(ctx, &[n, l, d])?;
            let mha = g.linear(ctx, vars[layer.wo], Some(vars[layer.bo]))?;
            let mha = self.dropout(g, mha, &mut dropout)?;
            let y = g.add(x, mha)?;
            let y = g.layer_norm(y, vars[layer.ln1.0], vars[layer.ln1.1])?;
            let m = g.linear(y, vars[layer.mlp1.0], Some(vars[layer.mlp1.1]))?;
            let m = g.elu(m)?;
            let m = g.linear(m, vars[layer.mlp2.0], Some(vars[layer.mlp2.1]))?;
            let m = self.dropout(g, m, &mut dropout)?;
            let z = g.add(y, m)?;
            x = g.layer_norm(z, vars[layer.ln2.0], vars[layer.ln2.1])?;
        }
        Ok((x, attention))
    }

    fn dropout(&self, g: &mut Graph, x: Var, rng: &mut Option<&mut dyn rand::RngCore>) -> Result<Var> {
        let p = self.cfg.dropout;
        let Some(rng) = rng.as_mut().filter(|_| p > 0.0) else { return Ok(x) };
        let keep = 1.0 / (1.0 - p);
        let shape = g.shape(x).to_vec();
        let n = g.value(x).len();
        let mask = (0..n).map(|_| if rng.random::<f64>() < p { 0.0 } else { keep }).collect();
        let mask = g.constant(Tensor::new(shape, mask)?);
        g.mul(x, mask)
    }

    /// Global average pooling over the sequence, then the two-layer MLP.
    /// Returns `(pooled features, logits)`.
    pub fn classify(&self, g: &mut Graph, vars: &[Var], encoded: Var) -> Result<(Var, Var)> {
        let pooled = g.mean_axis(encoded, 1)?;
        let h = g.linear(pooled, vars[self.head.hidden.0], Some(vars[self.head.hidden.1]))?;
        let h = g.elu(h)?;
        let logits = g.linear(h, vars[self.head.out.0], Some(vars[self.head.out.1]))?;
        Ok((pooled, logits))
    }

    /// Full forward pass on a batch of paired views: EEG `[N, ch, T]` and
    /// wavelet power `[N, ch, F, T]`. `dropout` is consulted only in
    /// training mode.
    pub fn forward(
        &self,
        g: &mut Graph,
        vars: &[Var],
        eeg: Var,
        tfr: Var,
        mode: Mode,
        dropout: Option<&mut dyn rand::RngCore>,
    ) -> Result<ForwardOutput> {
        if vars.len() != self.params.len() {
            return Err(Error::InvalidArgument(format!(
                "{} bound parameters for a model with {}",
                vars.len(),
                self.params.len()
            )));
        }
        let (ne, nt) = (g.shape(eeg)[0], g.shape(tfr)[0]);
        if ne != nt {
            return Err(Error::shape("forward", format!("EEG batch {ne} vs TFR batch {nt}")));
        }
        let mut bn_stats = Vec::new();
        let b1 = self.branch1_forward(g, vars, eeg, mode, &mut bn_stats)?;
        let (b2a, b2b) = self.branch2_forward(g, vars, tfr, mode, &mut bn_stats)?;
        let branches: Vec<Var> = [b1, b2a, b2b].into_iter().flatten().collect();
        let fused = self.fuse(g, &branches)?;
        let dropout = if mode == Mode::Train { dropout } else { None };
        let (encoded, attention) = self.encoder_forward(g, vars, fused, dropout)?;
        let (features, logits) = self.classify(g, vars, encoded)?;
        Ok(ForwardOutput { logits, features, branches, fused, attention, bn_stats })
    }

    /// Logits for a batch without recording gradients.
    pub fn predict(&self, eeg: &Tensor, tfr: &Tensor) -> Result<(Tensor, Tensor)> {
        let mut g = Graph::new();
        let vars = self.bind(&mut g, false);
        let e = g.constant(eeg.clone());
        let t = g.constant(tfr.clone());
        let out = self.forward(&mut g, &vars, e, t, Mode::Eval, None)?;
        Ok((g.value(out.logits).clone(), g.value(out.features).clone()))
    }

    /// Reassembles a model from a config, parameters, and running stats,
    /// checking names and shapes against a fresh instance.
    pub fn from_parts(cfg: ModelConfig, params: Vec<(String, Tensor)>, running: Vec<RunningStats>) -> Result<Self> {
        let mut rng = crate::rng::stream(0, crate::rng::Stream::Init);
        let mut model = Self::new(cfg, &mut rng)?;
        if params.len() != model.params.len() || running.len() != model.running.len() {
            return Err(Error::InvalidArgument(format!(
                "expected {} parameters and {} norm layers, got {} and {}",
                model.params.len(),
                model.running.len(),
                params.len(),
                running.len()
            )));
        }
        for (i, (name, t)) in params.into_iter().enumerate() {
            if name != model.params.names[i] || t.shape() != model.params.tensors[i].shape() {
                return Err(Error::InvalidArgument(format!(
                    "parameter {i}: got {name} {:?}, expected {} {:?}",
                    t.shape(),
                    model.params.names[i],
                    model.params.tensors[i].shape()
                )));
            }
            model.params.tensors[i] = t;
        }
        for (slot, r) in model.running.iter_mut().zip(running) {
            if slot.name != r.name || slot.mean.len() != r.mean.len() || slot.var.len() != r.var.len() {
                return Err(Error::InvalidArgument(format!("running stats {} do not match {}", r.name, slot.name)));
            }
            *slot = r;
        }
        Ok(model)
    }
}

/// Trainable scalar count implied by a configuration.
pub fn param_count(cfg: &ModelConfig) -> Result<usize> {
    let mut rng = crate::rng::stream(0, crate::rng::Stream::Init);
    Ok(DualTsst::new(cfg.clone(), &mut rng)?.param_count())
}
