use super::ops::{self, ConvGeom, PoolGeom};
use super::{inverse_axes, window_out, Tensor};
use crate::error::{Error, Result};

/// Handle to a node recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

pub const BN_EPS: f64 = 1e-5;
pub const LN_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug)]
pub enum BatchNormMode<'a> {
    /// Normalize by batch statistics.
    Train,
    /// Normalize by the supplied running statistics.
    Eval { mean: &'a [f64], var: &'a [f64] },
}

/// Per-channel statistics observed by a training-mode batch norm. `var` is
/// the unbiased estimate (population when only one value per channel), which
/// is what the running average tracks.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

enum Op {
    Leaf,
    Add(Var, Var),
    AddBcast(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Sum(Var),
    MeanAxis { x: Var, axis: usize },
    Reshape(Var),
    Permute { x: Var, axes: Vec<usize> },
    Concat { xs: Vec<Var>, axis: usize },
    Linear { x: Var, w: Var, b: Option<Var> },
    Bmm { a: Var, b: Var, trans_b: bool },
    Conv2d { x: Var, k: Var, geom: ConvGeom },
    AvgPool2d { x: Var, geom: PoolGeom },
    BatchNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<f64>, inv_std: Vec<f64>, train: bool },
    Elu(Var),
    Softmax { x: Var, axis: usize },
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<f64>, inv_std: Vec<f64> },
    CrossEntropy { logits: Var, labels: Vec<usize>, probs: Vec<f64> },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Execution record for reverse-mode differentiation.
///
/// Nodes are appended in execution order; `backward` walks them in exact
/// reverse. Gradients accumulate on leaves across calls until `zero_grad`.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    leaf_grads: Vec<Option<Vec<f64>>>,
    freed: bool,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad });
        self.leaf_grads.push(None);
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Accumulated gradient of a leaf, if backward has reached it.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.leaf_grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn zero_grad(&mut self) {
        for g in &mut self.leaf_grads {
            *g = None;
        }
    }

    /// Releases saved intermediate values. Further `backward` calls fail.
    pub fn free(&mut self) {
        for node in &mut self.nodes {
            if !matches!(node.op, Op::Leaf) {
                node.value = Tensor::scalar(0.0);
                node.op = Op::Leaf;
            }
        }
        self.freed = true;
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var], name: &str) -> Result<Var> {
        if self.freed {
            return Err(Error::GraphFreed);
        }
        if !value.all_finite() {
            return Err(Error::NonFinite(name.to_string()));
        }
        let requires_grad = inputs.iter().any(|&v| self.rg(v));
        self.nodes.push(Node { value, op, requires_grad });
        self.leaf_grads.push(None);
        Ok(Var(self.nodes.len() - 1))
    }

    fn data(&self, v: Var) -> &[f64] {
        self.nodes[v.0].value.data()
    }

    // ---- elementwise ----------------------------------------------------

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape("add", format!("{:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        let data = self.data(a).iter().zip(self.data(b)).map(|(x, y)| x + y).collect();
        let t = Tensor { shape: self.shape(a).to_vec(), data };
        self.push(t, Op::Add(a, b), &[a, b], "add")
    }

    /// `a + b` where `b`'s shape is a suffix of `a`'s, broadcast over the
    /// leading axes.
    pub fn add_broadcast(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sb.len() > sa.len() || sa[sa.len() - sb.len()..] != *sb {
            return Err(Error::shape("add_broadcast", format!("{sa:?} vs {sb:?}")));
        }
        let bd = self.data(b);
        let data = self.data(a).chunks(bd.len()).flat_map(|row| row.iter().zip(bd).map(|(x, y)| x + y)).collect();
        let t = Tensor { shape: sa.to_vec(), data };
        self.push(t, Op::AddBcast(a, b), &[a, b], "add_broadcast")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape("mul", format!("{:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        let data = self.data(a).iter().zip(self.data(b)).map(|(x, y)| x * y).collect();
        let t = Tensor { shape: self.shape(a).to_vec(), data };
        self.push(t, Op::Mul(a, b), &[a, b], "mul")
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let data = self.data(a).iter().map(|x| x * c).collect();
        let t = Tensor { shape: self.shape(a).to_vec(), data };
        self.push(t, Op::Scale(a, c), &[a], "scale")
    }

    /// ELU with alpha = 1.
    pub fn elu(&mut self, x: Var) -> Result<Var> {
        let data = self.data(x).iter().map(|&v| if v > 0.0 { v } else { v.exp_m1() }).collect();
        let t = Tensor { shape: self.shape(x).to_vec(), data };
        self.push(t, Op::Elu(x), &[x], "elu")
    }

    // ---- reductions and layout -----------------------------------------

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.data(x).iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(x), &[x], "sum")
    }

    /// Mean over one axis, which is removed from the shape.
    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(Error::shape("mean_axis", format!("axis {axis} for {shape:?}")));
        }
        let (outer, len, inner) = ops::split_axis(&shape, axis);
        let xd = self.data(x);
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for i in 0..len {
                let src = &xd[(o * len + i) * inner..(o * len + i + 1) * inner];
                for (d, s) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                    *d += s;
                }
            }
        }
        let inv = 1.0 / len as f64;
        out.iter_mut().for_each(|v| *v *= inv);
        let mut oshape = shape;
        oshape.remove(axis);
        self.push(Tensor { shape: oshape, data: out }, Op::MeanAxis { x, axis }, &[x], "mean_axis")
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).clone().reshape(shape.to_vec())?;
        self.push(t, Op::Reshape(x), &[x], "reshape")
    }

    pub fn permute(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        let t = self.value(x).permute(axes)?;
        self.push(t, Op::Permute { x, axes: axes.to_vec() }, &[x], "permute")
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let first = xs.first().ok_or_else(|| Error::shape("concat", "no inputs"))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(Error::shape("concat", format!("axis {axis} for {base:?}")));
        }
        let mut total = 0;
        for &v in xs {
            let s = self.shape(v);
            let compatible =
                s.len() == base.len() && s.iter().zip(&base).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(Error::shape("concat", format!("{s:?} vs {base:?} on axis {axis}")));
            }
            total += s[axis];
        }
        let (outer, _, inner) = ops::split_axis(&base, axis);
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in xs {
                let len = self.shape(v)[axis];
                data.extend_from_slice(&self.data(v)[o * len * inner..(o + 1) * len * inner]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        self.push(Tensor { shape, data }, Op::Concat { xs: xs.to_vec(), axis }, xs, "concat")
    }

    // ---- linear algebra ------------------------------------------------

    /// Affine map over the last axis: `x[..., din] @ w[din, dout] + b[dout]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w);
        let din = *xs.last().ok_or_else(|| Error::shape("linear", "scalar input"))?;
        if ws.len() != 2 || ws[0] != din {
            return Err(Error::shape("linear", format!("input {xs:?} with weight {ws:?}")));
        }
        let dout = ws[1];
        if let Some(b) = b {
            if self.shape(b) != [dout] {
                return Err(Error::shape("linear", format!("bias {:?} for {dout} outputs", self.shape(b))));
            }
        }
        let m = self.value(x).len() / din;
        let mut out = vec![0.0; m * dout];
        if let Some(b) = b {
            let bd = self.data(b);
            for row in out.chunks_mut(dout) {
                row.copy_from_slice(bd);
            }
        }
        ops::gemm_acc(m, din, dout, self.data(x), din, 1, self.data(w), dout, 1, &mut out);
        let mut shape = xs;
        *shape.last_mut().unwrap() = dout;
        let inputs: Vec<Var> = [Some(x), Some(w), b].into_iter().flatten().collect();
        self.push(Tensor { shape, data: out }, Op::Linear { x, w, b }, &inputs, "linear")
    }

    /// Batched matmul of `a[B,M,K]` with `b[B,K,N]`, or with `b[B,N,K]`
    /// transposed when `trans_b`.
    pub fn bmm(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let bad = || Error::shape("bmm", format!("{sa:?} x {sb:?} (trans_b={trans_b})"));
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] {
            return Err(bad());
        }
        let (bt, m, k) = (sa[0], sa[1], sa[2]);
        let (kb, n) = if trans_b { (sb[2], sb[1]) } else { (sb[1], sb[2]) };
        if kb != k {
            return Err(bad());
        }
        let mut out = vec![0.0; bt * m * n];
        let (ad, bd) = (self.data(a), self.data(b));
        for i in 0..bt {
            let a_i = &ad[i * m * k..(i + 1) * m * k];
            let b_i = &bd[i * k * n..(i + 1) * k * n];
            let c_i = &mut out[i * m * n..(i + 1) * m * n];
            if trans_b {
                ops::gemm_acc(m, k, n, a_i, k, 1, b_i, 1, k, c_i);
            } else {
                ops::gemm_acc(m, k, n, a_i, k, 1, b_i, n, 1, c_i);
            }
        }
        let t = Tensor { shape: vec![bt, m, n], data: out };
        self.push(t, Op::Bmm { a, b, trans_b }, &[a, b], "bmm")
    }

    // ---- convolutional ops ---------------------------------------------

    /// Valid (unpadded) 2-D cross-correlation over `[N, Cin, H, W]` with a
    /// `[Cout, Cin/groups, kh, kw]` kernel.
    pub fn conv2d(&mut self, x: Var, k: Var, stride: (usize, usize), groups: usize) -> Result<Var> {
        let (xs, ks) = (self.shape(x).to_vec(), self.shape(k).to_vec());
        if xs.len() != 4 || ks.len() != 4 {
            return Err(Error::shape("conv2d", format!("input {xs:?}, kernel {ks:?}")));
        }
        let (n, cin, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        let (cout, cin_g, kh, kw) = (ks[0], ks[1], ks[2], ks[3]);
        if groups == 0 || cin % groups != 0 || cout % groups != 0 || cin_g * groups != cin {
            return Err(Error::shape(
                "conv2d",
                format!("Cin={cin}, Cout={cout} incompatible with groups={groups} and kernel {ks:?}"),
            ));
        }
        let oh = window_out(h, kh, stride.0);
        let ow = window_out(w, kw, stride.1);
        let (Some(oh), Some(ow)) = (oh, ow) else {
            return Err(Error::shape("conv2d", format!("kernel {kh}x{kw} larger than input {h}x{w}")));
        };
        let geom = ConvGeom { n, cin, h, w, cout, kh, kw, sh: stride.0, sw: stride.1, groups, oh, ow };
        let data = ops::conv2d_forward(&geom, self.data(x), self.data(k));
        let t = Tensor { shape: vec![n, cout, oh, ow], data };
        self.push(t, Op::Conv2d { x, k, geom }, &[x, k], "conv2d")
    }

    pub fn avg_pool2d(&mut self, x: Var, kernel: (usize, usize), stride: (usize, usize)) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 4 {
            return Err(Error::shape("avg_pool2d", format!("input {xs:?}")));
        }
        let oh = window_out(xs[2], kernel.0, stride.0);
        let ow = window_out(xs[3], kernel.1, stride.1);
        let (Some(oh), Some(ow)) = (oh, ow) else {
            return Err(Error::shape(
                "avg_pool2d",
                format!("window {kernel:?} stride {stride:?} on {}x{}", xs[2], xs[3]),
            ));
        };
        let geom = PoolGeom {
            planes: xs[0] * xs[1],
            h: xs[2],
            w: xs[3],
            kh: kernel.0,
            kw: kernel.1,
            sh: stride.0,
            sw: stride.1,
            oh,
            ow,
        };
        let data = ops::avg_pool_forward(&geom, self.data(x));
        let t = Tensor { shape: vec![xs[0], xs[1], oh, ow], data };
        self.push(t, Op::AvgPool2d { x, geom }, &[x], "avg_pool2d")
    }

    /// Per-channel batch normalization of `[N, C, H, W]` with learnable
    /// scale/shift. Training mode also returns the batch statistics so the
    /// caller can update its running averages.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mode: BatchNormMode<'_>,
    ) -> Result<(Var, Option<BatchStats>)> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 4 {
            return Err(Error::shape("batch_norm", format!("input {xs:?}")));
        }
        let (n, c, plane) = (xs[0], xs[1], xs[2] * xs[3]);
        if self.shape(gamma) != [c] || self.shape(beta) != [c] {
            return Err(Error::shape("batch_norm", format!("scale/shift must be [{c}]")));
        }
        let m = n * plane;
        let xd = self.data(x);
        let (mean, pop_var): (Vec<f64>, Vec<f64>) = match mode {
            BatchNormMode::Train => (0..c)
                .map(|ch| {
                    let vals = || (0..n).flat_map(move |i| xd[(i * c + ch) * plane..(i * c + ch + 1) * plane].iter());
                    let mu = vals().sum::<f64>() / m as f64;
                    let var = vals().map(|v| (v - mu) * (v - mu)).sum::<f64>() / m as f64;
                    (mu, var)
                })
                .unzip(),
            BatchNormMode::Eval { mean, var } => {
                if mean.len() != c || var.len() != c {
                    return Err(Error::shape("batch_norm", "running stats length"));
                }
                (mean.to_vec(), var.to_vec())
            }
        };
        let inv_std: Vec<f64> = pop_var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
        let (gd, bd) = (self.data(gamma), self.data(beta));
        let mut xhat = vec![0.0; xd.len()];
        let mut out = vec![0.0; xd.len()];
        for i in 0..n {
            for ch in 0..c {
                let r = (i * c + ch) * plane..(i * c + ch + 1) * plane;
                for j in r {
                    let h = (xd[j] - mean[ch]) * inv_std[ch];
                    xhat[j] = h;
                    out[j] = gd[ch] * h + bd[ch];
                }
            }
        }
        let train = matches!(mode, BatchNormMode::Train);
        let stats = train.then(|| BatchStats {
            var: pop_var.iter().map(|v| if m > 1 { v * m as f64 / (m - 1) as f64 } else { *v }).collect(),
            mean,
        });
        let t = Tensor { shape: xs, data: out };
        let v =
            self.push(t, Op::BatchNorm { x, gamma, beta, xhat, inv_std, train }, &[x, gamma, beta], "batch_norm")?;
        Ok((v, stats))
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(Error::shape("softmax", format!("axis {axis} for {shape:?}")));
        }
        let (o, l, i) = ops::split_axis(&shape, axis);
        let data = ops::softmax_forward(self.data(x), o, l, i);
        self.push(Tensor { shape, data }, Op::Softmax { x, axis }, &[x], "softmax")
    }

    /// Normalization over the last axis with learnable scale/shift.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let d = *shape.last().ok_or_else(|| Error::shape("layer_norm", "scalar input"))?;
        if self.shape(gamma) != [d] || self.shape(beta) != [d] {
            return Err(Error::shape("layer_norm", format!("scale/shift must be [{d}]")));
        }
        let (gd, bd) = (self.data(gamma), self.data(beta));
        let xd = self.data(x);
        let mut xhat = vec![0.0; xd.len()];
        let mut out = vec![0.0; xd.len()];
        let mut inv_std = Vec::with_capacity(xd.len() / d);
        for (r, row) in xd.chunks(d).enumerate() {
            let mu = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + LN_EPS).sqrt();
            inv_std.push(is);
            for (j, v) in row.iter().enumerate() {
                let h = (v - mu) * is;
                xhat[r * d + j] = h;
                out[r * d + j] = gd[j] * h + bd[j];
            }
        }
        let t = Tensor { shape, data: out };
        self.push(t, Op::LayerNorm { x, gamma, beta, xhat, inv_std }, &[x, gamma, beta], "layer_norm")
    }

    /// Mean negative log-likelihood of `labels` under row-wise softmax of
    /// `logits[N, C]`, evaluated through log-sum-exp.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let s = self.shape(logits).to_vec();
        if s.len() != 2 || s[0] != labels.len() {
            return Err(Error::shape("cross_entropy", format!("logits {s:?} with {} labels", labels.len())));
        }
        let (n, c) = (s[0], s[1]);
        if let Some(&bad) = labels.iter().find(|&&y| y >= c) {
            return Err(Error::InvalidArgument(format!("label {bad} out of range for {c} classes")));
        }
        let ld = self.data(logits);
        let mut probs = vec![0.0; n * c];
        let mut loss = 0.0;
        for (i, row) in ld.chunks(c).enumerate() {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            loss -= row[labels[i]] - lse;
            for (j, v) in row.iter().enumerate() {
                probs[i * c + j] = (v - lse).exp();
            }
        }
        let t = Tensor::scalar(loss / n as f64);
        self.push(t, Op::CrossEntropy { logits, labels: labels.to_vec(), probs }, &[logits], "cross_entropy")
    }

    // ---- backward ------------------------------------------------------

    /// Accumulates d(loss)/d(leaf) into every leaf that requires a gradient.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.freed {
            return Err(Error::GraphFreed);
        }
        let lv = &self.nodes[loss.0].value;
        if lv.len() != 1 {
            return Err(Error::NonScalarLoss(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            if let Op::Leaf = self.nodes[i].op {
                accumulate(&mut self.leaf_grads[i], &g);
                continue;
            }
            for (v, dv) in self.node_backward(i, &g) {
                if self.nodes[v.0].requires_grad {
                    accumulate(&mut grads[v.0], &dv);
                }
            }
        }
        Ok(())
    }

    fn node_backward(&self, i: usize, g: &[f64]) -> Vec<(Var, Vec<f64>)> {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf => Vec::new(),
            Op::Add(a, b) => vec![(*a, g.to_vec()), (*b, g.to_vec())],
            Op::AddBcast(a, b) => {
                let bl = self.value(*b).len();
                let mut db = vec![0.0; bl];
                for row in g.chunks(bl) {
                    for (d, v) in db.iter_mut().zip(row) {
                        *d += v;
                    }
                }
                vec![(*a, g.to_vec()), (*b, db)]
            }
            Op::Mul(a, b) => {
                let (ad, bd) = (self.data(*a), self.data(*b));
                vec![
                    (*a, g.iter().zip(bd).map(|(g, y)| g * y).collect()),
                    (*b, g.iter().zip(ad).map(|(g, x)| g * x).collect()),
                ]
            }
            Op::Scale(a, c) => vec![(*a, g.iter().map(|v| v * c).collect())],
            Op::Sum(x) => vec![(*x, vec![g[0]; self.value(*x).len()])],
            Op::MeanAxis { x, axis } => {
                let (outer, len, inner) = ops::split_axis(self.shape(*x), *axis);
                let inv = 1.0 / len as f64;
                let mut dx = vec![0.0; outer * len * inner];
                for o in 0..outer {
                    for l in 0..len {
                        for q in 0..inner {
                            dx[(o * len + l) * inner + q] = g[o * inner + q] * inv;
                        }
                    }
                }
                vec![(*x, dx)]
            }
            Op::Reshape(x) => vec![(*x, g.to_vec())],
            Op::Permute { x, axes } => {
                let gt = Tensor { shape: node.value.shape().to_vec(), data: g.to_vec() };
                let back = gt.permute(&inverse_axes(axes)).expect("valid inverse permutation");
                vec![(*x, back.into_data())]
            }
            Op::Concat { xs, axis } => {
                let total = node.value.shape()[*axis];
                let (outer, _, inner) = ops::split_axis(node.value.shape(), *axis);
                let mut res = Vec::with_capacity(xs.len());
                let mut start = 0;
                for &v in xs {
                    let len = self.shape(v)[*axis];
                    let mut dv = Vec::with_capacity(outer * len * inner);
                    for o in 0..outer {
                        let off = (o * total + start) * inner;
                        dv.extend_from_slice(&g[off..off + len * inner]);
                    }
                    start += len;
                    res.push((v, dv));
                }
                res
            }
            Op::Linear { x, w, b } => {
                let ws = self.shape(*w);
                let (din, dout) = (ws[0], ws[1]);
                let m = self.value(*x).len() / din;
                let mut res = Vec::with_capacity(3);
                if self.rg(*x) {
                    let mut dx = vec![0.0; m * din];
                    ops::gemm_acc(m, dout, din, g, dout, 1, self.data(*w), 1, dout, &mut dx);
                    res.push((*x, dx));
                }
                if self.rg(*w) {
                    let mut dw = vec![0.0; din * dout];
                    ops::gemm_acc(din, m, dout, self.data(*x), 1, din, g, dout, 1, &mut dw);
                    res.push((*w, dw));
                }
                if let Some(b) = b {
                    let mut db = vec![0.0; dout];
                    for row in g.chunks(dout) {
                        for (d, v) in db.iter_mut().zip(row) {
                            *d += v;
                        }
                    }
                    res.push((*b, db));
                }
                res
            }
            Op::Bmm { a, b, trans_b } => {
                let sa = self.shape(*a);
                let (bt, m, k) = (sa[0], sa[1], sa[2]);
                let n = node.value.shape()[2];
                let (ad, bd) = (self.data(*a), self.data(*b));
                let mut da = vec![0.0; ad.len()];
                let mut db = vec![0.0; bd.len()];
                for i in 0..bt {
                    let g_i = &g[i * m * n..(i + 1) * m * n];
                    let a_i = &ad[i * m * k..(i + 1) * m * k];
                    let b_i = &bd[i * k * n..(i + 1) * k * n];
                    let da_i = &mut da[i * m * k..(i + 1) * m * k];
                    let db_i = &mut db[i * k * n..(i + 1) * k * n];
                    if *trans_b {
                        // y = a b^T, b is [n, k]
                        ops::gemm_acc(m, n, k, g_i, n, 1, b_i, k, 1, da_i);
                        ops::gemm_acc(n, m, k, g_i, 1, n, a_i, k, 1, db_i);
                    } else {
                        ops::gemm_acc(m, n, k, g_i, n, 1, b_i, 1, n, da_i);
                        ops::gemm_acc(k, m, n, a_i, 1, k, g_i, n, 1, db_i);
                    }
                }
                vec![(*a, da), (*b, db)]
            }
            Op::Conv2d { x, k, geom } => {
                let (dx, dk) = ops::conv2d_backward(geom, self.data(*x), self.data(*k), g, self.rg(*x), self.rg(*k));
                let mut res = Vec::with_capacity(2);
                if self.rg(*x) {
                    res.push((*x, dx));
                }
                if self.rg(*k) {
                    res.push((*k, dk));
                }
                res
            }
            Op::AvgPool2d { x, geom } => vec![(*x, ops::avg_pool_backward(geom, g))],
            Op::BatchNorm { x, gamma, beta, xhat, inv_std, train } => {
                let s = self.shape(*x);
                let (n, c, plane) = (s[0], s[1], s[2] * s[3]);
                let gd = self.data(*gamma);
                let mut dgamma = vec![0.0; c];
                let mut dbeta = vec![0.0; c];
                let mut dx = vec![0.0; g.len()];
                for ch in 0..c {
                    let idx: Vec<usize> = (0..n).flat_map(|i| (i * c + ch) * plane..(i * c + ch + 1) * plane).collect();
                    for &j in &idx {
                        dgamma[ch] += g[j] * xhat[j];
                        dbeta[ch] += g[j];
                    }
                    if *train {
                        let dxh: Vec<f64> = idx.iter().map(|&j| g[j] * gd[ch]).collect();
                        let xh: Vec<f64> = idx.iter().map(|&j| xhat[j]).collect();
                        let d = ops::norm_backward_group(&dxh, &xh, inv_std[ch]);
                        for (&j, v) in idx.iter().zip(d) {
                            dx[j] = v;
                        }
                    } else {
                        for &j in &idx {
                            dx[j] = g[j] * gd[ch] * inv_std[ch];
                        }
                    }
                }
                vec![(*x, dx), (*gamma, dgamma), (*beta, dbeta)]
            }
            Op::Elu(x) => {
                let xd = self.data(*x);
                let dx = g.iter().zip(xd).map(|(g, &v)| if v > 0.0 { *g } else { g * v.exp() }).collect();
                vec![(*x, dx)]
            }
            Op::Softmax { x, axis } => {
                let (o, l, q) = ops::split_axis(node.value.shape(), *axis);
                vec![(*x, ops::softmax_backward(node.value.data(), g, o, l, q))]
            }
            Op::LayerNorm { x, gamma, beta, xhat, inv_std } => {
                let d = self.shape(*gamma)[0];
                let gd = self.data(*gamma);
                let mut dgamma = vec![0.0; d];
                let mut dbeta = vec![0.0; d];
                let mut dx = Vec::with_capacity(g.len());
                for (r, (grow, xrow)) in g.chunks(d).zip(xhat.chunks(d)).enumerate() {
                    for j in 0..d {
                        dgamma[j] += grow[j] * xrow[j];
                        dbeta[j] += grow[j];
                    }
                    let dxh: Vec<f64> = grow.iter().zip(gd).map(|(a, b)| a * b).collect();
                    dx.extend(ops::norm_backward_group(&dxh, xrow, inv_std[r]));
                }
                vec![(*x, dx), (*gamma, dgamma), (*beta, dbeta)]
            }
            Op::CrossEntropy { logits, labels, probs } => {
                let c = self.shape(*logits)[1];
                let n = labels.len() as f64;
                let mut d = probs.clone();
                for (i, &y) in labels.iter().enumerate() {
                    d[i * c + y] -= 1.0;
                }
                d.iter_mut().for_each(|v| *v *= g[0] / n);
                vec![(*logits, d)]
            }
        }
    }
}

fn accumulate(slot: &mut Option<Vec<f64>>, g: &[f64]) {
    match slot {
        Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
        None => *slot = Some(g.to_vec()),
    }
}
