//! Finite-difference verification of the network's analytic gradients.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{DualTsst, Mode, ModelConfig};
use crate::rng::{stream, Stream};
use crate::tensor::{Graph, Tensor};

/// Central-difference step.
pub const GRADCHECK_STEP: f64 = 1e-6;
/// Denominator floor of the relative error.
pub const GRADCHECK_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamCheck {
    pub name: String,
    pub scalars: usize,
    pub max_rel_err: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
    pub max_rel_err: f64,
    pub worst: String,
}

/// Uniform `[-1, 1)` inputs for both views and round-robin labels.
pub fn random_batch(cfg: &ModelConfig, n: usize, seed: u64) -> Result<(Tensor, Tensor, Vec<usize>)> {
    let mut rng = stream(seed, Stream::Synth);
    let mut draw = |shape: Vec<usize>| {
        let len = shape.iter().product();
        Tensor::new(shape, (0..len).map(|_| rng.random_range(-1.0..1.0)).collect())
    };
    let eeg = draw(vec![n, cfg.channels, cfg.samples])?;
    let tfr = draw(vec![n, cfg.channels, cfg.freqs, cfg.samples])?;
    Ok((eeg, tfr, (0..n).map(|i| i % cfg.n_classes).collect()))
}

/// `|a - n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRADCHECK_FLOOR)
}

fn loss_of(
    model: &DualTsst,
    eeg: &Tensor,
    tfr: &Tensor,
    labels: &[usize],
    grads: bool,
) -> Result<(f64, Vec<Vec<f64>>)> {
    let mut g = Graph::new();
    let vars = model.bind(&mut g, grads);
    let (e, t) = (g.constant(eeg.clone()), g.constant(tfr.clone()));
    let out = model.forward(&mut g, &vars, e, t, Mode::Train, None)?;
    let loss = g.cross_entropy(out.logits, labels)?;
    let value = g.value(loss).data()[0];
    if !grads {
        return Ok((value, Vec::new()));
    }
    g.backward(loss)?;
    let gs = vars.iter().map(|&v| g.grad(v).map(<[f64]>::to_vec).unwrap_or_default()).collect();
    Ok((value, gs))
}

/// Compares the backpropagated gradient of the training-mode
/// cross-entropy with central differences for every trainable scalar.
pub fn check_model(model: &DualTsst, eeg: &Tensor, tfr: &Tensor, labels: &[usize]) -> Result<GradCheckReport> {
    let (_, analytic) = loss_of(model, eeg, tfr, labels, true)?;
    let mut probe = model.clone();
    let mut params = Vec::with_capacity(analytic.len());
    for (i, grad) in analytic.iter().enumerate() {
        let mut worst: f64 = 0.0;
        for (j, &a) in grad.iter().enumerate() {
            let orig = probe.params().tensors()[i].data()[j];
            probe.params_mut().tensors_mut()[i].data_mut()[j] = orig + GRADCHECK_STEP;
            let (up, _) = loss_of(&probe, eeg, tfr, labels, false)?;
            probe.params_mut().tensors_mut()[i].data_mut()[j] = orig - GRADCHECK_STEP;
            let (down, _) = loss_of(&probe, eeg, tfr, labels, false)?;
            probe.params_mut().tensors_mut()[i].data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * GRADCHECK_STEP);
            worst = worst.max(relative_error(a, numeric));
        }
        params.push(ParamCheck { name: model.params().names()[i].clone(), scalars: grad.len(), max_rel_err: worst });
    }
    let top = params.iter().max_by(|a, b| a.max_rel_err.total_cmp(&b.max_rel_err));
    let (max_rel_err, worst) = top.map_or((0.0, String::new()), |p| (p.max_rel_err, p.name.clone()));
    Ok(GradCheckReport { params, max_rel_err, worst })
}

impl GradCheckReport {
    /// Turns a report above `tol` into an error naming the worst parameter.
    pub fn ensure(&self, tol: f64) -> Result<()> {
        if self.max_rel_err < tol {
            Ok(())
        } else {
            Err(Error::GradCheck { param: self.worst.clone(), max_rel_err: self.max_rel_err })
        }
    }
}
