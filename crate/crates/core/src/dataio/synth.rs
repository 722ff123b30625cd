//! Synthetic EEG: each class is a unit-amplitude sinusoid at its own
//! frequency on a subset of channels, with a per-trial random phase, plus
//! white Gaussian noise of standard deviation `noise` on every channel.
//! Trials are emitted round-robin over classes.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::TrialSet;
use crate::error::{Error, Result};
use crate::rng::{stream, Stream};
use crate::signal::EegTrial;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthClass {
    pub freq: f64,
    /// Channels carrying the rhythm; empty means all channels.
    pub channels: Vec<usize>,
}

pub fn synth(
    n_per_class: usize,
    channels: usize,
    samples: usize,
    fs: f64,
    classes: &[SynthClass],
    noise: f64,
    seed: u64,
) -> Result<TrialSet> {
    if channels == 0 || samples == 0 || !(fs > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "invalid synthetic geometry: {channels} channels, {samples} samples, {fs} Hz"
        )));
    }
    if !(noise >= 0.0) {
        return Err(Error::InvalidArgument(format!("noise level {noise} must be non-negative")));
    }
    for c in classes {
        if !(c.freq > 0.0 && c.freq < fs / 2.0) {
            return Err(Error::InvalidArgument(format!("class frequency {} Hz outside (0, {}) Hz", c.freq, fs / 2.0)));
        }
        if let Some(bad) = c.channels.iter().find(|&&ch| ch >= channels) {
            return Err(Error::InvalidArgument(format!("channel {bad} out of range for {channels} channels")));
        }
    }
    let mut rng = stream(seed, Stream::Synth);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut set = TrialSet::default();
    for _ in 0..n_per_class {
        for (label, class) in classes.iter().enumerate() {
            let phase = rng.random_range(0.0..2.0 * PI);
            let mut data = vec![0.0; channels * samples];
            for ch in 0..channels {
                let active = class.channels.is_empty() || class.channels.contains(&ch);
                for (i, v) in data[ch * samples..(ch + 1) * samples].iter_mut().enumerate() {
                    let s = if active { (2.0 * PI * class.freq * i as f64 / fs + phase).sin() } else { 0.0 };
                    *v = s + noise * normal.sample(&mut rng);
                }
            }
            set.eeg.push(EegTrial::new(Tensor::new(vec![channels, samples], data)?, fs, label)?);
        }
    }
    Ok(set)
}
