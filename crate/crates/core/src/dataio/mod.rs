//! On-disk datasets, split management, presets, and synthetic EEG.

pub mod format;
mod manifest;
mod preset;
mod synth;

pub use format::{read_tensor, write_tensor};
pub use manifest::{
    load_dataset, read_dataset, write_dataset, DatasetManifest, SplitMode, SplitPlan, SplitTag, TfrSidecar, TrialEntry,
    MANIFEST_FILE, TFR_SUFFIX,
};
pub use preset::{preset, Preset, SignalConfig, PRESET_NAMES};

pub use synth::{synth, SynthClass};

use crate::error::{Error, Result};
use crate::signal::{self, EegTrial, MorletPlan, TfrTrial};
use crate::tensor::Tensor;

/// Labeled trials with optional paired wavelet power.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrialSet {
    pub eeg: Vec<EegTrial>,
    /// Either empty or one entry per EEG trial.
    pub tfr: Vec<TfrTrial>,
}

impl TrialSet {
    pub fn len(&self) -> usize {
        self.eeg.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eeg.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.eeg.iter().map(|t| t.label).collect()
    }

    pub fn has_tfr(&self) -> bool {
        !self.eeg.is_empty() && self.tfr.len() == self.eeg.len()
    }

    /// `(channels, samples, freqs)`; freqs is 0 without wavelet data.
    pub fn geometry(&self) -> Option<(usize, usize, usize)> {
        let first = self.eeg.first()?;
        let f = self.tfr.first().map_or(0, |t| t.freqs.len());
        Some((first.channels(), first.samples(), f))
    }

    /// Checks that every trial shares one geometry and sampling rate.
    pub fn validate(&self) -> Result<()> {
        if !self.tfr.is_empty() && self.tfr.len() != self.eeg.len() {
            return Err(Error::Dataset(format!("{} TFR trials for {} EEG trials", self.tfr.len(), self.eeg.len())));
        }
        let Some((ch, t, f)) = self.geometry() else { return Ok(()) };
        let fs = self.eeg[0].fs;
        for (i, e) in self.eeg.iter().enumerate() {
            if e.channels() != ch || e.samples() != t || e.fs != fs {
                return Err(Error::Dataset(format!(
                    "trial {i} has shape {:?} at {} Hz, expected [{ch}, {t}] at {fs} Hz",
                    e.data.shape(),
                    e.fs
                )));
            }
        }
        for (i, w) in self.tfr.iter().enumerate() {
            if w.data.shape() != [ch, f, t] || w.label != self.eeg[i].label {
                return Err(Error::Dataset(format!(
                    "TFR {i} has shape {:?}, expected [{ch}, {f}, {t}]",
                    w.data.shape()
                )));
            }
        }
        Ok(())
    }

    pub fn subset(&self, idx: &[usize]) -> TrialSet {
        TrialSet {
            eeg: idx.iter().map(|&i| self.eeg[i].clone()).collect(),
            tfr: if self.has_tfr() { idx.iter().map(|&i| self.tfr[i].clone()).collect() } else { Vec::new() },
        }
    }

    /// Computes wavelet power for every trial with `plan`.
    pub fn with_tfr(mut self, plan: &MorletPlan) -> Result<TrialSet> {
        self.tfr = self.eeg.iter().map(|e| signal::morlet_tfr(e, plan)).collect::<Result<_>>()?;
        Ok(self)
    }

    /// Z-scores both views (EEG per channel, TFR per channel and frequency).
    pub fn normalized(&self) -> Result<TrialSet> {
        Ok(TrialSet {
            eeg: self.eeg.iter().map(signal::zscore_eeg).collect::<Result<_>>()?,
            tfr: self.tfr.iter().map(signal::zscore_tfr).collect::<Result<_>>()?,
        })
    }

    /// Stacks the given trials into batch tensors `[N, ch, T]` and
    /// `[N, ch, F, T]` plus labels.
    pub fn batch(&self, idx: &[usize]) -> Result<(Tensor, Tensor, Vec<usize>)> {
        if !self.has_tfr() {
            return Err(Error::Dataset("trials have no wavelet view".into()));
        }
        let (ch, t, f) = self.geometry().expect("non-empty");
        let mut eeg = Vec::with_capacity(idx.len() * ch * t);
        let mut tfr = Vec::with_capacity(idx.len() * ch * f * t);
        for &i in idx {
            eeg.extend_from_slice(self.eeg[i].data.data());
            tfr.extend_from_slice(self.tfr[i].data.data());
        }
        let labels = idx.iter().map(|&i| self.eeg[i].label).collect();
        Ok((Tensor::new(vec![idx.len(), ch, t], eeg)?, Tensor::new(vec![idx.len(), ch, f, t], tfr)?, labels))
    }

    pub fn extend(&mut self, other: TrialSet) {
        self.eeg.extend(other.eeg);
        self.tfr.extend(other.tfr);
    }

    /// Band-pass, epoch, and window the EEG, then compute wavelet power.
    /// A set that already carries wavelet data on the requested grid is
    /// taken as conditioned and passed through untouched.
    pub fn condition(self, cfg: &SignalConfig) -> Result<TrialSet> {
        let freqs = cfg.freqs.freqs()?;
        if self.has_tfr() && TfrSidecar::for_freqs(&self.tfr[0].freqs).matches(&freqs) {
            return Ok(self);
        }
        let mut eeg = Vec::with_capacity(self.len());
        for trial in &self.eeg {
            if (trial.fs - cfg.fs).abs() > 1e-9 {
                return Err(Error::Dataset(format!("recording at {} Hz, expected {} Hz", trial.fs, cfg.fs)));
            }
            let mut t = match cfg.band {
                Some((lo, hi)) => signal::bandpass(trial, lo, hi)?,
                None => trial.clone(),
            };
            if let Some((t0, t1)) = cfg.window {
                t = signal::epoch(&t, t0, t1)?;
            }
            match cfg.segment {
                Some(secs) => {
                    let len = (secs * cfg.fs).round() as usize;
                    if len == 0 || len > t.samples() {
                        return Err(Error::Dataset(format!(
                            "{secs} s windows do not fit a {}-sample recording",
                            t.samples()
                        )));
                    }
                    for k in 0..t.samples() / len {
                        let start = (k * len) as f64 / cfg.fs;
                        eeg.push(signal::epoch(&t, start, start + secs)?);
                    }
                }
                None => eeg.push(t),
            }
        }
        let plan = MorletPlan::new(&freqs, cfg.fs)?;
        TrialSet { eeg, tfr: Vec::new() }.with_tfr(&plan)
    }
}
