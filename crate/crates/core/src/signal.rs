//! Time-domain conditioning and Morlet time-frequency decomposition.

use std::f64::consts::PI;

use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Slices whose standard deviation falls below this are mapped to zeros.
pub const ZSCORE_MIN_STD: f64 = 1e-12;

/// One multichannel recording or trial, `[ch, T]` samples.
#[derive(Clone, Debug, PartialEq)]
pub struct EegTrial {
    pub data: Tensor,
    pub fs: f64,
    pub label: usize,
    pub subject: u32,
    pub session: u32,
}

impl EegTrial {
    pub fn new(data: Tensor, fs: f64, label: usize) -> Result<Self> {
        if data.ndim() != 2 {
            return Err(Error::shape("eeg trial", format!("expected [ch, T], got {:?}", data.shape())));
        }
        if !(fs > 0.0) {
            return Err(Error::InvalidArgument(format!("sampling rate must be positive, got {fs}")));
        }
        Ok(Self { data, fs, label, subject: 0, session: 0 })
    }

    pub fn channels(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn samples(&self) -> usize {
        self.data.shape()[1]
    }

    fn with_data(&self, data: Tensor) -> Self {
        Self { data, ..self.clone() }
    }
}

/// Time-frequency power of a trial, `[ch, F, T]`.
#[derive(Clone, Debug, PartialEq)]
pub struct TfrTrial {
    pub data: Tensor,
    pub freqs: Vec<f64>,
    pub fs: f64,
    pub label: usize,
}

/// Evenly spaced analysis frequencies `lo, lo+step, ..., <= hi`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FreqGrid {
    pub lo: f64,
    pub hi: f64,
    pub step: f64,
}

impl FreqGrid {
    pub fn freqs(&self) -> Result<Vec<f64>> {
        if !(self.lo > 0.0 && self.step > 0.0 && self.hi >= self.lo) {
            return Err(Error::InvalidArgument(format!("bad frequency grid {self:?}")));
        }
        let n = ((self.hi - self.lo) / self.step + 1e-9).floor() as usize + 1;
        Ok((0..n).map(|i| self.lo + i as f64 * self.step).collect())
    }
}

/// Zero-phase brickwall band-pass: FFT bins with |f| outside
/// `[f_lo, f_hi]` are zeroed. Length is preserved.
pub fn bandpass(trial: &EegTrial, f_lo: f64, f_hi: f64) -> Result<EegTrial> {
    let fs = trial.fs;
    if !(0.0 <= f_lo && f_lo < f_hi && f_hi <= fs / 2.0) {
        return Err(Error::InvalidArgument(format!("band [{f_lo}, {f_hi}] Hz invalid for fs={fs} Hz")));
    }
    let t = trial.samples();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(t);
    let inv = planner.plan_fft_inverse(t);
    let keep: Vec<bool> = (0..t)
        .map(|k| {
            let bin = k.min(t - k) as f64 * fs / t as f64;
            bin >= f_lo && bin <= f_hi
        })
        .collect();
    let mut out = Vec::with_capacity(trial.data.len());
    let mut buf = vec![Complex::new(0.0, 0.0); t];
    for row in trial.data.data().chunks(t) {
        for (b, &x) in buf.iter_mut().zip(row) {
            *b = Complex::new(x, 0.0);
        }
        fwd.process(&mut buf);
        for (b, &k) in buf.iter_mut().zip(&keep) {
            if !k {
                *b = Complex::new(0.0, 0.0);
            }
        }
        inv.process(&mut buf);
        out.extend(buf.iter().map(|c| c.re / t as f64));
    }
    Ok(trial.with_data(Tensor::new(trial.data.shape().to_vec(), out)?))
}

/// Cuts the window `[t_start, t_end)` seconds out of a recording.
pub fn epoch(trial: &EegTrial, t_start: f64, t_end: f64) -> Result<EegTrial> {
    let (ch, t) = (trial.channels(), trial.samples());
    let duration = t as f64 / trial.fs;
    if !(0.0 <= t_start && t_start < t_end && t_end <= duration + 1e-9) {
        return Err(Error::InvalidArgument(format!("window [{t_start}, {t_end}] s outside recording of {duration} s")));
    }
    let start = (t_start * trial.fs).round() as usize;
    let len = ((t_end - t_start) * trial.fs).round() as usize;
    if len == 0 || start + len > t {
        return Err(Error::InvalidArgument(format!(
            "window [{t_start}, {t_end}] s maps to samples {start}..{} of {t}",
            start + len
        )));
    }
    let data: Vec<f64> = trial.data.data().chunks(t).flat_map(|row| row[start..start + len].iter().copied()).collect();
    Ok(trial.with_data(Tensor::new(vec![ch, len], data)?))
}

/// Discretized complex Morlet family, one wavelet per analysis frequency,
/// with `n_cycles = f / 2`.
#[derive(Clone, Debug, PartialEq)]
pub struct MorletPlan {
    pub freqs: Vec<f64>,
    pub n_cycles: Vec<f64>,
    pub fs: f64,
    pub sigma_t: Vec<f64>,
    /// Real and imaginary taps, indexed from `-half` to `+half`.
    pub taps_re: Vec<Vec<f64>>,
    pub taps_im: Vec<Vec<f64>>,
}

impl MorletPlan {
    pub fn new(freqs: &[f64], fs: f64) -> Result<Self> {
        if freqs.is_empty() {
            return Err(Error::InvalidArgument("empty frequency list".into()));
        }
        if !(fs > 0.0) {
            return Err(Error::InvalidArgument(format!("sampling rate must be positive, got {fs}")));
        }
        if freqs.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidArgument("frequencies must be strictly ascending".into()));
        }
        if let Some(f) = freqs.iter().find(|&&f| !(f > 0.0 && f < fs / 2.0)) {
            return Err(Error::InvalidArgument(format!("frequency {f} Hz outside (0, {}) Hz", fs / 2.0)));
        }
        let n_cycles: Vec<f64> = freqs.iter().map(|f| f / 2.0).collect();
        let sigma_t: Vec<f64> = freqs.iter().zip(&n_cycles).map(|(f, n)| n / (2.0 * PI * f)).collect();
        let mut taps_re = Vec::with_capacity(freqs.len());
        let mut taps_im = Vec::with_capacity(freqs.len());
        for (&f, &sigma) in freqs.iter().zip(&sigma_t) {
            let half = (5.0 * sigma * fs + 1e-9).floor() as i64;
            let (mut re, mut im): (Vec<f64>, Vec<f64>) = (-half..=half)
                .map(|k| {
                    let t = k as f64 / fs;
                    let env = (-t * t / (2.0 * sigma * sigma)).exp();
                    let ph = 2.0 * PI * f * t;
                    (env * ph.cos(), env * ph.sin())
                })
                .unzip();
            let norm = re.iter().chain(&im).map(|v| v * v).sum::<f64>().sqrt();
            re.iter_mut().chain(im.iter_mut()).for_each(|v| *v /= norm);
            taps_re.push(re);
            taps_im.push(im);
        }
        Ok(Self { freqs: freqs.to_vec(), n_cycles, fs, sigma_t, taps_re, taps_im })
    }

    pub fn support(&self, freq_index: usize) -> usize {
        self.taps_re[freq_index].len()
    }
}

/// Mirror index into `[0, n)` without repeating the edge sample.
fn reflect(i: i64, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as i64 - 1);
    let m = i.rem_euclid(period);
    (if m < n as i64 { m } else { period - m }) as usize
}

/// Power `|W|^2` of the Morlet transform for each channel and frequency,
/// with reflect-padded edges so the time axis keeps its length.
pub fn morlet_tfr(trial: &EegTrial, plan: &MorletPlan) -> Result<TfrTrial> {
    if (plan.fs - trial.fs).abs() > 1e-9 * trial.fs {
        return Err(Error::InvalidArgument(format!(
            "wavelet plan built for fs={} Hz applied to trial at fs={} Hz",
            plan.fs, trial.fs
        )));
    }
    let (ch, t) = (trial.channels(), trial.samples());
    let widest = (0..plan.freqs.len()).map(|i| plan.support(i)).max().unwrap_or(0);
    if widest > 10 * t {
        return Err(Error::InvalidArgument(format!("wavelet support {widest} exceeds 10x trial length {t}")));
    }
    let nf = plan.freqs.len();
    let mut out = vec![0.0; ch * nf * t];
    let mut padded = Vec::new();
    for (c, row) in trial.data.data().chunks(t).enumerate() {
        for fi in 0..nf {
            let (re, im) = (&plan.taps_re[fi], &plan.taps_im[fi]);
            let half = (re.len() / 2) as i64;
            padded.clear();
            padded.extend((-half..t as i64 + half).map(|i| row[reflect(i, t)]));
            let dst = &mut out[(c * nf + fi) * t..(c * nf + fi + 1) * t];
            for (ti, d) in dst.iter_mut().enumerate() {
                let win = &padded[ti..ti + re.len()];
                let (mut wr, mut wi) = (0.0, 0.0);
                for ((x, a), b) in win.iter().zip(re).zip(im) {
                    wr += x * a;
                    wi += x * b;
                }
                *d = wr * wr + wi * wi;
            }
        }
    }
    Ok(TfrTrial {
        data: Tensor::new(vec![ch, nf, t], out)?,
        freqs: plan.freqs.clone(),
        fs: trial.fs,
        label: trial.label,
    })
}

/// Z-score normalization over `axes`, independently for every slice of the
/// remaining axes, with population standard deviation.
pub fn zscore(x: &Tensor, axes: &[usize]) -> Result<Tensor> {
    let nd = x.ndim();
    if axes.is_empty() || axes.iter().any(|&a| a >= nd) {
        return Err(Error::shape("zscore", format!("axes {axes:?} for shape {:?}", x.shape())));
    }
    let keep: Vec<usize> = (0..nd).filter(|a| !axes.contains(a)).collect();
    let order: Vec<usize> = keep.iter().chain(axes).copied().collect();
    let moved = x.permute(&order)?;
    let slice: usize = axes.iter().map(|&a| x.shape()[a]).product();
    let mut data = moved.data().to_vec();
    for chunk in data.chunks_mut(slice) {
        zscore_in_place(chunk);
    }
    let moved = Tensor::new(moved.shape().to_vec(), data)?;
    moved.permute(&crate::tensor::inverse_axes(&order))
}

fn zscore_in_place(v: &mut [f64]) {
    let n = v.len() as f64;
    let mu = v.iter().sum::<f64>() / n;
    let sd = (v.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / n).sqrt();
    if sd < ZSCORE_MIN_STD {
        v.iter_mut().for_each(|x| *x = 0.0);
    } else {
        v.iter_mut().for_each(|x| *x = (*x - mu) / sd);
    }
}

/// Normalizes an EEG trial per channel over time.
pub fn zscore_eeg(trial: &EegTrial) -> Result<EegTrial> {
    Ok(trial.with_data(zscore(&trial.data, &[1])?))
}

/// Normalizes a TFR per (channel, frequency) over time.
pub fn zscore_tfr(tfr: &TfrTrial) -> Result<TfrTrial> {
    Ok(TfrTrial { data: zscore(&tfr.data, &[2])?, ..tfr.clone() })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sine(freq: f64, fs: f64, t: usize, amp: f64) -> Vec<f64> {
        (0..t).map(|i| amp * (2.0 * PI * freq * i as f64 / fs).sin()).collect()
    }

    fn trial(rows: Vec<Vec<f64>>, fs: f64) -> EegTrial {
        let t = rows[0].len();
        let ch = rows.len();
        EegTrial::new(Tensor::new(vec![ch, t], rows.concat()).unwrap(), fs, 0).unwrap()
    }

    fn rms(v: &[f64]) -> f64 {
        (v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64).sqrt()
    }

    #[test]
    fn bandpass_passes_in_band_sinusoid() {
        let x = sine(10.0, 250.0, 1000, 1.0);
        let out = bandpass(&trial(vec![x.clone()], 250.0), 0.0, 40.0).unwrap();
        let dev = out.data.data()[5..995].iter().zip(&x[5..995]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(dev < 1e-6, "deviation {dev}");
    }

    #[test]
    fn bandpass_removes_out_of_band_sinusoid() {
        let x = sine(60.0, 250.0, 1000, 1.0);
        let out = bandpass(&trial(vec![x.clone()], 250.0), 0.0, 40.0).unwrap();
        assert!(rms(out.data.data()) < 1e-6 * rms(&x));
    }

    #[test]
    fn bandpass_removes_dc() {
        let c = 7.5;
        let out = bandpass(&trial(vec![vec![c; 500]], 250.0), 0.5, 50.0).unwrap();
        let mean = out.data.sum() / 500.0;
        assert!(mean.abs() < 1e-6 * c);
    }

    #[test]
    fn bandpass_rejects_bad_band() {
        let t = trial(vec![vec![0.0; 16]], 100.0);
        assert!(bandpass(&t, 30.0, 20.0).is_err());
        assert!(bandpass(&t, 0.0, 60.0).is_err());
        assert!(bandpass(&t, -1.0, 10.0).is_err());
    }

    #[test]
    fn bandpass_is_idempotent() {
        let x: Vec<f64> = (0..300).map(|i| ((i * 37 % 101) as f64 / 50.0) - 1.0).collect();
        let t = trial(vec![x], 250.0);
        let once = bandpass(&t, 1.0, 30.0).unwrap();
        let twice = bandpass(&once, 1.0, 30.0).unwrap();
        assert!(once.data.max_abs_diff(&twice.data) < 1e-9);
    }

    #[test]
    fn epoch_lengths_match_dataset_windows() {
        let rec = trial(vec![vec![0.0; 2500]], 250.0);
        assert_eq!(epoch(&rec, 2.0, 6.0).unwrap().samples(), 1000);
        assert_eq!(epoch(&rec, 3.0, 7.5).unwrap().samples(), 1125);
        let seed = trial(vec![vec![0.0; 400]], 200.0);
        assert_eq!(epoch(&seed, 0.0, 1.0).unwrap().samples(), 200);
    }

    #[test]
    fn epoch_full_window_is_identity() {
        let rec = trial(vec![(0..50).map(f64::from).collect()], 10.0);
        assert_eq!(epoch(&rec, 0.0, 5.0).unwrap(), rec);
        assert!(epoch(&rec, 1.0, 6.0).is_err());
    }

    #[test]
    fn morlet_plan_invariants() {
        let freqs: Vec<f64> = (1..=40).map(f64::from).collect();
        let plan = MorletPlan::new(&freqs, 250.0).unwrap();
        for (i, &f) in freqs.iter().enumerate() {
            assert_eq!(plan.n_cycles[i], f / 2.0);
            assert!(plan.sigma_t[i] > 0.0);
            let re = &plan.taps_re[i];
            let im = &plan.taps_im[i];
            assert_eq!(re.len() % 2, 1);
            let n = re.len();
            for k in 0..n {
                assert!((re[k] - re[n - 1 - k]).abs() < 1e-15);
                assert!((im[k] + im[n - 1 - k]).abs() < 1e-15);
            }
            let energy: f64 = re.iter().chain(im).map(|v| v * v).sum();
            assert!((energy - 1.0).abs() < 1e-12);
        }
        assert!(MorletPlan::new(&[2.0, 1.0], 250.0).is_err());
        assert!(MorletPlan::new(&[200.0], 250.0).is_err());
    }

    #[test]
    fn zero_signal_gives_zero_tfr() {
        let plan = MorletPlan::new(&[4.0, 8.0], 64.0).unwrap();
        let tfr = morlet_tfr(&trial(vec![vec![0.0; 64]; 2], 64.0), &plan).unwrap();
        assert_eq!(tfr.data.shape(), &[2, 2, 64]);
        assert!(tfr.data.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn tfr_rejects_fs_mismatch() {
        let plan = MorletPlan::new(&[4.0], 64.0).unwrap();
        assert!(morlet_tfr(&trial(vec![vec![0.0; 64]], 128.0), &plan).is_err());
    }

    fn peak_bins(tfr: &TfrTrial) -> Vec<f64> {
        let (nf, t) = (tfr.freqs.len(), tfr.data.shape()[2]);
        (0..nf)
            .map(|f| tfr.data.data()[f * t + t / 4..f * t + 3 * t / 4].iter().sum::<f64>() / (t / 2) as f64)
            .collect()
    }

    #[test]
    fn two_tone_tfr_has_two_local_maxima() {
        let freqs: Vec<f64> = (1..=40).map(f64::from).collect();
        let plan = MorletPlan::new(&freqs, 250.0).unwrap();
        let x: Vec<f64> =
            sine(8.0, 250.0, 1000, 1.0).iter().zip(sine(24.0, 250.0, 1000, 1.0)).map(|(a, b)| a + b).collect();
        let avg = peak_bins(&morlet_tfr(&trial(vec![x], 250.0), &plan).unwrap());
        let maxima: Vec<f64> =
            (1..avg.len() - 1).filter(|&i| avg[i] > avg[i - 1] && avg[i] > avg[i + 1]).map(|i| freqs[i]).collect();
        assert_eq!(maxima, vec![8.0, 24.0]);
    }

    #[test]
    fn tfr_power_scales_quadratically() {
        let plan = MorletPlan::new(&[6.0, 10.0, 14.0], 128.0).unwrap();
        let x: Vec<f64> = (0..256).map(|i| ((i * 13 % 29) as f64 - 14.0) * 1e-3).collect();
        let a = morlet_tfr(&trial(vec![x.clone()], 128.0), &plan).unwrap();
        let b = morlet_tfr(&trial(vec![x.iter().map(|v| v * 3.0).collect()], 128.0), &plan).unwrap();
        for (p, q) in a.data.data().iter().zip(b.data.data()) {
            assert!(*p >= 0.0);
            assert!((q - 9.0 * p).abs() <= 1e-8 * q.abs().max(1e-300));
        }
    }

    #[test]
    fn zscore_examples() {
        let z = zscore(&Tensor::from_vec(vec![1.0, 2.0, 3.0]), &[0]).unwrap();
        let e = 1.224_744_871_391_589;
        for (a, b) in z.data().iter().zip([-e, 0.0, e]) {
            assert!((a - b).abs() < 1e-12);
        }
        let c = zscore(&Tensor::from_vec(vec![4.0; 5]), &[0]).unwrap();
        assert!(c.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zscore_normalizes_each_slice() {
        let data: Vec<f64> = (0..24).map(|i| ((i * 7) % 11) as f64 + i as f64 * 0.1).collect();
        let x = Tensor::new(vec![2, 3, 4], data).unwrap();
        let z = zscore(&x, &[2]).unwrap();
        for row in z.data().chunks(4) {
            let m = row.iter().sum::<f64>() / 4.0;
            let sd = (row.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / 4.0).sqrt();
            assert!(m.abs() < 1e-10);
            assert!((sd - 1.0).abs() < 1e-8);
        }
        let zz = zscore(&z, &[2]).unwrap();
        assert!(z.max_abs_diff(&zz) < 1e-10);
        // over two axes at once
        let z01 = zscore(&x, &[0, 2]).unwrap();
        assert_eq!(z01.shape(), x.shape());
    }

    #[test]
    fn freq_grid() {
        let g = FreqGrid { lo: 1.0, hi: 40.0, step: 1.0 };
        assert_eq!(g.freqs().unwrap().len(), 40);
        let g = FreqGrid { lo: 4.0, hi: 24.0, step: 4.0 };
        assert_eq!(g.freqs().unwrap(), vec![4.0, 8.0, 12.0, 16.0, 20.0, 24.0]);
    }
}
