use std::f64::consts::PI;

use dtsst_core::signal::{bandpass, morlet_tfr, zscore, EegTrial, MorletPlan};
use dtsst_core::Tensor;
use proptest::prelude::*;

fn sine(freqs: &[f64], fs: f64, n: usize) -> EegTrial {
    let data = (0..n).map(|i| freqs.iter().map(|f| (2.0 * PI * f * i as f64 / fs).sin()).sum()).collect();
    EegTrial::new(Tensor::new(vec![1, n], data).unwrap(), fs, 0).unwrap()
}

/// Wavelet power by Simpson quadrature of the continuous Morlet wavelet
/// against the analytic signal, normalized to unit energy per sample.
fn power_by_quadrature(signal: impl Fn(f64) -> f64, t: f64, f: f64, fs: f64) -> f64 {
    let sigma = (f / 2.0) / (2.0 * PI * f);
    let amp = 1.0 / (fs * sigma * PI.sqrt()).sqrt();
    let (lo, hi, steps) = (-7.0 * sigma, 7.0 * sigma, 2800);
    let h = (hi - lo) / steps as f64;
    let (mut re, mut im) = (0.0, 0.0);
    for k in 0..=steps {
        let u = lo + k as f64 * h;
        let w = if k == 0 || k == steps {
            1.0
        } else if k % 2 == 1 {
            4.0
        } else {
            2.0
        };
        let g = (-u * u / (2.0 * sigma * sigma)).exp() * signal(t + u) * w;
        re += g * (2.0 * PI * f * u).cos();
        im += g * (2.0 * PI * f * u).sin();
    }
    let scale = amp * fs * h / 3.0;
    (re * scale).powi(2) + (im * scale).powi(2)
}

/// Time-averaged power over the central half of the trial.
fn central_mean(tfr: &Tensor, fi: usize, n: usize) -> f64 {
    let row = &tfr.data()[fi * n..(fi + 1) * n];
    row[n / 4..3 * n / 4].iter().sum::<f64>() / (n / 2) as f64
}

#[test]
fn spectral_peak_matches_quadrature_oracle() {
    let fs = 250.0;
    let n = 1000;
    let freqs: Vec<f64> = (1..=40).map(f64::from).collect();
    let plan = MorletPlan::new(&freqs, fs).unwrap();
    for f0 in [8.0, 10.0, 24.0] {
        let tfr = morlet_tfr(&sine(&[f0], fs, n), &plan).unwrap();
        let means: Vec<f64> = (0..40).map(|fi| central_mean(&tfr.data, fi, n)).collect();
        let peak = (0..40).max_by(|&a, &b| means[a].total_cmp(&means[b])).unwrap();
        assert_eq!(freqs[peak], f0);
        let oracle = (n / 4..3 * n / 4)
            .map(|i| power_by_quadrature(|t| (2.0 * PI * f0 * t).sin(), i as f64 / fs, f0, fs))
            .sum::<f64>()
            / (n / 2) as f64;
        let rel = (means[peak] - oracle).abs() / oracle;
        assert!(rel < 1e-3, "{f0} Hz: {} vs {oracle} ({rel:e})", means[peak]);
    }
}

#[test]
fn two_tone_maxima() {
    let fs = 250.0;
    let freqs: Vec<f64> = (2..=20).map(|k| 2.0 * k as f64).collect();
    let plan = MorletPlan::new(&freqs, fs).unwrap();
    let tfr = morlet_tfr(&sine(&[8.0, 24.0], fs, 1000), &plan).unwrap();
    let means: Vec<f64> = (0..freqs.len()).map(|fi| central_mean(&tfr.data, fi, 1000)).collect();
    let maxima: Vec<f64> = (1..freqs.len() - 1)
        .filter(|&i| means[i] > means[i - 1] && means[i] > means[i + 1])
        .map(|i| freqs[i])
        .collect();
    assert_eq!(maxima, vec![8.0, 24.0]);
}

#[test]
fn bandpass_removes_out_of_band_tone() {
    let fs = 250.0;
    let x = sine(&[60.0], fs, 1000);
    let y = bandpass(&x, 0.0, 40.0).unwrap();
    let rms = |t: &EegTrial| (t.data.data().iter().map(|v| v * v).sum::<f64>() / 1000.0).sqrt();
    assert!(rms(&y) < 1e-6 * rms(&x));
    let z = bandpass(&sine(&[10.0], fs, 1000), 0.0, 40.0).unwrap();
    let reference = sine(&[10.0], fs, 1000);
    for i in 5..995 {
        assert!((z.data.data()[i] - reference.data.data()[i]).abs() < 1e-6);
    }
}

proptest! {
    #[test]
    fn tfr_is_nonnegative_and_quadratic(data in prop::collection::vec(-5.0f64..5.0, 64), c in 0.01f64..3.0) {
        let plan = MorletPlan::new(&[4.0, 8.0, 12.0], 32.0).unwrap();
        let x = EegTrial::new(Tensor::new(vec![1, 64], data.clone()).unwrap(), 32.0, 0).unwrap();
        let scaled = EegTrial::new(Tensor::new(vec![1, 64], data.iter().map(|v| v * c).collect()).unwrap(), 32.0, 0).unwrap();
        let a = morlet_tfr(&x, &plan).unwrap();
        let b = morlet_tfr(&scaled, &plan).unwrap();
        prop_assert_eq!(a.data.shape(), &[1, 3, 64]);
        for (p, q) in a.data.data().iter().zip(b.data.data()) {
            prop_assert!(*p >= 0.0);
            prop_assert!((q - c * c * p).abs() <= 1e-8 * (c * c * p).max(1e-12));
        }
    }

    #[test]
    fn zscore_slices_are_standardized(data in prop::collection::vec(-100.0f64..100.0, 24)) {
        let x = Tensor::new(vec![2, 3, 4], data).unwrap();
        let z = zscore(&x, &[2]).unwrap();
        for row in z.data().chunks(4) {
            let m = row.iter().sum::<f64>() / 4.0;
            let v = row.iter().map(|r| (r - m).powi(2)).sum::<f64>() / 4.0;
            prop_assert!(m.abs() < 1e-10);
            prop_assert!(v == 0.0 || (v.sqrt() - 1.0).abs() < 1e-8);
        }
        let again = zscore(&z, &[2]).unwrap();
        prop_assert!(again.max_abs_diff(&z) < 1e-10);
    }

    #[test]
    fn bandpass_is_idempotent(data in prop::collection::vec(-1.0f64..1.0, 50)) {
        let x = EegTrial::new(Tensor::new(vec![1, 50], data).unwrap(), 100.0, 0).unwrap();
        let once = bandpass(&x, 3.0, 20.0).unwrap();
        let twice = bandpass(&once, 3.0, 20.0).unwrap();
        prop_assert!(once.data.max_abs_diff(&twice.data) < 1e-9);
    }
}
