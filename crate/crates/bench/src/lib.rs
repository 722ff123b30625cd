//! Fixtures shared by the benchmarks.

use dtsst_core::dataio::preset;
use dtsst_core::gradcheck::random_batch;
use dtsst_core::rng::{stream, Stream};
use dtsst_core::signal::EegTrial;
use dtsst_core::{DualTsst, Tensor};

/// A seeded model for `preset_name` and a random batch of `n` trials.
pub fn model_and_batch(preset_name: &str, n: usize) -> (DualTsst, Tensor, Tensor, Vec<usize>) {
    let cfg = preset(preset_name).expect("known preset").model;
    let model = DualTsst::new(cfg.clone(), &mut stream(0, Stream::Init)).expect("valid preset");
    let (eeg, tfr, labels) = random_batch(&cfg, n, 0).expect("valid batch");
    (model, eeg, tfr, labels)
}

/// A deterministic multi-tone recording.
pub fn recording(channels: usize, samples: usize, fs: f64) -> EegTrial {
    let data = (0..channels * samples)
        .map(|i| {
            let t = (i % samples) as f64 / fs;
            (2.0 * std::f64::consts::PI * 10.0 * t).sin() + 0.5 * (2.0 * std::f64::consts::PI * 23.0 * t).cos()
        })
        .collect();
    EegTrial::new(Tensor::new(vec![channels, samples], data).expect("shape"), fs, 0).expect("trial")
}
