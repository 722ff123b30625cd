use serde::{Deserialize, Serialize};

use super::SplitPlan;
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::signal::FreqGrid;

pub const PRESET_NAMES: [&str; 4] = ["bci2a", "bci2b", "seed", "mini"];

/// Signal conditioning applied before the model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SignalConfig {
    pub fs: f64,
    /// Epoch window in seconds, relative to the stored recording.
    pub window: Option<(f64, f64)>,
    /// Band-pass corners in Hz.
    pub band: Option<(f64, f64)>,
    /// Cuts each recording into non-overlapping windows of this many
    /// seconds, dropping the remainder.
    #[serde(default)]
    pub segment: Option<f64>,
    pub freqs: FreqGrid,
}

/// Dataset geometry and recipe defaults.
#[derive(Clone, Debug, PartialEq)]
pub struct Preset {
    pub name: &'static str,
    pub model: ModelConfig,
    pub signal: SignalConfig,
    pub split: SplitPlan,
    /// Segments per trial for augmentation; 0 disables it.
    pub augment_r: usize,
    /// Peak learning rate.
    pub lr_max: f64,
}

pub fn preset(name: &str) -> Result<Preset> {
    let base = ModelConfig::default();
    match name {
        // 22 electrodes, 4 classes, 2-6 s at 250 Hz, 0-40 Hz, R = 8
        "bci2a" => Ok(Preset {
            name: "bci2a",
            model: ModelConfig { channels: 22, samples: 1000, freqs: 40, n_classes: 4, ..base },
            signal: SignalConfig {
                fs: 250.0,
                window: Some((2.0, 6.0)),
                band: Some((0.0, 40.0)),
                segment: None,
                freqs: FreqGrid { lo: 1.0, hi: 40.0, step: 1.0 },
            },
            split: SplitPlan::fixed_session(),
            augment_r: 8,
            lr_max: 1e-4,
        }),
        // C3/Cz/C4, 2 classes, 3-7.5 s at 250 Hz, 0-40 Hz, R = 9
        "bci2b" => Ok(Preset {
            name: "bci2b",
            model: ModelConfig { channels: 3, samples: 1125, freqs: 40, n_classes: 2, ..base },
            signal: SignalConfig {
                fs: 250.0,
                window: Some((3.0, 7.5)),
                band: Some((0.0, 40.0)),
                segment: None,
                freqs: FreqGrid { lo: 1.0, hi: 40.0, step: 1.0 },
            },
            split: SplitPlan::fixed_session(),
            augment_r: 9,
            lr_max: 1e-4,
        }),
        // 62 channels, 3 classes, non-overlapping 1 s windows at 200 Hz,
        // 0.5-50 Hz, no augmentation, 5-fold cross-validation
        "seed" => Ok(Preset {
            name: "seed",
            model: ModelConfig { channels: 62, samples: 200, freqs: 50, n_classes: 3, ..base },
            signal: SignalConfig {
                fs: 200.0,
                window: None,
                band: Some((0.5, 50.0)),
                segment: Some(1.0),
                freqs: FreqGrid { lo: 1.0, hi: 50.0, step: 1.0 },
            },
            split: SplitPlan::k_fold(5, 0, 0),
            augment_r: 0,
            lr_max: 1e-4,
        }),
        // desk-scale geometry for tests and gradient checks
        "mini" => Ok(Preset {
            name: "mini",
            model: ModelConfig {
                channels: 4,
                samples: 64,
                freqs: 6,
                d1: 3,
                d2: 8,
                tc1: 7,
                tc2: 9,
                pool1: 16,
                pool1_stride: 4,
                pool2: 8,
                pool2_stride: 4,
                encoder_layers: 2,
                heads: 2,
                mlp_hidden: 16,
                n_classes: 2,
                ..base
            },
            signal: SignalConfig {
                fs: 64.0,
                window: None,
                band: None,
                segment: None,
                freqs: FreqGrid { lo: 4.0, hi: 24.0, step: 4.0 },
            },
            split: SplitPlan::fixed_session(),
            augment_r: 4,
            // the small network needs a larger step to converge in 200 epochs
            lr_max: 1e-3,
        }),
        other => Err(Error::Config(format!("unknown preset {other:?}; expected one of {}", PRESET_NAMES.join(", ")))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dataset_presets() {
        let a = preset("bci2a").unwrap();
        assert_eq!((a.model.n_classes, a.augment_r, a.model.channels), (4, 8, 22));
        let b = preset("bci2b").unwrap();
        assert_eq!((b.model.channels, b.model.n_classes, b.augment_r), (3, 2, 9));
        let s = preset("seed").unwrap();
        assert_eq!(s.augment_r, 0);
        assert_eq!((s.model.channels, s.signal.fs, s.model.samples), (62, 200.0, 200));
        assert!(preset("bci3").is_err());
        for name in PRESET_NAMES {
            let p = preset(name).unwrap();
            p.model.validate().unwrap();
            assert_eq!(p.signal.freqs.freqs().unwrap().len(), p.model.freqs);
            if let Some((t0, t1)) = p.signal.window {
                assert_eq!(((t1 - t0) * p.signal.fs).round() as usize, p.model.samples);
            }
        }
    }
}
