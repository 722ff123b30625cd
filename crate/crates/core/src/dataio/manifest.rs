use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::format::{read_tensor, write_tensor};
use super::TrialSet;
use crate::error::{Error, Result};
use crate::rng::{stream, Stream};
use crate::signal::{EegTrial, TfrTrial};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const TFR_SUFFIX: &str = ".tfr.eegt";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitTag {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrialEntry {
    /// Relative to the dataset directory.
    pub file: String,
    pub label: usize,
    #[serde(default)]
    pub subject: u32,
    #[serde(default)]
    pub session: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<SplitTag>,
}

/// Describes cached wavelet sidecars. They are only reused when the
/// frequency grid and cycle rule match the requested transform.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TfrSidecar {
    pub freqs: Vec<f64>,
    pub n_cycles: String,
    pub suffix: String,
}

impl TfrSidecar {
    pub const CYCLE_RULE: &'static str = "freq/2";

    pub fn for_freqs(freqs: &[f64]) -> Self {
        Self { freqs: freqs.to_vec(), n_cycles: Self::CYCLE_RULE.into(), suffix: TFR_SUFFIX.into() }
    }

    pub fn matches(&self, freqs: &[f64]) -> bool {
        self.n_cycles == Self::CYCLE_RULE
            && self.freqs.len() == freqs.len()
            && self.freqs.iter().zip(freqs).all(|(a, b)| (a - b).abs() < 1e-9)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub name: String,
    pub fs: f64,
    pub channels: Vec<String>,
    pub n_classes: usize,
    pub class_names: Vec<String>,
    pub trials: Vec<TrialEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tfr: Option<TfrSidecar>,
}

impl DatasetManifest {
    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        let m: DatasetManifest =
            serde_json::from_str(&text).map_err(|e| Error::Format { path: path.clone(), detail: e.to_string() })?;
        m.validate_header()?;
        Ok(m)
    }

    fn validate_header(&self) -> Result<()> {
        if !(self.fs > 0.0) {
            return Err(Error::Dataset(format!("sampling rate {} must be positive", self.fs)));
        }
        if self.n_classes == 0 || self.class_names.len() != self.n_classes {
            return Err(Error::Dataset(format!(
                "{} class names for {} classes",
                self.class_names.len(),
                self.n_classes
            )));
        }
        if let Some(t) = self.trials.iter().find(|t| t.label >= self.n_classes) {
            return Err(Error::Dataset(format!("{}: label {} out of range", t.file, t.label)));
        }
        Ok(())
    }

    pub fn tfr_path(&self, dir: &Path, entry: &TrialEntry) -> Option<PathBuf> {
        let side = self.tfr.as_ref()?;
        let stem = entry.file.strip_suffix(".eegt").unwrap_or(&entry.file);
        Some(dir.join(format!("{stem}{}", side.suffix)))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum SplitMode {
    /// Use the manifest's per-trial train/test tags.
    FixedSession,
    /// Deterministic k-fold assignment; `fold` is held out.
    KFold { k: usize, fold: usize, seed: u64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SplitPlan {
    pub mode: SplitMode,
}

impl SplitPlan {
    pub fn fixed_session() -> Self {
        Self { mode: SplitMode::FixedSession }
    }

    pub fn k_fold(k: usize, fold: usize, seed: u64) -> Self {
        Self { mode: SplitMode::KFold { k, fold, seed } }
    }

    /// Returns `(train, test)` trial indices.
    pub fn assign(&self, manifest: &DatasetManifest) -> Result<(Vec<usize>, Vec<usize>)> {
        let n = manifest.trials.len();
        match self.mode {
            SplitMode::FixedSession => {
                let mut train = Vec::new();
                let mut test = Vec::new();
                for (i, t) in manifest.trials.iter().enumerate() {
                    match t.split {
                        Some(SplitTag::Train) => train.push(i),
                        Some(SplitTag::Test) => test.push(i),
                        None => return Err(Error::Dataset(format!("{} has no split tag", t.file))),
                    }
                }
                Ok((train, test))
            }
            SplitMode::KFold { k, fold, seed } => {
                if k < 2 || fold >= k || k > n {
                    return Err(Error::Dataset(format!("invalid {k}-fold split (fold {fold}) of {n} trials")));
                }
                let mut order: Vec<usize> = (0..n).collect();
                order.shuffle(&mut stream(seed, Stream::Split));
                // fold f covers positions [f*n/k, (f+1)*n/k)
                let (lo, hi) = (fold * n / k, (fold + 1) * n / k);
                let mut test: Vec<usize> = order[lo..hi].to_vec();
                let mut train: Vec<usize> = order[..lo].iter().chain(&order[hi..]).copied().collect();
                test.sort_unstable();
                train.sort_unstable();
                Ok((train, test))
            }
        }
    }
}

/// Reads every trial listed in the manifest. Wavelet sidecars are loaded
/// when the manifest declares them.
pub fn read_dataset(dir: &Path) -> Result<(DatasetManifest, TrialSet)> {
    let manifest = DatasetManifest::read(dir)?;
    let mut set = TrialSet::default();
    for entry in &manifest.trials {
        let data = read_tensor(&dir.join(&entry.file))?;
        if data.ndim() != 2 || data.shape()[0] != manifest.channels.len() {
            return Err(Error::Dataset(format!(
                "{}: shape {:?} but manifest lists {} channels",
                entry.file,
                data.shape(),
                manifest.channels.len()
            )));
        }
        let mut trial = EegTrial::new(data, manifest.fs, entry.label)?;
        trial.subject = entry.subject;
        trial.session = entry.session;
        if let (Some(path), Some(side)) = (manifest.tfr_path(dir, entry), &manifest.tfr) {
            let data = read_tensor(&path)?;
            set.tfr.push(TfrTrial { data, freqs: side.freqs.clone(), fs: manifest.fs, label: entry.label });
        }
        set.eeg.push(trial);
    }
    set.validate()?;
    Ok((manifest, set))
}

/// Loads the dataset and partitions it according to `plan`.
pub fn load_dataset(dir: &Path, plan: &SplitPlan) -> Result<(TrialSet, TrialSet)> {
    let (manifest, set) = read_dataset(dir)?;
    let (train, test) = plan.assign(&manifest)?;
    Ok((set.subset(&train), set.subset(&test)))
}

/// Writes trials (and their wavelet sidecars, if present) plus a manifest.
/// `splits` must be empty or have one tag per trial.
pub fn write_dataset(
    dir: &Path,
    name: &str,
    channels: &[String],
    class_names: &[String],
    set: &TrialSet,
    splits: &[SplitTag],
) -> Result<DatasetManifest> {
    set.validate()?;
    if !splits.is_empty() && splits.len() != set.len() {
        return Err(Error::Dataset(format!("{} split tags for {} trials", splits.len(), set.len())));
    }
    let trials_dir = dir.join("trials");
    std::fs::create_dir_all(&trials_dir).map_err(|e| Error::io(format!("creating {}", trials_dir.display()), e))?;
    let fs = set.eeg.first().map_or(1.0, |t| t.fs);
    let tfr = set.has_tfr().then(|| TfrSidecar::for_freqs(&set.tfr[0].freqs));
    let mut entries = Vec::with_capacity(set.len());
    for (i, trial) in set.eeg.iter().enumerate() {
        let file = format!("trials/{i:06}.eegt");
        write_tensor(&dir.join(&file), &trial.data)?;
        if tfr.is_some() {
            write_tensor(&dir.join(format!("trials/{i:06}{TFR_SUFFIX}")), &set.tfr[i].data)?;
        }
        entries.push(TrialEntry {
            file,
            label: trial.label,
            subject: trial.subject,
            session: trial.session,
            split: splits.get(i).copied(),
        });
    }
    let manifest = DatasetManifest {
        name: name.to_string(),
        fs,
        channels: channels.to_vec(),
        n_classes: class_names.len(),
        class_names: class_names.to_vec(),
        trials: entries,
        tfr,
    };
    manifest.validate_header()?;
    let path = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest)?;
    std::fs::write(&path, text).map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
    Ok(manifest)
}
