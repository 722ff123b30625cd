//! Segment-and-reassemble augmentation.
//!
//! The time axis is cut into `R` contiguous segments. Each segment of the
//! synthetic trial is copied, in place, from a same-class donor drawn
//! uniformly with replacement; both views take the same donor per segment.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataio::TrialSet;
use crate::error::{Error, Result};
use crate::signal::{EegTrial, TfrTrial};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AugmentSpec {
    /// Segments per trial.
    pub r: usize,
    /// Samples generated per call.
    pub count: usize,
}

/// Half-open segment ranges; the first `T mod R` segments are one sample
/// longer.
pub fn segment_bounds(samples: usize, r: usize) -> Result<Vec<(usize, usize)>> {
    if r == 0 || r > samples {
        return Err(Error::InvalidArgument(format!("cannot cut {samples} samples into {r} segments")));
    }
    let (base, extra) = (samples / r, samples % r);
    let mut start = 0;
    Ok((0..r)
        .map(|i| {
            let len = base + usize::from(i < extra);
            let seg = (start, start + len);
            start += len;
            seg
        })
        .collect())
}

/// Builds one trial from an explicit donor per segment (indices into
/// `pool`). Labels come from the first donor.
pub fn reassemble_from(pool: &TrialSet, donors: &[usize], r: usize) -> Result<(EegTrial, TfrTrial)> {
    if !pool.has_tfr() {
        return Err(Error::Dataset("augmentation needs both EEG and TFR views".into()));
    }
    if donors.len() != r {
        return Err(Error::InvalidArgument(format!("{} donors for {r} segments", donors.len())));
    }
    let (ch, t, f) = pool.geometry().expect("non-empty pool");
    let bounds = segment_bounds(t, r)?;
    let mut eeg = vec![0.0; ch * t];
    let mut tfr = vec![0.0; ch * f * t];
    for (&(a, b), &d) in bounds.iter().zip(donors) {
        let src_e = pool.eeg[d].data.data();
        let src_w = pool.tfr[d].data.data();
        for row in 0..ch {
            eeg[row * t + a..row * t + b].copy_from_slice(&src_e[row * t + a..row * t + b]);
        }
        for row in 0..ch * f {
            tfr[row * t + a..row * t + b].copy_from_slice(&src_w[row * t + a..row * t + b]);
        }
    }
    let first = &pool.eeg[donors[0]];
    let mut e = EegTrial::new(Tensor::new(vec![ch, t], eeg)?, first.fs, first.label)?;
    e.subject = first.subject;
    e.session = first.session;
    let w = TfrTrial {
        data: Tensor::new(vec![ch, f, t], tfr)?,
        freqs: pool.tfr[donors[0]].freqs.clone(),
        fs: first.fs,
        label: first.label,
    };
    Ok((e, w))
}

/// Like [`segment_reassemble`], also returning the donor drawn for each
/// segment.
pub fn segment_reassemble_traced<R: Rng + ?Sized>(
    pool: &TrialSet,
    class: usize,
    r: usize,
    rng: &mut R,
) -> Result<(EegTrial, TfrTrial, Vec<usize>)> {
    let members: Vec<usize> = (0..pool.len()).filter(|&i| pool.eeg[i].label == class).collect();
    if members.is_empty() {
        return Err(Error::Dataset(format!("no trials of class {class} to augment from")));
    }
    let (_, t, _) = pool.geometry().expect("non-empty pool");
    segment_bounds(t, r)?;
    let donors: Vec<usize> = (0..r).map(|_| members[rng.random_range(0..members.len())]).collect();
    let (e, w) = reassemble_from(pool, &donors, r)?;
    Ok((e, w, donors))
}

pub fn segment_reassemble<R: Rng + ?Sized>(
    pool: &TrialSet,
    class: usize,
    r: usize,
    rng: &mut R,
) -> Result<(EegTrial, TfrTrial)> {
    segment_reassemble_traced(pool, class, r, rng).map(|(e, w, _)| (e, w))
}

/// Generates `spec.count` trials cycling over `classes` (sorted, deduped)
/// so the batch stays class-balanced.
pub fn augment_batch<R: Rng + ?Sized>(
    pool: &TrialSet,
    classes: &[usize],
    spec: AugmentSpec,
    rng: &mut R,
) -> Result<TrialSet> {
    let mut present = classes.to_vec();
    present.sort_unstable();
    present.dedup();
    if present.is_empty() {
        return Err(Error::InvalidArgument("no classes to augment".into()));
    }
    let mut out = TrialSet::default();
    for i in 0..spec.count {
        let (e, w) = segment_reassemble(pool, present[i % present.len()], spec.r, rng)?;
        out.eeg.push(e);
        out.tfr.push(w);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};

    fn pool(values: &[(usize, f64)], ch: usize, f: usize, t: usize) -> TrialSet {
        let mut set = TrialSet::default();
        for &(label, base) in values {
            let eeg: Vec<f64> = (0..ch * t).map(|i| base + i as f64).collect();
            let tfr: Vec<f64> = (0..ch * f * t).map(|i| -base - i as f64).collect();
            set.eeg.push(EegTrial::new(Tensor::new(vec![ch, t], eeg).unwrap(), 100.0, label).unwrap());
            set.tfr.push(TfrTrial {
                data: Tensor::new(vec![ch, f, t], tfr).unwrap(),
                freqs: (1..=f).map(|v| v as f64).collect(),
                fs: 100.0,
                label,
            });
        }
        set
    }

    #[test]
    fn bounds_spread_the_remainder() {
        assert_eq!(segment_bounds(8, 4).unwrap(), vec![(0, 2), (2, 4), (4, 6), (6, 8)]);
        assert_eq!(segment_bounds(10, 4).unwrap(), vec![(0, 3), (3, 6), (6, 8), (8, 10)]);
        assert!(segment_bounds(3, 4).is_err());
        assert!(segment_bounds(3, 0).is_err());
    }

    #[test]
    fn single_segment_copies_one_donor() {
        let p = pool(&[(0, 0.0), (0, 1000.0), (1, 5000.0)], 2, 3, 8);
        let mut rng = stream(7, Stream::Augment);
        let (e, w, donors) = segment_reassemble_traced(&p, 0, 1, &mut rng).unwrap();
        assert_eq!(e.data, p.eeg[donors[0]].data);
        assert_eq!(w.data, p.tfr[donors[0]].data);
        assert_eq!(e.label, 0);
    }

    #[test]
    fn lone_donor_is_reproduced() {
        let p = pool(&[(1, 3.0), (0, 9.0)], 2, 2, 9);
        let mut rng = stream(1, Stream::Augment);
        let (e, w) = segment_reassemble(&p, 1, 4, &mut rng).unwrap();
        assert_eq!(e.data, p.eeg[0].data);
        assert_eq!(w.data, p.tfr[0].data);
    }

    #[test]
    fn recorded_draws_build_expected_trial() {
        let p = pool(&[(0, 0.0), (0, 100.0)], 1, 1, 8);
        let (a, b) = (0, 1);
        let (e, w) = reassemble_from(&p, &[a, b, b, a], 4).unwrap();
        let (ea, eb) = (p.eeg[a].data.data(), p.eeg[b].data.data());
        let expect: Vec<f64> = (0..8).map(|i| if (2..6).contains(&i) { eb[i] } else { ea[i] }).collect();
        assert_eq!(e.data.data(), expect.as_slice());
        let (wa, wb) = (p.tfr[a].data.data(), p.tfr[b].data.data());
        let expect: Vec<f64> = (0..8).map(|i| if (2..6).contains(&i) { wb[i] } else { wa[i] }).collect();
        assert_eq!(w.data.data(), expect.as_slice());
    }

    #[test]
    fn errors() {
        let p = pool(&[(0, 0.0)], 1, 1, 4);
        let mut rng = stream(1, Stream::Augment);
        assert!(segment_reassemble(&p, 1, 2, &mut rng).is_err());
        assert!(segment_reassemble(&p, 0, 5, &mut rng).is_err());
    }

    #[test]
    fn batch_is_class_balanced() {
        let p = pool(&[(0, 0.0), (1, 50.0), (2, 90.0)], 1, 1, 6);
        let mut rng = stream(3, Stream::Augment);
        let out = augment_batch(&p, &[2, 0, 2], AugmentSpec { r: 3, count: 5 }, &mut rng).unwrap();
        assert_eq!(out.labels(), vec![0, 2, 0, 2, 0]);
    }
}
