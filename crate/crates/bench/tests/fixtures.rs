use dtsst_bench::{model_and_batch, recording};
use proptest::prelude::*;

#[test]
fn mini_fixture_matches_preset_geometry() {
    let (model, eeg, tfr, labels) = model_and_batch("mini", 5);
    assert_eq!(eeg.shape(), &[5, 4, 64]);
    assert_eq!(tfr.shape(), &[5, 4, 6, 64]);
    assert_eq!(labels, vec![0, 1, 0, 1, 0]);
    let (logits, _) = model.predict(&eeg, &tfr).unwrap();
    assert_eq!(logits.shape(), &[5, 2]);
    assert!(logits.data().iter().all(|v| v.is_finite()));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn recording_is_deterministic_and_bounded(ch in 1usize..6, t in 1usize..300, fs in 50.0f64..500.0) {
        let a = recording(ch, t, fs);
        prop_assert_eq!(a.data.shape(), &[ch, t]);
        prop_assert!(a.data.data().iter().all(|v| v.abs() <= 1.5));
        prop_assert_eq!(a, recording(ch, t, fs));
    }
}
