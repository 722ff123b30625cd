use dtsst_core::metrics::{
    accuracy, chance_agreement, confusion_csv, export_report, kappa, kappa_with, read_report, wilcoxon_signed_rank,
    Chance, ConfusionMatrix, EvalReport,
};
use dtsst_core::Error;
use proptest::prelude::*;

fn cm(rows: Vec<Vec<u64>>) -> ConfusionMatrix {
    ConfusionMatrix::from_rows(rows).unwrap()
}

#[test]
fn accuracy_examples() {
    assert_eq!(accuracy(&cm(vec![vec![3, 0], vec![0, 9]])).unwrap(), 1.0);
    assert_eq!(accuracy(&cm(vec![vec![0, 3], vec![9, 0]])).unwrap(), 0.0);
    let mut rows = vec![vec![0u64; 4]; 4];
    for (k, row) in rows.iter_mut().enumerate() {
        row[k] = 15;
        row[(k + 1) % 4] = 5;
    }
    assert_eq!(accuracy(&cm(rows)).unwrap(), 0.75);
    assert!(accuracy(&ConfusionMatrix::new(3)).is_err());
}

#[test]
fn kappa_hand_values() {
    // n = 50, P_o = 0.7, rows (25, 25), cols (30, 20), P_e = 0.5
    let k = kappa(&cm(vec![vec![20, 5], vec![10, 15]])).unwrap();
    assert!((k - 0.4).abs() < 1e-12);
    // n = 50, P_o = 0.74, rows = cols = (15, 15, 20), P_e = 0.34
    let k = kappa(&cm(vec![vec![10, 2, 3], vec![1, 12, 2], vec![4, 1, 15]])).unwrap();
    assert!((k - 0.40 / 0.66).abs() < 1e-12);
    // balanced truth, uniform predictions: P_o = P_e = 0.25
    assert_eq!(kappa(&cm(vec![vec![5; 4]; 4])).unwrap(), 0.0);
    assert_eq!(kappa(&cm(vec![vec![7, 0], vec![0, 3]])).unwrap(), 1.0);
}

#[test]
fn kappa_at_published_accuracy_level() {
    let mut rows = vec![vec![0u64; 4]; 4];
    for (k, row) in rows.iter_mut().enumerate() {
        row[k] = 8067;
        row[(k + 1) % 4] = 1933;
    }
    let m = cm(rows);
    assert_eq!(chance_agreement(&m, Chance::Marginal).unwrap(), 0.25);
    let k = kappa(&m).unwrap();
    assert!((k - (0.8067 - 0.25) / 0.75).abs() < 1e-12);
    assert!((k - 0.7423).abs() < 1e-4);
    assert_eq!(kappa_with(&m, Chance::Uniform).unwrap(), k);
}

/// Independent reference: naive O(n^2) midranks and a full sign-pattern
/// enumeration in exact doubled-integer arithmetic.
fn oracle(d: &[i64]) -> Option<(f64, f64)> {
    let nz: Vec<i64> = d.iter().copied().filter(|&v| v != 0).collect();
    if nz.is_empty() {
        return None;
    }
    let n = nz.len();
    let doubled: Vec<u64> = nz
        .iter()
        .map(|&v| {
            let below = nz.iter().filter(|&&u| u.abs() < v.abs()).count() as u64;
            let equal = nz.iter().filter(|&&u| u.abs() == v.abs()).count() as u64;
            2 * below + equal + 1
        })
        .collect();
    let total: u64 = doubled.iter().sum();
    let plus: u64 = nz.iter().zip(&doubled).filter(|(v, _)| **v > 0).map(|(_, r)| r).sum();
    let w = plus.min(total - plus);
    let mut hits = 0u64;
    for mask in 0..(1u64 << n) {
        let s: u64 = (0..n).filter(|&i| mask & (1 << i) != 0).map(|i| doubled[i]).sum();
        hits += u64::from(s.min(total - s) <= w);
    }
    Some((w as f64 / 2.0, hits as f64 / (1u64 << n) as f64))
}

fn check(d: &[i64]) {
    let a: Vec<f64> = d.iter().map(|&v| v as f64).collect();
    let b = vec![0.0; d.len()];
    match (oracle(d), wilcoxon_signed_rank(&a, &b)) {
        (None, Err(Error::Undefined(_))) => {}
        (Some((w, p)), Ok(r)) => {
            assert_eq!(r.w, w, "{d:?}");
            assert!((r.p_value - p).abs() < 1e-12, "{d:?}: {} vs {p}", r.p_value);
            assert!(r.exact);
        }
        (o, r) => panic!("{d:?}: oracle {o:?}, got {r:?}"),
    }
}

#[test]
fn exact_p_matches_enumeration_on_small_grid() {
    let values = [-2i64, -1, 0, 1, 2];
    for n in 1..=6u32 {
        for code in 0..5usize.pow(n) {
            let d: Vec<i64> = (0..n).map(|i| values[code / 5usize.pow(i) % 5]).collect();
            check(&d);
        }
    }
}

#[test]
fn wilcoxon_examples() {
    let r = wilcoxon_signed_rank(&[1.0, 2.0, 3.0], &[0.0; 3]).unwrap();
    assert_eq!((r.w, r.p_value), (0.0, 0.25));
    let a = [0.81, 0.64, 0.93, 0.70, 0.77, 0.88];
    let b = [0.78, 0.66, 0.85, 0.61, 0.79, 0.80];
    let ab = wilcoxon_signed_rank(&a, &b).unwrap();
    let ba = wilcoxon_signed_rank(&b, &a).unwrap();
    assert_eq!((ab.w, ab.p_value), (ba.w, ba.p_value));
    assert!(matches!(wilcoxon_signed_rank(&a, &a), Err(Error::Undefined(_))));
}

#[test]
fn normal_approximation_reference_values() {
    // reference p-values from an established statistics package using the
    // same zero, tie, and continuity conventions
    let d: Vec<f64> = (1..=20).map(|i| if i == 20 { -20.0 } else { i as f64 }).collect();
    let r = wilcoxon_signed_rank(&d, &[0.0; 20]).unwrap();
    assert!(!r.exact);
    assert_eq!(r.w, 20.0);
    assert!((r.p_value - 0.0016071245871007082).abs() < 1e-12);
    let d = [1.0, 2.0, 2.0, 3.0, -4.0, 5.0, 6.0, 6.0, 7.0, 8.0, 9.0, -10.0, 11.0, 12.0, 13.0, 14.0, 0.0];
    let r = wilcoxon_signed_rank(&d, &[0.0; 17]).unwrap();
    assert_eq!((r.w, r.n_effective), (17.0, 16));
    assert!((r.p_value - 0.008997054851004672).abs() < 1e-12);
}

#[test]
fn confusion_csv_bytes() {
    let names = vec!["0".to_string(), "1".to_string()];
    let text = confusion_csv(&cm(vec![vec![3, 1], vec![0, 4]]), &names).unwrap();
    assert_eq!(text, "pred_0,pred_1\n3,1\n0,4\n");
}

#[test]
fn report_export_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let names: Vec<String> = ["left", "right"].iter().map(|s| s.to_string()).collect();
    let truth = [0, 0, 1, 1, 1, 0];
    let report = EvalReport::build(&truth, &truth, &[1, 1, 1, 2, 2, 2], &names, Chance::Marginal).unwrap();
    assert_eq!(report.accuracy, 1.0);
    assert_eq!(report.kappa_pooled, Some(1.0));
    assert_eq!(report.subjects.len(), 2);
    export_report(&report, dir.path()).unwrap();
    let json = std::fs::read_to_string(dir.path().join("report.json")).unwrap();
    assert!(json.contains("\"accuracy\": 1.0"));
    assert_eq!(read_report(&dir.path().join("report.json")).unwrap(), report);
    let csv = std::fs::read_to_string(dir.path().join("confusion.csv")).unwrap();
    assert_eq!(csv, "pred_left,pred_right\n3,0\n0,3\n");
}

#[test]
fn pooled_and_mean_kappa_differ() {
    let names: Vec<String> = ["a", "b"].iter().map(|s| s.to_string()).collect();
    let truth = [0, 1, 0, 1, 0, 1, 0, 1];
    let pred = [0, 1, 0, 1, 0, 0, 1, 1];
    let r = EvalReport::build(&truth, &pred, &[1, 1, 1, 1, 2, 2, 2, 2], &names, Chance::Marginal).unwrap();
    // subject 1 is perfect, subject 2 is at chance
    assert_eq!(r.kappa_mean, Some(0.5));
    assert!((r.kappa_pooled.unwrap() - 0.5).abs() < 1e-12);
    assert_eq!(r.accuracy_std, Some(0.25));
    assert_eq!(r.per_class_recall, vec![Some(0.75), Some(0.75)]);
}

fn matrix() -> impl Strategy<Value = ConfusionMatrix> {
    (1usize..5).prop_flat_map(|m| prop::collection::vec(prop::collection::vec(0u64..20, m), m)).prop_map(cm)
}

proptest! {
    #[test]
    fn exact_p_matches_enumeration(d in prop::collection::vec(-6i64..=6, 1..=8)) {
        check(&d);
    }

    #[test]
    fn chance_and_kappa_are_bounded(m in matrix()) {
        prop_assume!(m.total() > 0);
        let pe = chance_agreement(&m, Chance::Marginal).unwrap();
        prop_assert!((0.0..=1.0).contains(&pe));
        if let Ok(k) = kappa(&m) {
            prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&k));
            let diagonal = m.rows().iter().enumerate().all(|(i, r)| r.iter().enumerate().all(|(j, &c)| i == j || c == 0));
            prop_assert_eq!((k - 1.0).abs() < 1e-12, diagonal && m.trace() > 0);
        }
    }

    #[test]
    fn accuracy_ignores_relabeling(m in matrix(), shift in 0usize..4) {
        prop_assume!(m.total() > 0);
        let n = m.n_classes();
        let p = |i: usize| (i + shift) % n;
        let mut rows = vec![vec![0u64; n]; n];
        for i in 0..n {
            for j in 0..n {
                rows[p(i)][p(j)] = m.rows()[i][j];
            }
        }
        prop_assert_eq!(accuracy(&m).unwrap(), accuracy(&cm(rows)).unwrap());
    }
}
