//! Accuracy, Cohen's kappa, confusion matrices, and the Wilcoxon
//! signed-rank test.

use std::path::Path;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// Largest effective sample size for which p is computed exactly.
pub const WILCOXON_EXACT_MAX: usize = 12;

/// Rows are true classes, columns predictions.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ConfusionMatrix {
    counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(n_classes: usize) -> Self {
        Self { counts: vec![vec![0; n_classes]; n_classes] }
    }

    pub fn from_rows(counts: Vec<Vec<u64>>) -> Result<Self> {
        let m = counts.len();
        if m == 0 || counts.iter().any(|r| r.len() != m) {
            return Err(Error::InvalidArgument("confusion matrix must be square and non-empty".into()));
        }
        Ok(Self { counts })
    }

    pub fn from_predictions(truth: &[usize], pred: &[usize], n_classes: usize) -> Result<Self> {
        if truth.len() != pred.len() {
            return Err(Error::InvalidArgument(format!("{} labels vs {} predictions", truth.len(), pred.len())));
        }
        let mut cm = Self::new(n_classes);
        for (&y, &p) in truth.iter().zip(pred) {
            if y >= n_classes || p >= n_classes {
                return Err(Error::InvalidArgument(format!("class pair ({y}, {p}) out of range for {n_classes}")));
            }
            cm.counts[y][p] += 1;
        }
        Ok(cm)
    }

    pub fn n_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn rows(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.n_classes()).map(|k| self.counts[k][k]).sum()
    }

    pub fn add(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.n_classes() != self.n_classes() {
            return Err(Error::InvalidArgument("confusion matrices differ in size".into()));
        }
        for (a, b) in self.counts.iter_mut().flatten().zip(other.counts.iter().flatten()) {
            *a += b;
        }
        Ok(())
    }

    /// Recall per true class; `None` for classes with no trials.
    pub fn recall(&self) -> Vec<Option<f64>> {
        self.counts
            .iter()
            .enumerate()
            .map(|(k, row)| {
                let n: u64 = row.iter().sum();
                (n > 0).then(|| row[k] as f64 / n as f64)
            })
            .collect()
    }
}

pub fn accuracy(cm: &ConfusionMatrix) -> Result<f64> {
    match cm.total() {
        0 => Err(Error::InvalidArgument("accuracy of an empty confusion matrix".into())),
        n => Ok(cm.trace() as f64 / n as f64),
    }
}

/// Chance-agreement model for kappa.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Chance {
    /// Product of row and column marginals.
    #[default]
    Marginal,
    /// `1 / n_classes`.
    Uniform,
}

pub fn chance_agreement(cm: &ConfusionMatrix, chance: Chance) -> Result<f64> {
    let n = cm.total();
    if n == 0 {
        return Err(Error::InvalidArgument("kappa of an empty confusion matrix".into()));
    }
    Ok(match chance {
        Chance::Uniform => 1.0 / cm.n_classes() as f64,
        Chance::Marginal => marginal_products(cm) as f64 / (n as f64 * n as f64),
    })
}

fn marginal_products(cm: &ConfusionMatrix) -> u128 {
    let m = cm.n_classes();
    (0..m)
        .map(|k| {
            let row: u64 = cm.counts[k].iter().sum();
            let col: u64 = cm.counts.iter().map(|r| r[k]).sum();
            row as u128 * col as u128
        })
        .sum()
}

pub fn kappa(cm: &ConfusionMatrix) -> Result<f64> {
    kappa_with(cm, Chance::Marginal)
}

/// `(P_o - P_e) / (1 - P_e)`. When chance agreement is total the value is
/// 1 for perfect agreement and undefined otherwise.
pub fn kappa_with(cm: &ConfusionMatrix, chance: Chance) -> Result<f64> {
    let po = accuracy(cm)?;
    let pe = chance_agreement(cm, chance)?;
    let n = cm.total() as u128;
    let degenerate = match chance {
        Chance::Marginal => marginal_products(cm) == n * n,
        Chance::Uniform => cm.n_classes() == 1,
    };
    if degenerate {
        return if cm.trace() == cm.total() {
            Ok(1.0)
        } else {
            Err(Error::Undefined("kappa with chance agreement 1 and imperfect accuracy".into()))
        };
    }
    Ok((po - pe) / (1.0 - pe))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Wilcoxon {
    /// `min(W+, W-)`.
    pub w: f64,
    pub w_plus: f64,
    pub w_minus: f64,
    /// Non-zero differences.
    pub n_effective: usize,
    pub p_value: f64,
    pub exact: bool,
}

/// Midranks of `values` (1-based).
pub fn midranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Two-sided paired test on `a - b`. Zero differences are dropped; p is
/// exact up to [`WILCOXON_EXACT_MAX`] remaining pairs and otherwise uses
/// the normal approximation with tie and continuity corrections.
pub fn wilcoxon_signed_rank(a: &[f64], b: &[f64]) -> Result<Wilcoxon> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::InvalidArgument(format!("paired samples of length {} and {}", a.len(), b.len())));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).filter(|v| *v != 0.0).collect();
    if d.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("non-finite paired difference".into()));
    }
    if d.is_empty() {
        return Err(Error::Undefined("all paired differences are zero".into()));
    }
    let ranks = midranks(&d.iter().map(|v| v.abs()).collect::<Vec<_>>());
    let w_plus: f64 = d.iter().zip(&ranks).filter(|(v, _)| **v > 0.0).map(|(_, r)| r).sum();
    let total: f64 = ranks.iter().sum();
    let w_minus = total - w_plus;
    let w = w_plus.min(w_minus);
    let n = d.len();
    let (p_value, exact) =
        if n <= WILCOXON_EXACT_MAX { (exact_p(&ranks, w), true) } else { (normal_p(&ranks, w)?, false) };
    Ok(Wilcoxon { w, w_plus, w_minus, n_effective: n, p_value, exact })
}

/// Counts sign patterns whose statistic is at least as extreme as `w`.
/// Ranks are whole or half integers, so sums are compared after doubling.
fn exact_p(ranks: &[f64], w: f64) -> f64 {
    let doubled: Vec<u64> = ranks.iter().map(|r| (2.0 * r).round() as u64).collect();
    let total: u64 = doubled.iter().sum();
    let w2 = (2.0 * w).round() as u64;
    let n = ranks.len();
    let mut extreme = 0u64;
    for mask in 0u64..(1 << n) {
        let plus: u64 = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| doubled[i]).sum();
        if plus.min(total - plus) <= w2 {
            extreme += 1;
        }
    }
    extreme as f64 / (1u64 << n) as f64
}

fn normal_p(ranks: &[f64], w: f64) -> Result<f64> {
    let n = ranks.len() as f64;
    let mean = n * (n + 1.0) / 4.0;
    let mut sorted = ranks.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut ties = 0.0;
    for group in sorted.chunk_by(|a, b| a == b) {
        let t = group.len() as f64;
        ties += t * t * t - t;
    }
    let var = n * (n + 1.0) * (2.0 * n + 1.0) / 24.0 - ties / 48.0;
    if !(var > 0.0) {
        return Err(Error::Undefined("zero variance in the signed-rank statistic".into()));
    }
    let z = ((w - mean).abs() - 0.5).max(0.0) / var.sqrt();
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    Ok((2.0 * normal.sf(z)).min(1.0))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubjectScore {
    pub subject: u32,
    pub n: u64,
    pub accuracy: f64,
    pub kappa: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n: u64,
    pub accuracy: f64,
    /// Kappa of the pooled confusion matrix.
    pub kappa: Option<f64>,
    pub kappa_pooled: Option<f64>,
    /// Mean of per-subject kappas.
    pub kappa_mean: Option<f64>,
    pub chance: Chance,
    pub class_names: Vec<String>,
    pub per_class_recall: Vec<Option<f64>>,
    pub confusion: ConfusionMatrix,
    #[serde(default)]
    pub subjects: Vec<SubjectScore>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accuracy_std: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wilcoxon: Option<Wilcoxon>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<serde_json::Value>,
}

impl EvalReport {
    /// Builds a report from labels, predictions, and per-trial subject ids.
    pub fn build(
        truth: &[usize],
        pred: &[usize],
        subjects: &[u32],
        class_names: &[String],
        chance: Chance,
    ) -> Result<Self> {
        let m = class_names.len();
        if subjects.len() != truth.len() {
            return Err(Error::InvalidArgument("one subject id per trial required".into()));
        }
        let cm = ConfusionMatrix::from_predictions(truth, pred, m)?;
        let mut ids: Vec<u32> = subjects.to_vec();
        ids.sort_unstable();
        ids.dedup();
        let mut per_subject = Vec::with_capacity(ids.len());
        for &s in &ids {
            let (t, p): (Vec<usize>, Vec<usize>) =
                (0..truth.len()).filter(|&i| subjects[i] == s).map(|i| (truth[i], pred[i])).unzip();
            let c = ConfusionMatrix::from_predictions(&t, &p, m)?;
            per_subject.push(SubjectScore {
                subject: s,
                n: c.total(),
                accuracy: accuracy(&c)?,
                kappa: kappa_with(&c, chance).ok(),
            });
        }
        let kappas: Vec<f64> = per_subject.iter().filter_map(|s| s.kappa).collect();
        let kappa_mean = (!kappas.is_empty()).then(|| kappas.iter().sum::<f64>() / kappas.len() as f64);
        let accs: Vec<f64> = per_subject.iter().map(|s| s.accuracy).collect();
        let accuracy_std = (accs.len() > 1).then(|| {
            let mu = accs.iter().sum::<f64>() / accs.len() as f64;
            (accs.iter().map(|a| (a - mu).powi(2)).sum::<f64>() / accs.len() as f64).sqrt()
        });
        let pooled = kappa_with(&cm, chance).ok();
        Ok(Self {
            n: cm.total(),
            accuracy: accuracy(&cm)?,
            kappa: pooled,
            kappa_pooled: pooled,
            kappa_mean,
            chance,
            class_names: class_names.to_vec(),
            per_class_recall: cm.recall(),
            confusion: cm,
            subjects: per_subject,
            accuracy_std,
            wilcoxon: None,
            config: None,
        })
    }
}

/// Confusion matrix as CSV with a `pred_<class>` header row.
pub fn confusion_csv(cm: &ConfusionMatrix, class_names: &[String]) -> Result<String> {
    if class_names.len() != cm.n_classes() {
        return Err(Error::InvalidArgument(format!("{} names for {} classes", class_names.len(), cm.n_classes())));
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::InvalidArgument(e.to_string());
    w.write_record(class_names.iter().map(|c| format!("pred_{c}"))).map_err(csv_err)?;
    for row in cm.rows() {
        w.write_record(row.iter().map(u64::to_string)).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::InvalidArgument(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("ascii digits and utf-8 names"))
}

/// Writes `confusion.csv` and `report.json` into `dir`.
pub fn export_report(report: &EvalReport, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    let csv = confusion_csv(&report.confusion, &report.class_names)?;
    let path = dir.join("confusion.csv");
    std::fs::write(&path, csv).map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
    let path = dir.join("report.json");
    let json = serde_json::to_string_pretty(report)?;
    std::fs::write(&path, json).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub fn read_report(path: &Path) -> Result<EvalReport> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    Ok(serde_json::from_str(&text)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn midranks_average_ties() {
        assert_eq!(midranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn three_positive_differences() {
        let w = wilcoxon_signed_rank(&[1.0, 2.0, 3.0], &[0.0; 3]).unwrap();
        assert_eq!((w.w, w.w_plus, w.n_effective), (0.0, 6.0, 3));
        assert_eq!(w.p_value, 0.25);
        assert!(w.exact);
    }

    #[test]
    fn identical_samples_are_undefined() {
        let e = wilcoxon_signed_rank(&[1.0, 2.0], &[1.0, 2.0]).unwrap_err();
        assert!(matches!(e, Error::Undefined(_)));
    }

    #[test]
    fn degenerate_kappa() {
        let one = ConfusionMatrix::from_rows(vec![vec![5, 0], vec![0, 0]]).unwrap();
        assert_eq!(kappa(&one).unwrap(), 1.0);
        let single = ConfusionMatrix::from_rows(vec![vec![4]]).unwrap();
        assert_eq!(kappa_with(&single, Chance::Uniform).unwrap(), 1.0);
        let off = ConfusionMatrix::from_rows(vec![vec![0, 5], vec![0, 0]]).unwrap();
        assert_eq!(kappa(&off).unwrap(), 0.0);
        assert!(kappa(&ConfusionMatrix::new(2)).is_err());
    }

    #[test]
    fn uniform_chance() {
        let cm = ConfusionMatrix::from_rows(vec![vec![8, 2], vec![6, 4]]).unwrap();
        let k = kappa_with(&cm, Chance::Uniform).unwrap();
        assert!((k - (0.6 - 0.5) / 0.5).abs() < 1e-12);
    }
}
