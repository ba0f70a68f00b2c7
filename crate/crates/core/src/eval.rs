//! Confusion-matrix metrics and k-fold cross-validation.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::balance::{smote_oversample, SmoteConfig};
use crate::data::{Dataset, Label};
use crate::error::{Error, Result};
use crate::seed::component_rng;
use crate::tcn::{predict, train, TcnConfig, TcnModel};

/// Counts with Anomalous as the positive class.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }
}

pub fn confusion(y_true: &[Label], y_pred: &[Label]) -> Result<ConfusionMatrix> {
    if y_true.len() != y_pred.len() || y_true.is_empty() {
        return Err(Error::Shape(format!(
            "confusion needs equal non-empty label vectors, got {} and {}",
            y_true.len(),
            y_pred.len()
        )));
    }
    let mut cm = ConfusionMatrix::default();
    for (t, p) in y_true.iter().zip(y_pred) {
        match (t, p) {
            (Label::Anomalous, Label::Anomalous) => cm.tp += 1,
            (Label::Healthy, Label::Anomalous) => cm.fp += 1,
            (Label::Healthy, Label::Healthy) => cm.tn += 1,
            (Label::Anomalous, Label::Healthy) => cm.fn_ += 1,
        }
    }
    Ok(cm)
}

/// Classification metrics; `None` marks a ratio whose denominator is zero.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub accuracy: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f_score: Option<f64>,
    pub g_score: Option<f64>,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

pub fn metrics(cm: &ConfusionMatrix) -> MetricReport {
    let accuracy = ratio(cm.tp + cm.tn, cm.total());
    let precision = ratio(cm.tp, cm.tp + cm.fp);
    let recall = ratio(cm.tp, cm.tp + cm.fn_);
    let specificity = ratio(cm.tn, cm.tn + cm.fp);
    let f_score = match (precision, recall) {
        (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
        _ => None,
    };
    let g_score = match (recall, specificity) {
        (Some(r), Some(s)) => Some((r * s).sqrt()),
        _ => None,
    };
    MetricReport {
        accuracy,
        precision,
        recall,
        f_score,
        g_score,
    }
}

/// Renders a metric value the way results tables do: four decimals, or
/// `---` when the metric does not apply.
pub fn format_metric(v: Option<f64>) -> String {
    v.map_or_else(|| "---".to_string(), |v| format!("{v:.4}"))
}

impl MetricReport {
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        for (name, v) in [
            ("accuracy", self.accuracy),
            ("recall", self.recall),
            ("precision", self.precision),
            ("f-score", self.f_score),
            ("g-score", self.g_score),
        ] {
            let _ = writeln!(out, "{name:<10} {}", format_metric(v));
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub confusion: ConfusionMatrix,
    pub metrics: MetricReport,
}

pub fn evaluate(model: &TcnModel, ds: &Dataset) -> Result<Evaluation> {
    let truth = ds.labels()?;
    let pred = predict(model, &ds.windows)?;
    let confusion = confusion(&truth, &pred)?;
    Ok(Evaluation {
        metrics: metrics(&confusion),
        confusion,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KFoldReport {
    /// Held-out accuracy of each fold, in percent.
    pub fold_accuracies: Vec<f64>,
    pub mean: f64,
    /// Population standard deviation of the fold accuracies.
    pub std: f64,
}

impl KFoldReport {
    pub fn from_accuracies(fold_accuracies: Vec<f64>) -> Self {
        let n = fold_accuracies.len().max(1) as f64;
        let mean = fold_accuracies.iter().sum::<f64>() / n;
        let var = fold_accuracies.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
        KFoldReport {
            fold_accuracies,
            mean,
            std: var.sqrt(),
        }
    }

    /// One row in the per-fold / mean / std layout.
    pub fn to_table(&self, name: &str) -> String {
        let mut header = format!("{:<12}", "dataset");
        let mut row = format!("{name:<12}");
        for (i, a) in self.fold_accuracies.iter().enumerate() {
            let _ = write!(header, " {:>7}", format!("fold{}", i + 1));
            let _ = write!(row, " {a:>7.2}");
        }
        let _ = write!(header, " {:>7} {:>7}", "mean", "std");
        let _ = write!(row, " {:>7.2} {:>7.2}", self.mean, self.std);
        format!("{header}\n{row}\n")
    }
}

/// Shuffles `0..n` with `seed` and deals it into `k` folds whose sizes differ
/// by at most one.
pub fn kfold_indices(n: usize, k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 || k > n {
        return Err(Error::Config(format!("cannot split {n} windows into {k} folds")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut component_rng(seed, "kfold-shuffle"));
    let base = n / k;
    let extra = n % k;
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let size = base + usize::from(f < extra);
        folds.push(order[start..start + size].to_vec());
        start += size;
    }
    Ok(folds)
}

#[derive(Clone, Debug)]
pub struct KFoldConfig {
    pub k: usize,
    pub tcn: TcnConfig,
    pub smote: SmoteConfig,
    pub seed: u64,
    /// Folds evaluated concurrently; 1 keeps everything on the calling thread.
    pub jobs: usize,
}

fn run_fold(ds: &Dataset, folds: &[Vec<usize>], fold: usize, cfg: &KFoldConfig) -> Result<f64> {
    let train_idx: Vec<usize> = folds
        .iter()
        .enumerate()
        .filter(|&(f, _)| f != fold)
        .flat_map(|(_, idx)| idx.iter().copied())
        .collect();
    let train_set = ds.subset(&train_idx);
    let test_set = ds.subset(&folds[fold]);
    if train_set.class_counts().contains(&0) {
        return Err(Error::DegenerateFold { fold });
    }
    let balanced = smote_oversample(&train_set, &cfg.smote)?;
    let (model, _) = train(&balanced, &cfg.tcn)?;
    let eval = evaluate(&model, &test_set)?;
    Ok(100.0 * eval.metrics.accuracy.unwrap_or(0.0))
}

/// Shuffled k-fold cross-validation. Each fold's training portion is
/// SMOTE-balanced on its own; the held-out fold is tested unmodified.
pub fn kfold(ds: &Dataset, cfg: &KFoldConfig) -> Result<KFoldReport> {
    ds.labels()?;
    let folds = kfold_indices(ds.len(), cfg.k, cfg.seed)?;
    let jobs = cfg.jobs.clamp(1, cfg.k);
    let fold_ids: Vec<usize> = (0..cfg.k).collect();
    let mut results: Vec<Result<f64>> = Vec::with_capacity(cfg.k);
    for wave in fold_ids.chunks(jobs) {
        if jobs == 1 {
            results.extend(wave.iter().map(|&f| run_fold(ds, &folds, f, cfg)));
            continue;
        }
        std::thread::scope(|scope| {
            let handles: Vec<_> = wave
                .iter()
                .map(|&f| {
                    let folds = &folds;
                    scope.spawn(move || run_fold(ds, folds, f, cfg))
                })
                .collect();
            for h in handles {
                results.push(
                    h.join()
                        .unwrap_or_else(|_| Err(Error::Config("fold worker panicked".into()))),
                );
            }
        });
    }
    let accuracies = results
        .into_iter()
        .collect::<Result<Vec<f64>>>()?;
    Ok(KFoldReport::from_accuracies(accuracies))
}

#[cfg(test)]
mod tests {
    use super::*;
    use Label::{Anomalous as A, Healthy as H};

    #[test]
    fn hand_counted_confusion() {
        let cm = confusion(&[A, A, H], &[A, A, H]).unwrap();
        assert_eq!(cm, ConfusionMatrix { tp: 2, tn: 1, fp: 0, fn_: 0 });
        let inv = confusion(&[A, A, H], &[H, H, A]).unwrap();
        assert_eq!(inv, ConfusionMatrix { tp: 0, tn: 0, fp: 1, fn_: 2 });
        assert!(confusion(&[A], &[A, H]).is_err());
        assert!(confusion(&[], &[]).is_err());
    }

    #[test]
    fn perfect_predictions() {
        let m = metrics(&ConfusionMatrix { tp: 3, tn: 4, fp: 0, fn_: 0 });
        for v in [m.accuracy, m.precision, m.recall, m.f_score, m.g_score] {
            assert_eq!(v, Some(1.0));
        }
    }

    #[test]
    fn worked_example() {
        let m = metrics(&ConfusionMatrix { tp: 1, fp: 1, fn_: 3, tn: 5 });
        assert_eq!(m.accuracy, Some(0.6));
        assert_eq!(m.precision, Some(0.5));
        assert_eq!(m.recall, Some(0.25));
        assert!((m.f_score.unwrap() - 1.0 / 3.0).abs() < 1e-12);
        assert!((m.g_score.unwrap() - (0.25f64 * 5.0 / 6.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn no_positives_means_undefined_positive_metrics() {
        let m = metrics(&ConfusionMatrix { tp: 0, fp: 0, fn_: 0, tn: 50 });
        assert_eq!(m.accuracy, Some(1.0));
        assert_eq!((m.precision, m.recall, m.f_score, m.g_score), (None, None, None, None));
        assert_eq!(format_metric(m.recall), "---");
        assert_eq!(format_metric(m.accuracy), "1.0000");
    }

    #[test]
    fn kfold_report_statistics() {
        let r = KFoldReport::from_accuracies(vec![98.88, 98.60, 99.02, 99.51, 99.23]);
        assert!((r.mean - 99.048).abs() < 1e-9);
        assert!((r.std - 0.308_635_707_590_684_65).abs() < 1e-12);
        let flat = KFoldReport::from_accuracies(vec![97.5; 5]);
        assert_eq!(flat.std, 0.0);
        assert!(r.to_table("Bearing 1").contains("99.05"));
    }

    #[test]
    fn folds_partition_the_dataset() {
        let folds = kfold_indices(23, 5, 3).unwrap();
        let sizes: Vec<usize> = folds.iter().map(Vec::len).collect();
        assert_eq!(sizes, vec![5, 5, 5, 4, 4]);
        let mut all: Vec<usize> = folds.concat();
        all.sort_unstable();
        assert_eq!(all, (0..23).collect::<Vec<_>>());
        assert_eq!(folds, kfold_indices(23, 5, 3).unwrap());
        assert!(kfold_indices(3, 5, 0).is_err());
    }
}
