//! Three-sigma RMS labeling with suffix smoothing.

use serde::{Deserialize, Serialize};

use super::{Dataset, Label};
use crate::error::{Error, Result};

/// Per-channel RMS statistics behind a three-sigma labeling.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelingStats {
    pub rms_mean: Vec<f64>,
    /// Population standard deviation.
    pub rms_std: Vec<f64>,
    pub threshold: Vec<f64>,
}

pub fn rms(series: &[f64]) -> Result<f64> {
    if series.is_empty() {
        return Err(Error::EmptyInput("rms of an empty series"));
    }
    let sum_sq: f64 = series.iter().map(|v| v * v).sum();
    Ok((sum_sq / series.len() as f64).sqrt())
}

/// Labels each window Anomalous iff the RMS of any channel strictly exceeds
/// that channel's `mean + 3 * std` over the whole dataset. Existing labels are
/// overwritten; no smoothing is applied.
pub fn three_sigma_label(ds: &Dataset) -> Result<(Dataset, LabelingStats)> {
    if ds.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "three-sigma labeling needs at least 2 windows, got {}",
            ds.len()
        )));
    }
    let channels = ds.channels();
    let n = ds.len() as f64;
    let per_window: Vec<Vec<f64>> = ds
        .windows
        .iter()
        .map(|w| w.values.iter().map(|s| rms(s)).collect::<Result<_>>())
        .collect::<Result<_>>()?;

    let mut rms_mean = vec![0.0; channels];
    let mut rms_std = vec![0.0; channels];
    for c in 0..channels {
        let mean = per_window.iter().map(|r| r[c]).sum::<f64>() / n;
        let var = per_window.iter().map(|r| (r[c] - mean).powi(2)).sum::<f64>() / n;
        rms_mean[c] = mean;
        rms_std[c] = var.sqrt();
    }
    let threshold: Vec<f64> = rms_mean
        .iter()
        .zip(&rms_std)
        .map(|(m, s)| m + 3.0 * s)
        .collect();

    let mut out = ds.clone();
    for (w, r) in out.windows.iter_mut().zip(&per_window) {
        let anomalous = r.iter().zip(&threshold).any(|(v, t)| v > t);
        w.label = Some(if anomalous { Label::Anomalous } else { Label::Healthy });
    }
    let stats = LabelingStats {
        rms_mean,
        rms_std,
        threshold,
    };
    out.labeling = Some(stats.clone());
    Ok((out, stats))
}

/// Marks a window Anomalous when every later window is Anomalous in the raw
/// labels. The final window keeps its raw label.
pub fn suffix_smooth_labels(labels: &[Label]) -> Vec<Label> {
    let mut out = labels.to_vec();
    let Some(last) = labels.len().checked_sub(1) else {
        return out;
    };
    let mut suffix_anomalous = labels[last] == Label::Anomalous;
    for i in (0..last).rev() {
        if suffix_anomalous {
            out[i] = Label::Anomalous;
        }
        suffix_anomalous &= labels[i] == Label::Anomalous;
    }
    out
}

/// Three-sigma labeling followed by suffix smoothing, in window order.
pub fn label_dataset(ds: &Dataset) -> Result<(Dataset, LabelingStats)> {
    let (mut out, stats) = three_sigma_label(ds)?;
    let raw: Vec<Label> = out.labels()?;
    for (w, l) in out.windows.iter_mut().zip(suffix_smooth_labels(&raw)) {
        w.label = Some(l);
    }
    Ok((out, stats))
}
