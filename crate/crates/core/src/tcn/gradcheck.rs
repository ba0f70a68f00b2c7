//! Central finite-difference check of the hand-written backward pass.

use serde::{Deserialize, Serialize};

use super::{loss_and_gradients, Seq, TcnModel};
use crate::data::Window;
use crate::error::{Error, Result};

pub const GRAD_CHECK_STEP: f64 = 1e-4;

/// Denominator floor for the relative error, so gradients that are zero up
/// to round-off are compared absolutely.
pub const GRAD_CHECK_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// Worst relative error per parameter tensor.
    pub per_tensor: Vec<(String, f64)>,
    pub checked: usize,
    /// Coordinates whose +-h perturbation flipped a ReLU on or off; central
    /// differences are not valid across the kink, so these are excluded.
    pub skipped_at_kinks: usize,
}

type NoRng = rand_chacha::ChaCha8Rng;

/// Inference-mode loss plus the on/off pattern of every ReLU.
fn loss_and_pattern(model: &TcnModel, xs: &[Seq], ys: &[usize]) -> Result<(f64, Vec<bool>)> {
    let mut loss = 0.0;
    let mut pattern = Vec::new();
    for (x, &y) in xs.iter().zip(ys) {
        let trace = model.forward_trace(x, None::<&mut NoRng>)?;
        loss -= trace.probs[y].ln();
        for b in &trace.blocks {
            pattern.extend(b.z1.data.iter().map(|v| *v > 0.0));
            pattern.extend(b.z2.data.iter().map(|v| *v > 0.0));
            pattern.extend(b.sum.data.iter().map(|v| *v > 0.0));
        }
    }
    Ok((loss / xs.len() as f64, pattern))
}

/// Compares the analytic gradient of the mean cross-entropy on `batch` (raw,
/// labeled windows) against central differences for every parameter.
/// Dropout is disabled.
pub fn verify_gradients(model: &TcnModel, batch: &[Window]) -> Result<GradCheckReport> {
    let xs: Vec<Seq> = batch
        .iter()
        .map(|w| model.normalized_seq(w))
        .collect::<Result<_>>()?;
    let ys: Vec<usize> = batch
        .iter()
        .map(|w| w.label.map(|l| l.index()).ok_or(Error::Unlabeled))
        .collect::<Result<_>>()?;
    let (_, analytic) = loss_and_gradients(model, &xs, &ys, None::<&mut NoRng>)?;
    let (_, base_pattern) = loss_and_pattern(model, &xs, &ys)?;

    let names: Vec<String> = model.parameters().into_iter().map(|(n, _)| n).collect();
    let mut probe = model.clone();
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        per_tensor: Vec::with_capacity(names.len()),
        checked: 0,
        skipped_at_kinks: 0,
    };
    for (p, name) in names.into_iter().enumerate() {
        let mut worst: f64 = 0.0;
        for i in 0..analytic[p].len() {
            let original = probe.parameters_mut()[p][i];
            probe.parameters_mut()[p][i] = original + GRAD_CHECK_STEP;
            let (plus, plus_pattern) = loss_and_pattern(&probe, &xs, &ys)?;
            probe.parameters_mut()[p][i] = original - GRAD_CHECK_STEP;
            let (minus, minus_pattern) = loss_and_pattern(&probe, &xs, &ys)?;
            probe.parameters_mut()[p][i] = original;

            if plus_pattern != base_pattern || minus_pattern != base_pattern {
                report.skipped_at_kinks += 1;
                continue;
            }
            let numeric = (plus - minus) / (2.0 * GRAD_CHECK_STEP);
            let a = analytic[p][i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(GRAD_CHECK_FLOOR);
            worst = worst.max(rel);
            report.checked += 1;
        }
        report.max_relative_error = report.max_relative_error.max(worst);
        report.per_tensor.push((name, worst));
    }
    Ok(report)
}
