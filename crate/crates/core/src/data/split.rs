//! Stratified train/test splitting.

use rand::seq::SliceRandom;

use super::{Dataset, Label};
use crate::error::{Error, Result};
use crate::seed::component_rng;

/// Splits a labeled dataset into (train, test), placing `round(test_fraction
/// * n_class)` windows of each class in the test part. Both parts keep the
/// source's labeling statistics and normalizer.
pub fn train_test_split(ds: &Dataset, test_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::Config(format!(
            "test fraction must lie in (0, 1), got {test_fraction}"
        )));
    }
    let labels = ds.labels()?;
    let mut rng = component_rng(seed, "holdout");
    let mut train = Vec::new();
    let mut test = Vec::new();
    for class in [Label::Healthy, Label::Anomalous] {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        idx.shuffle(&mut rng);
        let n_test = (test_fraction * idx.len() as f64).round() as usize;
        test.extend_from_slice(&idx[..n_test]);
        train.extend_from_slice(&idx[n_test..]);
    }
    if train.is_empty() || test.is_empty() {
        return Err(Error::InsufficientData(format!(
            "a {test_fraction} split of {} windows leaves one side empty",
            ds.len()
        )));
    }
    Ok((ds.subset(&train), ds.subset(&test)))
}
