//! SMOTE oversampling of the minority class on flattened raw windows.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Label, Window};
use crate::error::{Error, Result};
use crate::seed::indexed_rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmoteConfig {
    pub k_neighbors: usize,
    /// Minority size after oversampling, as a fraction of the majority size.
    pub target_ratio: f64,
    pub seed: u64,
}

impl Default for SmoteConfig {
    fn default() -> Self {
        SmoteConfig {
            k_neighbors: 5,
            target_ratio: 1.0,
            seed: 0,
        }
    }
}

impl SmoteConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_neighbors == 0 {
            return Err(Error::Config("k_neighbors must be >= 1".into()));
        }
        if !(self.target_ratio > 0.0 && self.target_ratio <= 1.0) {
            return Err(Error::Config(format!(
                "target_ratio must lie in (0, 1], got {}",
                self.target_ratio
            )));
        }
        Ok(())
    }
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// The `k` nearest other points to `points[query_index]` by Euclidean
/// distance, nearest first, ties broken by lower index.
pub fn knn_neighbors(points: &[Vec<f64>], query_index: usize, k: usize) -> Result<Vec<usize>> {
    if k >= points.len() {
        return Err(Error::InsufficientMinority {
            have: points.len(),
            k,
        });
    }
    let query = &points[query_index];
    let mut scored: Vec<(f64, usize)> = points
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != query_index)
        .map(|(i, p)| (squared_distance(query, p), i))
        .collect();
    scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    Ok(scored.into_iter().take(k).map(|(_, i)| i).collect())
}

/// `original + gap * (neighbor - original)` coordinate-wise, clamped to the
/// segment so rounding cannot step outside the parents' range.
pub fn interpolate(original: &[f64], neighbor: &[f64], gap: f64) -> Vec<f64> {
    original
        .iter()
        .zip(neighbor)
        .map(|(&o, &n)| {
            if gap >= 1.0 {
                return n;
            }
            (o + gap * (n - o)).clamp(o.min(n), o.max(n))
        })
        .collect()
}

/// Appends synthetic minority windows until the minority class holds
/// `ceil(target_ratio * majority)` windows. Synthetic sample `s` interpolates
/// minority window `s mod m` towards one of its `k` nearest minority
/// neighbours; its randomness comes from stream `s` so samples are
/// independent of generation order.
pub fn smote_oversample(ds: &Dataset, cfg: &SmoteConfig) -> Result<Dataset> {
    cfg.validate()?;
    let labels = ds.labels()?;
    let [healthy, anomalous] = ds.class_counts();
    let (minority_label, minority_count, majority_count) = if anomalous <= healthy {
        (Label::Anomalous, anomalous, healthy)
    } else {
        (Label::Healthy, healthy, anomalous)
    };
    let target = (cfg.target_ratio * majority_count as f64).ceil() as usize;
    if minority_count >= target {
        return Ok(ds.clone());
    }
    if minority_count <= cfg.k_neighbors {
        return Err(Error::InsufficientMinority {
            have: minority_count,
            k: cfg.k_neighbors,
        });
    }

    let minority: Vec<Vec<f64>> = ds
        .windows
        .iter()
        .zip(&labels)
        .filter(|(_, &l)| l == minority_label)
        .map(|(w, _)| w.flatten())
        .collect();
    let neighbours: Vec<Vec<usize>> = (0..minority.len())
        .map(|i| knn_neighbors(&minority, i, cfg.k_neighbors))
        .collect::<Result<_>>()?;

    let mut out = ds.clone();
    let mut next_id = ds.next_id();
    for s in 0..target - minority_count {
        let mut rng = indexed_rng(cfg.seed, "smote", s as u64);
        let base = s % minority.len();
        let neighbour = neighbours[base][rng.random_range(0..cfg.k_neighbors)];
        let gap: f64 = rng.random_range(0.0..=1.0);
        let flat = interpolate(&minority[base], &minority[neighbour], gap);
        out.windows.push(Window::from_flat(
            next_id,
            &flat,
            ds.channels(),
            Some(minority_label),
        )?);
        next_id += 1;
    }
    Ok(out)
}
