use serde::{Deserialize, Serialize};

use super::{Dataset, Window};

/// Lower bound applied to fitted channel standard deviations.
pub const STD_FLOOR: f64 = 1e-8;

/// Per-channel z-score parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalizer {
    pub fn channels(&self) -> usize {
        self.mean.len()
    }

    /// Normalises a channel-major flat buffer in place.
    pub fn apply_flat(&self, flat: &mut [f64]) {
        let len = flat.len() / self.channels();
        for (c, chunk) in flat.chunks_mut(len).enumerate() {
            let (m, s) = (self.mean[c], self.std[c]);
            for v in chunk {
                *v = (*v - m) / s;
            }
        }
    }
}

/// Fits per-channel mean and population std over every sample of every window.
pub fn fit_normalizer(ds: &Dataset) -> Normalizer {
    let channels = ds.channels();
    let mut mean = vec![0.0; channels];
    let mut std = vec![STD_FLOOR; channels];
    let count = (ds.len() * ds.window_len) as f64;
    if count == 0.0 {
        return Normalizer { mean, std };
    }
    for c in 0..channels {
        let m = ds.windows.iter().flat_map(|w| &w.values[c]).sum::<f64>() / count;
        let var = ds
            .windows
            .iter()
            .flat_map(|w| &w.values[c])
            .map(|v| (v - m).powi(2))
            .sum::<f64>()
            / count;
        mean[c] = m;
        std[c] = var.sqrt().max(STD_FLOOR);
    }
    Normalizer { mean, std }
}

pub fn apply_normalizer(n: &Normalizer, w: &Window) -> Window {
    map_channels(w, |c, v| (v - n.mean[c]) / n.std[c])
}

pub fn invert_normalizer(n: &Normalizer, w: &Window) -> Window {
    map_channels(w, |c, v| v * n.std[c] + n.mean[c])
}

fn map_channels(w: &Window, f: impl Fn(usize, f64) -> f64) -> Window {
    Window {
        id: w.id,
        label: w.label,
        values: w
            .values
            .iter()
            .enumerate()
            .map(|(c, s)| s.iter().map(|&v| f(c, v)).collect())
            .collect(),
    }
}
