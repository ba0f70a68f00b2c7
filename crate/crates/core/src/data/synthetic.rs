//! Synthetic run-to-failure vibration data for desk-scale experiments.

use std::f64::consts::TAU;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{default_channel_names, Dataset, Window};
use crate::error::{Error, Result};
use crate::seed::component_rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub n_windows: usize,
    pub window_len: usize,
    pub channels: usize,
    pub base_amplitude: f64,
    /// Fraction of the run after which amplitude starts to grow.
    pub degradation_onset: f64,
    /// Linear amplitude increase per window after onset.
    pub degradation_rate: f64,
    pub noise_std: f64,
    pub seed: u64,
    /// Channels whose amplitude degrades; `None` means all of them.
    #[serde(default)]
    pub degrading_channels: Option<Vec<usize>>,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            n_windows: 400,
            window_len: 64,
            channels: 2,
            base_amplitude: 1.0,
            degradation_onset: 0.8,
            degradation_rate: 0.05,
            noise_std: 0.05,
            seed: 0,
            degrading_channels: None,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.n_windows < 2 {
            return bad(format!("n_windows must be >= 2, got {}", self.n_windows));
        }
        if self.window_len < 2 {
            return bad(format!("window_len must be >= 2, got {}", self.window_len));
        }
        if self.channels == 0 {
            return bad("channels must be >= 1".into());
        }
        if !(0.0..=1.0).contains(&self.degradation_onset) {
            return bad(format!(
                "degradation_onset must lie in [0, 1], got {}",
                self.degradation_onset
            ));
        }
        if !self.base_amplitude.is_finite() || !self.degradation_rate.is_finite() {
            return bad("amplitude parameters must be finite".into());
        }
        if !(self.noise_std.is_finite() && self.noise_std >= 0.0) {
            return bad(format!("noise_std must be finite and >= 0, got {}", self.noise_std));
        }
        if let Some(chs) = &self.degrading_channels {
            if let Some(c) = chs.iter().find(|&&c| c >= self.channels) {
                return bad(format!("degrading channel {c} out of range"));
            }
        }
        Ok(())
    }

    /// Index of the first degraded window.
    pub fn onset_index(&self) -> usize {
        ((self.degradation_onset * self.n_windows as f64).floor() as usize).min(self.n_windows)
    }

    fn degrades(&self, channel: usize) -> bool {
        self.degrading_channels
            .as_ref()
            .is_none_or(|chs| chs.contains(&channel))
    }
}

/// Generates sinusoidal windows with additive Gaussian noise. Each window is
/// an independent snapshot (same phase per channel), so with zero noise and
/// zero degradation every window has exactly the same RMS.
pub fn generate_synthetic_bearing(cfg: &SyntheticConfig) -> Result<Dataset> {
    cfg.validate()?;
    let mut rng = component_rng(cfg.seed, "synthetic");
    let noise = Normal::new(0.0, cfg.noise_std).map_err(|e| Error::Config(e.to_string()))?;
    let onset = cfg.onset_index();

    let mut windows = Vec::with_capacity(cfg.n_windows);
    for i in 0..cfg.n_windows {
        let growth = if i >= onset {
            cfg.degradation_rate * (i - onset + 1) as f64
        } else {
            0.0
        };
        let values = (0..cfg.channels)
            .map(|c| {
                let amplitude = cfg.base_amplitude + if cfg.degrades(c) { growth } else { 0.0 };
                let cycles = 3.0 + 2.0 * c as f64;
                let phase = c as f64 * TAU / 6.0;
                (0..cfg.window_len)
                    .map(|t| {
                        let x = TAU * cycles * t as f64 / cfg.window_len as f64 + phase;
                        amplitude * x.sin() + noise.sample(&mut rng)
                    })
                    .collect()
            })
            .collect();
        windows.push(Window::new(i as u64, values, None)?);
    }
    Dataset::new(default_channel_names(cfg.channels), cfg.window_len, windows)
}
