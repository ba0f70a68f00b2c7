//! Vibration windows, datasets, labeling and normalisation.

mod labeling;
mod normalize;
mod pronostia;
mod split;
mod store;
mod synthetic;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use labeling::{label_dataset, rms, suffix_smooth_labels, three_sigma_label, LabelingStats};
pub use normalize::{apply_normalizer, fit_normalizer, invert_normalizer, Normalizer, STD_FLOOR};
pub use pronostia::{load_pronostia_dir, parse_pronostia_file, write_pronostia_file};
pub use split::train_test_split;
pub use store::{load_dataset, load_manifest, save_dataset, Manifest, DATASET_FORMAT_VERSION, MANIFEST_FILE, WINDOWS_FILE};
pub use synthetic::{generate_synthetic_bearing, SyntheticConfig};

/// Binary window class. Anomalous is the positive class throughout.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Label {
    Healthy = 0,
    Anomalous = 1,
}

impl Label {
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Label> {
        match i {
            0 => Some(Label::Healthy),
            1 => Some(Label::Anomalous),
            _ => None,
        }
    }

    pub fn other(self) -> Label {
        match self {
            Label::Healthy => Label::Anomalous,
            Label::Anomalous => Label::Healthy,
        }
    }
}

impl From<Label> for u8 {
    fn from(l: Label) -> u8 {
        l as u8
    }
}

impl TryFrom<u8> for Label {
    type Error = String;

    fn try_from(v: u8) -> std::result::Result<Self, Self::Error> {
        Label::from_index(v as usize).ok_or_else(|| format!("invalid label {v}"))
    }
}

impl std::fmt::Display for Label {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Label::Healthy => f.write_str("healthy"),
            Label::Anomalous => f.write_str("anomalous"),
        }
    }
}

/// One fixed-length multichannel segment, `values[channel][t]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub id: u64,
    pub label: Option<Label>,
    pub values: Vec<Vec<f64>>,
}

impl Window {
    /// Builds a window, checking it is rectangular, non-empty and finite.
    pub fn new(id: u64, values: Vec<Vec<f64>>, label: Option<Label>) -> Result<Self> {
        let w = Window { id, label, values };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        let Some(first) = self.values.first() else {
            return Err(Error::Shape(format!("window {} has no channels", self.id)));
        };
        let len = first.len();
        if len == 0 {
            return Err(Error::Shape(format!("window {} has no timesteps", self.id)));
        }
        for (c, row) in self.values.iter().enumerate() {
            if row.len() != len {
                return Err(Error::Shape(format!(
                    "window {} channel {c} has {} timesteps, expected {len}",
                    self.id,
                    row.len()
                )));
            }
            if let Some(t) = row.iter().position(|v| !v.is_finite()) {
                return Err(Error::Shape(format!(
                    "window {} channel {c} has a non-finite value at t={t}",
                    self.id
                )));
            }
        }
        Ok(())
    }

    pub fn channels(&self) -> usize {
        self.values.len()
    }

    pub fn len(&self) -> usize {
        self.values.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Channel-major flattening: channel 0's series, then channel 1's, ...
    pub fn flatten(&self) -> Vec<f64> {
        self.values.iter().flatten().copied().collect()
    }

    pub fn from_flat(id: u64, flat: &[f64], channels: usize, label: Option<Label>) -> Result<Self> {
        if channels == 0 || flat.len() % channels != 0 {
            return Err(Error::Shape(format!(
                "{} values cannot be split into {channels} channels",
                flat.len()
            )));
        }
        let len = flat.len() / channels;
        Window::new(id, flat.chunks(len).map(<[f64]>::to_vec).collect(), label)
    }
}

/// An ordered collection of windows sharing one shape.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub channel_names: Vec<String>,
    pub window_len: usize,
    pub windows: Vec<Window>,
    pub labeling: Option<LabelingStats>,
    pub normalizer: Option<Normalizer>,
}

impl Dataset {
    pub fn new(channel_names: Vec<String>, window_len: usize, windows: Vec<Window>) -> Result<Self> {
        let ds = Dataset {
            channel_names,
            window_len,
            windows,
            labeling: None,
            normalizer: None,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        if self.channel_names.is_empty() {
            return Err(Error::Shape("dataset has no channels".into()));
        }
        if self.window_len == 0 {
            return Err(Error::Shape("window length must be at least 1".into()));
        }
        let mut prev: Option<u64> = None;
        for w in &self.windows {
            w.validate()?;
            if w.channels() != self.channel_names.len() || w.len() != self.window_len {
                return Err(Error::Shape(format!(
                    "window {} is {}x{}, dataset expects {}x{}",
                    w.id,
                    w.channels(),
                    w.len(),
                    self.channel_names.len(),
                    self.window_len
                )));
            }
            if prev.is_some_and(|p| w.id <= p) {
                return Err(Error::Shape(format!(
                    "window ids must be strictly increasing (saw {} after {})",
                    w.id,
                    prev.unwrap_or_default()
                )));
            }
            prev = Some(w.id);
        }
        if self.labeling.is_some() && self.windows.iter().any(|w| w.label.is_none()) {
            return Err(Error::Shape("labeled dataset contains unlabeled windows".into()));
        }
        Ok(())
    }

    pub fn channels(&self) -> usize {
        self.channel_names.len()
    }

    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    pub fn window(&self, id: u64) -> Option<&Window> {
        self.windows
            .binary_search_by_key(&id, |w| w.id)
            .ok()
            .map(|i| &self.windows[i])
    }

    /// Labels of every window, failing if any is missing.
    pub fn labels(&self) -> Result<Vec<Label>> {
        self.windows
            .iter()
            .map(|w| w.label.ok_or(Error::Unlabeled))
            .collect()
    }

    /// (healthy, anomalous) counts; unlabeled windows are ignored.
    pub fn class_counts(&self) -> [usize; 2] {
        let mut counts = [0; 2];
        for l in self.windows.iter().filter_map(|w| w.label) {
            counts[l.index()] += 1;
        }
        counts
    }

    /// A dataset holding the windows at `indices`, sorted back into id order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let mut windows: Vec<Window> = indices.iter().map(|&i| self.windows[i].clone()).collect();
        windows.sort_by_key(|w| w.id);
        Dataset {
            channel_names: self.channel_names.clone(),
            window_len: self.window_len,
            windows,
            labeling: self.labeling.clone(),
            normalizer: self.normalizer.clone(),
        }
    }

    pub fn next_id(&self) -> u64 {
        self.windows.last().map_or(0, |w| w.id + 1)
    }
}

/// Joins datasets of one shape in order, renumbering window ids from 0.
/// Labels are kept; per-part labeling statistics and normalizers are dropped
/// because they no longer describe the whole.
pub fn concat_datasets(parts: &[Dataset]) -> Result<Dataset> {
    let first = parts.first().ok_or(Error::EmptyInput("datasets to concatenate"))?;
    let mut windows = Vec::with_capacity(parts.iter().map(Dataset::len).sum());
    for part in parts {
        if part.channel_names != first.channel_names || part.window_len != first.window_len {
            return Err(Error::Shape(format!(
                "cannot join {}x{} windows with {}x{}",
                part.channels(),
                part.window_len,
                first.channels(),
                first.window_len
            )));
        }
        for w in &part.windows {
            windows.push(Window {
                id: windows.len() as u64,
                ..w.clone()
            });
        }
    }
    Dataset::new(first.channel_names.clone(), first.window_len, windows)
}

pub(crate) fn default_channel_names(channels: usize) -> Vec<String> {
    match channels {
        2 => vec!["horizontal".to_string(), "vertical".to_string()],
        n => (0..n).map(|c| format!("ch{c}")).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn concat_renumbers_and_keeps_labels() {
        let part = |n: u64, label| {
            let windows = (0..n).map(|i| Window::new(10 + i, vec![vec![i as f64; 2]], Some(label)).unwrap()).collect();
            Dataset::new(vec!["x".into()], 2, windows).unwrap()
        };
        let joined = concat_datasets(&[part(2, Label::Healthy), part(3, Label::Anomalous)]).unwrap();
        assert_eq!(joined.windows.iter().map(|w| w.id).collect::<Vec<_>>(), vec![0, 1, 2, 3, 4]);
        assert_eq!(joined.class_counts(), [2, 3]);
        assert_eq!(joined.windows[3].values, vec![vec![1.0, 1.0]]);
        let other = Dataset::new(vec!["x".into()], 3, vec![]).unwrap();
        assert!(concat_datasets(&[part(1, Label::Healthy), other]).is_err());
        assert!(concat_datasets(&[]).is_err());
    }

    #[test]
    fn window_rejects_ragged_and_non_finite() {
        assert!(Window::new(0, vec![vec![1.0, 2.0], vec![1.0]], None).is_err());
        assert!(Window::new(0, vec![vec![1.0, f64::NAN]], None).is_err());
        assert!(Window::new(0, vec![], None).is_err());
        assert!(Window::new(0, vec![vec![]], None).is_err());
        assert!(Window::new(0, vec![vec![1.0, 2.0], vec![3.0, 4.0]], None).is_ok());
    }

    #[test]
    fn flatten_is_channel_major() {
        let w = Window::new(3, vec![vec![1.0, 2.0], vec![3.0, 4.0]], None).unwrap();
        assert_eq!(w.flatten(), vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(Window::from_flat(3, &w.flatten(), 2, None).unwrap(), w);
    }

    #[test]
    fn dataset_requires_increasing_ids() {
        let a = Window::new(1, vec![vec![0.0]], None).unwrap();
        let b = Window::new(1, vec![vec![0.0]], None).unwrap();
        assert!(Dataset::new(vec!["x".into()], 1, vec![a, b]).is_err());
    }

    #[test]
    fn label_serializes_as_integer() {
        assert_eq!(serde_json::to_string(&Label::Anomalous).unwrap(), "1");
        assert_eq!(serde_json::from_str::<Label>("0").unwrap(), Label::Healthy);
        assert!(serde_json::from_str::<Label>("2").is_err());
    }
}
