//! Counterfactual explanations by distractor channel substitution.
//!
//! An [`Explainer`] indexes the training windows the model classifies
//! correctly, one index per class, in normalised flattened space. To explain
//! a window it fetches the nearest windows of the target class (the
//! distractors) and copies whole channels from them, one at a time, always
//! taking the channel that most raises the target probability, until the
//! model's prediction flips.

mod kdtree;

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Label, Window};
use crate::error::{Error, Result};
use crate::tcn::{argmax, predict_proba, TcnModel};

pub use kdtree::{build_kdtree, KdTree, LinearIndex, Neighbor, QueryStats};

pub const DEFAULT_NUM_DISTRACTORS: usize = 3;
pub const DEFAULT_BRUTE_FORCE_DIM: usize = 512;

/// Nearest-neighbour index over one class's distractors.
#[derive(Clone, Debug)]
pub enum DistractorIndex {
    Tree(KdTree),
    Linear(LinearIndex),
}

impl DistractorIndex {
    pub fn len(&self) -> usize {
        match self {
            DistractorIndex::Tree(t) => t.len(),
            DistractorIndex::Linear(l) => l.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn nn_query(&self, q: &[f64], m: usize) -> Result<Vec<Neighbor>> {
        match self {
            DistractorIndex::Tree(t) => t.nn_query(q, m),
            DistractorIndex::Linear(l) => l.nn_query(q, m),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExplainerConfig {
    /// Above this flattened dimension the k-d tree is replaced by an
    /// exhaustive scan. Results are identical either way.
    pub brute_force_above_dim: usize,
}

impl Default for ExplainerConfig {
    fn default() -> Self {
        ExplainerConfig {
            brute_force_above_dim: DEFAULT_BRUTE_FORCE_DIM,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Explainer {
    model: Arc<TcnModel>,
    channel_names: Vec<String>,
    indexes: Vec<DistractorIndex>,
    /// Raw distractor windows by id.
    distractors: HashMap<u64, Window>,
}

fn normalized_flat(model: &TcnModel, w: &Window) -> Vec<f64> {
    let mut flat = w.flatten();
    model.normalizer.apply_flat(&mut flat);
    flat
}

pub fn fit_explainer(model: Arc<TcnModel>, train: &Dataset) -> Result<Explainer> {
    fit_explainer_with(model, train, &ExplainerConfig::default())
}

/// Classifies `train`, drops misclassified windows and indexes the rest per
/// true class.
pub fn fit_explainer_with(
    model: Arc<TcnModel>,
    train: &Dataset,
    cfg: &ExplainerConfig,
) -> Result<Explainer> {
    if train.channels() != model.config.in_channels {
        return Err(Error::Shape(format!(
            "model expects {} channels, dataset has {}",
            model.config.in_channels,
            train.channels()
        )));
    }
    let labels = train.labels()?;
    let probs = predict_proba(&model, &train.windows)?;
    let mut per_class: Vec<Vec<(u64, Vec<f64>)>> = vec![Vec::new(); model.config.n_classes];
    let mut distractors = HashMap::new();
    for ((w, label), p) in train.windows.iter().zip(&labels).zip(&probs) {
        if argmax(p) == label.index() {
            per_class[label.index()].push((w.id, normalized_flat(&model, w)));
            distractors.insert(w.id, w.clone());
        }
    }
    let dim = train.channels() * train.window_len;
    let indexes = per_class
        .into_iter()
        .enumerate()
        .map(|(class, points)| {
            if points.is_empty() {
                return Err(Error::EmptyClassIndex(class as u8));
            }
            Ok(if dim > cfg.brute_force_above_dim {
                DistractorIndex::Linear(LinearIndex::new(points)?)
            } else {
                DistractorIndex::Tree(build_kdtree(points)?)
            })
        })
        .collect::<Result<_>>()?;
    Ok(Explainer {
        model,
        channel_names: train.channel_names.clone(),
        indexes,
        distractors,
    })
}

impl Explainer {
    pub fn model(&self) -> &Arc<TcnModel> {
        &self.model
    }

    pub fn channel_names(&self) -> &[String] {
        &self.channel_names
    }

    pub fn index(&self, class: Label) -> &DistractorIndex {
        &self.indexes[class.index()]
    }

    pub fn index_sizes(&self) -> Vec<usize> {
        self.indexes.iter().map(DistractorIndex::len).collect()
    }

    pub fn distractor(&self, id: u64) -> Option<&Window> {
        self.distractors.get(&id)
    }

    /// Ids of the indexed distractors of `class`, ascending.
    pub fn distractor_ids(&self, class: Label) -> Vec<u64> {
        let mut ids: Vec<u64> = self
            .distractors
            .values()
            .filter(|w| w.label == Some(class))
            .map(|w| w.id)
            .collect();
        ids.sort_unstable();
        ids
    }

    /// The `m` nearest distractors of `class` to a raw window.
    pub fn nearest(&self, window: &Window, class: Label, m: usize) -> Result<Vec<Neighbor>> {
        self.indexes[class.index()].nn_query(&normalized_flat(&self.model, window), m)
    }

    /// Euclidean distance between two raw windows in normalised space.
    pub fn distance(&self, a: &Window, b: &Window) -> f64 {
        kdtree::squared_distance(
            &normalized_flat(&self.model, a),
            &normalized_flat(&self.model, b),
        )
        .sqrt()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CounterfactualQuery {
    /// Raw window to explain.
    pub instance: Window,
    pub target: Label,
    pub num_distractors: usize,
    pub locked_channels: BTreeSet<usize>,
}

impl CounterfactualQuery {
    pub fn new(instance: Window, target: Label) -> Self {
        CounterfactualQuery {
            instance,
            target,
            num_distractors: DEFAULT_NUM_DISTRACTORS,
            locked_channels: BTreeSet::new(),
        }
    }

    pub fn with_locks(mut self, locked: impl IntoIterator<Item = usize>) -> Self {
        self.locked_channels = locked.into_iter().collect();
        self
    }

    pub fn with_distractors(mut self, n: usize) -> Self {
        self.num_distractors = n;
        self
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Counterfactual {
    pub original_id: u64,
    pub target: Label,
    /// The modified window, in raw units.
    pub window: Window,
    /// Channels copied from the distractor, in the order they were chosen.
    pub substituted_channels: Vec<usize>,
    /// `None` when the instance was already classified as the target.
    pub distractor_id: Option<u64>,
    pub probabilities_before: Vec<f64>,
    pub probabilities_after: Vec<f64>,
    /// Euclidean distance to the original in normalised space.
    pub distance: f64,
}

/// Why a counterfactual search gave up, with what the user could relax.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchFailure {
    pub message: String,
    pub window_id: u64,
    pub target: Label,
    pub locked_channels: Vec<usize>,
    pub distractors_tried: Vec<u64>,
    /// Highest target-class probability reached by any partial substitution.
    pub best_target_probability: f64,
    pub advice: Vec<String>,
}

fn with_channel(base: &Window, source: &Window, channel: usize) -> Window {
    let mut w = base.clone();
    w.values[channel].clone_from(&source.values[channel]);
    w
}

/// Greedy channel substitution against up to `num_distractors` nearest
/// target-class distractors, tried in distance order.
pub fn greedy_counterfactual(ex: &Explainer, q: &CounterfactualQuery) -> Result<Counterfactual> {
    let model = &ex.model;
    let channels = q.instance.channels();
    if let Some(&c) = q.locked_channels.iter().find(|&&c| c >= channels) {
        return Err(Error::Shape(format!("locked channel {c} does not exist")));
    }
    let target = q.target.index();
    let before = model.predict_proba_one(&q.instance)?;
    if argmax(&before) == target {
        return Ok(Counterfactual {
            original_id: q.instance.id,
            target: q.target,
            window: q.instance.clone(),
            substituted_channels: Vec::new(),
            distractor_id: None,
            probabilities_after: before.clone(),
            probabilities_before: before,
            distance: 0.0,
        });
    }

    let index = &ex.indexes[target];
    let m = q.num_distractors.min(index.len());
    let neighbours = ex.nearest(&q.instance, q.target, m)?;
    let unlocked: Vec<usize> = (0..channels).filter(|c| !q.locked_channels.contains(c)).collect();
    let mut best_seen = before[target];
    let mut tried = Vec::with_capacity(neighbours.len());

    for n in &neighbours {
        tried.push(n.id);
        let distractor = ex
            .distractors
            .get(&n.id)
            .ok_or(Error::UnknownWindow(n.id))?;
        let mut current = q.instance.clone();
        let mut remaining = unlocked.clone();
        let mut substituted = Vec::new();
        while !remaining.is_empty() {
            let mut pick: Option<(usize, Window, Vec<f64>)> = None;
            for (slot, &c) in remaining.iter().enumerate() {
                let candidate = with_channel(&current, distractor, c);
                let p = model.predict_proba_one(&candidate)?;
                if pick.as_ref().is_none_or(|(_, _, bp)| p[target] > bp[target]) {
                    pick = Some((slot, candidate, p));
                }
            }
            let (slot, candidate, p) = pick.expect("remaining is non-empty");
            substituted.push(remaining.remove(slot));
            current = candidate;
            best_seen = best_seen.max(p[target]);
            if argmax(&p) == target {
                return Ok(Counterfactual {
                    original_id: q.instance.id,
                    target: q.target,
                    distance: ex.distance(&q.instance, &current),
                    window: current,
                    substituted_channels: substituted,
                    distractor_id: Some(n.id),
                    probabilities_before: before,
                    probabilities_after: p,
                });
            }
        }
    }

    let locked: Vec<usize> = q.locked_channels.iter().copied().collect();
    let mut advice = Vec::new();
    if !locked.is_empty() {
        let names: Vec<&str> = locked
            .iter()
            .map(|&c| ex.channel_names.get(c).map_or("?", String::as_str))
            .collect();
        advice.push(format!("unlock one of the locked channels ({})", names.join(", ")));
    }
    if m < index.len() && !unlocked.is_empty() {
        advice.push(format!(
            "raise num_distractors above {} (up to {} available)",
            q.num_distractors,
            index.len()
        ));
    }
    Err(Error::NoCounterfactualFound(Box::new(SearchFailure {
        message: format!(
            "no substitution of unlocked channels from {} distractor(s) moves window {} to {}",
            tried.len(),
            q.instance.id,
            q.target
        ),
        window_id: q.instance.id,
        target: q.target,
        locked_channels: locked,
        distractors_tried: tried,
        best_target_probability: best_seen,
        advice,
    })))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelChange {
    pub channel: usize,
    pub name: String,
    /// Peak absolute amplitude before and after substitution.
    pub original_envelope: f64,
    pub counterfactual_envelope: f64,
    pub original_rms: f64,
    pub counterfactual_rms: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WhatIfReport {
    pub window_id: u64,
    pub target: Label,
    pub distractor_id: Option<u64>,
    /// Fraction of channels substituted.
    pub sparsity: f64,
    pub distance: f64,
    pub changes: Vec<ChannelChange>,
    pub narrative: Vec<String>,
}

fn envelope(s: &[f64]) -> f64 {
    s.iter().fold(0.0, |m, v| m.max(v.abs()))
}

fn series_rms(s: &[f64]) -> f64 {
    crate::data::rms(s).unwrap_or(0.0)
}

/// Summarises what a counterfactual changes, channel by channel.
pub fn counterfactual_report(cf: &Counterfactual, original: &Window, channel_names: &[String]) -> WhatIfReport {
    let name = |c: usize| channel_names.get(c).cloned().unwrap_or_else(|| format!("ch{c}"));
    let changes: Vec<ChannelChange> = cf
        .substituted_channels
        .iter()
        .map(|&c| ChannelChange {
            channel: c,
            name: name(c),
            original_envelope: envelope(&original.values[c]),
            counterfactual_envelope: envelope(&cf.window.values[c]),
            original_rms: series_rms(&original.values[c]),
            counterfactual_rms: series_rms(&cf.window.values[c]),
        })
        .collect();
    let narrative = changes
        .iter()
        .map(|ch| {
            let verb = if ch.counterfactual_envelope < ch.original_envelope {
                "reduced"
            } else {
                "raised"
            };
            let mut line = String::new();
            let _ = write!(
                line,
                "{} acceleration should be {verb} to approximately ±{:.2} (currently ±{:.2}) for the window to be classified {}",
                ch.name, ch.counterfactual_envelope, ch.original_envelope, cf.target
            );
            line
        })
        .collect();
    WhatIfReport {
        window_id: cf.original_id,
        target: cf.target,
        distractor_id: cf.distractor_id,
        sparsity: cf.substituted_channels.len() as f64 / original.channels().max(1) as f64,
        distance: cf.distance,
        changes,
        narrative,
    }
}

/// Per-channel series for plotting: the preceding window as context, the
/// actual window, and the counterfactual.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlotSeries {
    pub channel: usize,
    pub name: String,
    pub context: Option<Vec<f64>>,
    pub actual: Vec<f64>,
    pub counterfactual: Vec<f64>,
}

pub fn plot_series(
    cf: &Counterfactual,
    original: &Window,
    context: Option<&Window>,
    channel_names: &[String],
) -> Vec<PlotSeries> {
    (0..original.channels())
        .map(|c| PlotSeries {
            channel: c,
            name: channel_names.get(c).cloned().unwrap_or_else(|| format!("ch{c}")),
            context: context.map(|w| w.values[c].clone()),
            actual: original.values[c].clone(),
            counterfactual: cf.window.values[c].clone(),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Normalizer;
    use crate::tcn::TcnConfig;

    /// A model whose decision depends only on the mean of channel 0: the
    /// head sees pooled ReLU features of a single 1-tap convolution.
    fn threshold_model(threshold: f64) -> Arc<TcnModel> {
        let cfg = TcnConfig {
            kernel_size: 1,
            hidden_per_level: 3,
            ..TcnConfig::default()
        };
        let mut m = TcnModel::zeros(
            cfg,
            Normalizer {
                mean: vec![0.0, 0.0],
                std: vec![1.0, 1.0],
            },
        )
        .unwrap();
        let b = &mut m.blocks[0];
        // hidden 0 = relu(x0), others 0; conv2 passes hidden 0 through.
        b.conv1.weight = vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        b.conv2.weight = vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        // The 2->3 projection is the zero map, so the block output is relu(x0).
        m.head_weight = vec![-1.0, 0.0, 0.0, 1.0, 0.0, 0.0];
        m.head_bias = vec![threshold, -threshold];
        Arc::new(m)
    }

    fn window(id: u64, a: f64, b: f64, label: Label) -> Window {
        Window::new(id, vec![vec![a; 4], vec![b; 4]], Some(label)).unwrap()
    }

    fn train_set() -> Dataset {
        let windows = vec![
            window(0, 0.5, 3.0, Label::Healthy),
            window(1, 0.8, -1.0, Label::Healthy),
            window(2, 2.0, 0.0, Label::Anomalous),
            window(3, 3.0, 1.0, Label::Anomalous),
            window(4, 0.2, 0.0, Label::Anomalous), // misclassified, dropped
        ];
        Dataset::new(vec!["horizontal".into(), "vertical".into()], 4, windows).unwrap()
    }

    #[test]
    fn explainer_drops_misclassified_windows() {
        let ex = fit_explainer(threshold_model(1.0), &train_set()).unwrap();
        assert_eq!(ex.index_sizes(), vec![2, 2]);
        assert!(ex.distractor(4).is_none());
        assert_eq!(ex.distractor_ids(Label::Anomalous), vec![2, 3]);
    }

    #[test]
    fn empty_class_index() {
        let mut ds = train_set();
        ds.windows.retain(|w| w.id < 2 || w.id == 4);
        assert!(matches!(
            fit_explainer(threshold_model(1.0), &ds),
            Err(Error::EmptyClassIndex(1))
        ));
    }

    #[test]
    fn identity_when_already_target() {
        let ex = fit_explainer(threshold_model(1.0), &train_set()).unwrap();
        let q = CounterfactualQuery::new(window(9, 0.1, 0.0, Label::Healthy), Label::Healthy);
        let cf = greedy_counterfactual(&ex, &q).unwrap();
        assert!(cf.substituted_channels.is_empty());
        assert_eq!(cf.distance, 0.0);
        assert_eq!(cf.window, q.instance);
        let report = counterfactual_report(&cf, &q.instance, ex.channel_names());
        assert_eq!(report.sparsity, 0.0);
        assert!(report.narrative.is_empty());
    }

    #[test]
    fn substitutes_only_the_driving_channel() {
        let ex = fit_explainer(threshold_model(1.0), &train_set()).unwrap();
        let instance = window(9, 2.5, 7.0, Label::Anomalous);
        let cf = greedy_counterfactual(&ex, &CounterfactualQuery::new(instance.clone(), Label::Healthy)).unwrap();
        assert_eq!(cf.substituted_channels, vec![0]);
        assert_eq!(cf.window.values[1], instance.values[1]);
        let d = ex.distractor(cf.distractor_id.unwrap()).unwrap();
        assert_eq!(cf.window.values[0], d.values[0]);
        assert_eq!(argmax(&cf.probabilities_after), Label::Healthy.index());

        let report = counterfactual_report(&cf, &instance, ex.channel_names());
        assert_eq!(report.sparsity, 0.5);
        assert_eq!(report.changes[0].original_envelope, 2.5);
        assert!(report.narrative[0].starts_with("horizontal acceleration should be reduced"));
    }

    #[test]
    fn locking_the_driving_channel_fails_with_advice() {
        let ex = fit_explainer(threshold_model(1.0), &train_set()).unwrap();
        let q = CounterfactualQuery::new(window(9, 2.5, 7.0, Label::Anomalous), Label::Healthy)
            .with_locks([0])
            .with_distractors(1);
        let Err(Error::NoCounterfactualFound(fail)) = greedy_counterfactual(&ex, &q) else {
            panic!("expected failure");
        };
        assert_eq!(fail.locked_channels, vec![0]);
        assert_eq!(fail.distractors_tried.len(), 1);
        assert!(fail.advice.iter().any(|a| a.contains("horizontal")));
        assert!(fail.advice.iter().any(|a| a.contains("num_distractors")));
    }

    #[test]
    fn out_of_range_lock_is_a_shape_error() {
        let ex = fit_explainer(threshold_model(1.0), &train_set()).unwrap();
        let q = CounterfactualQuery::new(window(9, 2.5, 7.0, Label::Anomalous), Label::Healthy).with_locks([5]);
        assert!(matches!(greedy_counterfactual(&ex, &q), Err(Error::Shape(_))));
    }

    #[test]
    fn brute_force_fallback_gives_same_neighbours() {
        let ds = train_set();
        let tree = fit_explainer(threshold_model(1.0), &ds).unwrap();
        let linear = fit_explainer_with(
            threshold_model(1.0),
            &ds,
            &ExplainerConfig { brute_force_above_dim: 1 },
        )
        .unwrap();
        assert!(matches!(linear.index(Label::Healthy), DistractorIndex::Linear(_)));
        let q = window(9, 2.5, 7.0, Label::Anomalous);
        assert_eq!(
            tree.nearest(&q, Label::Healthy, 2).unwrap(),
            linear.nearest(&q, Label::Healthy, 2).unwrap()
        );
    }

    #[test]
    fn plot_series_has_three_traces_per_channel() {
        let ex = fit_explainer(threshold_model(1.0), &train_set()).unwrap();
        let instance = window(9, 2.5, 7.0, Label::Anomalous);
        let prev = window(8, 0.1, 0.1, Label::Healthy);
        let cf = greedy_counterfactual(&ex, &CounterfactualQuery::new(instance.clone(), Label::Healthy)).unwrap();
        let series = plot_series(&cf, &instance, Some(&prev), ex.channel_names());
        assert_eq!(series.len(), 2);
        assert_eq!(series[1].actual, series[1].counterfactual);
        assert_ne!(series[0].actual, series[0].counterfactual);
        assert_eq!(series[0].context.as_deref(), Some(&prev.values[0][..]));
    }
}
