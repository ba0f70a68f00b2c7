use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{argmax, Gradients, Seq, TcnConfig, TcnModel};
use crate::data::{fit_normalizer, Dataset};
use crate::error::{Error, Result};
use crate::seed::component_rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean training cross-entropy of each epoch (dropout active).
    pub epoch_losses: Vec<f64>,
    /// Accuracy on the training set in inference mode after the last epoch.
    pub train_accuracy: f64,
    #[serde(skip)]
    pub wall_time_secs: f64,
}

/// Adam with the usual defaults (beta1 0.9, beta2 0.999, eps 1e-8).
#[derive(Clone, Debug)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: i32,
    m: Gradients,
    v: Gradients,
}

impl Adam {
    pub fn new(model: &TcnModel, learning_rate: f64) -> Self {
        Adam {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: model.zero_gradients(),
            v: model.zero_gradients(),
        }
    }

    pub fn step(&mut self, model: &mut TcnModel, grads: &Gradients) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step);
        let bc2 = 1.0 - self.beta2.powi(self.step);
        for (((param, g), m), v) in model
            .parameters_mut()
            .into_iter()
            .zip(grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            for i in 0..param.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                param[i] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}

/// Mean cross-entropy over `(inputs, labels)` and its gradient. Inputs must
/// already be normalised. Dropout is applied when `rng` is given.
pub fn loss_and_gradients(
    model: &TcnModel,
    inputs: &[Seq],
    labels: &[usize],
    mut rng: Option<&mut impl Rng>,
) -> Result<(f64, Gradients)> {
    if inputs.len() != labels.len() || inputs.is_empty() {
        return Err(Error::Shape(format!(
            "{} inputs but {} labels",
            inputs.len(),
            labels.len()
        )));
    }
    let scale = 1.0 / inputs.len() as f64;
    let mut grads = model.zero_gradients();
    let mut loss = 0.0;
    for (x, &y) in inputs.iter().zip(labels) {
        let trace = model.forward_trace(x, rng.as_deref_mut())?;
        loss -= trace.probs[y].ln() * scale;
        model.backward(&trace, y, scale, &mut grads);
    }
    Ok((loss, grads))
}

/// Trains a fresh model with cross-entropy and Adam over shuffled
/// mini-batches. The normaliser is fitted on `ds` and stored in the model.
pub fn train(ds: &Dataset, cfg: &TcnConfig) -> Result<(TcnModel, TrainReport)> {
    cfg.validate()?;
    let started = Instant::now();
    if ds.channels() != cfg.in_channels {
        return Err(Error::Shape(format!(
            "dataset has {} channels, config expects {}",
            ds.channels(),
            cfg.in_channels
        )));
    }
    let labels: Vec<usize> = ds.labels()?.into_iter().map(|l| l.index()).collect();
    let counts = ds.class_counts();
    if counts.iter().filter(|&&c| c > 0).count() < 2 {
        return Err(Error::DegenerateLabels(format!(
            "{} healthy / {} anomalous",
            counts[0], counts[1]
        )));
    }

    let normalizer = fit_normalizer(ds);
    let mut model = TcnModel::new(cfg.clone(), normalizer)?;
    let inputs: Vec<Seq> = ds
        .windows
        .iter()
        .map(|w| model.normalized_seq(w))
        .collect::<Result<_>>()?;

    let mut shuffle_rng = component_rng(cfg.seed, "tcn-shuffle");
    let mut dropout_rng = component_rng(cfg.seed, "tcn-dropout");
    let mut adam = Adam::new(&model, cfg.learning_rate);
    let mut order: Vec<usize> = (0..inputs.len()).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);

    for _ in 0..cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let xs: Vec<Seq> = batch.iter().map(|&i| inputs[i].clone()).collect();
            let ys: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
            let (loss, grads) = loss_and_gradients(&model, &xs, &ys, Some(&mut dropout_rng))?;
            if !loss.is_finite() {
                return Err(Error::Config(format!("training diverged (loss {loss})")));
            }
            total += loss * batch.len() as f64;
            adam.step(&mut model, &grads);
        }
        epoch_losses.push(total / inputs.len() as f64);
    }

    let mut correct = 0usize;
    for (x, &y) in inputs.iter().zip(&labels) {
        let trace = model.forward_trace(x, None::<&mut rand_chacha::ChaCha8Rng>)?;
        if argmax(&trace.probs) == y {
            correct += 1;
        }
    }
    let report = TrainReport {
        epoch_losses,
        train_accuracy: correct as f64 / inputs.len() as f64,
        wall_time_secs: started.elapsed().as_secs_f64(),
    };
    Ok((model, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Label, Window};

    /// Quiet windows are Healthy, loud ones Anomalous; an RMS threshold at the
    /// midpoint separates them perfectly.
    fn separable(n: usize, t: usize, seed: u64) -> Dataset {
        let mut rng = component_rng(seed, "test-separable");
        let windows = (0..n)
            .map(|i| {
                let loud = i % 2 == 1;
                let amp = if loud { 3.0 } else { 1.0 };
                let values = (0..2)
                    .map(|c| {
                        (0..t)
                            .map(|k| {
                                amp * ((k as f64) * 0.7 + c as f64).sin()
                                    + rng.random_range(-0.1..0.1)
                            })
                            .collect()
                    })
                    .collect();
                let label = if loud { Label::Anomalous } else { Label::Healthy };
                Window::new(i as u64, values, Some(label)).unwrap()
            })
            .collect();
        Dataset::new(vec!["h".into(), "v".into()], t, windows).unwrap()
    }

    #[test]
    fn learns_a_separable_problem() {
        let ds = separable(120, 32, 1);
        let rms_oracle_ok = ds.windows.iter().all(|w| {
            let r = crate::data::rms(&w.values[0]).unwrap();
            (r > 1.4) == (w.label == Some(Label::Anomalous))
        });
        assert!(rms_oracle_ok, "fixture must be separable by RMS");

        let cfg = TcnConfig { seed: 3, ..TcnConfig::default() };
        let (model, report) = train(&ds, &cfg).unwrap();
        assert!(report.train_accuracy >= 0.95, "{report:?}");
        assert!(report.epoch_losses.iter().all(|l| l.is_finite()));
        assert!(report.epoch_losses.last() < report.epoch_losses.first());

        let held_out = separable(60, 32, 2);
        let pred = super::super::predict(&model, &held_out.windows).unwrap();
        let acc = pred
            .iter()
            .zip(held_out.labels().unwrap())
            .filter(|(p, l)| *p == l)
            .count() as f64
            / 60.0;
        assert!(acc >= 0.9, "held-out accuracy {acc}");
    }

    #[test]
    fn same_seed_same_parameters() {
        let ds = separable(40, 16, 4);
        let cfg = TcnConfig { epochs: 2, seed: 9, ..TcnConfig::default() };
        let (a, ra) = train(&ds, &cfg).unwrap();
        let (b, rb) = train(&ds, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(ra.epoch_losses, rb.epoch_losses);
    }

    #[test]
    fn single_class_is_rejected() {
        let mut ds = separable(10, 8, 5);
        for w in &mut ds.windows {
            w.label = Some(Label::Healthy);
        }
        assert!(matches!(
            train(&ds, &TcnConfig::default()),
            Err(Error::DegenerateLabels(_))
        ));
    }

    #[test]
    fn zero_head_bias_gradient_is_softmax_minus_onehot() {
        let ds = separable(6, 12, 6);
        let mut model = TcnModel::new(TcnConfig::default(), fit_normalizer(&ds)).unwrap();
        model.head_weight.iter_mut().for_each(|w| *w = 0.0);
        model.head_bias = vec![0.3, -0.2];
        let xs: Vec<Seq> = ds.windows.iter().map(|w| model.normalized_seq(w).unwrap()).collect();
        let ys: Vec<usize> = ds.labels().unwrap().iter().map(|l| l.index()).collect();
        let (loss, grads) =
            loss_and_gradients(&model, &xs, &ys, None::<&mut rand_chacha::ChaCha8Rng>).unwrap();

        let p = super::super::softmax(&[0.3, -0.2]);
        let n = ys.len() as f64;
        let expected: Vec<f64> = (0..2)
            .map(|k| ys.iter().map(|&y| p[k] - if y == k { 1.0 } else { 0.0 }).sum::<f64>() / n)
            .collect();
        let head_bias = grads.last().unwrap();
        for k in 0..2 {
            assert!((head_bias[k] - expected[k]).abs() < 1e-15);
        }
        let expected_loss = -ys.iter().map(|&y| p[y].ln()).sum::<f64>() / n;
        assert!((loss - expected_loss).abs() < 1e-12);
    }
}
