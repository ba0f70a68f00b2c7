//! Temporal convolutional network for binary window classification.
//!
//! Architecture: `levels` residual blocks of two causal dilated convolutions
//! (dilation `2^level`), each followed by ReLU and inverted dropout, with a
//! 1x1 projection on the skip path when channel counts differ. Block outputs
//! are mean-pooled over time and mapped to class logits by an affine head.
//!
//! Forward and backward passes are written out by hand in `f64`; see
//! [`verify_gradients`] for the finite-difference check that keeps them
//! honest.

mod conv;
mod gradcheck;
mod io;
mod train;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Label, Normalizer, Window};
use crate::error::{Error, Result};
use crate::seed::indexed_rng;

pub use conv::{causal_dilated_conv, CausalConv1d, Seq};
pub use gradcheck::{verify_gradients, GradCheckReport, GRAD_CHECK_FLOOR, GRAD_CHECK_STEP};
pub use io::{load_model, model_from_json, model_to_json, save_model, MODEL_FORMAT_VERSION};
pub use train::{loss_and_gradients, train, Adam, TrainReport};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TcnConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub dropout: f64,
    pub kernel_size: usize,
    pub levels: usize,
    pub learning_rate: f64,
    pub hidden_per_level: usize,
    pub in_channels: usize,
    pub n_classes: usize,
    pub seed: u64,
}

impl Default for TcnConfig {
    fn default() -> Self {
        TcnConfig {
            epochs: 10,
            batch_size: 32,
            dropout: 0.05,
            kernel_size: 7,
            levels: 1,
            learning_rate: 2e-3,
            hidden_per_level: 20,
            in_channels: 2,
            n_classes: 2,
            seed: 0,
        }
    }
}

impl TcnConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.kernel_size == 0 {
            return bad("kernel_size must be >= 1");
        }
        if self.levels == 0 {
            return bad("levels must be >= 1");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if self.hidden_per_level == 0 || self.in_channels == 0 {
            return bad("hidden_per_level and in_channels must be >= 1");
        }
        if self.n_classes < 2 {
            return bad("n_classes must be >= 2");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        Ok(())
    }

    /// Number of timesteps (including `t` itself) that can influence the
    /// pre-pooling output at `t`.
    pub fn receptive_field(&self) -> usize {
        let dilations: usize = (0..self.levels).map(|l| 1usize << l).sum();
        1 + 2 * (self.kernel_size - 1) * dilations
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TemporalBlock {
    pub dilation: usize,
    pub conv1: CausalConv1d,
    pub conv2: CausalConv1d,
    /// 1x1 projection on the residual path, present only when channel counts differ.
    pub downsample: Option<CausalConv1d>,
}

/// Intermediate values of one block, kept for the backward pass.
#[derive(Clone, Debug)]
pub(crate) struct BlockTrace {
    input: Seq,
    z1: Seq,
    mask1: Option<Vec<f64>>,
    d1: Seq,
    z2: Seq,
    mask2: Option<Vec<f64>>,
    sum: Seq,
    out: Seq,
}

fn relu_dropout(z: &Seq, mask: Option<&[f64]>) -> Seq {
    let mut out = z.clone();
    for (i, v) in out.data.iter_mut().enumerate() {
        *v = v.max(0.0) * mask.map_or(1.0, |m| m[i]);
    }
    out
}

fn dropout_mask(n: usize, p: f64, rng: &mut impl Rng) -> Vec<f64> {
    let keep = 1.0 / (1.0 - p);
    (0..n)
        .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
        .collect()
}

impl TemporalBlock {
    pub fn new(in_channels: usize, out_channels: usize, kernel_size: usize, dilation: usize) -> Self {
        TemporalBlock {
            dilation,
            conv1: CausalConv1d::zeros(in_channels, out_channels, kernel_size, dilation),
            conv2: CausalConv1d::zeros(out_channels, out_channels, kernel_size, dilation),
            downsample: (in_channels != out_channels)
                .then(|| CausalConv1d::zeros(in_channels, out_channels, 1, 1)),
        }
    }

    /// Inference-mode forward pass.
    pub fn forward(&self, x: &Seq) -> Result<Seq> {
        Ok(self.forward_trace(x, None::<&mut rand_chacha::ChaCha8Rng>, 0.0)?.out)
    }

    pub(crate) fn forward_trace(
        &self,
        x: &Seq,
        rng: Option<&mut impl Rng>,
        dropout: f64,
    ) -> Result<BlockTrace> {
        let z1 = self.conv1.forward(x)?;
        let n = z1.data.len();
        let (mask1, mask2) = match rng {
            Some(rng) if dropout > 0.0 => (
                Some(dropout_mask(n, dropout, rng)),
                Some(dropout_mask(n, dropout, rng)),
            ),
            _ => (None, None),
        };
        let d1 = relu_dropout(&z1, mask1.as_deref());
        let z2 = self.conv2.forward(&d1)?;
        let d2 = relu_dropout(&z2, mask2.as_deref());
        let residual = match &self.downsample {
            Some(proj) => proj.forward(x)?,
            None => x.clone(),
        };
        let mut sum = d2;
        for (s, r) in sum.data.iter_mut().zip(&residual.data) {
            *s += r;
        }
        let out = relu_dropout(&sum, None);
        Ok(BlockTrace {
            input: x.clone(),
            z1,
            mask1,
            d1,
            z2,
            mask2,
            sum,
            out,
        })
    }
}

/// Gradients laid out like [`TcnModel::parameters`].
pub type Gradients = Vec<Vec<f64>>;

#[derive(Clone, Debug, PartialEq)]
pub struct TcnModel {
    pub config: TcnConfig,
    pub blocks: Vec<TemporalBlock>,
    /// `[n_classes][hidden]`, row-major.
    pub head_weight: Vec<f64>,
    pub head_bias: Vec<f64>,
    pub normalizer: Normalizer,
}

/// Forward record of one example.
pub(crate) struct Trace {
    blocks: Vec<BlockTrace>,
    pooled: Vec<f64>,
    probs: Vec<f64>,
}

pub(crate) fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Index of the largest probability; ties go to the lower class index.
pub fn argmax(probs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > probs[best] {
            best = i;
        }
    }
    best
}

impl TcnModel {
    /// A model with all parameters zero.
    pub fn zeros(config: TcnConfig, normalizer: Normalizer) -> Result<Self> {
        config.validate()?;
        if normalizer.channels() != config.in_channels {
            return Err(Error::Shape(format!(
                "normalizer has {} channels, config expects {}",
                normalizer.channels(),
                config.in_channels
            )));
        }
        let hidden = config.hidden_per_level;
        let blocks = (0..config.levels)
            .map(|l| {
                let cin = if l == 0 { config.in_channels } else { hidden };
                TemporalBlock::new(cin, hidden, config.kernel_size, 1 << l)
            })
            .collect();
        Ok(TcnModel {
            head_weight: vec![0.0; config.n_classes * hidden],
            head_bias: vec![0.0; config.n_classes],
            config,
            blocks,
            normalizer,
        })
    }

    /// A freshly initialised model, deterministic in `config.seed`.
    pub fn new(config: TcnConfig, normalizer: Normalizer) -> Result<Self> {
        let mut model = TcnModel::zeros(config, normalizer)?;
        let mut rng = crate::seed::component_rng(model.config.seed, "tcn-init");
        for block in &mut model.blocks {
            block.conv1.init(&mut rng);
            block.conv2.init(&mut rng);
            if let Some(proj) = &mut block.downsample {
                proj.init(&mut rng);
            }
        }
        let bound = 1.0 / (model.config.hidden_per_level as f64).sqrt();
        for w in model.head_weight.iter_mut().chain(model.head_bias.iter_mut()) {
            *w = rng.random_range(-bound..bound);
        }
        Ok(model)
    }

    /// Named parameter tensors in canonical order.
    pub fn parameters(&self) -> Vec<(String, &[f64])> {
        let mut out: Vec<(String, &[f64])> = Vec::new();
        for (l, b) in self.blocks.iter().enumerate() {
            out.push((format!("blocks.{l}.conv1.weight"), &b.conv1.weight));
            out.push((format!("blocks.{l}.conv1.bias"), &b.conv1.bias));
            out.push((format!("blocks.{l}.conv2.weight"), &b.conv2.weight));
            out.push((format!("blocks.{l}.conv2.bias"), &b.conv2.bias));
            if let Some(p) = &b.downsample {
                out.push((format!("blocks.{l}.downsample.weight"), &p.weight));
                out.push((format!("blocks.{l}.downsample.bias"), &p.bias));
            }
        }
        out.push(("head.weight".into(), &self.head_weight));
        out.push(("head.bias".into(), &self.head_bias));
        out
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Vec<f64>> {
        let mut out: Vec<&mut Vec<f64>> = Vec::new();
        for b in &mut self.blocks {
            out.push(&mut b.conv1.weight);
            out.push(&mut b.conv1.bias);
            out.push(&mut b.conv2.weight);
            out.push(&mut b.conv2.bias);
            if let Some(p) = &mut b.downsample {
                out.push(&mut p.weight);
                out.push(&mut p.bias);
            }
        }
        out.push(&mut self.head_weight);
        out.push(&mut self.head_bias);
        out
    }

    pub fn zero_gradients(&self) -> Gradients {
        self.parameters().iter().map(|(_, p)| vec![0.0; p.len()]).collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.parameters().iter().map(|(_, p)| p.len()).sum()
    }

    fn check_input(&self, x: &Seq) -> Result<()> {
        if x.channels != self.config.in_channels {
            return Err(Error::Shape(format!(
                "model expects {} channels, window has {}",
                self.config.in_channels, x.channels
            )));
        }
        if x.len == 0 {
            return Err(Error::Shape("window has no timesteps".into()));
        }
        Ok(())
    }

    pub(crate) fn forward_trace(&self, x: &Seq, mut rng: Option<&mut impl Rng>) -> Result<Trace> {
        self.check_input(x)?;
        let mut blocks = Vec::with_capacity(self.blocks.len());
        let mut h = x.clone();
        for block in &self.blocks {
            let trace = block.forward_trace(&h, rng.as_deref_mut(), self.config.dropout)?;
            h = trace.out.clone();
            blocks.push(trace);
        }
        let pooled: Vec<f64> = (0..h.channels)
            .map(|c| h.row(c).iter().sum::<f64>() / h.len as f64)
            .collect();
        let hidden = self.config.hidden_per_level;
        let logits: Vec<f64> = (0..self.config.n_classes)
            .map(|k| {
                self.head_bias[k]
                    + self.head_weight[k * hidden..(k + 1) * hidden]
                        .iter()
                        .zip(&pooled)
                        .map(|(w, p)| w * p)
                        .sum::<f64>()
            })
            .collect();
        Ok(Trace {
            blocks,
            pooled,
            probs: softmax(&logits),
        })
    }

    /// Accumulates `scale * d(-log p_label)/d(theta)` into `grads`.
    pub(crate) fn backward(&self, trace: &Trace, label: usize, scale: f64, grads: &mut Gradients) {
        let hidden = self.config.hidden_per_level;
        let n_classes = self.config.n_classes;
        let g_logits: Vec<f64> = trace
            .probs
            .iter()
            .enumerate()
            .map(|(k, p)| scale * (p - if k == label { 1.0 } else { 0.0 }))
            .collect();

        let head_w = grads.len() - 2;
        let mut g_pooled = vec![0.0; hidden];
        for k in 0..n_classes {
            grads[head_w + 1][k] += g_logits[k];
            for h in 0..hidden {
                grads[head_w][k * hidden + h] += g_logits[k] * trace.pooled[h];
                g_pooled[h] += g_logits[k] * self.head_weight[k * hidden + h];
            }
        }

        let t_len = trace.blocks.last().map_or(0, |b| b.out.len);
        let mut g = Seq::zeros(hidden, t_len);
        for h in 0..hidden {
            g.row_mut(h).fill(g_pooled[h] / t_len as f64);
        }

        let mut slot = head_w;
        for (block, bt) in self.blocks.iter().zip(&trace.blocks).rev() {
            let n_params = if block.downsample.is_some() { 6 } else { 4 };
            slot -= n_params;
            g = block_backward(block, bt, g, &mut grads[slot..slot + n_params]);
        }
    }

    /// Class probabilities for one already-normalised window.
    ///
    /// With `train_mode` set, dropout is applied using a stream derived from
    /// the model seed and the window id.
    pub fn forward(&self, window: &Window, train_mode: bool) -> Result<Vec<f64>> {
        let x = Seq::from_rows(&window.values)?;
        let trace = if train_mode {
            let mut rng = indexed_rng(self.config.seed, "forward-dropout", window.id);
            self.forward_trace(&x, Some(&mut rng))?
        } else {
            self.forward_trace(&x, None::<&mut rand_chacha::ChaCha8Rng>)?
        };
        Ok(trace.probs)
    }

    /// Pre-pooling outputs of every block for one already-normalised window.
    pub fn features(&self, window: &Window) -> Result<Vec<Seq>> {
        let x = Seq::from_rows(&window.values)?;
        self.check_input(&x)?;
        let mut out = Vec::with_capacity(self.blocks.len());
        let mut h = x;
        for block in &self.blocks {
            h = block.forward(&h)?;
            out.push(h.clone());
        }
        Ok(out)
    }

    pub(crate) fn normalized_seq(&self, window: &Window) -> Result<Seq> {
        let mut x = Seq::from_rows(&window.values)?;
        self.check_input(&x)?;
        self.normalizer.apply_flat(&mut x.data);
        Ok(x)
    }

    /// Probabilities for a raw (unnormalised) window.
    pub fn predict_proba_one(&self, window: &Window) -> Result<Vec<f64>> {
        let x = self.normalized_seq(window)?;
        Ok(self.forward_trace(&x, None::<&mut rand_chacha::ChaCha8Rng>)?.probs)
    }
}

fn block_backward(block: &TemporalBlock, bt: &BlockTrace, g_out: Seq, grads: &mut [Vec<f64>]) -> Seq {
    // out = relu(sum)
    let mut g_sum = g_out;
    for (g, s) in g_sum.data.iter_mut().zip(&bt.sum.data) {
        if *s <= 0.0 {
            *g = 0.0;
        }
    }
    // d2 = relu(z2) * mask2
    let mut g_z2 = g_sum.clone();
    for (i, g) in g_z2.data.iter_mut().enumerate() {
        let m = bt.mask2.as_ref().map_or(1.0, |m| m[i]);
        *g = if bt.z2.data[i] > 0.0 { *g * m } else { 0.0 };
    }
    let (g1, rest) = grads.split_at_mut(2);
    let (g2, g_proj) = rest.split_at_mut(2);
    let (g2w, g2b) = g2.split_at_mut(1);
    let mut g_d1 = block.conv2.backward(&bt.d1, &g_z2, &mut g2w[0], &mut g2b[0]);
    for (i, g) in g_d1.data.iter_mut().enumerate() {
        let m = bt.mask1.as_ref().map_or(1.0, |m| m[i]);
        *g = if bt.z1.data[i] > 0.0 { *g * m } else { 0.0 };
    }
    let (g1w, g1b) = g1.split_at_mut(1);
    let mut g_x = block.conv1.backward(&bt.input, &g_d1, &mut g1w[0], &mut g1b[0]);
    let g_res = match &block.downsample {
        Some(proj) => {
            let (gpw, gpb) = g_proj.split_at_mut(1);
            proj.backward(&bt.input, &g_sum, &mut gpw[0], &mut gpb[0])
        }
        None => g_sum,
    };
    for (a, b) in g_x.data.iter_mut().zip(&g_res.data) {
        *a += b;
    }
    g_x
}

/// Probability rows for raw windows, normalised with the model's normaliser.
pub fn predict_proba(model: &TcnModel, windows: &[Window]) -> Result<Vec<Vec<f64>>> {
    windows.iter().map(|w| model.predict_proba_one(w)).collect()
}

/// Argmax labels for raw windows; ties resolve to Healthy.
pub fn predict(model: &TcnModel, windows: &[Window]) -> Result<Vec<Label>> {
    Ok(predict_proba(model, windows)?
        .iter()
        .map(|p| Label::from_index(argmax(p)).unwrap_or(Label::Healthy))
        .collect())
}
