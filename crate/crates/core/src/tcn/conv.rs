//! Causal dilated 1-D convolution on channel-major sequences.

use rand::Rng;

use crate::error::{Error, Result};

/// A `[channels x len]` sequence stored channel-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Seq {
    pub channels: usize,
    pub len: usize,
    pub data: Vec<f64>,
}

impl Seq {
    pub fn zeros(channels: usize, len: usize) -> Self {
        Seq {
            channels,
            len,
            data: vec![0.0; channels * len],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let channels = rows.len();
        let len = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != len) {
            return Err(Error::Shape("ragged sequence rows".into()));
        }
        Ok(Seq {
            channels,
            len,
            data: rows.iter().flatten().copied().collect(),
        })
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        if self.len == 0 {
            return vec![Vec::new(); self.channels];
        }
        self.data.chunks(self.len).map(<[f64]>::to_vec).collect()
    }

    pub fn row(&self, c: usize) -> &[f64] {
        &self.data[c * self.len..(c + 1) * self.len]
    }

    pub fn row_mut(&mut self, c: usize) -> &mut [f64] {
        &mut self.data[c * self.len..(c + 1) * self.len]
    }
}

/// Convolution whose output at `t` sees inputs `t - (kernel-1)*dilation ..= t`
/// only; the input is implicitly left-padded with zeros.
#[derive(Clone, Debug, PartialEq)]
pub struct CausalConv1d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_size: usize,
    pub dilation: usize,
    /// `[out][in][k]`, row-major.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl CausalConv1d {
    pub fn zeros(in_channels: usize, out_channels: usize, kernel_size: usize, dilation: usize) -> Self {
        CausalConv1d {
            in_channels,
            out_channels,
            kernel_size,
            dilation,
            weight: vec![0.0; out_channels * in_channels * kernel_size],
            bias: vec![0.0; out_channels],
        }
    }

    /// Uniform init in `+-1/sqrt(fan_in)` for weights and biases.
    pub fn init(&mut self, rng: &mut impl Rng) {
        let bound = 1.0 / ((self.in_channels * self.kernel_size) as f64).sqrt();
        for w in self.weight.iter_mut().chain(self.bias.iter_mut()) {
            *w = rng.random_range(-bound..bound);
        }
    }

    #[inline]
    fn w(&self, o: usize, i: usize, k: usize) -> f64 {
        self.weight[(o * self.in_channels + i) * self.kernel_size + k]
    }

    /// Left shift applied to the input for kernel tap `k`.
    #[inline]
    fn shift(&self, k: usize) -> usize {
        (self.kernel_size - 1 - k) * self.dilation
    }

    pub fn forward(&self, x: &Seq) -> Result<Seq> {
        if x.channels != self.in_channels {
            return Err(Error::Shape(format!(
                "convolution expects {} input channels, got {}",
                self.in_channels, x.channels
            )));
        }
        let t_len = x.len;
        let mut out = Seq::zeros(self.out_channels, t_len);
        for o in 0..self.out_channels {
            let row = out.row_mut(o);
            row.fill(self.bias[o]);
            for i in 0..self.in_channels {
                let input = x.row(i);
                for k in 0..self.kernel_size {
                    let shift = self.shift(k);
                    if shift >= t_len {
                        continue;
                    }
                    let w = self.w(o, i, k);
                    for (y, xv) in row[shift..].iter_mut().zip(&input[..t_len - shift]) {
                        *y += w * xv;
                    }
                }
            }
        }
        Ok(out)
    }

    /// Accumulates parameter gradients into `grad_w`/`grad_b` and returns the
    /// gradient with respect to the input.
    pub fn backward(&self, x: &Seq, grad_out: &Seq, grad_w: &mut [f64], grad_b: &mut [f64]) -> Seq {
        let t_len = x.len;
        let mut grad_in = Seq::zeros(self.in_channels, t_len);
        for o in 0..self.out_channels {
            let g = grad_out.row(o);
            grad_b[o] += g.iter().sum::<f64>();
            for i in 0..self.in_channels {
                let input = x.row(i);
                for k in 0..self.kernel_size {
                    let shift = self.shift(k);
                    if shift >= t_len {
                        continue;
                    }
                    let idx = (o * self.in_channels + i) * self.kernel_size + k;
                    let gs = &g[shift..];
                    grad_w[idx] += gs.iter().zip(&input[..t_len - shift]).map(|(a, b)| a * b).sum::<f64>();
                    let w = self.weight[idx];
                    let gi = &mut grad_in.row_mut(i)[..t_len - shift];
                    for (d, gv) in gi.iter_mut().zip(gs) {
                        *d += w * gv;
                    }
                }
            }
        }
        grad_in
    }
}

/// Causal dilated convolution over nested `[channel][t]` input with weights
/// `[out][in][k]`: `out[c][t] = bias[c] + sum_{i,k} w[c][i][k] *
/// input[i][t - (kernel-1-k)*dilation]`, out-of-range inputs read as zero.
pub fn causal_dilated_conv(
    input: &[Vec<f64>],
    weights: &[Vec<Vec<f64>>],
    bias: &[f64],
    dilation: usize,
) -> Result<Vec<Vec<f64>>> {
    if dilation == 0 {
        return Err(Error::Shape("dilation must be >= 1".into()));
    }
    let out_channels = weights.len();
    let in_channels = input.len();
    let kernel = weights.first().and_then(|w| w.first()).map_or(0, Vec::len);
    if bias.len() != out_channels
        || kernel == 0
        || weights
            .iter()
            .any(|w| w.len() != in_channels || w.iter().any(|k| k.len() != kernel))
    {
        return Err(Error::Shape(format!(
            "weights must be [{out_channels}][{in_channels}][k] with bias of length {out_channels}"
        )));
    }
    let x = Seq::from_rows(input)?;
    let conv = CausalConv1d {
        in_channels,
        out_channels,
        kernel_size: kernel,
        dilation,
        weight: weights.iter().flatten().flatten().copied().collect(),
        bias: bias.to_vec(),
    };
    Ok(conv.forward(&x)?.to_rows())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Direct transcription of the defining sum, independent of the shifted
    /// slice loops above.
    fn naive(input: &[Vec<f64>], w: &[Vec<Vec<f64>>], b: &[f64], d: usize) -> Vec<Vec<f64>> {
        let t_len = input[0].len();
        let kernel = w[0][0].len();
        (0..w.len())
            .map(|c| {
                (0..t_len)
                    .map(|t| {
                        let mut acc = b[c];
                        for (i, row) in input.iter().enumerate() {
                            for k in 0..kernel {
                                let src = t as i64 - ((kernel - 1 - k) * d) as i64;
                                if src >= 0 {
                                    acc += w[c][i][k] * row[src as usize];
                                }
                            }
                        }
                        acc
                    })
                    .collect()
            })
            .collect()
    }

    fn random_case(rng: &mut ChaCha8Rng) -> (Vec<Vec<f64>>, Vec<Vec<Vec<f64>>>, Vec<f64>, usize) {
        let cin = rng.random_range(1..4);
        let cout = rng.random_range(1..4);
        let k = rng.random_range(1..5);
        let t = rng.random_range(1..20);
        let d = rng.random_range(1..4);
        let mut r = || rng.random_range(-1.0..1.0);
        let input = (0..cin).map(|_| (0..t).map(|_| r()).collect()).collect();
        let w = (0..cout)
            .map(|_| (0..cin).map(|_| (0..k).map(|_| r()).collect()).collect())
            .collect();
        let b = (0..cout).map(|_| r()).collect();
        (input, w, b, d)
    }

    #[test]
    fn identity_tap_reproduces_input() {
        let input = vec![vec![1.0, -2.0, 3.0, 0.5], vec![0.0, 4.0, -1.0, 2.0]];
        let w = vec![
            vec![vec![0.0, 0.0, 1.0], vec![0.0, 0.0, 0.0]],
            vec![vec![0.0, 0.0, 0.0], vec![0.0, 0.0, 1.0]],
        ];
        let out = causal_dilated_conv(&input, &w, &[0.0, 0.0], 2).unwrap();
        assert_eq!(out, input);
    }

    #[test]
    fn matches_naive_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let (input, w, b, d) = random_case(&mut rng);
            let fast = causal_dilated_conv(&input, &w, &b, d).unwrap();
            let slow = naive(&input, &w, &b, d);
            for (fr, sr) in fast.iter().zip(&slow) {
                for (f, s) in fr.iter().zip(sr) {
                    assert!((f - s).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn future_perturbation_does_not_leak() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (mut input, w, b, d) = random_case(&mut rng);
        let t_len = input[0].len();
        let before = causal_dilated_conv(&input, &w, &b, d).unwrap();
        let t = t_len / 2;
        for row in &mut input {
            for v in &mut row[t + 1..] {
                *v += 10.0;
            }
        }
        let after = causal_dilated_conv(&input, &w, &b, d).unwrap();
        for (br, ar) in before.iter().zip(&after) {
            assert_eq!(br[..=t], ar[..=t]);
        }
    }

    #[test]
    fn shape_errors() {
        let input = vec![vec![1.0, 2.0]];
        assert!(causal_dilated_conv(&input, &[vec![vec![1.0], vec![1.0]]], &[0.0], 1).is_err());
        assert!(causal_dilated_conv(&input, &[vec![vec![1.0]]], &[], 1).is_err());
        assert!(causal_dilated_conv(&input, &[vec![vec![1.0]]], &[0.0], 0).is_err());
        let conv = CausalConv1d::zeros(3, 1, 2, 1);
        assert!(conv.forward(&Seq::zeros(2, 4)).is_err());
    }
}
