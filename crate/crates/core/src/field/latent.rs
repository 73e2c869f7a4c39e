//! Three-layer code-to-latent maps with Lipschitz-normalised weights.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub fan_in: usize,
    pub fan_out: usize,
    /// Row-major `fan_out × fan_in`.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
    /// Raw bound; the effective row-sum cap is `softplus(bound)`.
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentParameterizer {
    pub layers: Vec<DenseLayer>,
}

/// Flat gradient in the same order as [`LatentParameterizer::params`].
pub type ParamGrad = Vec<f64>;

pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

pub fn softplus_inverse(y: f64) -> f64 {
    if y > 30.0 {
        y
    } else {
        y.exp_m1().ln()
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

const GELU_K: f64 = 0.797_884_560_802_865_4;

/// Tanh-form GELU and its derivative.
fn gelu(x: f64) -> (f64, f64) {
    let u = GELU_K * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    let du = GELU_K * (1.0 + 3.0 * 0.044715 * x * x);
    (0.5 * x * (1.0 + t), 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du)
}

impl DenseLayer {
    fn row_sum(&self, i: usize) -> f64 {
        self.weight[i * self.fan_in..(i + 1) * self.fan_in].iter().map(|w| w.abs()).sum()
    }

    /// Per-row scale `min(1, softplus(bound) / Σ|W_i·|)`.
    fn row_scale(&self, i: usize) -> f64 {
        let r = self.row_sum(i);
        let cap = softplus(self.bound);
        if r <= cap || r == 0.0 {
            1.0
        } else {
            cap / r
        }
    }

    fn n_params(&self) -> usize {
        self.weight.len() + self.bias.len() + 1
    }
}

impl LatentParameterizer {
    pub fn new(input: usize, hidden: usize, output: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sizes = [(input, hidden), (hidden, hidden), (hidden, output)];
        let layers = sizes
            .iter()
            .map(|&(fan_in, fan_out)| {
                let b = (1.0 / fan_in as f64).sqrt();
                let weight: Vec<f64> = (0..fan_in * fan_out).map(|_| rng.random_range(-b..b)).collect();
                let mut layer = DenseLayer { fan_in, fan_out, weight, bias: vec![0.0; fan_out], bound: 0.0 };
                let max_row = (0..fan_out).map(|i| layer.row_sum(i)).fold(0.0, f64::max);
                layer.bound = softplus_inverse(1.25 * max_row.max(1e-3));
                layer
            })
            .collect();
        Self { layers }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].fan_in
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.fan_out)
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(DenseLayer::n_params).sum()
    }

    /// Flattened parameters: per layer `weight, bias, bound`.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for l in &self.layers {
            out.extend_from_slice(&l.weight);
            out.extend_from_slice(&l.bias);
            out.push(l.bound);
        }
        out
    }

    pub fn set_params(&mut self, p: &[f64]) {
        let mut k = 0;
        for l in &mut self.layers {
            let nw = l.weight.len();
            l.weight.copy_from_slice(&p[k..k + nw]);
            k += nw;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&p[k..k + nb]);
            k += nb;
            l.bound = p[k];
            k += 1;
        }
    }

    /// Product of per-layer softplus bounds.
    pub fn lipschitz_penalty(&self) -> f64 {
        self.layers.iter().map(|l| softplus(l.bound)).product()
    }

    /// Accumulate `scale · ∂penalty/∂bound` into `grad`.
    pub fn lipschitz_backward(&self, scale: f64, grad: &mut [f64]) {
        let sp: Vec<f64> = self.layers.iter().map(|l| softplus(l.bound)).collect();
        let mut k = 0;
        for (li, l) in self.layers.iter().enumerate() {
            k += l.weight.len() + l.bias.len();
            let others: f64 = sp.iter().enumerate().filter(|(j, _)| *j != li).map(|(_, v)| v).product();
            grad[k] += scale * others * sigmoid(l.bound);
            k += 1;
        }
    }

    fn forward_trace(&self, input: &[f64]) -> Vec<Vec<f64>> {
        let mut acts = vec![input.to_vec()];
        let n = self.layers.len();
        for (li, l) in self.layers.iter().enumerate() {
            let x = acts.last().expect("input present");
            let mut y = vec![0.0; l.fan_out];
            for i in 0..l.fan_out {
                let sc = l.row_scale(i);
                let row = &l.weight[i * l.fan_in..(i + 1) * l.fan_in];
                let pre = l.bias[i] + sc * row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
                y[i] = if li + 1 < n { gelu(pre).0 } else { pre };
            }
            acts.push(y);
        }
        acts
    }

    pub fn forward(&self, input: &[f64]) -> Vec<f64> {
        self.forward_trace(input).pop().expect("output present")
    }

    /// Accumulate parameter gradients for output cotangent `g_out`.
    pub fn backward(&self, input: &[f64], g_out: &[f64], grad: &mut [f64]) {
        let acts = self.forward_trace(input);
        let n = self.layers.len();
        let mut offsets = Vec::with_capacity(n);
        let mut k = 0;
        for l in &self.layers {
            offsets.push(k);
            k += l.n_params();
        }
        let mut g = g_out.to_vec();
        for li in (0..n).rev() {
            let l = &self.layers[li];
            let x = &acts[li];
            let off = offsets[li];
            let cap = softplus(l.bound);
            let mut gx = vec![0.0; l.fan_in];
            for i in 0..l.fan_out {
                let row = &l.weight[i * l.fan_in..(i + 1) * l.fan_in];
                let sc = l.row_scale(i);
                let dot: f64 = row.iter().zip(x).map(|(w, v)| w * v).sum();
                let gpre = if li + 1 < n { g[i] * gelu(l.bias[i] + sc * dot).1 } else { g[i] };
                grad[off + l.weight.len() + i] += gpre;
                // cotangent on the normalised row Ŵ_i· is gpre · x
                let r = l.row_sum(i);
                if sc < 1.0 {
                    // Ŵ = W · cap / r
                    let g_dot_w = gpre * dot;
                    for j in 0..l.fan_in {
                        grad[off + i * l.fan_in + j] +=
                            sc * gpre * x[j] - cap * row[j].signum() / (r * r) * g_dot_w;
                    }
                    grad[off + l.weight.len() + l.bias.len()] += g_dot_w / r * sigmoid(l.bound);
                } else {
                    for j in 0..l.fan_in {
                        grad[off + i * l.fan_in + j] += gpre * x[j];
                    }
                }
                for j in 0..l.fan_in {
                    gx[j] += sc * row[j] * gpre;
                }
            }
            g = gx;
        }
    }
}
