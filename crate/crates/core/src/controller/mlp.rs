//! A small fully connected Q-network in plain f64, with Adam.

use std::fmt::Write as _;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::solver::argmax;

const HEADER: &str = "absa-mlp v1";

/// ReLU hidden layers, linear output. Parameters live in one flat vector,
/// layer by layer, each layer as its row-major `out x in` weights followed by
/// its `out` biases.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    widths: Vec<usize>,
    params: Vec<f64>,
}

impl Mlp {
    /// He-uniform weights, zero biases.
    pub fn new<R: Rng + ?Sized>(widths: Vec<usize>, rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(widths)?;
        for l in 0..net.num_layers() {
            let (fan_in, fan_out) = (net.widths[l], net.widths[l + 1]);
            let bound = (6.0 / fan_in as f64).sqrt();
            let w = net.weight_offset(l);
            for p in &mut net.params[w..w + fan_in * fan_out] {
                *p = rng.random_range(-bound..bound);
            }
        }
        Ok(net)
    }

    pub fn zeros(widths: Vec<usize>) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(Error::Config(format!("invalid layer widths {widths:?}")));
        }
        let n = widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        Ok(Self {
            widths,
            params: vec![0.0; n],
        })
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn num_layers(&self) -> usize {
        self.widths.len() - 1
    }

    pub fn input_width(&self) -> usize {
        self.widths[0]
    }

    pub fn output_width(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn copy_params_from(&mut self, other: &Mlp) {
        assert_eq!(self.widths, other.widths, "structurally different networks");
        self.params.copy_from_slice(&other.params);
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }

    fn weight_offset(&self, layer: usize) -> usize {
        self.widths[..=layer]
            .windows(2)
            .take(layer)
            .map(|w| w[0] * w[1] + w[1])
            .sum()
    }

    /// Activations of every layer, input first, output last.
    pub fn forward_trace(&self, input: &[f64]) -> Vec<Vec<f64>> {
        assert_eq!(input.len(), self.input_width(), "input width");
        let mut acts = Vec::with_capacity(self.widths.len());
        acts.push(input.to_vec());
        let mut offset = 0;
        for l in 0..self.num_layers() {
            let (n_in, n_out) = (self.widths[l], self.widths[l + 1]);
            let w = &self.params[offset..offset + n_in * n_out];
            let b = &self.params[offset + n_in * n_out..offset + n_in * n_out + n_out];
            let x = &acts[l];
            let hidden = l + 1 < self.num_layers();
            let y: Vec<f64> = (0..n_out)
                .map(|o| {
                    let row = &w[o * n_in..(o + 1) * n_in];
                    let z = b[o] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
                    if hidden {
                        z.max(0.0)
                    } else {
                        z
                    }
                })
                .collect();
            acts.push(y);
            offset += n_in * n_out + n_out;
        }
        acts
    }

    pub fn forward(&self, input: &[f64]) -> Vec<f64> {
        self.forward_trace(input).pop().unwrap()
    }

    /// Adds `d(output · dout)/d(params)` to `grad`.
    pub fn backward(&self, trace: &[Vec<f64>], dout: &[f64], grad: &mut [f64]) {
        let mut delta = dout.to_vec();
        let mut offset = self.params.len();
        for l in (0..self.num_layers()).rev() {
            let (n_in, n_out) = (self.widths[l], self.widths[l + 1]);
            offset -= n_in * n_out + n_out;
            let x = &trace[l];
            for o in 0..n_out {
                if delta[o] == 0.0 {
                    continue;
                }
                let row = &mut grad[offset + o * n_in..offset + (o + 1) * n_in];
                for (g, xi) in row.iter_mut().zip(x) {
                    *g += delta[o] * xi;
                }
                grad[offset + n_in * n_out + o] += delta[o];
            }
            if l == 0 {
                break;
            }
            let w = &self.params[offset..offset + n_in * n_out];
            let mut prev = vec![0.0; n_in];
            for o in 0..n_out {
                if delta[o] == 0.0 {
                    continue;
                }
                for (p, wi) in prev.iter_mut().zip(&w[o * n_in..(o + 1) * n_in]) {
                    *p += delta[o] * wi;
                }
            }
            // ReLU derivative of the hidden layer feeding this one.
            for (p, a) in prev.iter_mut().zip(x) {
                if *a <= 0.0 {
                    *p = 0.0;
                }
            }
            delta = prev;
        }
    }

    /// Text layout: the header line, `widths w_0 w_1 ...`, then one parameter
    /// per line in flat order.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        writeln!(out, "{HEADER}").unwrap();
        write!(out, "widths").unwrap();
        for w in &self.widths {
            write!(out, " {w}").unwrap();
        }
        out.push('\n');
        for p in &self.params {
            writeln!(out, "{p:?}").unwrap();
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |m: &str| Error::Config(format!("weights file: {m}"));
        let mut lines = text.lines();
        if lines.next() != Some(HEADER) {
            return Err(bad("missing header"));
        }
        let widths: Vec<usize> = lines
            .next()
            .and_then(|l| l.strip_prefix("widths "))
            .ok_or_else(|| bad("missing widths"))?
            .split_whitespace()
            .map(|w| w.parse().map_err(|_| bad("bad width")))
            .collect::<Result<_>>()?;
        let mut net = Self::zeros(widths)?;
        let params: Vec<f64> = lines
            .filter(|l| !l.trim().is_empty())
            .map(|l| l.trim().parse().map_err(|_| bad("bad parameter")))
            .collect::<Result<_>>()?;
        if params.len() != net.params.len() {
            return Err(bad("parameter count does not match widths"));
        }
        net.params = params;
        Ok(net)
    }
}

/// Adaptive-moment gradient descent.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(num_params: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t = self.t.saturating_add(1);
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

/// Form of the temporal-difference loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum TdLoss {
    /// `½(r + γ(1 − done) max_a Q'(c', a) − Q(c, m))²`.
    #[default]
    Standard,
    /// `½(r + (1 − done) max_a Q'(c', a) − max_a Q(c, a))²`: undiscounted, and
    /// regressing the greedy value rather than the taken action's.
    MaxMax,
}

/// A minibatch entry with one-hot encoded windows.
#[derive(Debug, Clone, PartialEq)]
pub struct TdSample {
    pub input: Vec<f64>,
    pub action: usize,
    pub reward: f64,
    pub next_input: Vec<f64>,
    pub terminal: bool,
}

/// Mean TD loss over `batch`; its gradient with respect to `online`'s
/// parameters is written into `grad`.
pub fn td_loss_grad(
    online: &Mlp,
    target: &Mlp,
    batch: &[TdSample],
    gamma: f64,
    kind: TdLoss,
    grad: &mut [f64],
) -> f64 {
    grad.iter_mut().for_each(|g| *g = 0.0);
    let scale = 1.0 / batch.len() as f64;
    let mut loss = 0.0;
    let mut dout = vec![0.0; online.output_width()];
    for s in batch {
        let next_max = if s.terminal {
            0.0
        } else {
            target
                .forward(&s.next_input)
                .into_iter()
                .fold(f64::NEG_INFINITY, f64::max)
        };
        let trace = online.forward_trace(&s.input);
        let q = trace.last().unwrap();
        let (y, slot) = match kind {
            TdLoss::Standard => (s.reward + gamma * next_max, s.action),
            TdLoss::MaxMax => (s.reward + next_max, argmax(q)),
        };
        let delta = y - q[slot];
        loss += 0.5 * delta * delta * scale;
        dout.iter_mut().for_each(|d| *d = 0.0);
        dout[slot] = -delta * scale;
        online.backward(&trace, &dout, grad);
    }
    loss
}
