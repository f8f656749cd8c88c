use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Fully connected layer, weights stored row-major as `outputs x inputs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    /// Orthogonal init scaled by `gain`, zero bias.
    pub fn orthogonal<R: Rng + ?Sized>(inputs: usize, outputs: usize, gain: f64, rng: &mut R) -> Self {
        let rows = outputs.max(inputs);
        let cols = outputs.min(inputs);
        let a = DMatrix::<f64>::from_fn(rows, cols, |_, _| rng.sample(StandardNormal));
        let qr = a.qr();
        let mut q = qr.q();
        // fix the sign ambiguity so the result is uniformly distributed
        let r = qr.r();
        for j in 0..cols {
            if r[(j, j)] < 0.0 {
                q.column_mut(j).neg_mut();
            }
        }
        let mut layer = Self::zeros(inputs, outputs);
        for o in 0..outputs {
            for i in 0..inputs {
                let v = if outputs >= inputs { q[(o, i)] } else { q[(i, o)] };
                layer.weights[o * inputs + i] = gain * v;
            }
        }
        layer
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    fn forward_into(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for (row, b) in self.weights.chunks_exact(self.inputs).zip(&self.bias) {
            out.push(b + row.iter().zip(x).map(|(w, x)| w * x).sum::<f64>());
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OutputActivation {
    Tanh,
    Identity,
}

/// Multilayer perceptron with ReLU hidden layers and a single scalar output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Dense>,
    pub output: OutputActivation,
}

/// Per-layer activations retained for the backward pass.
#[derive(Debug, Clone, Default)]
pub struct ForwardCache {
    /// `acts[0]` is the input, `acts[k]` the post-activation output of layer `k - 1`.
    acts: Vec<Vec<f64>>,
}

impl Mlp {
    pub fn new<R: Rng + ?Sized>(
        sizes: &[usize],
        output: OutputActivation,
        hidden_gain: f64,
        output_gain: f64,
        rng: &mut R,
    ) -> Self {
        let n = sizes.len() - 1;
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(k, w)| {
                let gain = if k + 1 == n { output_gain } else { hidden_gain };
                Dense::orthogonal(w[0], w[1], gain, rng)
            })
            .collect();
        Self { layers, output }
    }

    pub fn zeros(sizes: &[usize], output: OutputActivation) -> Self {
        Self {
            layers: sizes.windows(2).map(|w| Dense::zeros(w[0], w[1])).collect(),
            output,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Dense::param_count).sum()
    }

    pub fn forward(&self, x: &[f64]) -> f64 {
        let mut cur = x.to_vec();
        let mut next = Vec::new();
        let last = self.layers.len() - 1;
        for (k, layer) in self.layers.iter().enumerate() {
            layer.forward_into(&cur, &mut next);
            if k < last {
                next.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            std::mem::swap(&mut cur, &mut next);
        }
        self.activate(cur[0])
    }

    pub fn forward_cached(&self, x: &[f64], cache: &mut ForwardCache) -> f64 {
        let n = self.layers.len();
        cache.acts.resize_with(n + 1, Vec::new);
        cache.acts[0].clear();
        cache.acts[0].extend_from_slice(x);
        for (k, layer) in self.layers.iter().enumerate() {
            let (head, tail) = cache.acts.split_at_mut(k + 1);
            layer.forward_into(&head[k], &mut tail[0]);
            if k + 1 < n {
                tail[0].iter_mut().for_each(|v| *v = v.max(0.0));
            }
        }
        let out = self.activate(cache.acts[n][0]);
        cache.acts[n][0] = out;
        out
    }

    fn activate(&self, z: f64) -> f64 {
        match self.output {
            OutputActivation::Tanh => z.tanh(),
            OutputActivation::Identity => z,
        }
    }

    /// Accumulate `d_out * d(output)/d(params)` into `grad`, using the
    /// activations stored by the matching [`Mlp::forward_cached`] call.
    pub fn backward(&self, cache: &ForwardCache, d_out: f64, grad: &mut Mlp) {
        let n = self.layers.len();
        let y = cache.acts[n][0];
        let mut delta = vec![match self.output {
            OutputActivation::Tanh => d_out * (1.0 - y * y),
            OutputActivation::Identity => d_out,
        }];
        let mut prev_delta = Vec::new();
        for k in (0..n).rev() {
            let layer = &self.layers[k];
            let g = &mut grad.layers[k];
            let input = &cache.acts[k];
            for (o, d) in delta.iter().enumerate() {
                g.bias[o] += d;
                let row = &mut g.weights[o * layer.inputs..(o + 1) * layer.inputs];
                for (gw, x) in row.iter_mut().zip(input) {
                    *gw += d * x;
                }
            }
            if k == 0 {
                break;
            }
            prev_delta.clear();
            prev_delta.resize(layer.inputs, 0.0);
            for (o, d) in delta.iter().enumerate() {
                let row = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                for (pd, w) in prev_delta.iter_mut().zip(row) {
                    *pd += d * w;
                }
            }
            // ReLU derivative from the stored post-activation
            for (pd, a) in prev_delta.iter_mut().zip(input) {
                if *a <= 0.0 {
                    *pd = 0.0;
                }
            }
            std::mem::swap(&mut delta, &mut prev_delta);
        }
    }

    pub fn check_shape(&self, other: &Mlp) -> Result<()> {
        let same = self.layers.len() == other.layers.len()
            && self
                .layers
                .iter()
                .zip(&other.layers)
                .all(|(a, b)| a.inputs == b.inputs && a.outputs == b.outputs);
        if same {
            Ok(())
        } else {
            Err(Error::ShapeMismatch("network topologies differ".into()))
        }
    }

    pub fn params(&self) -> impl Iterator<Item = &f64> {
        self.layers.iter().flat_map(|l| l.weights.iter().chain(&l.bias))
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weights.iter_mut().chain(l.bias.iter_mut()))
    }
}
