//! Small dense feed-forward regressors with hand-written backpropagation.
//!
//! Hidden layers use tanh, the output layer is linear. Weights are flat
//! row-major (`w[out * in_dim + in]`). Everything is seeded and sequential,
//! so training runs are bit-reproducible.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// One dense layer.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub in_dim: usize,
    pub out_dim: usize,
    /// Row-major `out_dim x in_dim`.
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl DenseLayer {
    fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self { in_dim, out_dim, w: vec![0.0; in_dim * out_dim], b: vec![0.0; out_dim] }
    }

    /// Uniform init in [-1/sqrt(fan_in), 1/sqrt(fan_in)].
    fn init(in_dim: usize, out_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / (in_dim as f64).sqrt();
        let mut layer = Self::zeros(in_dim, out_dim);
        for w in &mut layer.w {
            *w = rng.gen_range(-bound..=bound);
        }
        for b in &mut layer.b {
            *b = rng.gen_range(-bound..=bound);
        }
        layer
    }

    fn affine(&self, x: &[f64], out: &mut Vec<f64>) {
        debug_assert_eq!(x.len(), self.in_dim);
        out.clear();
        for o in 0..self.out_dim {
            let row = &self.w[o * self.in_dim..(o + 1) * self.in_dim];
            let mut acc = self.b[o];
            for (wi, xi) in row.iter().zip(x) {
                acc += wi * xi;
            }
            out.push(acc);
        }
    }
}

/// Feed-forward regressor: tanh hidden layers, identity output.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<DenseLayer>,
}

/// Parameter gradients with the same shapes as the network.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads {
    pub layers: Vec<DenseLayer>,
}

impl MlpGrads {
    pub fn zeros_like(net: &Mlp) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| DenseLayer::zeros(l.in_dim, l.out_dim))
                .collect(),
        }
    }

    pub fn accumulate(&mut self, other: &MlpGrads) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (x, y) in a.w.iter_mut().zip(&b.w) {
                *x += y;
            }
            for (x, y) in a.b.iter_mut().zip(&b.b) {
                *x += y;
            }
        }
    }

    pub fn clear(&mut self) {
        for layer in &mut self.layers {
            layer.w.fill(0.0);
            layer.b.fill(0.0);
        }
    }
}

impl Mlp {
    /// Seeded network with the given sizes, e.g. `[4, 200, 1]`.
    pub fn new(sizes: &[usize], rng: &mut ChaCha8Rng) -> Self {
        assert!(sizes.len() >= 2, "network needs input and output dims");
        let layers = sizes.windows(2).map(|p| DenseLayer::init(p[0], p[1], rng)).collect();
        Self { layers }
    }

    /// All-zero network of the given sizes.
    pub fn zeros(sizes: &[usize]) -> Self {
        assert!(sizes.len() >= 2, "network needs input and output dims");
        let layers = sizes.windows(2).map(|p| DenseLayer::zeros(p[0], p[1])).collect();
        Self { layers }
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![self.layers[0].in_dim];
        sizes.extend(self.layers.iter().map(|l| l.out_dim));
        sizes
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().out_dim
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.w.iter().all(|v| v.is_finite()) && l.b.iter().all(|v| v.is_finite()))
    }

    /// Forward pass.
    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut cur = x.to_vec();
        let mut next = Vec::new();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            layer.affine(&cur, &mut next);
            if i < last {
                for v in &mut next {
                    *v = v.tanh();
                }
            }
            std::mem::swap(&mut cur, &mut next);
        }
        cur
    }

    /// Post-activation values per layer, input first, used by backprop.
    fn forward_trace(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.to_vec());
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut out = Vec::new();
            layer.affine(acts.last().unwrap(), &mut out);
            if i < last {
                for v in &mut out {
                    *v = v.tanh();
                }
            }
            acts.push(out);
        }
        acts
    }

    /// Exact gradients of `upstream . output` with respect to every weight
    /// and bias. `upstream` carries whatever chain-rule factor the loss
    /// contributes (for mean-absolute-error, the subgradient sign).
    pub fn gradient(&self, x: &[f64], upstream: &[f64]) -> MlpGrads {
        let mut grads = MlpGrads::zeros_like(self);
        self.gradient_into(x, upstream, &mut grads);
        grads
    }

    /// Accumulating form of [`Mlp::gradient`]: adds this sample's gradients
    /// into `acc` without allocating, which is what the training hot loop
    /// wants. Returns the forward output for reuse.
    pub fn gradient_into(&self, x: &[f64], upstream: &[f64], acc: &mut MlpGrads) -> f64 {
        debug_assert_eq!(upstream.len(), self.output_dim());
        let acts = self.forward_trace(x);

        let mut delta = upstream.to_vec();
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let input = &acts[l];
            let grad_layer = &mut acc.layers[l];
            for o in 0..layer.out_dim {
                let d = delta[o];
                grad_layer.b[o] += d;
                let row = &mut grad_layer.w[o * layer.in_dim..(o + 1) * layer.in_dim];
                for (g, xi) in row.iter_mut().zip(input) {
                    *g += d * xi;
                }
            }
            if l > 0 {
                // Pull delta through the weights, then through tanh of the
                // previous layer (derivative 1 - a^2 from its post-activation).
                let mut prev = vec![0.0; layer.in_dim];
                for o in 0..layer.out_dim {
                    let d = delta[o];
                    let row = &layer.w[o * layer.in_dim..(o + 1) * layer.in_dim];
                    for (p, wi) in prev.iter_mut().zip(row) {
                        *p += d * wi;
                    }
                }
                for (p, a) in prev.iter_mut().zip(&acts[l]) {
                    *p *= 1.0 - a * a;
                }
                delta = prev;
            }
        }
        acts.last().unwrap()[0]
    }

    /// Gradient-descent update `params -= scale * grads`.
    pub fn apply_step(&mut self, grads: &MlpGrads, scale: f64) {
        for (layer, g) in self.layers.iter_mut().zip(&grads.layers) {
            for (w, gw) in layer.w.iter_mut().zip(&g.w) {
                *w -= scale * gw;
            }
            for (b, gb) in layer.b.iter_mut().zip(&g.b) {
                *b -= scale * gb;
            }
        }
    }
}
