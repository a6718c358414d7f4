//! Small dense feed-forward networks with hand-written backpropagation.
//!
//! Weights are stored row-major (`outputs × inputs`) in flat `Vec<f64>`s.
//! All arithmetic is `f64`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `y`.
    #[inline]
    fn derivative(self, z: f64, y: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
    pub activation: Activation,
}

impl Layer {
    pub fn zeros(inputs: usize, outputs: usize, activation: Activation) -> Self {
        Self {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            biases: vec![0.0; outputs],
            activation,
        }
    }
}

/// Parameters of one multilayer perceptron.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Layer>,
}

/// Per-parameter gradients, shaped like an [`Mlp`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradientSet {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl GradientSet {
    pub fn zeros_like(net: &Mlp) -> Self {
        Self {
            weights: net.layers.iter().map(|l| vec![0.0; l.weights.len()]).collect(),
            biases: net.layers.iter().map(|l| vec![0.0; l.biases.len()]).collect(),
        }
    }

    pub fn clear(&mut self) {
        self.values_mut().for_each(|g| *g = 0.0);
    }

    pub fn scale(&mut self, factor: f64) {
        for g in self.weights.iter_mut().chain(self.biases.iter_mut()).flatten() {
            *g *= factor;
        }
    }

    pub fn values(&self) -> impl Iterator<Item = &f64> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| w.iter().chain(b.iter()))
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.weights
            .iter_mut()
            .zip(self.biases.iter_mut())
            .flat_map(|(w, b)| w.iter_mut().chain(b.iter_mut()))
    }

    pub fn is_congruent(&self, net: &Mlp) -> bool {
        self.weights.len() == net.layers.len()
            && net.layers.iter().enumerate().all(|(i, l)| {
                self.weights[i].len() == l.weights.len() && self.biases[i].len() == l.biases.len()
            })
    }
}

/// Intermediate values of one forward pass, reusable across calls.
#[derive(Clone, Debug, Default)]
pub struct ForwardCache {
    /// `acts[0]` is the input, `acts[l + 1]` the output of layer `l`.
    acts: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
    delta: Vec<f64>,
    delta_next: Vec<f64>,
}

impl ForwardCache {
    pub fn output(&self) -> &[f64] {
        self.acts.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

impl Mlp {
    /// Zero-initialized network with the given layer widths.
    pub fn zeros(dims: &[usize], hidden: Activation, output: Activation) -> Self {
        assert!(dims.len() >= 2, "an MLP needs at least input and output widths");
        let n = dims.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let act = if i + 1 == n { output } else { hidden };
                Layer::zeros(dims[i], dims[i + 1], act)
            })
            .collect();
        Self { layers }
    }

    /// Uniform fan-in initialization `U(−1/√fan_in, 1/√fan_in)`; the last
    /// layer uses `U(−final_range, final_range)` when given.
    pub fn init_uniform<R: Rng + ?Sized>(
        dims: &[usize],
        hidden: Activation,
        output: Activation,
        final_range: Option<f64>,
        rng: &mut R,
    ) -> Self {
        let mut net = Self::zeros(dims, hidden, output);
        let n = net.layers.len();
        for (i, layer) in net.layers.iter_mut().enumerate() {
            let bound = match final_range {
                Some(r) if i + 1 == n => r,
                _ => 1.0 / (layer.inputs as f64).sqrt(),
            };
            for w in layer.weights.iter_mut().chain(layer.biases.iter_mut()) {
                *w = rng.random_range(-bound..=bound);
            }
        }
        net
    }

    /// ReLU hidden layers and a `tanh` head producing one action in [−1, 1].
    pub fn actor<R: Rng + ?Sized>(obs_dim: usize, hidden: &[usize], rng: &mut R) -> Self {
        let dims = widths(obs_dim, hidden, 1);
        Self::init_uniform(&dims, Activation::Relu, Activation::Tanh, Some(3e-3), rng)
    }

    /// ReLU hidden layers and a linear head; input is `[observation, action]`.
    pub fn critic<R: Rng + ?Sized>(obs_dim: usize, hidden: &[usize], rng: &mut R) -> Self {
        let dims = widths(obs_dim + 1, hidden, 1);
        Self::init_uniform(&dims, Activation::Relu, Activation::Identity, None, rng)
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut d = vec![self.input_dim()];
        d.extend(self.layers.iter().map(|l| l.outputs));
        d
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.biases.len())
            .sum()
    }

    pub fn params(&self) -> impl Iterator<Item = &f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.biases.iter()))
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weights.iter_mut().chain(l.biases.iter_mut()))
    }

    pub fn same_shape(&self, other: &Mlp) -> bool {
        self.layers.len() == other.layers.len()
            && self.layers.iter().zip(&other.layers).all(|(a, b)| {
                a.inputs == b.inputs && a.outputs == b.outputs && a.activation == b.activation
            })
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::InvalidInput("network has no layers".into()));
        }
        for (i, l) in self.layers.iter().enumerate() {
            if l.weights.len() != l.inputs * l.outputs || l.biases.len() != l.outputs {
                return Err(Error::InvalidInput(format!("layer {i} has inconsistent storage")));
            }
            if i > 0 && self.layers[i - 1].outputs != l.inputs {
                return Err(Error::DimensionMismatch {
                    expected: self.layers[i - 1].outputs,
                    got: l.inputs,
                });
            }
        }
        if self.params().any(|p| !p.is_finite()) {
            return Err(Error::InvalidInput("network has non-finite parameters".into()));
        }
        Ok(())
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        let mut cache = ForwardCache::default();
        self.forward_cached(input, &mut cache)?;
        Ok(cache.output().to_vec())
    }

    /// Forward pass that keeps the intermediate values for [`Mlp::backward`].
    pub fn forward_cached<'c>(&self, input: &[f64], cache: &'c mut ForwardCache) -> Result<&'c [f64]> {
        if input.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                got: input.len(),
            });
        }
        let n = self.layers.len();
        cache.acts.resize_with(n + 1, Vec::new);
        cache.pre.resize_with(n, Vec::new);
        cache.acts[0].clear();
        cache.acts[0].extend_from_slice(input);
        for (l, layer) in self.layers.iter().enumerate() {
            let (before, after) = cache.acts.split_at_mut(l + 1);
            let x = &before[l];
            let y = &mut after[0];
            let z = &mut cache.pre[l];
            z.resize(layer.outputs, 0.0);
            y.resize(layer.outputs, 0.0);
            let rows = layer.weights.chunks_exact(layer.inputs);
            for (((zo, yo), row), &b) in z.iter_mut().zip(y.iter_mut()).zip(rows).zip(&layer.biases) {
                *zo = b + dot(row, x);
                *yo = layer.activation.apply(*zo);
            }
        }
        Ok(cache.output())
    }

    /// Reverse-mode pass for the forward pass stored in `cache`.
    ///
    /// Parameter gradients of `upstream · output` are *added* to `grads`
    /// when given; the gradient with respect to the network input is written
    /// to `input_grad`.
    pub fn backward(
        &self,
        cache: &mut ForwardCache,
        upstream: &[f64],
        mut grads: Option<&mut GradientSet>,
        input_grad: &mut Vec<f64>,
    ) -> Result<()> {
        if upstream.len() != self.output_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.output_dim(),
                got: upstream.len(),
            });
        }
        if cache.acts.len() != self.layers.len() + 1 {
            return Err(Error::InvalidInput("backward called without a forward pass".into()));
        }
        let ForwardCache {
            acts,
            pre,
            delta,
            delta_next,
        } = cache;
        delta.clear();
        delta.extend_from_slice(upstream);
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let x = &acts[l];
            let y = &acts[l + 1];
            for ((d, &z), &yo) in delta.iter_mut().zip(&pre[l]).zip(y) {
                *d *= layer.activation.derivative(z, yo);
            }
            delta_next.clear();
            delta_next.resize(layer.inputs, 0.0);
            let mut grads_l = grads
                .as_deref_mut()
                .map(|g| (g.weights[l].chunks_exact_mut(layer.inputs), &mut g.biases[l]));
            for (o, (&d, row)) in delta.iter().zip(layer.weights.chunks_exact(layer.inputs)).enumerate() {
                let grow = grads_l.as_mut().map(|(gw, gb)| {
                    gb[o] += d;
                    gw.next()
                });
                if d == 0.0 {
                    continue;
                }
                if let Some(Some(grow)) = grow {
                    for (gw, &xi) in grow.iter_mut().zip(x) {
                        *gw += d * xi;
                    }
                }
                for (dn, &w) in delta_next.iter_mut().zip(row) {
                    *dn += d * w;
                }
            }
            std::mem::swap(delta, delta_next);
        }
        input_grad.clear();
        input_grad.extend_from_slice(delta);
        Ok(())
    }

    /// Gradients of `upstream · net(input)` with respect to the parameters and
    /// the input.
    pub fn gradients(&self, input: &[f64], upstream: &[f64]) -> Result<(GradientSet, Vec<f64>)> {
        let mut cache = ForwardCache::default();
        self.forward_cached(input, &mut cache)?;
        let mut grads = GradientSet::zeros_like(self);
        let mut input_grad = Vec::new();
        self.backward(&mut cache, upstream, Some(&mut grads), &mut input_grad)?;
        Ok((grads, input_grad))
    }

    /// `self ← τ·main + (1 − τ)·self`.
    pub fn soft_update(&mut self, main: &Mlp, tau: f64) -> Result<()> {
        if !self.same_shape(main) {
            return Err(Error::InvalidInput("soft update between different shapes".into()));
        }
        if tau == 0.0 {
            return Ok(());
        }
        for (lt, lm) in self.layers.iter_mut().zip(&main.layers) {
            for (t, &m) in lt.weights.iter_mut().zip(&lm.weights) {
                *t = tau * m + (1.0 - tau) * *t;
            }
            for (t, &m) in lt.biases.iter_mut().zip(&lm.biases) {
                *t = tau * m + (1.0 - tau) * *t;
            }
        }
        Ok(())
    }
}

fn widths(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
    let mut dims = Vec::with_capacity(hidden.len() + 2);
    dims.push(input);
    dims.extend_from_slice(hidden);
    dims.push(output);
    dims
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    // four independent partial sums let the compiler vectorize
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0; 4];
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for i in 0..4 {
            acc[i] += x[i] * y[i];
        }
    }
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Parameter slices of `net` paired with the matching gradient slices.
fn param_slices<'a>(
    net: &'a mut Mlp,
    grads: &'a GradientSet,
) -> impl Iterator<Item = (&'a mut [f64], &'a [f64])> {
    net.layers
        .iter_mut()
        .zip(grads.weights.iter().zip(&grads.biases))
        .flat_map(|(l, (gw, gb))| {
            [
                (l.weights.as_mut_slice(), gw.as_slice()),
                (l.biases.as_mut_slice(), gb.as_slice()),
            ]
        })
}

/// First-order optimizer state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Optimizer {
    Sgd { lr: f64 },
    Adam(Adam),
}

impl Optimizer {
    pub fn step(&mut self, net: &mut Mlp, grads: &GradientSet) -> Result<()> {
        if !grads.is_congruent(net) {
            return Err(Error::InvalidInput("gradient shape does not match network".into()));
        }
        match self {
            Optimizer::Sgd { lr } => {
                sgd_step(net, grads, *lr);
                Ok(())
            }
            Optimizer::Adam(adam) => adam.step(net, grads),
        }
    }
}

pub fn sgd_step(net: &mut Mlp, grads: &GradientSet, lr: f64) {
    for (ps, gs) in param_slices(net, grads) {
        for (p, g) in ps.iter_mut().zip(gs) {
            *p -= lr * g;
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl Adam {
    pub fn new(net: &Mlp, lr: f64) -> Self {
        let n = net.param_count();
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }

    pub fn step(&mut self, net: &mut Mlp, grads: &GradientSet) -> Result<()> {
        if self.m.len() != net.param_count() {
            return Err(Error::InvalidInput("Adam moments do not match network".into()));
        }
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        let mut offset = 0;
        for (ps, gs) in param_slices(net, grads) {
            let n = ps.len();
            let ms = &mut self.m[offset..offset + n];
            let vs = &mut self.v[offset..offset + n];
            offset += n;
            for (((p, g), m), v) in ps.iter_mut().zip(gs).zip(ms).zip(vs) {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *p -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
