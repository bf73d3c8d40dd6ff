//! Small fully-connected networks with hand-written backprop, plus the Adam
//! optimizer, EMA target copies, and finite-difference gradient checking.
//!
//! Hidden layers are rectified, the output layer is linear, and every
//! parameter lives in one flat f64 vector (per layer: weights row-major
//! out×in, then biases). The flat layout keeps the optimizer, target
//! tracking, checkpointing, and gradient checks trivial and the reduction
//! order fixed, so identical seeds give bit-identical training trajectories.

use std::io::{BufRead, Write};

use rand::Rng;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetError {
    #[error("expected {want} values, got {got}")]
    ShapeMismatch { want: usize, got: usize },
    #[error("non-finite gradient at parameter {0}")]
    NonFiniteGradient(usize),
    #[error("networks have different layer sizes")]
    LayerMismatch,
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

/// Multilayer perceptron: ReLU hidden layers, identity output.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpNet {
    sizes: Vec<usize>,
    params: Vec<f64>,
}

/// Post-activation values saved by [`MlpNet::forward_cached`];
/// `activations[0]` is the input and the last entry is the output.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    activations: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &[f64] {
        self.activations.last().expect("cache holds at least the input")
    }
}

/// Parameter and input gradients from one backward pass.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub params: Vec<f64>,
    pub input: Vec<f64>,
}

fn param_count(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

impl MlpNet {
    /// He-style uniform initialisation: weights U(−b, b) with b = √(6/fan_in),
    /// biases zero.
    pub fn new<R: Rng>(sizes: &[usize], rng: &mut R) -> Self {
        assert!(sizes.len() >= 2, "need at least input and output sizes");
        assert!(sizes.iter().all(|&n| n > 0), "layer sizes must be positive");
        let mut params = Vec::with_capacity(param_count(sizes));
        for w in sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = (6.0 / fan_in as f64).sqrt();
            for _ in 0..fan_in * fan_out {
                params.push(rng.gen_range(-bound..bound));
            }
            params.extend(std::iter::repeat(0.0).take(fan_out));
        }
        Self { sizes: sizes.to_vec(), params }
    }

    /// All-zero parameters; forward output is 0 for every input.
    pub fn zeros(sizes: &[usize]) -> Self {
        assert!(sizes.len() >= 2);
        Self { sizes: sizes.to_vec(), params: vec![0.0; param_count(sizes)] }
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn set_params(&mut self, values: &[f64]) -> Result<(), NetError> {
        if values.len() != self.params.len() {
            return Err(NetError::ShapeMismatch { want: self.params.len(), got: values.len() });
        }
        self.params.copy_from_slice(values);
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }

    /// (weight offset, bias offset, fan_in, fan_out) per layer.
    fn layers(&self) -> Vec<(usize, usize, usize, usize)> {
        let mut out = Vec::with_capacity(self.sizes.len() - 1);
        let mut off = 0;
        for w in self.sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            out.push((off, off + fan_in * fan_out, fan_in, fan_out));
            off += fan_in * fan_out + fan_out;
        }
        out
    }

    pub fn forward(&self, input: &[f64]) -> Vec<f64> {
        self.forward_cached(input).0
    }

    pub fn forward_cached(&self, input: &[f64]) -> (Vec<f64>, ForwardCache) {
        assert_eq!(input.len(), self.input_dim(), "input size mismatch");
        let layers = self.layers();
        let last = layers.len() - 1;
        let mut activations = Vec::with_capacity(layers.len() + 1);
        activations.push(input.to_vec());
        for (l, &(w_off, b_off, fan_in, fan_out)) in layers.iter().enumerate() {
            let prev = activations.last().unwrap();
            let mut next = vec![0.0; fan_out];
            for o in 0..fan_out {
                let row = &self.params[w_off + o * fan_in..w_off + (o + 1) * fan_in];
                let mut z = self.params[b_off + o];
                for (w, x) in row.iter().zip(prev) {
                    z += w * x;
                }
                next[o] = if l < last { z.max(0.0) } else { z };
            }
            activations.push(next);
        }
        let out = activations.last().unwrap().clone();
        (out, ForwardCache { activations })
    }

    /// Backward pass for the cached forward, accumulating parameter
    /// gradients into `param_grads` (so batches can share one buffer) and
    /// returning the gradient with respect to the input.
    pub fn backward_into(
        &self,
        cache: &ForwardCache,
        out_grad: &[f64],
        param_grads: &mut [f64],
    ) -> Vec<f64> {
        assert_eq!(out_grad.len(), self.output_dim(), "output gradient size mismatch");
        assert_eq!(param_grads.len(), self.params.len(), "gradient buffer size mismatch");
        let layers = self.layers();
        let mut delta = out_grad.to_vec();
        for (l, &(w_off, b_off, fan_in, fan_out)) in layers.iter().enumerate().rev() {
            let prev = &cache.activations[l];
            let mut d_prev = vec![0.0; fan_in];
            for o in 0..fan_out {
                let d = delta[o];
                let row_off = w_off + o * fan_in;
                for i in 0..fan_in {
                    param_grads[row_off + i] += d * prev[i];
                    d_prev[i] += self.params[row_off + i] * d;
                }
                param_grads[b_off + o] += d;
            }
            if l > 0 {
                // ReLU subgradient: zero where the unit was inactive.
                for (dp, &a) in d_prev.iter_mut().zip(prev) {
                    if a <= 0.0 {
                        *dp = 0.0;
                    }
                }
            }
            delta = d_prev;
        }
        delta
    }

    pub fn backward(&self, cache: &ForwardCache, out_grad: &[f64]) -> Gradients {
        let mut params = vec![0.0; self.params.len()];
        let input = self.backward_into(cache, out_grad, &mut params);
        Gradients { params, input }
    }

    /// Writes a text checkpoint: a `mlp <sizes...>` header line, then one
    /// parameter per line in shortest round-trip decimal form.
    pub fn save_checkpoint<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        write!(w, "mlp")?;
        for s in &self.sizes {
            write!(w, " {s}")?;
        }
        writeln!(w)?;
        for p in &self.params {
            writeln!(w, "{p}")?;
        }
        Ok(())
    }

    pub fn load_checkpoint<R: BufRead>(r: R) -> Result<Self, NetError> {
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or_else(|| NetError::Checkpoint("empty file".into()))?
            .map_err(|e| NetError::Checkpoint(e.to_string()))?;
        let mut fields = header.split_whitespace();
        if fields.next() != Some("mlp") {
            return Err(NetError::Checkpoint("missing `mlp` shape header".into()));
        }
        let sizes: Vec<usize> = fields
            .map(|f| f.parse().map_err(|_| NetError::Checkpoint(format!("bad size `{f}`"))))
            .collect::<Result<_, _>>()?;
        if sizes.len() < 2 {
            return Err(NetError::Checkpoint("header needs at least two sizes".into()));
        }
        let want = param_count(&sizes);
        let mut params = Vec::with_capacity(want);
        for line in lines {
            let line = line.map_err(|e| NetError::Checkpoint(e.to_string()))?;
            let t = line.trim();
            if t.is_empty() {
                continue;
            }
            params.push(t.parse::<f64>().map_err(|_| NetError::Checkpoint(format!("bad value `{t}`")))?);
        }
        if params.len() != want {
            return Err(NetError::ShapeMismatch { want, got: params.len() });
        }
        Ok(Self { sizes, params })
    }
}

/// Adam with bias correction. Defaults: β1 = 0.9, β2 = 0.999, ε = 1e-8.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(lr: f64, n_params: usize) -> Self {
        assert!(lr > 0.0 && lr.is_finite());
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, t: 0, m: vec![0.0; n_params], v: vec![0.0; n_params] }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    pub fn moments(&self) -> (&[f64], &[f64]) {
        (&self.m, &self.v)
    }

    /// One update in place. Rejects non-finite gradients before touching any
    /// state, so a failed step leaves parameters and moments untouched.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<(), NetError> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(NetError::ShapeMismatch { want: self.m.len(), got: grads.len() });
        }
        if let Some(bad) = grads.iter().position(|g| !g.is_finite()) {
            return Err(NetError::NonFiniteGradient(bad));
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}

/// Exponential-moving-average copy of a network: after each update every
/// target parameter equals ρ·old + (1 − ρ)·online.
#[derive(Debug, Clone)]
pub struct TargetTracker {
    net: MlpNet,
    rho: f64,
}

impl TargetTracker {
    pub fn new(online: &MlpNet, rho: f64) -> Self {
        assert!((0.0..=1.0).contains(&rho));
        Self { net: online.clone(), rho }
    }

    pub fn net(&self) -> &MlpNet {
        &self.net
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn update(&mut self, online: &MlpNet) -> Result<(), NetError> {
        if online.sizes != self.net.sizes {
            return Err(NetError::LayerMismatch);
        }
        for (t, o) in self.net.params.iter_mut().zip(&online.params) {
            *t = self.rho * *t + (1.0 - self.rho) * o;
        }
        Ok(())
    }
}

/// Central-difference gradient of a scalar function: one evaluation pair per
/// coordinate with step h·max(1, |x_i|).
pub fn numerical_gradient(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut grad = vec![0.0; x.len()];
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        let step = h * x[i].abs().max(1.0);
        probe[i] = x[i] + step;
        let up = f(&probe);
        probe[i] = x[i] - step;
        let down = f(&probe);
        probe[i] = x[i];
        grad[i] = (up - down) / (2.0 * step);
    }
    grad
}

/// Largest elementwise error of `analytic` against `reference`, relative to
/// max(|a|, |b|, floor).
pub fn max_relative_error(analytic: &[f64], reference: &[f64], floor: f64) -> f64 {
    analytic
        .iter()
        .zip(reference)
        .map(|(a, b)| (a - b).abs() / a.abs().max(b.abs()).max(floor))
        .fold(0.0, f64::max)
}
