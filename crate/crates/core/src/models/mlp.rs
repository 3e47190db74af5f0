//! Fully connected regressor: tanh hidden layers, linear output, mean squared
//! error, mini-batch Adam.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeding::{rng_for, Stream};

/// What the network regresses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AngleTarget {
    /// `(sin θ, cos θ)`, decoded with `atan2`.
    #[default]
    SinCos,
    /// `θ / 360`, a single output.
    Raw,
}

impl AngleTarget {
    pub fn outputs(self) -> usize {
        match self {
            AngleTarget::SinCos => 2,
            AngleTarget::Raw => 1,
        }
    }

    pub fn encode(self, azimuth_deg: f64) -> Vec<f64> {
        match self {
            AngleTarget::SinCos => {
                let (s, c) = azimuth_deg.to_radians().sin_cos();
                vec![s, c]
            }
            AngleTarget::Raw => vec![azimuth_deg / 360.0],
        }
    }

    pub fn decode(self, out: &[f64]) -> f64 {
        match self {
            AngleTarget::SinCos => crate::geometry::azimuth_deg(out[0], out[1]),
            AngleTarget::Raw => crate::geometry::wrap_degrees(out[0] * 360.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MlpParams {
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_epsilon: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub target: AngleTarget,
    pub seed: u64,
}

impl Default for MlpParams {
    fn default() -> Self {
        MlpParams {
            hidden: vec![64, 64],
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_epsilon: 1e-8,
            batch_size: 64,
            epochs: 300,
            target: AngleTarget::SinCos,
            seed: 0,
        }
    }
}

impl MlpParams {
    pub fn validate(&self) -> Result<()> {
        if self.hidden.contains(&0) {
            return Err(Error::config("hidden", "layer widths must be >= 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning_rate", "must be > 0"));
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2)) {
            return Err(Error::config("beta1/beta2", "must be in [0, 1)"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be >= 1"));
        }
        if self.epochs == 0 {
            return Err(Error::config("epochs", "must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    /// Row-major `outputs × inputs`.
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl Layer {
    fn xavier<R: Rng>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let a = (6.0 / (inputs + outputs) as f64).sqrt();
        Layer {
            inputs,
            outputs,
            weights: (0..inputs * outputs).map(|_| rng.random_range(-a..a)).collect(),
            biases: vec![0.0; outputs],
        }
    }

    fn forward(&self, x: &[f64], out: &mut [f64]) {
        for (o, (row, b)) in out.iter_mut().zip(self.weights.chunks_exact(self.inputs).zip(&self.biases)) {
            *o = b + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
        }
    }

    fn param_count(&self) -> usize {
        self.weights.len() + self.biases.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpRegressor {
    pub layers: Vec<Layer>,
    pub target: AngleTarget,
    /// Training loss on the full set after each epoch.
    pub loss_history: Vec<f64>,
}

/// Per-layer gradient buffers with the same shapes as the network.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros(net: &MlpRegressor) -> Self {
        Gradients {
            weights: net.layers.iter().map(|l| vec![0.0; l.weights.len()]).collect(),
            biases: net.layers.iter().map(|l| vec![0.0; l.biases.len()]).collect(),
        }
    }

    fn clear(&mut self) {
        self.weights.iter_mut().chain(self.biases.iter_mut()).for_each(|v| v.fill(0.0));
    }
}

impl MlpRegressor {
    /// Xavier-uniform weights, zero biases.
    pub fn new(inputs: usize, hidden: &[usize], target: AngleTarget, seed: u64) -> Self {
        let mut rng = rng_for(seed, 0, Stream::MlpInit);
        let mut sizes = vec![inputs];
        sizes.extend_from_slice(hidden);
        sizes.push(target.outputs());
        MlpRegressor {
            layers: sizes.windows(2).map(|w| Layer::xavier(w[0], w[1], &mut rng)).collect(),
            target,
            loss_history: Vec::new(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    /// Activations of every layer, input first; hidden entries are post-tanh.
    fn forward_all(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.to_vec());
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            let mut out = vec![0.0; l.outputs];
            l.forward(acts.last().expect("input"), &mut out);
            if i < last {
                out.iter_mut().for_each(|v| *v = v.tanh());
            }
            acts.push(out);
        }
        acts
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.forward_all(x).pop().expect("output")
    }

    /// Decoded azimuth in degrees, `[0, 360)`.
    pub fn predict_deg(&self, x: &[f64]) -> f64 {
        self.target.decode(&self.forward(x))
    }

    /// Mean over samples and outputs of the squared error.
    pub fn loss(&self, x: &[Vec<f64>], t: &[Vec<f64>]) -> f64 {
        let n_out = self.target.outputs() as f64;
        let s: f64 = x
            .iter()
            .zip(t)
            .map(|(xi, ti)| self.forward(xi).iter().zip(ti).map(|(y, t)| (y - t).powi(2)).sum::<f64>())
            .sum();
        s / (x.len() as f64 * n_out)
    }

    /// Accumulates `∂loss/∂θ` for the batch into `g` (which is cleared first)
    /// and returns the batch loss.
    pub fn backprop(&self, x: &[&[f64]], t: &[&[f64]], g: &mut Gradients) -> f64 {
        g.clear();
        let scale = 1.0 / (x.len() * self.target.outputs()) as f64;
        let mut loss = 0.0;
        for (xi, ti) in x.iter().zip(t) {
            let acts = self.forward_all(xi);
            let out = acts.last().expect("output");
            let mut delta: Vec<f64> = out.iter().zip(ti.iter()).map(|(y, t)| 2.0 * (y - t) * scale).collect();
            loss += out.iter().zip(ti.iter()).map(|(y, t)| (y - t).powi(2)).sum::<f64>() * scale;
            for li in (0..self.layers.len()).rev() {
                let layer = &self.layers[li];
                let input = &acts[li];
                let gw = &mut g.weights[li];
                for (o, d) in delta.iter().enumerate() {
                    g.biases[li][o] += d;
                    let row = &mut gw[o * layer.inputs..(o + 1) * layer.inputs];
                    for (w, v) in row.iter_mut().zip(input) {
                        *w += d * v;
                    }
                }
                if li == 0 {
                    break;
                }
                let mut prev = vec![0.0; layer.inputs];
                for (o, d) in delta.iter().enumerate() {
                    let row = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                    for (p, w) in prev.iter_mut().zip(row) {
                        *p += d * w;
                    }
                }
                // tanh' = 1 - a²
                for (p, a) in prev.iter_mut().zip(input) {
                    *p *= 1.0 - a * a;
                }
                delta = prev;
            }
        }
        loss
    }

    /// Flattened parameters, layer by layer, weights then biases.
    pub fn params(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.biases).copied())
            .collect()
    }

    pub fn set_param(&mut self, mut k: usize, v: f64) {
        for l in &mut self.layers {
            if k < l.weights.len() {
                l.weights[k] = v;
                return;
            }
            k -= l.weights.len();
            if k < l.biases.len() {
                l.biases[k] = v;
                return;
            }
            k -= l.biases.len();
        }
        panic!("parameter index out of range");
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.biases).all(|v| v.is_finite()))
    }
}

pub fn flatten(g: &Gradients) -> Vec<f64> {
    g.weights
        .iter()
        .zip(&g.biases)
        .flat_map(|(w, b)| w.iter().chain(b).copied())
        .collect()
}

/// Adam state for one network.
pub struct Adam {
    lr: f64,
    b1: f64,
    b2: f64,
    eps: f64,
    t: i32,
    m: Gradients,
    v: Gradients,
}

impl Adam {
    pub fn new(net: &MlpRegressor, params: &MlpParams) -> Self {
        Adam {
            lr: params.learning_rate,
            b1: params.beta1,
            b2: params.beta2,
            eps: params.adam_epsilon,
            t: 0,
            m: Gradients::zeros(net),
            v: Gradients::zeros(net),
        }
    }

    pub fn step(&mut self, net: &mut MlpRegressor, g: &Gradients) {
        self.t += 1;
        let c1 = 1.0 - self.b1.powi(self.t);
        let c2 = 1.0 - self.b2.powi(self.t);
        let (b1, b2, lr, eps) = (self.b1, self.b2, self.lr, self.eps);
        let update = |p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64]| {
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                p[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
            }
        };
        for (li, l) in net.layers.iter_mut().enumerate() {
            update(&mut l.weights, &g.weights[li], &mut self.m.weights[li], &mut self.v.weights[li]);
            update(&mut l.biases, &g.biases[li], &mut self.m.biases[li], &mut self.v.biases[li]);
        }
    }
}

/// Trains on standardised inputs `x` against azimuth labels in degrees.
pub fn train(x: &[Vec<f64>], azimuth_deg: &[f64], params: &MlpParams) -> Result<MlpRegressor> {
    params.validate()?;
    if x.is_empty() || x.len() != azimuth_deg.len() {
        return Err(Error::domain("MLP needs equal, non-zero numbers of rows and labels"));
    }
    if x.len() < params.batch_size {
        return Err(Error::domain(format!(
            "training set ({}) smaller than batch size ({})",
            x.len(),
            params.batch_size
        )));
    }
    let inputs = x[0].len();
    let targets: Vec<Vec<f64>> = azimuth_deg.iter().map(|&a| params.target.encode(a)).collect();
    let mut net = MlpRegressor::new(inputs, &params.hidden, params.target, params.seed);
    let mut adam = Adam::new(&net, params);
    let mut grads = Gradients::zeros(&net);
    let mut order: Vec<usize> = (0..x.len()).collect();
    for epoch in 0..params.epochs {
        order.shuffle(&mut rng_for(params.seed, epoch as u64, Stream::MlpShuffle));
        for chunk in order.chunks(params.batch_size) {
            let bx: Vec<&[f64]> = chunk.iter().map(|&i| x[i].as_slice()).collect();
            let bt: Vec<&[f64]> = chunk.iter().map(|&i| targets[i].as_slice()).collect();
            let l = net.backprop(&bx, &bt, &mut grads);
            if !l.is_finite() {
                return Err(Error::Diverged {
                    epoch: epoch + 1,
                    message: format!("batch loss {l}"),
                });
            }
            adam.step(&mut net, &grads);
        }
        let l = net.loss(x, &targets);
        if !l.is_finite() || !net.is_finite() {
            return Err(Error::Diverged {
                epoch: epoch + 1,
                message: format!("training loss {l}"),
            });
        }
        net.loss_history.push(l);
    }
    Ok(net)
}
