//! Dense feed-forward regression networks trained with Adam.
//!
//! Hidden layers use ReLU, the output layer is linear, and the loss is the
//! mean squared error over every output of every sample in a batch. These
//! networks back both the Q-function and the reward-model committee.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{domain, AcrlError, Result};
use crate::rng;

const CHECKPOINT_MAGIC: &str = "acrl-mlp 1";

/// One fully connected layer. `weights` is row-major, `outputs x inputs`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl Dense {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            biases: vec![0.0; outputs],
        }
    }

    fn apply(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(
            self.weights
                .chunks_exact(self.inputs)
                .zip(&self.biases)
                .map(|(row, b)| b + dot(row, x)),
        );
    }
}

/// Four-lane dot product; fixed association order keeps results
/// reproducible while letting the compiler vectorise.
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let (ha, ta) = a.split_at(a.len() / 4 * 4);
    let (hb, tb) = b[..a.len()].split_at(ha.len());
    for (ca, cb) in ha.chunks_exact(4).zip(hb.chunks_exact(4)) {
        acc[0] += ca[0] * cb[0];
        acc[1] += ca[1] * cb[1];
        acc[2] += ca[2] * cb[2];
        acc[3] += ca[3] * cb[3];
    }
    let mut tail = 0.0;
    for (x, y) in ta.iter().zip(tb) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Multi-layer perceptron.
#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    layers: Vec<Dense>,
}

/// Parameter-shaped gradient values.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Dense>,
}

impl Gradients {
    pub fn zeros_like(net: &Network) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| Dense::zeros(l.inputs, l.outputs))
                .collect(),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.biases).copied())
    }
}

/// Reusable buffers for allocation-free forward passes.
#[derive(Default, Debug, Clone)]
pub struct Scratch {
    a: Vec<f64>,
    b: Vec<f64>,
}

impl Network {
    /// Seeded He-style uniform initialisation with zero biases.
    pub fn new(layer_sizes: &[usize], seed: u64) -> Result<Self> {
        if layer_sizes.len() < 2 {
            return domain("a network needs at least an input and an output layer");
        }
        if layer_sizes.contains(&0) {
            return domain("layer sizes must be positive");
        }
        let mut rng = rng::stream(seed, 0);
        let n_layers = layer_sizes.len() - 1;
        let layers = layer_sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let (fan_in, fan_out) = (w[0], w[1]);
                // ReLU follows every layer except the last.
                let gain = if i + 1 < n_layers { 6.0 } else { 3.0 };
                let limit = (gain / fan_in as f64).sqrt();
                let mut layer = Dense::zeros(fan_in, fan_out);
                for v in &mut layer.weights {
                    *v = rng.gen_range(-limit..limit);
                }
                layer
            })
            .collect();
        Ok(Self { layers })
    }

    /// Builds a network from explicit layers.
    pub fn from_layers(layers: Vec<Dense>) -> Result<Self> {
        if layers.is_empty() {
            return domain("network has no layers");
        }
        for (i, l) in layers.iter().enumerate() {
            if l.inputs == 0 || l.outputs == 0 {
                return domain(format!("layer {i} has a zero dimension"));
            }
            if l.weights.len() != l.inputs * l.outputs || l.biases.len() != l.outputs {
                return domain(format!("layer {i} parameter arrays do not match its shape"));
            }
            if i > 0 && layers[i - 1].outputs != l.inputs {
                return domain(format!("layer {i} input does not match previous output"));
            }
            if l.weights.iter().chain(&l.biases).any(|v| !v.is_finite()) {
                return domain(format!("layer {i} has non-finite parameters"));
            }
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![self.layers[0].inputs];
        sizes.extend(self.layers.iter().map(|l| l.outputs));
        sizes
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.biases.len())
            .sum()
    }

    pub fn parameters(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.biases).copied())
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return domain(format!(
                "input has {} features, network expects {}",
                x.len(),
                self.input_dim()
            ));
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut scratch = Scratch::default();
        Ok(self.forward_with(x, &mut scratch)?.to_vec())
    }

    /// Forward pass into reusable buffers.
    pub fn forward_with<'s>(&self, x: &[f64], scratch: &'s mut Scratch) -> Result<&'s [f64]> {
        self.check_input(x)?;
        let last = self.layers.len() - 1;
        let Scratch { a, b } = scratch;
        a.clear();
        a.extend_from_slice(x);
        for (i, layer) in self.layers.iter().enumerate() {
            layer.apply(a, b);
            if i < last {
                for v in b.iter_mut() {
                    *v = v.max(0.0);
                }
            }
            std::mem::swap(a, b);
        }
        Ok(&a[..])
    }

    /// First output for a single input; the common case for value networks.
    pub fn value(&self, x: &[f64], scratch: &mut Scratch) -> Result<f64> {
        Ok(self.forward_with(x, scratch)?[0])
    }

    /// Activations of every layer (index 0 is the input).
    fn activations(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let last = self.layers.len() - 1;
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.to_vec());
        for (i, layer) in self.layers.iter().enumerate() {
            let mut out = Vec::with_capacity(layer.outputs);
            layer.apply(&acts[i], &mut out);
            if i < last {
                for v in out.iter_mut() {
                    *v = v.max(0.0);
                }
            }
            acts.push(out);
        }
        acts
    }

    /// Propagates `delta` (dLoss/dOutput) back through the network,
    /// accumulating parameter gradients into `grads` when given, and returns
    /// the gradient with respect to the input.
    fn backward(
        &self,
        acts: &[Vec<f64>],
        mut delta: Vec<f64>,
        mut grads: Option<&mut Gradients>,
    ) -> Vec<f64> {
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let input = &acts[i];
            if let Some(g) = grads.as_deref_mut() {
                let gl = &mut g.layers[i];
                for (o, &d) in delta.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    gl.biases[o] += d;
                    let row = &mut gl.weights[o * layer.inputs..(o + 1) * layer.inputs];
                    for (w, &a) in row.iter_mut().zip(input) {
                        *w += d * a;
                    }
                }
            }
            let mut prev = vec![0.0; layer.inputs];
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                let row = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                for (p, &w) in prev.iter_mut().zip(row) {
                    *p += d * w;
                }
            }
            if i > 0 {
                // ReLU derivative: the stored activation is positive iff
                // the pre-activation was.
                for (p, &a) in prev.iter_mut().zip(input) {
                    if a <= 0.0 {
                        *p = 0.0;
                    }
                }
            }
            delta = prev;
        }
        delta
    }

    /// Mean squared error over the batch and its exact gradient.
    pub fn loss_and_grad<X, Y>(&self, batch: &[(X, Y)]) -> Result<(f64, Gradients)>
    where
        X: AsRef<[f64]>,
        Y: AsRef<[f64]>,
    {
        if batch.is_empty() {
            return domain("loss_and_grad needs a non-empty batch");
        }
        let out_dim = self.output_dim();
        let scale = 1.0 / (batch.len() * out_dim) as f64;
        let mut grads = Gradients::zeros_like(self);
        let mut loss = 0.0;
        for (x, y) in batch {
            let (x, y) = (x.as_ref(), y.as_ref());
            self.check_input(x)?;
            if y.len() != out_dim {
                return domain(format!(
                    "target has {} entries, network outputs {}",
                    y.len(),
                    out_dim
                ));
            }
            let acts = self.activations(x);
            let pred = &acts[acts.len() - 1];
            let delta: Vec<f64> = pred
                .iter()
                .zip(y)
                .map(|(p, t)| {
                    let e = p - t;
                    loss += e * e;
                    2.0 * e * scale
                })
                .collect();
            self.backward(&acts, delta, Some(&mut grads));
        }
        Ok((loss * scale, grads))
    }

    /// Gradient of output `output` with respect to the input features.
    pub fn input_gradient(&self, x: &[f64], output: usize) -> Result<Vec<f64>> {
        self.check_input(x)?;
        if output >= self.output_dim() {
            return domain(format!("network has no output {output}"));
        }
        let acts = self.activations(x);
        let mut delta = vec![0.0; self.output_dim()];
        delta[output] = 1.0;
        Ok(self.backward(&acts, delta, None))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_text(&text).map_err(|e| AcrlError::Format {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    /// Checkpoint text: a magic line, the layer sizes, then for each layer
    /// its weight rows (row-major) and its bias row. Values use Rust's
    /// shortest round-trip float formatting, so parsing is bit-exact.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let sizes: Vec<String> = self.layer_sizes().iter().map(|s| s.to_string()).collect();
        let _ = writeln!(out, "{CHECKPOINT_MAGIC}");
        let _ = writeln!(out, "sizes {}", sizes.join(" "));
        for (i, layer) in self.layers.iter().enumerate() {
            let _ = writeln!(out, "weights {i}");
            for row in layer.weights.chunks_exact(layer.inputs) {
                let _ = writeln!(out, "{}", join_floats(row));
            }
            let _ = writeln!(out, "biases {i}");
            let _ = writeln!(out, "{}", join_floats(&layer.biases));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some(CHECKPOINT_MAGIC) {
            return domain("missing checkpoint header");
        }
        let sizes: Vec<usize> = lines
            .next()
            .and_then(|l| l.strip_prefix("sizes "))
            .ok_or_else(|| AcrlError::Domain("missing sizes line".into()))?
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| AcrlError::Domain(format!("bad size `{t}`"))))
            .collect::<Result<_>>()?;
        if sizes.len() < 2 {
            return domain("checkpoint lists fewer than two layer sizes");
        }
        let mut layers = Vec::with_capacity(sizes.len() - 1);
        for (i, w) in sizes.windows(2).enumerate() {
            let (inputs, outputs) = (w[0], w[1]);
            expect_line(lines.next(), &format!("weights {i}"))?;
            let mut weights = Vec::with_capacity(inputs * outputs);
            for _ in 0..outputs {
                let row = parse_floats(lines.next())?;
                if row.len() != inputs {
                    return domain(format!("layer {i} weight row has {} values", row.len()));
                }
                weights.extend(row);
            }
            expect_line(lines.next(), &format!("biases {i}"))?;
            let biases = parse_floats(lines.next())?;
            layers.push(Dense {
                inputs,
                outputs,
                weights,
                biases,
            });
        }
        Self::from_layers(layers)
    }
}

fn join_floats(values: &[f64]) -> String {
    values
        .iter()
        .map(|v| format!("{v:?}"))
        .collect::<Vec<_>>()
        .join(" ")
}

fn expect_line(line: Option<&str>, want: &str) -> Result<()> {
    match line {
        Some(l) if l == want => Ok(()),
        other => domain(format!("expected `{want}`, found {other:?}")),
    }
}

fn parse_floats(line: Option<&str>) -> Result<Vec<f64>> {
    line.ok_or_else(|| AcrlError::Domain("unexpected end of checkpoint".into()))?
        .split_whitespace()
        .map(|t| {
            t.parse::<f64>()
                .map_err(|_| AcrlError::Domain(format!("bad float `{t}`")))
        })
        .collect()
}

/// Adam hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }
}

/// Adam moment estimates for one network.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    m: Gradients,
    v: Gradients,
}

impl Adam {
    pub fn new(net: &Network, config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            m: Gradients::zeros_like(net),
            v: Gradients::zeros_like(net),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One bias-corrected Adam update of `net` in place.
    pub fn step(&mut self, net: &mut Network, grads: &Gradients) -> Result<()> {
        let shapes_match = net.layers.len() == grads.layers.len()
            && net.layers.len() == self.m.layers.len()
            && net
                .layers
                .iter()
                .zip(&grads.layers)
                .zip(&self.m.layers)
                .all(|((n, g), m)| {
                    n.weights.len() == g.weights.len()
                        && n.biases.len() == g.biases.len()
                        && n.weights.len() == m.weights.len()
                        && n.biases.len() == m.biases.len()
                });
        if !shapes_match {
            return domain("gradient shapes do not match the network");
        }
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(AcrlError::Divergence("non-finite gradient".into()));
        }
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        let update = |p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64]| {
            for (((p, &g), m), v) in p.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *p -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        };
        for (((layer, g), m), v) in net
            .layers
            .iter_mut()
            .zip(&grads.layers)
            .zip(&mut self.m.layers)
            .zip(&mut self.v.layers)
        {
            update(&mut layer.weights, &g.weights, &mut m.weights, &mut v.weights);
            update(&mut layer.biases, &g.biases, &mut m.biases, &mut v.biases);
        }
        Ok(())
    }
}

/// Supervised training schedule.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 40,
            batch_size: 32,
            lr: 3e-3,
        }
    }
}

fn check_dataset(net: &Network, inputs: &[Vec<f64>], targets: &[Vec<f64>]) -> Result<()> {
    if inputs.is_empty() {
        return domain("training set is empty");
    }
    if inputs.len() != targets.len() {
        return domain("inputs and targets differ in length");
    }
    if inputs.iter().any(|x| x.len() != net.input_dim())
        || targets.iter().any(|y| y.len() != net.output_dim())
    {
        return domain("training rows do not match the network dimensions");
    }
    Ok(())
}

/// Shuffled mini-batch training for `config.epochs` epochs with a fresh Adam
/// state. Returns the trained network and the mean batch loss per epoch.
pub fn train(
    mut net: Network,
    inputs: &[Vec<f64>],
    targets: &[Vec<f64>],
    config: &TrainConfig,
    seed: u64,
) -> Result<(Network, Vec<f64>)> {
    check_dataset(&net, inputs, targets)?;
    if config.batch_size == 0 {
        return domain("batch_size must be positive");
    }
    let mut rng = rng::stream(seed, 1);
    let mut adam = Adam::new(&net, AdamConfig::with_lr(config.lr));
    let mut order: Vec<usize> = (0..inputs.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<(&[f64], &[f64])> = chunk
                .iter()
                .map(|&i| (inputs[i].as_slice(), targets[i].as_slice()))
                .collect();
            let (loss, grads) = net.loss_and_grad(&batch)?;
            if !loss.is_finite() {
                return Err(AcrlError::Divergence(format!("training loss {loss}")));
            }
            adam.step(&mut net, &grads)?;
            total += loss;
            batches += 1;
        }
        history.push(total / batches as f64);
    }
    Ok((net, history))
}

/// `steps` Adam updates on mini-batches drawn uniformly from `len` rows,
/// fetched on demand through `row`; used to fine-tune an already trained
/// network. Returns the mean batch loss.
pub fn train_steps<F>(
    net: &mut Network,
    len: usize,
    row: F,
    steps: usize,
    config: &TrainConfig,
    seed: u64,
) -> Result<f64>
where
    F: Fn(usize) -> (Vec<f64>, Vec<f64>),
{
    if len == 0 {
        return domain("training set is empty");
    }
    let mut rng = rng::stream(seed, 2);
    let mut adam = Adam::new(net, AdamConfig::with_lr(config.lr));
    let batch_size = config.batch_size.clamp(1, len);
    let mut total = 0.0;
    for _ in 0..steps {
        let batch: Vec<(Vec<f64>, Vec<f64>)> = rand::seq::index::sample(&mut rng, len, batch_size)
            .iter()
            .map(&row)
            .collect();
        let (loss, grads) = net.loss_and_grad(&batch)?;
        if !loss.is_finite() {
            return Err(AcrlError::Divergence(format!("fine-tuning loss {loss}")));
        }
        adam.step(net, &grads)?;
        total += loss;
    }
    Ok(if steps == 0 { 0.0 } else { total / steps as f64 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn linear(w: Vec<f64>, b: f64) -> Network {
        let inputs = w.len();
        Network::from_layers(vec![Dense {
            inputs,
            outputs: 1,
            weights: w,
            biases: vec![b],
        }])
        .unwrap()
    }

    #[test]
    fn init_is_deterministic_and_shaped() {
        let a = Network::new(&[8, 16, 1], 42).unwrap();
        let b = Network::new(&[8, 16, 1], 42).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, Network::new(&[8, 16, 1], 43).unwrap());
        assert_eq!(a.parameter_count(), 161);

        let single = Network::new(&[3, 1], 9).unwrap();
        assert_eq!(single.layers()[0].weights.len(), 3);
        assert_eq!(single.layers()[0].biases, vec![0.0]);
        assert!(a.layers().iter().all(|l| l.biases.iter().all(|&b| b == 0.0)));
    }

    #[test]
    fn init_rejects_bad_sizes() {
        assert!(Network::new(&[], 0).is_err());
        assert!(Network::new(&[4], 0).is_err());
        assert!(Network::new(&[4, 0, 1], 0).is_err());
    }

    #[test]
    fn linear_forward() {
        let net = linear(vec![0.5, -2.0, 1.5], 0.25);
        let y = net.forward(&[2.0, 1.0, -1.0]).unwrap();
        assert_relative_eq!(y[0], 1.0 - 2.0 - 1.5 + 0.25);
        assert!(net.forward(&[1.0]).is_err());
    }

    #[test]
    fn zero_network_outputs_zero() {
        let mut net = Network::new(&[4, 6, 2], 1).unwrap();
        for l in &mut net.layers {
            l.weights.iter_mut().for_each(|w| *w = 0.0);
        }
        assert_eq!(net.forward(&[1.0, -3.0, 7.0, 0.2]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn hand_evaluated_two_layer_net() {
        // h = relu([[1, 2], [-1, 1]] x + [0.5, 0]) ; y = [3, -2] h + 1
        // x = [1, -1]: pre = [-0.5, -2] -> h = [0, 0] -> y = 1
        // so use bias 2.5 on the first unit: pre = [1.5, -2] -> h = [1.5, 0] -> y = 5.5
        let net = Network::from_layers(vec![
            Dense {
                inputs: 2,
                outputs: 2,
                weights: vec![1.0, 2.0, -1.0, 1.0],
                biases: vec![2.5, 0.0],
            },
            Dense {
                inputs: 2,
                outputs: 1,
                weights: vec![3.0, -2.0],
                biases: vec![1.0],
            },
        ])
        .unwrap();
        assert_eq!(net.forward(&[1.0, -1.0]).unwrap(), vec![5.5]);
    }

    #[test]
    fn perfect_fit_has_zero_loss_and_gradient() {
        let net = Network::new(&[3, 5, 1], 3).unwrap();
        let xs = [vec![0.1, 0.2, 0.3], vec![-1.0, 0.5, 2.0]];
        let batch: Vec<(Vec<f64>, Vec<f64>)> = xs
            .iter()
            .map(|x| (x.clone(), net.forward(x).unwrap()))
            .collect();
        let (loss, grads) = net.loss_and_grad(&batch).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grads.iter().all(|g| g == 0.0));
    }

    #[test]
    fn single_unit_weight_gradient_closed_form() {
        let net = linear(vec![0.3, -0.7], 0.1);
        let x = vec![2.0, 3.0];
        let y = 1.5;
        let pred = 0.3 * 2.0 - 0.7 * 3.0 + 0.1;
        let (loss, grads) = net.loss_and_grad(&[(x.clone(), vec![y])]).unwrap();
        assert_relative_eq!(loss, (pred - y) * (pred - y));
        for i in 0..2 {
            assert_relative_eq!(grads.layers[0].weights[i], 2.0 * (pred - y) * x[i]);
        }
        assert_relative_eq!(grads.layers[0].biases[0], 2.0 * (pred - y));
    }

    #[test]
    fn empty_batch_is_rejected() {
        let net = linear(vec![1.0], 0.0);
        let empty: Vec<(Vec<f64>, Vec<f64>)> = Vec::new();
        assert!(net.loss_and_grad(&empty).is_err());
    }

    #[test]
    fn adam_zero_gradient_leaves_parameters() {
        let mut net = Network::new(&[2, 3, 1], 5).unwrap();
        let before = net.clone();
        let mut adam = Adam::new(&net, AdamConfig::default());
        adam.step(&mut net, &Gradients::zeros_like(&before)).unwrap();
        assert_eq!(net, before);
        assert_eq!(adam.steps(), 1);
    }

    #[test]
    fn adam_first_step_by_hand() {
        // m1 = 0.1 g, v1 = 0.001 g^2; bias corrected m = g, v = g^2, so the
        // step is lr * g / (|g| + eps).
        let mut net = linear(vec![0.5], 0.0);
        let mut grads = Gradients::zeros_like(&net);
        grads.layers[0].weights[0] = 0.2;
        let mut adam = Adam::new(&net, AdamConfig::with_lr(0.01));
        adam.step(&mut net, &grads).unwrap();
        let expected = 0.5 - 0.01 * 0.2 / (0.2 + 1e-8);
        assert_relative_eq!(net.layers[0].weights[0], expected, epsilon = 1e-15);
        assert_eq!(net.layers[0].biases[0], 0.0);
    }

    #[test]
    fn adam_rejects_shape_mismatch() {
        let mut net = Network::new(&[2, 1], 0).unwrap();
        let other = Network::new(&[3, 1], 0).unwrap();
        let mut adam = Adam::new(&net, AdamConfig::default());
        assert!(adam.step(&mut net, &Gradients::zeros_like(&other)).is_err());
    }

    #[test]
    fn adam_is_deterministic() {
        let base = Network::new(&[3, 4, 1], 8).unwrap();
        let batch = [(vec![1.0, 2.0, 3.0], vec![0.5])];
        let (_, g) = base.loss_and_grad(&batch).unwrap();
        let (mut a, mut b) = (base.clone(), base.clone());
        Adam::new(&a, AdamConfig::default()).step(&mut a, &g).unwrap();
        Adam::new(&b, AdamConfig::default()).step(&mut b, &g).unwrap();
        assert_eq!(a, b);
    }

    fn linear_dataset() -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let xs: Vec<Vec<f64>> = (0..100).map(|i| vec![-1.0 + 2.0 * i as f64 / 99.0]).collect();
        let ys = xs.iter().map(|x| vec![2.0 * x[0] + 1.0]).collect();
        (xs, ys)
    }

    #[test]
    fn train_fits_a_line() {
        let (xs, ys) = linear_dataset();
        let net = Network::new(&[1, 16, 1], 11).unwrap();
        let cfg = TrainConfig {
            epochs: 300,
            batch_size: 16,
            lr: 1e-2,
        };
        let (_, history) = train(net, &xs, &ys, &cfg, 4).unwrap();
        assert_eq!(history.len(), 300);
        assert!(*history.last().unwrap() < 1e-3, "{:?}", history.last());
    }

    #[test]
    fn train_zero_epochs_and_determinism() {
        let (xs, ys) = linear_dataset();
        let net = Network::new(&[1, 8, 1], 2).unwrap();
        let cfg = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        let (same, hist) = train(net.clone(), &xs, &ys, &cfg, 1).unwrap();
        assert_eq!(same, net);
        assert!(hist.is_empty());

        let cfg = TrainConfig {
            epochs: 5,
            ..TrainConfig::default()
        };
        let a = train(net.clone(), &xs, &ys, &cfg, 1).unwrap();
        let b = train(net.clone(), &xs, &ys, &cfg, 1).unwrap();
        assert_eq!(a, b);
        assert!(train(net, &[], &[], &cfg, 1).is_err());
    }

    #[test]
    fn fine_tuning_reduces_loss() {
        let (xs, ys) = linear_dataset();
        let row = |i: usize| (xs[i].clone(), ys[i].clone());
        let cfg = TrainConfig {
            epochs: 0,
            batch_size: 8,
            lr: 1e-2,
        };
        let mut net = Network::new(&[1, 8, 1], 5).unwrap();
        let before = net.clone();
        assert_eq!(train_steps(&mut net, xs.len(), row, 0, &cfg, 3).unwrap(), 0.0);
        assert_eq!(net, before);
        let first = train_steps(&mut net, xs.len(), row, 20, &cfg, 3).unwrap();
        let later = train_steps(&mut net, xs.len(), row, 200, &cfg, 4).unwrap();
        assert!(later < first, "{later} >= {first}");
        assert!(train_steps(&mut net, 0, row, 1, &cfg, 3).is_err());
    }

    #[test]
    fn checkpoint_round_trips_bit_exactly() {
        let net = Network::new(&[5, 7, 3, 2], 99).unwrap();
        let back = Network::from_text(&net.to_text()).unwrap();
        assert_eq!(
            net.parameters().map(f64::to_bits).collect::<Vec<_>>(),
            back.parameters().map(f64::to_bits).collect::<Vec<_>>()
        );
        assert_eq!(back.layer_sizes(), vec![5, 7, 3, 2]);
        assert!(Network::from_text("garbage").is_err());
    }

    #[test]
    fn input_gradient_of_linear_unit_is_its_weights() {
        let net = linear(vec![3.0, -4.0], 1.0);
        assert_eq!(net.input_gradient(&[0.3, 9.0], 0).unwrap(), vec![3.0, -4.0]);
    }
}
