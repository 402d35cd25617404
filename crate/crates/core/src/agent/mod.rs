//! Double DQN over enumerable successor states.
//!
//! The Q-value of taking action `a` in `s` is the scalar output of one
//! network applied to the encoded successor `s'`, so action sets of any size
//! share a single network.

mod epsilon;
mod replay;

pub use epsilon::{EpsilonConfig, EpsilonSchedule};
pub use replay::ReplayBuffer;

use std::path::Path;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::envs::Environment;
use crate::error::{config_err, domain, Result};
use crate::mdp::{Action, State, Transition};
use crate::nn::{Adam, AdamConfig, Network, Scratch};
use crate::rng::SeedRng;
use crate::AcrlError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentConfig {
    pub gamma: f64,
    pub buffer_capacity: usize,
    pub batch_size: usize,
    /// Optimizer steps between target syncs.
    pub sync_every: usize,
    /// Environment steps between optimizer steps.
    pub train_every: usize,
    pub hidden: Vec<usize>,
    pub lr: f64,
    pub epsilon: EpsilonConfig,
    /// Random-walk episodes used to fit the input standardizer.
    pub calibration_episodes: usize,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            gamma: 0.95,
            buffer_capacity: 20_000,
            batch_size: 32,
            sync_every: 200,
            train_every: 1,
            hidden: vec![32, 32],
            lr: 1e-3,
            epsilon: EpsilonConfig::default(),
            calibration_episodes: 50,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.gamma) {
            return config_err("agent.gamma", "must lie in [0, 1]");
        }
        if self.buffer_capacity == 0 {
            return config_err("agent.buffer_capacity", "must be positive");
        }
        if self.batch_size == 0 || self.batch_size > self.buffer_capacity {
            return config_err("agent.batch_size", "must be in 1..=buffer_capacity");
        }
        if self.sync_every == 0 {
            return config_err("agent.sync_every", "must be positive");
        }
        if self.train_every == 0 {
            return config_err("agent.train_every", "must be positive");
        }
        if self.hidden.contains(&0) {
            return config_err("agent.hidden", "layer widths must be positive");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return config_err("agent.lr", "must be positive");
        }
        if self.calibration_episodes == 0 {
            return config_err("agent.calibration_episodes", "must be positive");
        }
        self.epsilon.validate()
    }
}

/// Online and target value networks with a discount factor.
#[derive(Clone, Debug, PartialEq)]
pub struct QFunction {
    pub online: Network,
    target: Network,
    pub gamma: f64,
}

impl QFunction {
    pub fn new(input_dim: usize, hidden: &[usize], gamma: f64, seed: u64) -> Result<Self> {
        let mut sizes = vec![input_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        Self::from_network(Network::new(&sizes, seed)?, gamma)
    }

    /// The target starts as a copy of `online`.
    pub fn from_network(online: Network, gamma: f64) -> Result<Self> {
        if online.output_dim() != 1 {
            return domain("a value network has exactly one output");
        }
        if !(0.0..=1.0).contains(&gamma) {
            return domain(format!("discount {gamma} outside [0, 1]"));
        }
        Ok(Self {
            target: online.clone(),
            online,
            gamma,
        })
    }

    /// Builds a Q-function with independently chosen networks; test helper
    /// for checking the target rule.
    pub fn with_target(online: Network, target: Network, gamma: f64) -> Result<Self> {
        if online.layer_sizes() != target.layer_sizes() {
            return domain("online and target architectures differ");
        }
        let mut q = Self::from_network(online, gamma)?;
        q.target = target;
        Ok(q)
    }

    pub fn target(&self) -> &Network {
        &self.target
    }

    pub fn sync_target(&mut self) {
        self.target.clone_from(&self.online);
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        self.online.save(&dir.join("q_online.txt"))?;
        self.target.save(&dir.join("q_target.txt"))
    }
}

/// Every legal action of `state` with its successor.
pub fn enumerate_successors(env: &dyn Environment, state: &State) -> Result<Vec<(Action, State)>> {
    env.validate(state)?;
    env.successors(state)
}

/// Index of the largest value, ties to the lowest index.
pub fn greedy_index(values: &[f64]) -> Result<usize> {
    if values.is_empty() {
        return domain("no values to choose from");
    }
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    Ok(best)
}

fn values_of(net: &Network, inputs: &[Vec<f64>], scratch: &mut Scratch) -> Result<Vec<f64>> {
    inputs.iter().map(|x| net.value(x, scratch)).collect()
}

/// Epsilon-greedy choice among encoded successors.
pub fn select_action(q: &QFunction, successors: &[Vec<f64>], epsilon: f64, rng: &mut SeedRng) -> Result<usize> {
    if successors.is_empty() {
        return domain("no successors to choose from");
    }
    if rng.gen::<f64>() < epsilon {
        return Ok(rng.gen_range(0..successors.len()));
    }
    greedy_index(&values_of(&q.online, successors, &mut Scratch::default())?)
}

/// Source of network inputs for stored transitions.
pub trait QInputs {
    /// Input whose value estimates `Q(state, action)`.
    fn input(&self, t: &Transition) -> Result<Vec<f64>>;

    /// Inputs for every successor of `t.next_state`.
    fn next_inputs(&self, t: &Transition) -> Result<Vec<Vec<f64>>>;
}

/// Double DQN targets: the online network picks the best successor of the
/// next state and the target network evaluates it.
pub fn compute_targets<I: QInputs + ?Sized>(batch: &[&Transition], q: &QFunction, inputs: &I) -> Result<Vec<f64>> {
    let mut scratch = Scratch::default();
    batch
        .iter()
        .map(|t| {
            let y = if t.terminal || q.gamma == 0.0 {
                t.reward
            } else {
                let next = inputs.next_inputs(t)?;
                if next.is_empty() {
                    t.reward
                } else {
                    let best = greedy_index(&values_of(&q.online, &next, &mut scratch)?)?;
                    t.reward + q.gamma * q.target.value(&next[best], &mut scratch)?
                }
            };
            if y.is_finite() {
                Ok(y)
            } else {
                Err(AcrlError::Divergence(format!("non-finite bootstrap target at step {}", t.step)))
            }
        })
        .collect()
}

/// Online network plus its optimizer.
#[derive(Clone, Debug)]
pub struct Learner {
    pub q: QFunction,
    pub adam: Adam,
    updates: u64,
    sync_every: usize,
}

impl Learner {
    pub fn new(q: QFunction, lr: f64, sync_every: usize) -> Self {
        let adam = Adam::new(&q.online, AdamConfig::with_lr(lr));
        Self {
            q,
            adam,
            updates: 0,
            sync_every: sync_every.max(1),
        }
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    /// One optimizer step; syncs the target every `sync_every` updates.
    pub fn train<I: QInputs + ?Sized>(
        &mut self,
        buffer: &ReplayBuffer,
        batch_size: usize,
        rng: &mut SeedRng,
        inputs: &I,
    ) -> Result<Option<f64>> {
        let loss = optimize_step(&mut self.q, buffer, batch_size, rng, &mut self.adam, inputs)?;
        if loss.is_some() {
            self.updates += 1;
            if self.updates.is_multiple_of(self.sync_every as u64) {
                self.q.sync_target();
            }
        }
        Ok(loss)
    }
}

/// Samples a batch, regresses the online values onto Double DQN targets
/// with one Adam step and returns the pre-update loss. Returns `None`
/// without touching anything while the buffer holds fewer than
/// `batch_size` transitions.
pub fn optimize_step<I: QInputs + ?Sized>(
    q: &mut QFunction,
    buffer: &ReplayBuffer,
    batch_size: usize,
    rng: &mut SeedRng,
    adam: &mut Adam,
    inputs: &I,
) -> Result<Option<f64>> {
    if batch_size == 0 {
        return domain("batch_size must be positive");
    }
    if buffer.len() < batch_size {
        return Ok(None);
    }
    let batch = buffer.sample(batch_size, rng)?;
    let targets = compute_targets(&batch, q, inputs)?;
    let pairs = batch
        .iter()
        .zip(&targets)
        .map(|(t, &y)| Ok((inputs.input(t)?, [y])))
        .collect::<Result<Vec<_>>>()?;
    let (loss, grads) = q.online.loss_and_grad(&pairs)?;
    if !loss.is_finite() {
        return Err(AcrlError::Divergence(format!("Q loss {loss}")));
    }
    adam.step(&mut q.online, &grads)?;
    Ok(Some(loss))
}

/// Encodes states for the Q-network: standardized features of the state,
/// the standardized start features when values depend on the start, and
/// the fraction of the episode still to come.
#[derive(Clone)]
pub struct StateEncoder {
    env: Arc<dyn Environment>,
    mean: Vec<f64>,
    scale: Vec<f64>,
    with_start: bool,
}

impl std::fmt::Debug for StateEncoder {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("StateEncoder")
            .field("env", &self.env.name())
            .field("mean", &self.mean)
            .field("scale", &self.scale)
            .field("with_start", &self.with_start)
            .finish()
    }
}

impl StateEncoder {
    pub fn new(env: Arc<dyn Environment>, mean: Vec<f64>, scale: Vec<f64>) -> Result<Self> {
        let d = env.feature_dim();
        if mean.len() != d || scale.len() != d {
            return domain("standardizer does not match the feature dimension");
        }
        if scale.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return domain("standardizer scales must be positive");
        }
        let with_start = env.conditions_on_start();
        Ok(Self {
            env,
            mean,
            scale,
            with_start,
        })
    }

    /// Fits the standardizer on states from uniformly random rollouts. No
    /// ground truth is involved.
    pub fn calibrate(env: Arc<dyn Environment>, episodes: usize, rng: &mut SeedRng) -> Result<Self> {
        if episodes == 0 {
            return domain("calibration needs at least one episode");
        }
        let mut rows = Vec::new();
        for _ in 0..episodes {
            let mut s = env.reset(rng)?;
            rows.push(env.featurize(&s)?);
            for _ in 0..env.horizon() {
                let succ = env.successors(&s)?;
                s = succ[rng.gen_range(0..succ.len())].1.clone();
                rows.push(env.featurize(&s)?);
            }
        }
        let d = env.feature_dim();
        let n = rows.len() as f64;
        let mean: Vec<f64> = (0..d).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n).collect();
        let scale = (0..d)
            .map(|j| {
                let sd = (rows.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / n).sqrt();
                if sd > 1e-12 * mean[j].abs().max(1.0) {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Self::new(env, mean, scale)
    }

    pub fn env(&self) -> &Arc<dyn Environment> {
        &self.env
    }

    pub fn input_dim(&self) -> usize {
        let d = self.env.feature_dim();
        if self.with_start {
            2 * d + 1
        } else {
            d + 1
        }
    }

    fn push_scaled(&self, state: &State, out: &mut Vec<f64>) -> Result<()> {
        let f = self.env.featurize(state)?;
        out.extend(f.iter().zip(&self.mean).zip(&self.scale).map(|((v, m), s)| (v - m) / s));
        Ok(())
    }

    /// Input for `state` reached after `step` steps of an episode from
    /// `start`.
    pub fn encode(&self, state: &State, start: &State, step: usize) -> Result<Vec<f64>> {
        let horizon = self.env.horizon();
        if step > horizon {
            return domain(format!("step {step} beyond horizon {horizon}"));
        }
        let mut out = Vec::with_capacity(self.input_dim());
        self.push_scaled(state, &mut out)?;
        if self.with_start {
            self.push_scaled(start, &mut out)?;
        }
        out.push((horizon - step) as f64 / horizon as f64);
        Ok(out)
    }

    /// Successors of `state` (at `step`) with their encodings at `step + 1`.
    pub fn successors(&self, state: &State, start: &State, step: usize) -> Result<(Vec<(Action, State)>, Vec<Vec<f64>>)> {
        let succ = enumerate_successors(self.env.as_ref(), state)?;
        let inputs = succ
            .iter()
            .map(|(_, s)| self.encode(s, start, step + 1))
            .collect::<Result<Vec<_>>>()?;
        Ok((succ, inputs))
    }
}

impl QInputs for StateEncoder {
    fn input(&self, t: &Transition) -> Result<Vec<f64>> {
        self.encode(&t.next_state, &t.start, t.step)
    }

    fn next_inputs(&self, t: &Transition) -> Result<Vec<Vec<f64>>> {
        Ok(self.successors(&t.next_state, &t.start, t.step)?.1)
    }
}
