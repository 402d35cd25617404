use rand::Rng;
use serde::{Deserialize, Serialize};

use super::seq::{fingerprint, TokenSpace};
use super::{Environment, Objective};
use crate::error::{config_err, Result};
use crate::mdp::{Action, Label, RewardMode, State};
use crate::rng::{self, SeedRng};

/// Two coupled smooth properties of a sequence's fingerprint `x`:
/// `primary = u.x + c (r.x)^2` and `secondary = v.x + c (r.x)^2`, where `v`
/// is correlated with `u` so lowering the primary tends to move the
/// secondary as well.
#[derive(Clone, Debug, PartialEq)]
pub struct TwoPropertyOracle {
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub r: Vec<f64>,
    pub curvature: f64,
}

impl TwoPropertyOracle {
    pub fn seeded(width: usize, seed: u64, coupling: f64) -> Self {
        let mut rng = rng::stream(seed, 0x1b9);
        let mut normal = || {
            let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
            let u2: f64 = rng.gen();
            (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
        };
        let u: Vec<f64> = (0..width).map(|_| 0.5 * normal()).collect();
        let rest = (1.0 - coupling * coupling).max(0.0).sqrt();
        let v = u.iter().map(|&ui| coupling * ui + rest * 0.5 * normal()).collect();
        let r = (0..width).map(|_| 0.3 * normal()).collect();
        Self {
            u,
            v,
            r,
            curvature: 0.1,
        }
    }

    pub fn properties(&self, x: &[f64]) -> (f64, f64) {
        let dot = |a: &[f64]| a.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        let shared = self.curvature * dot(&self.r).powi(2);
        (dot(&self.u) + shared, dot(&self.v) + shared)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImproveConfig {
    pub vocab: u32,
    pub max_len: usize,
    pub horizon: usize,
    pub oracle_seed: u64,
    pub fingerprint_width: usize,
    pub start_min_len: usize,
    pub start_max_len: usize,
    /// Correlation between the primary and secondary linear parts.
    pub coupling: f64,
    pub latency_ms: u64,
}

impl Default for ImproveConfig {
    fn default() -> Self {
        Self {
            vocab: 4,
            max_len: 8,
            horizon: 5,
            oracle_seed: 0,
            fingerprint_width: 32,
            start_min_len: 2,
            start_max_len: 6,
            coupling: 0.6,
            latency_ms: 0,
        }
    }
}

impl ImproveConfig {
    pub fn validate(&self) -> Result<()> {
        if self.vocab == 0 || self.max_len == 0 || self.fingerprint_width == 0 {
            return config_err("env.vocab", "vocab, max_len and fingerprint_width must be positive");
        }
        if self.horizon == 0 {
            return config_err("env.horizon", "must be positive");
        }
        if self.start_min_len > self.start_max_len || self.start_max_len > self.max_len {
            return config_err(
                "env.start_max_len",
                "need start_min_len <= start_max_len <= max_len",
            );
        }
        if !(-1.0..=1.0).contains(&self.coupling) {
            return config_err("env.coupling", "must lie in [-1, 1]");
        }
        Ok(())
    }
}

/// Short start-relative improvement episodes: lower the primary property of
/// a random starting sequence while holding its secondary property.
#[derive(Clone, Debug)]
pub struct ImproveEnv {
    config: ImproveConfig,
    space: TokenSpace,
    oracle: TwoPropertyOracle,
}

impl ImproveEnv {
    pub fn new(config: ImproveConfig) -> Result<Self> {
        config.validate()?;
        let space = TokenSpace {
            vocab: config.vocab,
            max_len: config.max_len,
            width: config.fingerprint_width,
        };
        let oracle = TwoPropertyOracle::seeded(config.fingerprint_width, config.oracle_seed, config.coupling);
        Ok(Self {
            config,
            space,
            oracle,
        })
    }

    pub fn improve_oracle(&self, state: &State) -> Result<(f64, f64)> {
        let tokens = self.space.tokens(state)?;
        Ok(self.oracle.properties(&fingerprint(tokens, self.space.width)))
    }
}

impl Objective for ImproveEnv {
    fn evaluate(&self, state: &State) -> Result<Label> {
        let (p, q) = self.improve_oracle(state)?;
        Ok(vec![p, q])
    }
}

impl Environment for ImproveEnv {
    fn name(&self) -> &'static str {
        "improve"
    }

    fn horizon(&self) -> usize {
        self.config.horizon
    }

    fn reward_mode(&self) -> RewardMode {
        RewardMode::ImprovementFromStart {
            primary: 0,
            secondary: 1,
        }
    }

    fn label_dim(&self) -> usize {
        2
    }

    fn feature_dim(&self) -> usize {
        self.config.fingerprint_width
    }

    fn reset(&self, rng: &mut SeedRng) -> Result<State> {
        self.sample_dataset_state(rng)
    }

    fn sample_dataset_state(&self, rng: &mut SeedRng) -> Result<State> {
        let len = rng.gen_range(self.config.start_min_len..=self.config.start_max_len);
        Ok(State::Tokens(self.space.random_sequence(len, rng)))
    }

    fn validate(&self, state: &State) -> Result<()> {
        self.space.tokens(state).map(|_| ())
    }

    fn step(&self, state: &State, action: Action) -> Result<State> {
        Ok(State::Tokens(self.space.apply(self.space.tokens(state)?, action)?))
    }

    fn successors(&self, state: &State) -> Result<Vec<(Action, State)>> {
        Ok(self.space.successors(self.space.tokens(state)?))
    }

    fn featurize(&self, state: &State) -> Result<Vec<f64>> {
        Ok(fingerprint(self.space.tokens(state)?, self.space.width))
    }

    fn conditions_on_start(&self) -> bool {
        true
    }
}
