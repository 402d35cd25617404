//! Synthetic environments, featurization and the instrumented oracle.
//!
//! Three environments stand in for the expensive tasks: a constrained
//! coefficient profile whose drag is minimised ([`ProfileEnv`]), a token
//! sequence whose penalised property is maximised ([`SeqEnv`]) and a short
//! start-relative improvement task over two coupled properties
//! ([`ImproveEnv`]). All of them are minimisation problems over their
//! ground-truth label's entry 0, except the improvement task which uses
//! [`RewardMode::ImprovementFromStart`].

mod improve;
mod oracle;
mod profile;
mod seq;

pub use improve::{ImproveConfig, ImproveEnv, TwoPropertyOracle};
pub use oracle::{InstrumentedOracle, Objective};
pub use profile::{ProfileConfig, ProfileEnv, SyntheticDrag};
pub use seq::{
    fingerprint, fnv1a, SeqConfig, SeqEnv, SeqProperty, TokenSpace, FNV_OFFSET, FNV_PRIME,
};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::mdp::{Action, Label, RewardMode, State};
use crate::rng::SeedRng;

/// An episodic environment with enumerable successor states.
pub trait Environment: Objective {
    fn name(&self) -> &'static str;

    /// Steps per episode.
    fn horizon(&self) -> usize;

    fn reward_mode(&self) -> RewardMode;

    /// Length of the ground-truth label.
    fn label_dim(&self) -> usize;

    fn feature_dim(&self) -> usize;

    /// Starting state of a new episode.
    fn reset(&self, rng: &mut SeedRng) -> Result<State>;

    /// A state drawn from the distribution the initial labelled dataset
    /// comes from.
    fn sample_dataset_state(&self, rng: &mut SeedRng) -> Result<State>;

    fn validate(&self, state: &State) -> Result<()>;

    fn step(&self, state: &State, action: Action) -> Result<State>;

    /// Every legal action with its successor, deterministic and free of
    /// duplicate successor states.
    fn successors(&self, state: &State) -> Result<Vec<(Action, State)>>;

    fn featurize(&self, state: &State) -> Result<Vec<f64>>;

    /// Whether values depend on the episode's start state, in which case the
    /// Q-function also sees the start's features.
    fn conditions_on_start(&self) -> bool {
        false
    }
}

/// Environment section of a run configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EnvConfig {
    Profile(ProfileConfig),
    Seq(SeqConfig),
    Improve(ImproveConfig),
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        match self {
            EnvConfig::Profile(c) => c.validate(),
            EnvConfig::Seq(c) => c.validate(),
            EnvConfig::Improve(c) => c.validate(),
        }
    }

    pub fn build(&self) -> Result<std::sync::Arc<dyn Environment>> {
        Ok(match self {
            EnvConfig::Profile(c) => std::sync::Arc::new(ProfileEnv::new(c.clone())?),
            EnvConfig::Seq(c) => std::sync::Arc::new(SeqEnv::new(c.clone())?),
            EnvConfig::Improve(c) => std::sync::Arc::new(ImproveEnv::new(c.clone())?),
        })
    }

    /// Simulated oracle latency in milliseconds.
    pub fn latency_ms(&self) -> u64 {
        match self {
            EnvConfig::Profile(c) => c.latency_ms,
            EnvConfig::Seq(c) => c.latency_ms,
            EnvConfig::Improve(c) => c.latency_ms,
        }
    }
}

/// Ground truth episode value of `end` relative to `start` under `env`,
/// computed without instrumentation. Used for evaluation only.
pub fn true_episode_value(env: &dyn Environment, start: &State, end: &State) -> Result<f64> {
    let s: Label = env.evaluate(start)?;
    let e: Label = env.evaluate(end)?;
    match env.reward_mode() {
        RewardMode::Delta => Ok(s[0] - e[0]),
        mode => mode.state_value(&e, &s),
    }
}
