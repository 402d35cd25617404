use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::active::AcquisitionConfig;
use crate::agent::AgentConfig;
use crate::envs::EnvConfig;
use crate::error::{config_err, Result};
use crate::reward_model::CommitteeConfig;
use crate::AcrlError;

/// Where rewards come from during training.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Every reward is a ground-truth query.
    Oracle,
    /// The committee is trained once on the initial data.
    Static,
    /// The committee is refreshed from actively selected states.
    Acrl,
    /// Every visited state is labelled and the committee updated each episode.
    FullUpdate,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Oracle => "oracle",
            Mode::Static => "static",
            Mode::Acrl => "acrl",
            Mode::FullUpdate => "full_update",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
#[derive(Default)]
pub struct Seeds {
    /// Environment, exploration, replay, Q-network and acquisition streams.
    pub run: u64,
    /// Initial dataset sampling and committee training.
    pub model: u64,
    /// Overrides the environment's ground-truth seed when set.
    pub oracle: Option<u64>,
}


#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardModelConfig {
    pub committee: CommitteeConfig,
    /// States drawn and labelled before training starts.
    pub initial_size: usize,
    pub acquisition: Option<AcquisitionConfig>,
}

impl Default for RewardModelConfig {
    fn default() -> Self {
        Self {
            committee: CommitteeConfig::default(),
            initial_size: 1000,
            acquisition: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_name")]
    pub name: String,
    pub mode: Mode,
    pub episodes: usize,
    pub env: EnvConfig,
    #[serde(default)]
    pub agent: AgentConfig,
    #[serde(default)]
    pub reward_model: RewardModelConfig,
    #[serde(default)]
    pub seeds: Seeds,
    /// Ground-truth check of one visited state every this many episodes;
    /// 0 disables.
    #[serde(default)]
    pub spot_check_every: usize,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

fn default_name() -> String {
    "run".into()
}

impl ExperimentConfig {
    /// Parses JSON, reporting the path of the offending field on failure.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let mut config: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            AcrlError::Config {
                field: if path == "." { "<root>".into() } else { path },
                message: e.into_inner().to_string(),
            }
        })?;
        config.fill_defaults();
        config.validate()?;
        Ok(config)
    }

    fn fill_defaults(&mut self) {
        if self.mode == Mode::Acrl && self.reward_model.acquisition.is_none() {
            self.reward_model.acquisition = Some(AcquisitionConfig::default());
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.episodes == 0 {
            return config_err("episodes", "must be positive");
        }
        self.env.validate()?;
        self.agent.validate()?;
        if self.mode != Mode::Oracle {
            self.reward_model.committee.validate()?;
            if self.reward_model.initial_size < self.reward_model.committee.k {
                return config_err("reward_model.initial_size", "must be at least the committee size");
            }
        }
        match (self.mode, &self.reward_model.acquisition) {
            (Mode::Static, Some(a)) if a.budget > 0 => {
                config_err("reward_model.acquisition", "static mode never acquires; remove the block")
            }
            (Mode::Acrl, Some(a)) => a.validate(),
            (Mode::Acrl, None) => config_err("reward_model.acquisition", "required in acrl mode"),
            _ => Ok(()),
        }
    }

    /// Environment configuration with the oracle seed override applied.
    pub fn env_config(&self) -> EnvConfig {
        let mut env = self.env.clone();
        if let Some(seed) = self.seeds.oracle {
            match &mut env {
                EnvConfig::Profile(c) => c.oracle_seed = seed,
                EnvConfig::Seq(c) => c.oracle_seed = seed,
                EnvConfig::Improve(c) => c.oracle_seed = seed,
            }
        }
        env
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| AcrlError::Config {
        field: "<file>".into(),
        message: format!("cannot read {}: {e}", path.display()),
    })?;
    ExperimentConfig::from_json(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::active::Strategy;

    const MINIMAL: &str = r#"{"mode": "acrl", "episodes": 10, "env": {"kind": "seq"}}"#;

    fn field_of(r: Result<ExperimentConfig>) -> String {
        match r {
            Err(AcrlError::Config { field, .. }) => field,
            other => panic!("expected a configuration error, got {other:?}"),
        }
    }

    #[test]
    fn minimal_config_gets_defaults_and_round_trips() {
        let c = ExperimentConfig::from_json(MINIMAL).unwrap();
        assert_eq!(c.agent, AgentConfig::default());
        assert_eq!(c.reward_model.acquisition, Some(AcquisitionConfig::default()));
        assert_eq!(c.seeds, Seeds::default());
        let echoed = ExperimentConfig::from_json(&c.to_json().unwrap()).unwrap();
        assert_eq!(echoed, c);
    }

    #[test]
    fn static_with_budget_is_rejected() {
        let text = r#"{"mode": "static", "episodes": 10, "env": {"kind": "seq"},
            "reward_model": {"acquisition": {"budget": 5, "window": 10}}}"#;
        assert_eq!(field_of(ExperimentConfig::from_json(text)), "reward_model.acquisition");
        let ok = r#"{"mode": "static", "episodes": 10, "env": {"kind": "seq"}}"#;
        assert!(ExperimentConfig::from_json(ok).is_ok());
    }

    #[test]
    fn errors_name_the_field() {
        let unknown = r#"{"mode": "acrl", "episodes": 10, "env": {"kind": "seq"}, "agent": {"gama": 0.9}}"#;
        assert_eq!(field_of(ExperimentConfig::from_json(unknown)), "agent.gama");
        let wrong_type = r#"{"mode": "acrl", "episodes": 10, "env": {"kind": "seq"}, "agent": {"gamma": "high"}}"#;
        assert_eq!(field_of(ExperimentConfig::from_json(wrong_type)), "agent.gamma");
        let bad_value = r#"{"mode": "acrl", "episodes": 10, "env": {"kind": "seq"}, "agent": {"gamma": 2.0}}"#;
        assert_eq!(field_of(ExperimentConfig::from_json(bad_value)), "agent.gamma");
        let env = r#"{"mode": "oracle", "episodes": 10, "env": {"kind": "profile", "constraint": [0.3, 0.1]}}"#;
        assert_eq!(field_of(ExperimentConfig::from_json(env)), "env.constraint");
        let missing = r#"{"mode": "oracle", "env": {"kind": "seq"}}"#;
        assert!(matches!(ExperimentConfig::from_json(missing), Err(AcrlError::Config { .. })));
        let zero = r#"{"mode": "oracle", "episodes": 0, "env": {"kind": "seq"}}"#;
        assert_eq!(field_of(ExperimentConfig::from_json(zero)), "episodes");
    }

    #[test]
    fn binned_strategy_parses() {
        let text = r#"{"mode": "acrl", "episodes": 10, "env": {"kind": "seq"},
            "reward_model": {"acquisition": {"strategy": {"kind": "binned", "num_bins": 4},
            "budget": 8, "window": 100, "every": 5}}}"#;
        let c = ExperimentConfig::from_json(text).unwrap();
        assert_eq!(c.reward_model.acquisition.unwrap().strategy, Strategy::Binned { num_bins: 4 });
    }

    #[test]
    fn oracle_seed_override() {
        let text = r#"{"mode": "oracle", "episodes": 1, "env": {"kind": "seq"}, "seeds": {"oracle": 7}}"#;
        let c = ExperimentConfig::from_json(text).unwrap();
        match c.env_config() {
            EnvConfig::Seq(s) => assert_eq!(s.oracle_seed, 7),
            other => panic!("{other:?}"),
        }
    }
}
