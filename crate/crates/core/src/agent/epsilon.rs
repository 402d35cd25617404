use serde::{Deserialize, Serialize};

use crate::error::{config_err, domain, Result};

/// Exploration rate mixing a linear and an exponential decay that both hit
/// `end` at episode `decay_episodes`:
/// `eps(t) = eps0 * (lambda * (1 - beta t) + (1 - lambda) * alpha^t)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EpsilonConfig {
    pub start: f64,
    pub lambda: f64,
    pub end: f64,
    pub decay_episodes: usize,
}

impl Default for EpsilonConfig {
    fn default() -> Self {
        Self {
            start: 1.0,
            lambda: 0.0,
            end: 0.01,
            decay_episodes: 4800,
        }
    }
}

impl EpsilonConfig {
    pub fn schedule(&self) -> Result<EpsilonSchedule> {
        EpsilonSchedule::new(self.start, self.lambda, self.end, self.decay_episodes).map_err(|e| {
            crate::AcrlError::Config {
                field: "agent.epsilon".into(),
                message: e.to_string(),
            }
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.decay_episodes == 0 {
            return config_err("agent.epsilon.decay_episodes", "must be positive");
        }
        self.schedule().map(|_| ())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpsilonSchedule {
    eps0: f64,
    lambda: f64,
    end: f64,
    t_end: usize,
    alpha: f64,
    beta: f64,
}

impl EpsilonSchedule {
    pub fn new(eps0: f64, lambda: f64, end: f64, t_end: usize) -> Result<Self> {
        if t_end == 0 {
            return domain("decay horizon must be positive");
        }
        if !(eps0 > 0.0 && eps0 <= 1.0) {
            return domain(format!("start epsilon {eps0} outside (0, 1]"));
        }
        if !(end > 0.0 && end <= eps0) {
            return domain(format!("end epsilon {end} outside (0, {eps0}]"));
        }
        if !(0.0..=1.0).contains(&lambda) {
            return domain(format!("lambda {lambda} outside [0, 1]"));
        }
        let ratio = end / eps0;
        Ok(Self {
            eps0,
            lambda,
            end,
            t_end,
            alpha: ratio.powf(1.0 / t_end as f64),
            beta: (1.0 - ratio) / t_end as f64,
        })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// Exploration rate for episode `t`, never below `end` and held there
    /// after the horizon.
    pub fn epsilon_at(&self, t: usize) -> f64 {
        if t > self.t_end {
            return self.end;
        }
        let tf = t as f64;
        let e = self.eps0 * (self.lambda * (1.0 - self.beta * tf) + (1.0 - self.lambda) * self.alpha.powf(tf));
        e.max(self.end)
    }
}
