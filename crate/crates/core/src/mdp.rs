//! MDP vocabulary shared by the environments, the agent and the harness:
//! states, actions, transitions and the two reward definitions.
//!
//! Every environment here is a minimisation problem over a true evaluation
//! function `f`. Under [`RewardMode::Delta`] a step from `s_{t-1}` to `s_t`
//! earns `f(s_{t-1}) - f(s_t)`, so an episode's return telescopes to
//! `f(s_0) - f(s_T)`. Under [`RewardMode::ImprovementFromStart`] the episode
//! value of a state is `-|q_t - q_0| - (p_t - p_0)` for a primary property
//! `p` (minimised) and a secondary property `q` (held constant); each step
//! earns the increment of that value so returns telescope the same way.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{domain, ensure_finite, Result};

/// Ground-truth or predicted values of a state. Scalar objectives use one
/// entry; two-property objectives use `[primary, secondary]`.
pub type Label = Vec<f64>;

/// A blowing/suction style profile: `2 * per_side` coefficients, two sides
/// of `per_side` each, plus the per-side mean each side is held to.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenseState {
    pub values: Vec<f64>,
    pub per_side: usize,
    pub targets: [f64; 2],
}

impl DenseState {
    pub fn new(values: Vec<f64>, per_side: usize, targets: [f64; 2]) -> Result<Self> {
        let state = Self {
            values,
            per_side,
            targets,
        };
        state.check()?;
        Ok(state)
    }

    /// A profile with every coefficient equal to its side's target.
    pub fn uniform(per_side: usize, targets: [f64; 2]) -> Self {
        let mut values = vec![targets[0]; per_side];
        values.extend(std::iter::repeat_n(targets[1], per_side));
        Self {
            values,
            per_side,
            targets,
        }
    }

    pub fn side(&self, side: usize) -> &[f64] {
        &self.values[side * self.per_side..(side + 1) * self.per_side]
    }

    pub fn side_mean(&self, side: usize) -> f64 {
        self.side(side).iter().sum::<f64>() / self.per_side as f64
    }

    pub fn check(&self) -> Result<()> {
        if self.per_side == 0 {
            return domain("profile must have at least one coefficient per side");
        }
        if self.values.len() != 2 * self.per_side {
            return domain(format!(
                "profile has {} coefficients, expected {}",
                self.values.len(),
                2 * self.per_side
            ));
        }
        if self.values.iter().chain(&self.targets).any(|v| !v.is_finite()) {
            return domain("profile coefficients must be finite");
        }
        Ok(())
    }
}

/// An environment state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum State {
    Dense(DenseState),
    /// Token ids; length and vocabulary bounds are enforced by the owning
    /// environment.
    Tokens(Vec<u32>),
}

impl State {
    /// Canonical identity used for memoization and deduplication.
    pub fn key(&self) -> StateKey {
        fn bits(v: f64) -> u64 {
            // -0.0 and 0.0 are the same coefficient.
            if v == 0.0 {
                0
            } else {
                v.to_bits()
            }
        }
        match self {
            State::Dense(d) => {
                let mut words = Vec::with_capacity(d.values.len() + 4);
                words.push(0);
                words.push(d.per_side as u64);
                words.extend(d.targets.iter().map(|&v| bits(v)));
                words.extend(d.values.iter().map(|&v| bits(v)));
                StateKey(words)
            }
            State::Tokens(t) => {
                let mut words = Vec::with_capacity(t.len() + 1);
                words.push(1);
                words.extend(t.iter().map(|&v| u64::from(v)));
                StateKey(words)
            }
        }
    }

    pub fn as_dense(&self) -> Option<&DenseState> {
        match self {
            State::Dense(d) => Some(d),
            State::Tokens(_) => None,
        }
    }

    pub fn as_tokens(&self) -> Option<&[u32]> {
        match self {
            State::Tokens(t) => Some(t),
            State::Dense(_) => None,
        }
    }
}

impl fmt::Display for State {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            State::Dense(d) => write!(f, "dense{:?}/targets{:?}", d.values, d.targets),
            State::Tokens(t) => write!(f, "tokens{t:?}"),
        }
    }
}

/// Hashable, totally ordered identity of a [`State`].
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct StateKey(Vec<u64>);

/// One move available from a state.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Action {
    NoOp,
    /// Move coefficient `index` by one step up (`raise`) or down.
    Adjust { index: usize, raise: bool },
    Append(u32),
    RemoveLast,
    Mutate { position: usize, token: u32 },
}

/// How per-step rewards are derived from state values.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum RewardMode {
    /// `f(s_{t-1}) - f(s_t)` on label entry 0.
    Delta,
    /// Increment of `improvement_reward` relative to the episode's start,
    /// with the given label indices as primary and secondary property.
    ImprovementFromStart { primary: usize, secondary: usize },
}

impl RewardMode {
    /// Episode-level value of a state: `-f(s)` under `Delta`, the
    /// improvement reward under `ImprovementFromStart`.
    pub fn state_value(&self, label: &[f64], start: &[f64]) -> Result<f64> {
        match *self {
            RewardMode::Delta => {
                let v = label
                    .first()
                    .copied()
                    .ok_or_else(|| crate::AcrlError::Domain("empty label".into()))?;
                Ok(-ensure_finite("label", v)?)
            }
            RewardMode::ImprovementFromStart { primary, secondary } => {
                let get = |l: &[f64], i: usize| {
                    l.get(i).copied().ok_or_else(|| {
                        crate::AcrlError::Domain(format!("label has no entry {i}"))
                    })
                };
                improvement_reward(
                    get(label, primary)?,
                    get(start, primary)?,
                    get(label, secondary)?,
                    get(start, secondary)?,
                )
            }
        }
    }

    /// Per-step reward for the move `prev -> next` in an episode that began
    /// at a state labelled `start`.
    pub fn step_reward(&self, prev: &[f64], next: &[f64], start: &[f64]) -> Result<f64> {
        match *self {
            RewardMode::Delta => {
                let p = prev.first().copied().unwrap_or(f64::NAN);
                let n = next.first().copied().unwrap_or(f64::NAN);
                delta_reward(p, n)
            }
            RewardMode::ImprovementFromStart { .. } => {
                Ok(self.state_value(next, start)? - self.state_value(prev, start)?)
            }
        }
    }
}

/// One stored step of experience.
#[derive(Clone, Debug)]
pub struct Transition {
    pub state: State,
    pub action: Action,
    /// Model reward at visit time.
    pub reward: f64,
    pub next_state: State,
    pub terminal: bool,
    /// 1-based index of the step that produced `next_state`.
    pub step: usize,
    /// Start of the episode, for start-relative rewards and features.
    pub start: Arc<State>,
}

impl Transition {
    pub fn new(
        state: State,
        action: Action,
        reward: f64,
        next_state: State,
        step: usize,
        horizon: usize,
        start: Arc<State>,
    ) -> Result<Self> {
        ensure_finite("transition reward", reward)?;
        if step == 0 || step > horizon {
            return domain(format!("step {step} outside 1..={horizon}"));
        }
        Ok(Self {
            state,
            action,
            reward,
            next_state,
            terminal: step == horizon,
            step,
            start,
        })
    }
}

/// `f_prev - f_next`.
pub fn delta_reward(f_prev: f64, f_next: f64) -> Result<f64> {
    ensure_finite("f_prev", f_prev)?;
    ensure_finite("f_next", f_next)?;
    Ok(f_prev - f_next)
}

/// Sum of per-step delta rewards along a trajectory of values `f_0..f_T`.
pub fn telescoped_return(f_values: &[f64]) -> Result<f64> {
    if f_values.is_empty() {
        return domain("telescoped_return needs at least one value");
    }
    for &v in f_values {
        ensure_finite("f value", v)?;
    }
    Ok(f_values.windows(2).map(|w| w[0] - w[1]).sum())
}

/// `-|secondary_t - secondary_0| - (primary_t - primary_0)`.
pub fn improvement_reward(
    primary_t: f64,
    primary_0: f64,
    secondary_t: f64,
    secondary_0: f64,
) -> Result<f64> {
    for (name, v) in [
        ("primary_t", primary_t),
        ("primary_0", primary_0),
        ("secondary_t", secondary_t),
        ("secondary_0", secondary_0),
    ] {
        ensure_finite(name, v)?;
    }
    Ok(-(secondary_t - secondary_0).abs() - (primary_t - primary_0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn delta_reward_examples() {
        assert_eq!(delta_reward(3.0, 1.0).unwrap(), 2.0);
        assert_eq!(delta_reward(1.0, 1.0).unwrap(), 0.0);
        assert_eq!(delta_reward(0.5, 2.0).unwrap(), -1.5);
        assert!(delta_reward(f64::NAN, 1.0).is_err());
        assert!(delta_reward(1.0, f64::INFINITY).is_err());
    }

    #[test]
    fn telescoped_return_examples() {
        assert_eq!(telescoped_return(&[3.0, 1.0, 2.0, 0.5]).unwrap(), 2.5);
        assert_eq!(telescoped_return(&[7.0]).unwrap(), 0.0);
        assert!(telescoped_return(&[]).is_err());
        assert!(telescoped_return(&[1.0, f64::NAN]).is_err());
    }

    #[test]
    fn improvement_reward_examples() {
        assert_eq!(improvement_reward(1.2, 1.2, -0.4, -0.4).unwrap(), 0.0);
        assert!((improvement_reward(0.7, 1.2, 3.0, 3.0).unwrap() - 0.5).abs() < 1e-12);
        assert!((improvement_reward(1.0, 1.0, 3.3, 3.0).unwrap() + 0.3).abs() < 1e-12);
        assert!((improvement_reward(1.0, 1.0, 2.7, 3.0).unwrap() + 0.3).abs() < 1e-12);
        assert!(improvement_reward(f64::NAN, 0.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn improvement_increments_telescope_to_end_value() {
        let mode = RewardMode::ImprovementFromStart {
            primary: 0,
            secondary: 1,
        };
        let labels = [[1.0, 2.0], [0.8, 2.1], [0.5, 1.7], [0.6, 2.05]];
        let start = &labels[0];
        let total: f64 = labels
            .windows(2)
            .map(|w| mode.step_reward(&w[0], &w[1], start).unwrap())
            .sum();
        let end = mode.state_value(&labels[3], start).unwrap();
        assert!((total - end).abs() < 1e-12);
        assert_eq!(mode.state_value(start, start).unwrap(), 0.0);
    }

    #[test]
    fn transition_terminal_flag_follows_horizon() {
        let s = State::Tokens(vec![1]);
        let start = Arc::new(s.clone());
        let t = Transition::new(s.clone(), Action::NoOp, 0.0, s.clone(), 5, 5, start.clone())
            .unwrap();
        assert!(t.terminal);
        let t = Transition::new(s.clone(), Action::NoOp, 0.0, s.clone(), 2, 5, start.clone())
            .unwrap();
        assert!(!t.terminal);
        assert!(Transition::new(s.clone(), Action::NoOp, f64::NAN, s, 1, 5, start).is_err());
    }

    #[test]
    fn state_key_identifies_equal_states() {
        let a = State::Dense(DenseState::uniform(2, [0.002, 0.003]));
        let mut b = a.clone();
        assert_eq!(a.key(), b.key());
        if let State::Dense(d) = &mut b {
            d.values[0] += 1e-6;
        }
        assert_ne!(a.key(), b.key());
        assert_ne!(State::Tokens(vec![]).key(), State::Tokens(vec![0]).key());
        let z = State::Dense(DenseState::new(vec![0.0, -0.0], 1, [0.0, 0.0]).unwrap());
        let z2 = State::Dense(DenseState::new(vec![-0.0, 0.0], 1, [0.0, 0.0]).unwrap());
        assert_eq!(z.key(), z2.key());
    }

    #[test]
    fn dense_state_rejects_wrong_length() {
        assert!(DenseState::new(vec![0.0; 3], 2, [0.0, 0.0]).is_err());
        assert!(DenseState::new(vec![0.0; 4], 2, [0.0, 0.0]).is_ok());
    }

    proptest! {
        #[test]
        fn telescoping_matches_first_minus_last(values in prop::collection::vec(-1e3f64..1e3, 1..60)) {
            let r = telescoped_return(&values).unwrap();
            prop_assert!((r - (values[0] - values[values.len() - 1])).abs() < 1e-9);
        }

        #[test]
        fn delta_reward_is_antisymmetric(a in -1e6f64..1e6, b in -1e6f64..1e6) {
            prop_assert_eq!(delta_reward(a, b).unwrap(), -delta_reward(b, a).unwrap());
        }

        #[test]
        fn improvement_reward_ignores_sign_of_secondary_shift(
            p in -10f64..10.0, p0 in -10f64..10.0, q0 in -10f64..10.0, d in 0f64..5.0
        ) {
            let up = improvement_reward(p, p0, q0 + d, q0).unwrap();
            let down = improvement_reward(p, p0, q0 - d, q0).unwrap();
            prop_assert!((up - down).abs() < 1e-9);
        }
    }
}
