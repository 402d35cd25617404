use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Environment, Objective};
use crate::error::{config_err, domain, Result};
use crate::mdp::{Action, DenseState, Label, RewardMode, State};
use crate::rng::{self, SeedRng};

/// Configuration of the constrained profile task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProfileConfig {
    /// Coefficients per side.
    pub per_side: usize,
    /// Size of one coefficient move before re-projection.
    pub step: f64,
    /// Interval each side's target mean is drawn from at reset.
    pub constraint: [f64; 2],
    pub horizon: usize,
    pub oracle_seed: u64,
    /// Interval of side means in the initial labelled dataset.
    pub data_interval: [f64; 2],
    /// Initial dataset states take up to this many random moves away from
    /// a uniform profile.
    pub data_walk_steps: usize,
    /// Coefficient unit of the synthetic drag.
    pub coefficient_scale: f64,
    pub latency_ms: u64,
}

impl Default for ProfileConfig {
    fn default() -> Self {
        Self {
            per_side: 15,
            step: 0.00025,
            constraint: [0.0019, 0.0021],
            horizon: 30,
            oracle_seed: 0,
            data_interval: [0.0015, 0.0025],
            data_walk_steps: 4,
            coefficient_scale: 0.001,
            latency_ms: 0,
        }
    }
}

fn check_interval(field: &str, interval: [f64; 2]) -> Result<()> {
    if !(interval[0].is_finite() && interval[1].is_finite()) {
        return config_err(field, "bounds must be finite");
    }
    if interval[0] > interval[1] {
        return config_err(field, format!("lower bound {} exceeds upper bound {}", interval[0], interval[1]));
    }
    Ok(())
}

impl ProfileConfig {
    pub fn validate(&self) -> Result<()> {
        if self.per_side < 2 {
            return config_err("env.per_side", "needs at least 2 coefficients per side");
        }
        if !(self.step.is_finite() && self.step > 0.0) {
            return config_err("env.step", "must be positive");
        }
        if self.horizon == 0 {
            return config_err("env.horizon", "must be positive");
        }
        if !(self.coefficient_scale.is_finite() && self.coefficient_scale > 0.0) {
            return config_err("env.coefficient_scale", "must be positive");
        }
        check_interval("env.constraint", self.constraint)?;
        check_interval("env.data_interval", self.data_interval)
    }
}

/// Seeded quadratic drag surrogate over a profile `s` of length `n = 2d`.
///
/// With `z = s / scale`:
/// `f = c0 - a * mean(z) + w.z + z'Az + b * sum_i (z_{i+1} - z_i)^2`.
/// `A` is positive semidefinite and annihilates per-side means, `b < 0`
/// rewards alternating neighbours, and `a` exceeds `sum |w|` so raising
/// every coefficient together always lowers drag. `A + b L` stays positive
/// definite on the constraint subspace, so the optimum is finite and sits
/// away from the uniform profile.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticDrag {
    pub c0: f64,
    pub a: f64,
    pub w: Vec<f64>,
    /// Row-major `n x n`.
    pub quad: Vec<f64>,
    pub b: f64,
    pub scale: f64,
    per_side: usize,
}

const DRAG_C0: f64 = 10.0;
const DRAG_W_SCALE: f64 = 3.0;
const DRAG_KAPPA: f64 = 1.0;
const DRAG_GAMMA: f64 = 0.5;
const DRAG_ALTERNATION: f64 = -0.2;

impl SyntheticDrag {
    pub fn new(per_side: usize, scale: f64, seed: u64) -> Self {
        let n = 2 * per_side;
        let mut rng = rng::stream(seed, 0x0d7a);
        let w: Vec<f64> = (0..n)
            .map(|_| DRAG_W_SCALE * rng.gen_range(-1.0..1.0))
            .collect();
        // Standard normals via Box-Muller.
        let mut normal = || {
            let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
            let u2: f64 = rng.gen();
            (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
        };
        let g: Vec<f64> = (0..n * n).map(|_| normal()).collect();
        // inner = kappa I + gamma G'G / n
        let mut inner = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                let mut acc = 0.0;
                for k in 0..n {
                    acc += g[k * n + i] * g[k * n + j];
                }
                inner[i * n + j] = DRAG_GAMMA * acc / n as f64 + if i == j { DRAG_KAPPA } else { 0.0 };
            }
        }
        // P removes each side's mean; quad = P inner P.
        let p = |i: usize, j: usize| {
            let same = i / per_side == j / per_side;
            let diag = if i == j { 1.0 } else { 0.0 };
            diag - if same { 1.0 / per_side as f64 } else { 0.0 }
        };
        let mut tmp = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                tmp[i * n + j] = (0..n).map(|k| p(i, k) * inner[k * n + j]).sum();
            }
        }
        let mut quad = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                quad[i * n + j] = (0..n).map(|k| tmp[i * n + k] * p(k, j)).sum();
            }
        }
        let a = 1.0 + w.iter().map(|v| v.abs()).sum::<f64>();
        Self {
            c0: DRAG_C0,
            a,
            w,
            quad,
            b: DRAG_ALTERNATION,
            scale,
            per_side,
        }
    }

    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }

    pub fn drag(&self, values: &[f64]) -> Result<f64> {
        let n = self.len();
        if values.len() != n {
            return domain(format!("profile has {} coefficients, drag expects {n}", values.len()));
        }
        let z: Vec<f64> = values.iter().map(|v| v / self.scale).collect();
        let mean = z.iter().sum::<f64>() / n as f64;
        let linear: f64 = self.w.iter().zip(&z).map(|(w, z)| w * z).sum();
        let mut quadratic = 0.0;
        for i in 0..n {
            let row = &self.quad[i * n..(i + 1) * n];
            quadratic += z[i] * row.iter().zip(&z).map(|(q, z)| q * z).sum::<f64>();
        }
        let alternation: f64 = z.windows(2).map(|p| (p[1] - p[0]).powi(2)).sum();
        Ok(self.c0 - self.a * mean + linear + quadratic + self.b * alternation)
    }

    pub fn per_side(&self) -> usize {
        self.per_side
    }
}

/// Profile optimisation: each step adjusts one coefficient (or none) and
/// the adjusted side is shifted back onto its mean constraint.
#[derive(Clone, Debug)]
pub struct ProfileEnv {
    config: ProfileConfig,
    drag: SyntheticDrag,
}

impl ProfileEnv {
    pub fn new(config: ProfileConfig) -> Result<Self> {
        config.validate()?;
        let drag = SyntheticDrag::new(config.per_side, config.coefficient_scale, config.oracle_seed);
        Ok(Self { config, drag })
    }

    pub fn config(&self) -> &ProfileConfig {
        &self.config
    }

    pub fn drag_model(&self) -> &SyntheticDrag {
        &self.drag
    }

    fn sample_in(interval: [f64; 2], rng: &mut SeedRng) -> f64 {
        if interval[0] == interval[1] {
            interval[0]
        } else {
            interval[0] + (interval[1] - interval[0]) * rng.gen::<f64>()
        }
    }

    /// Uniform profile with per-side means drawn from `interval`.
    pub fn uniform_in(&self, interval: [f64; 2], rng: &mut SeedRng) -> DenseState {
        let targets = [Self::sample_in(interval, rng), Self::sample_in(interval, rng)];
        DenseState::uniform(self.config.per_side, targets)
    }

    fn dense<'a>(&self, state: &'a State) -> Result<&'a DenseState> {
        match state {
            State::Dense(d) if d.per_side == self.config.per_side => {
                d.check()?;
                Ok(d)
            }
            State::Dense(d) => domain(format!(
                "profile has {} coefficients per side, environment uses {}",
                d.per_side, self.config.per_side
            )),
            State::Tokens(_) => domain("profile environment received a token state"),
        }
    }

    /// Applies one move. The net offset of every coefficient on the
    /// adjusted side is computed first and added once, so moves that differ
    /// only in which side element carries the step produce identical bits.
    pub fn apply(&self, state: &DenseState, action: Action) -> Result<DenseState> {
        match action {
            Action::NoOp => Ok(state.clone()),
            Action::Adjust { index, raise } => {
                let d = state.per_side;
                if index >= 2 * d {
                    return domain(format!("coefficient index {index} out of range 0..{}", 2 * d));
                }
                let step = if raise { self.config.step } else { -self.config.step };
                let side = index / d;
                let shift = step / d as f64;
                let mut next = state.clone();
                for k in side * d..(side + 1) * d {
                    let offset = if k == index { step - shift } else { -shift };
                    next.values[k] += offset;
                }
                Ok(next)
            }
            other => domain(format!("{other:?} is not a profile action")),
        }
    }
}

impl Objective for ProfileEnv {
    fn evaluate(&self, state: &State) -> Result<Label> {
        let d = self.dense(state)?;
        Ok(vec![self.drag.drag(&d.values)?])
    }
}

impl Environment for ProfileEnv {
    fn name(&self) -> &'static str {
        "profile"
    }

    fn horizon(&self) -> usize {
        self.config.horizon
    }

    fn reward_mode(&self) -> RewardMode {
        RewardMode::Delta
    }

    fn label_dim(&self) -> usize {
        1
    }

    fn feature_dim(&self) -> usize {
        2 * self.config.per_side + 2
    }

    fn reset(&self, rng: &mut SeedRng) -> Result<State> {
        Ok(State::Dense(self.uniform_in(self.config.constraint, rng)))
    }

    fn sample_dataset_state(&self, rng: &mut SeedRng) -> Result<State> {
        let mut state = self.uniform_in(self.config.data_interval, rng);
        let moves = rng.gen_range(0..=self.config.data_walk_steps);
        for _ in 0..moves {
            let index = rng.gen_range(0..2 * self.config.per_side);
            state = self.apply(&state, Action::Adjust { index, raise: rng.gen() })?;
        }
        Ok(State::Dense(state))
    }

    fn validate(&self, state: &State) -> Result<()> {
        self.dense(state).map(|_| ())
    }

    fn step(&self, state: &State, action: Action) -> Result<State> {
        Ok(State::Dense(self.apply(self.dense(state)?, action)?))
    }

    fn successors(&self, state: &State) -> Result<Vec<(Action, State)>> {
        let d = self.dense(state)?;
        let mut out = Vec::with_capacity(4 * d.per_side + 1);
        let mut seen = std::collections::HashSet::with_capacity(4 * d.per_side + 1);
        let actions = std::iter::once(Action::NoOp).chain((0..2 * d.per_side).flat_map(|index| {
            [true, false].map(|raise| Action::Adjust { index, raise })
        }));
        for action in actions {
            let next = State::Dense(self.apply(d, action)?);
            // With two coefficients per side, raising one equals lowering
            // the other.
            if seen.insert(next.key()) {
                out.push((action, next));
            }
        }
        Ok(out)
    }

    fn featurize(&self, state: &State) -> Result<Vec<f64>> {
        let d = self.dense(state)?;
        let mut f = Vec::with_capacity(self.feature_dim());
        f.extend_from_slice(&d.values);
        f.extend_from_slice(&d.targets);
        Ok(f)
    }
}
