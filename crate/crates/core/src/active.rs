//! Acquisition of new ground-truth labels from recent experience.
//!
//! A round scores the states in the experience window, selects a budget of
//! them separately for every committee member (each member skips states it
//! already holds), queries the oracle once per distinct selected state and
//! hands each member its own rows.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::fs::File;
use std::io::Write;
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::envs::{Environment, InstrumentedOracle};
use crate::error::{config_err, domain, Result};
use crate::mdp::{State, StateKey};
use crate::reward_model::{Committee, MemberData, Provenance, Row};
use crate::rng::SeedRng;

/// How candidate states are scored and picked.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Strategy {
    Random,
    CommitteeStd,
    /// Highest committee std within equal-width bins of the predicted mean,
    /// taken round-robin across bins.
    Binned { num_bins: usize },
    PredictedValue,
    GradNorm,
}

impl Strategy {
    pub fn name(&self) -> &'static str {
        match self {
            Strategy::Random => "random",
            Strategy::CommitteeStd => "committee_std",
            Strategy::Binned { .. } => "binned",
            Strategy::PredictedValue => "predicted_value",
            Strategy::GradNorm => "grad_norm",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AcquisitionConfig {
    pub strategy: Strategy,
    /// States labelled per member per round.
    pub budget: usize,
    /// Distinct recent states eligible for selection.
    pub window: usize,
    /// Acquire and retrain every this many episodes.
    pub every: usize,
}

impl Default for AcquisitionConfig {
    fn default() -> Self {
        Self {
            strategy: Strategy::CommitteeStd,
            budget: 400,
            window: 20_000,
            every: 500,
        }
    }
}

impl AcquisitionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.budget == 0 {
            return config_err("reward_model.acquisition.budget", "must be at least 1");
        }
        if self.window < self.budget {
            return config_err("reward_model.acquisition.window", "must be at least the budget");
        }
        if self.every == 0 {
            return config_err("reward_model.acquisition.every", "must be positive");
        }
        if let Strategy::Binned { num_bins: 0 } = self.strategy {
            return config_err("reward_model.acquisition.strategy.num_bins", "must be positive");
        }
        Ok(())
    }
}

/// The most recent `capacity` distinct visited states.
#[derive(Clone, Debug)]
pub struct ExperienceWindow {
    capacity: usize,
    clock: u64,
    order: VecDeque<(u64, StateKey)>,
    live: HashMap<StateKey, (u64, State)>,
}

impl ExperienceWindow {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            clock: 0,
            order: VecDeque::new(),
            live: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.live.len()
    }

    pub fn is_empty(&self) -> bool {
        self.live.is_empty()
    }

    /// Records a visit; a state already present moves to the newest slot.
    pub fn push(&mut self, state: &State) {
        if self.capacity == 0 {
            return;
        }
        let key = state.key();
        self.clock += 1;
        self.order.push_back((self.clock, key.clone()));
        match self.live.get_mut(&key) {
            Some(entry) => entry.0 = self.clock,
            None => {
                self.live.insert(key, (self.clock, state.clone()));
            }
        }
        while self.live.len() > self.capacity {
            let (stamp, key) = self.order.pop_front().expect("order covers live entries");
            if self.live.get(&key).is_some_and(|(s, _)| *s == stamp) {
                self.live.remove(&key);
            }
        }
        // Stale entries from refreshed states are dropped lazily.
        if self.order.len() > 4 * self.capacity.max(16) {
            self.order.retain(|(s, k)| self.live.get(k).is_some_and(|(t, _)| t == s));
        }
    }

    /// States from oldest to newest visit.
    pub fn states(&self) -> Vec<&State> {
        self.order
            .iter()
            .filter_map(|(s, k)| match self.live.get(k) {
                Some((t, state)) if t == s => Some(state),
                _ => None,
            })
            .collect()
    }
}

/// Scores for a candidate set; `bins` is set for the binned strategy.
#[derive(Clone, Debug, PartialEq)]
pub struct Scores {
    pub values: Vec<f64>,
    pub bins: Option<Vec<usize>>,
}

/// Equal-width bins over `[min, max]` of `means`, half-open except that the
/// maximum lands in the last bin. A degenerate range puts everything in
/// bin 0.
pub fn assign_bins(means: &[f64], num_bins: usize) -> Vec<usize> {
    let lo = means.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = means.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = (hi - lo) / num_bins as f64;
    means
        .iter()
        .map(|&m| {
            if !(width > 0.0) {
                0
            } else {
                (((m - lo) / width).floor() as usize).min(num_bins - 1)
            }
        })
        .collect()
}

pub fn score_candidates(
    strategy: &Strategy,
    committee: &Committee,
    candidates: &[Vec<f64>],
    rng: &mut SeedRng,
) -> Result<Scores> {
    if candidates.is_empty() {
        return domain("no candidates to score");
    }
    let scores = match strategy {
        Strategy::Random => Scores {
            values: candidates.iter().map(|_| rng.gen::<f64>()).collect(),
            bins: None,
        },
        Strategy::CommitteeStd => Scores {
            values: candidates
                .iter()
                .map(|x| committee.predict_std(x))
                .collect::<Result<_>>()?,
            bins: None,
        },
        Strategy::PredictedValue => Scores {
            values: candidates
                .iter()
                .map(|x| committee.predict_mean(x))
                .collect::<Result<_>>()?,
            bins: None,
        },
        Strategy::GradNorm => Scores {
            values: candidates
                .iter()
                .map(|x| {
                    let g = committee.mean_input_gradient(x)?;
                    Ok(g.iter().map(|v| v * v).sum::<f64>().sqrt())
                })
                .collect::<Result<_>>()?,
            bins: None,
        },
        Strategy::Binned { num_bins } => {
            let preds = candidates
                .iter()
                .map(|x| committee.predict(x))
                .collect::<Result<Vec<_>>>()?;
            let means: Vec<f64> = preds.iter().map(|p| p.mean[0]).collect();
            Scores {
                values: preds.iter().map(|p| p.spread()).collect(),
                bins: Some(assign_bins(&means, (*num_bins).max(1))),
            }
        }
    };
    Ok(scores)
}

/// Indices sorted by descending score, ties to the lower index.
fn ranked(values: &[f64], subset: impl Iterator<Item = usize>) -> Vec<usize> {
    let mut idx: Vec<usize> = subset.collect();
    idx.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    idx
}

/// Picks `n` candidate indices according to `strategy`.
pub fn select(scores: &Scores, strategy: &Strategy, n: usize, rng: &mut SeedRng) -> Result<Vec<usize>> {
    let len = scores.values.len();
    if n > len {
        return domain(format!("cannot select {n} of {len} candidates"));
    }
    Ok(match strategy {
        Strategy::Random => rand::seq::index::sample(rng, len, n).into_vec(),
        Strategy::CommitteeStd | Strategy::PredictedValue | Strategy::GradNorm => {
            let mut r = ranked(&scores.values, 0..len);
            r.truncate(n);
            r
        }
        Strategy::Binned { .. } => {
            let bins = scores
                .bins
                .as_ref()
                .ok_or_else(|| crate::AcrlError::Domain("binned selection needs bin assignments".into()))?;
            let n_bins = bins.iter().copied().max().map_or(0, |m| m + 1);
            let mut queues: Vec<VecDeque<usize>> = (0..n_bins)
                .map(|b| ranked(&scores.values, (0..len).filter(|&i| bins[i] == b)).into())
                .collect();
            let mut out = Vec::with_capacity(n);
            while out.len() < n {
                for q in queues.iter_mut() {
                    if out.len() == n {
                        break;
                    }
                    if let Some(i) = q.pop_front() {
                        out.push(i);
                    }
                }
            }
            out
        }
    })
}

/// Result of one acquisition round.
#[derive(Clone, Debug, Default)]
pub struct AcquisitionOutcome {
    /// New rows per member, in state-key order.
    pub rows: Vec<Vec<Row>>,
    /// Distinct states across all members' candidate pools.
    pub candidate_count: usize,
    /// Distinct states selected by any member.
    pub selected_count: usize,
    /// Oracle counter increase during the round.
    pub oracle_calls: u64,
    /// States whose oracle evaluation failed and were skipped.
    pub failures: usize,
}

/// Runs score and select once per member, then labels the union of the
/// selections through the memoizing oracle.
pub fn acquisition_round(
    window: &ExperienceWindow,
    committee: &Committee,
    member_data: &[MemberData],
    oracle: &InstrumentedOracle,
    env: &dyn Environment,
    strategy: &Strategy,
    budget: usize,
    rng: &mut SeedRng,
) -> Result<AcquisitionOutcome> {
    if window.is_empty() {
        return domain("experience window is empty");
    }
    if member_data.len() != committee.len() {
        return domain("member data does not match the committee size");
    }
    let states = window.states();
    let features = states
        .iter()
        .map(|s| env.featurize(s))
        .collect::<Result<Vec<_>>>()?;
    let keys: Vec<StateKey> = states.iter().map(|s| s.key()).collect();

    let mut chosen: BTreeMap<StateKey, (usize, Vec<usize>)> = BTreeMap::new();
    let mut pooled = std::collections::HashSet::new();
    for (member, data) in member_data.iter().enumerate() {
        let pool: Vec<usize> = (0..states.len()).filter(|&i| !data.contains(&keys[i])).collect();
        pooled.extend(pool.iter().copied());
        if pool.is_empty() {
            continue;
        }
        let pool_features: Vec<Vec<f64>> = pool.iter().map(|&i| features[i].clone()).collect();
        let scores = score_candidates(strategy, committee, &pool_features, rng)?;
        let picks = select(&scores, strategy, budget.min(pool.len()), rng)?;
        for p in picks {
            let i = pool[p];
            chosen.entry(keys[i].clone()).or_insert_with(|| (i, Vec::new())).1.push(member);
        }
    }

    let before = oracle.calls();
    let targets: Vec<(usize, Vec<usize>)> = chosen.values().cloned().collect();
    let labels: Vec<Option<Vec<f64>>> = targets
        .par_iter()
        .map(|(i, _)| oracle.evaluate(states[*i]).ok())
        .collect();
    let mut rows = vec![Vec::new(); member_data.len()];
    let mut failures = 0;
    for ((i, members), label) in targets.iter().zip(labels) {
        let Some(label) = label else {
            failures += 1;
            continue;
        };
        for &m in members {
            rows[m].push(Row {
                features: features[*i].clone(),
                label: label.clone(),
                provenance: Provenance::Acquired,
                key: Some(keys[*i].clone()),
            });
        }
    }
    Ok(AcquisitionOutcome {
        rows,
        candidate_count: pooled.len(),
        selected_count: targets.len(),
        oracle_calls: oracle.calls() - before,
        failures,
    })
}

/// CSV log of acquisition rounds.
pub struct AcquisitionLog {
    file: File,
}

impl AcquisitionLog {
    pub const HEADER: &'static str =
        "episode,strategy,candidate_count,selected_count,oracle_calls,wall_seconds";

    pub fn create(path: &Path) -> Result<Self> {
        let mut file = File::create(path)?;
        writeln!(file, "{}", Self::HEADER)?;
        Ok(Self { file })
    }

    pub fn record(&mut self, episode: usize, strategy: &str, outcome: &AcquisitionOutcome, wall_seconds: f64) -> Result<()> {
        writeln!(
            self.file,
            "{episode},{strategy},{},{},{},{wall_seconds:.6}",
            outcome.candidate_count,
            outcome.selected_count,
            outcome.oracle_calls
        )?;
        self.file.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Dense, Network};
    use crate::reward_model::{Member, Standardizer};
    use crate::rng;

    fn const_member(value: f64, dim: usize) -> Member {
        Member {
            net: Network::from_layers(vec![Dense {
                inputs: dim,
                outputs: 1,
                weights: vec![0.0; dim],
                biases: vec![value],
            }])
            .unwrap(),
            scaler: Standardizer::identity(dim, 1),
        }
    }

    fn linear_member(w: Vec<f64>) -> Member {
        let dim = w.len();
        Member {
            net: Network::from_layers(vec![Dense {
                inputs: dim,
                outputs: 1,
                weights: w,
                biases: vec![0.0],
            }])
            .unwrap(),
            scaler: Standardizer::identity(dim, 1),
        }
    }

    #[test]
    fn identical_members_give_zero_std_scores() {
        let c = Committee::from_members(vec![const_member(1.0, 2); 3]).unwrap();
        let cands = vec![vec![0.0, 1.0], vec![5.0, 2.0]];
        let s = score_candidates(&Strategy::CommitteeStd, &c, &cands, &mut rng::stream(0, 0)).unwrap();
        assert_eq!(s.values, vec![0.0, 0.0]);
        assert!(score_candidates(&Strategy::CommitteeStd, &c, &[], &mut rng::stream(0, 0)).is_err());
    }

    #[test]
    fn grad_norm_of_linear_member_is_weight_norm() {
        let c = Committee::from_members(vec![linear_member(vec![3.0, 4.0])]).unwrap();
        let cands = vec![vec![0.0, 1.0], vec![-2.0, 7.0], vec![1.0, 1.0]];
        let s = score_candidates(&Strategy::GradNorm, &c, &cands, &mut rng::stream(0, 0)).unwrap();
        for v in s.values {
            assert!((v - 5.0).abs() < 1e-12);
        }
    }

    #[test]
    fn binning_by_hand() {
        // width 0.5: 0.0 -> [0, 0.5) = bin 0; 0.5 -> [0.5, 1.0] = bin 1;
        // the maximum 1.0 is clamped into the last bin.
        assert_eq!(assign_bins(&[0.0, 0.5, 1.0], 2), vec![0, 1, 1]);
        assert_eq!(assign_bins(&[2.0, 2.0], 3), vec![0, 0]);
        assert_eq!(assign_bins(&[0.0, 0.3, 0.6, 0.9], 3), vec![0, 1, 2, 2]);
    }

    #[test]
    fn argmax_selection_and_ties() {
        let scores = Scores {
            values: vec![0.1, 0.9, 0.3],
            bins: None,
        };
        let mut r = rng::stream(0, 0);
        assert_eq!(select(&scores, &Strategy::CommitteeStd, 1, &mut r).unwrap(), vec![1]);
        let tied = Scores {
            values: vec![0.5, 0.5, 0.5],
            bins: None,
        };
        assert_eq!(select(&tied, &Strategy::GradNorm, 2, &mut r).unwrap(), vec![0, 1]);
        assert!(select(&scores, &Strategy::CommitteeStd, 4, &mut r).is_err());
    }

    #[test]
    fn full_selection_returns_every_index() {
        let scores = Scores {
            values: vec![0.4, 0.1, 0.7, 0.2],
            bins: Some(vec![0, 1, 1, 0]),
        };
        for strategy in [
            Strategy::Random,
            Strategy::CommitteeStd,
            Strategy::PredictedValue,
            Strategy::GradNorm,
            Strategy::Binned { num_bins: 2 },
        ] {
            let mut picks = select(&scores, &strategy, 4, &mut rng::stream(1, 1)).unwrap();
            picks.sort_unstable();
            assert_eq!(picks, vec![0, 1, 2, 3], "{strategy:?}");
        }
    }

    #[test]
    fn random_selection_is_seeded() {
        let scores = Scores {
            values: vec![0.0; 50],
            bins: None,
        };
        let a = select(&scores, &Strategy::Random, 10, &mut rng::stream(5, 6)).unwrap();
        let b = select(&scores, &Strategy::Random, 10, &mut rng::stream(5, 6)).unwrap();
        assert_eq!(a, b);
        let mut d = a.clone();
        d.sort_unstable();
        d.dedup();
        assert_eq!(d.len(), 10);
    }

    #[test]
    fn window_keeps_latest_distinct_states() {
        let mut w = ExperienceWindow::new(3);
        for t in [1u32, 2, 1, 3, 4] {
            w.push(&State::Tokens(vec![t]));
        }
        let got: Vec<&State> = w.states();
        assert_eq!(
            got,
            vec![&State::Tokens(vec![1]), &State::Tokens(vec![3]), &State::Tokens(vec![4])]
        );
        for t in 0..1000u32 {
            w.push(&State::Tokens(vec![t % 5]));
        }
        assert_eq!(w.len(), 3);
        assert!(w.order.len() <= 4 * 16 + 1);
    }

    #[test]
    fn acquisition_config_validation() {
        assert!(AcquisitionConfig::default().validate().is_ok());
        let bad = AcquisitionConfig {
            budget: 0,
            ..AcquisitionConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = AcquisitionConfig {
            window: 10,
            budget: 20,
            ..AcquisitionConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
