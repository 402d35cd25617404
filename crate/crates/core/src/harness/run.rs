use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::Rng;

use super::config::{ExperimentConfig, Mode};
use crate::active::{acquisition_round, AcquisitionLog, ExperienceWindow};
use crate::agent::{select_action, Learner, QFunction, ReplayBuffer, StateEncoder};
use crate::envs::{true_episode_value, Environment, InstrumentedOracle, Objective};
use crate::error::{domain, Result};
use crate::mdp::{Label, State, StateKey, Transition};
use crate::reward_model::{
    append_acquired, build_committee, retrain, Committee, DatasetLog, LabeledDataset, MemberData, Provenance, Row,
};
use crate::rng::{self, derive_seed, streams};
use crate::AcrlError;

/// Column order of `metrics.csv`.
pub const METRICS_HEADER: [&str; 9] = [
    "episode",
    "episode_return",
    "model_reward",
    "spot_check",
    "epsilon",
    "oracle_queries",
    "model_queries",
    "buffer_size",
    "retrained",
];

/// One row of `metrics.csv`. `episode_return` is the ground-truth return of
/// the episode, computed outside the query counter; `model_reward` is the
/// return under the committee's rewards.
#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeRow {
    pub episode: usize,
    pub episode_return: f64,
    pub model_reward: Option<f64>,
    pub spot_check: Option<f64>,
    pub epsilon: f64,
    pub oracle_queries: u64,
    pub model_queries: u64,
    pub buffer_size: usize,
    pub retrained: bool,
}

impl EpisodeRow {
    fn fields(&self) -> [String; 9] {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        [
            self.episode.to_string(),
            self.episode_return.to_string(),
            opt(self.model_reward),
            opt(self.spot_check),
            self.epsilon.to_string(),
            self.oracle_queries.to_string(),
            self.model_queries.to_string(),
            self.buffer_size.to_string(),
            u8::from(self.retrained).to_string(),
        ]
    }
}

/// Everything a finished run reports back to the caller.
#[derive(Clone, Debug, Default)]
pub struct RunOutcome {
    pub rows: Vec<EpisodeRow>,
    /// Start and final state of every episode.
    pub starts: Vec<State>,
    pub ends: Vec<State>,
    pub oracle_queries: u64,
    pub model_queries: u64,
    pub initial_keys: BTreeSet<StateKey>,
    pub acquired_keys: BTreeSet<StateKey>,
    pub spot_check_keys: BTreeSet<StateKey>,
    /// Oracle counter increase of every acquisition or full-update round.
    pub round_calls: Vec<u64>,
    pub retrain_episodes: Vec<usize>,
    pub committee: Option<Committee>,
    pub q: Option<QFunction>,
}

struct Outputs {
    dir: PathBuf,
    metrics: csv::Writer<File>,
    acquisitions: Option<AcquisitionLog>,
    dataset: Option<DatasetLog>,
}

impl Outputs {
    fn create(dir: &Path, config: &ExperimentConfig, env: &dyn Environment) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("config.json"), config.to_json()? + "\n")?;
        let mut metrics = csv::Writer::from_path(dir.join("metrics.csv"))?;
        metrics.write_record(METRICS_HEADER)?;
        metrics.flush()?;
        let acquisitions = match config.mode {
            Mode::Acrl | Mode::FullUpdate => Some(AcquisitionLog::create(&dir.join("acquisitions.csv"))?),
            _ => None,
        };
        let dataset = match config.mode {
            Mode::Oracle => None,
            _ => Some(DatasetLog::create(&dir.join("dataset.csv"), env.feature_dim(), env.label_dim())?),
        };
        Ok(Self {
            dir: dir.to_path_buf(),
            metrics,
            acquisitions,
            dataset,
        })
    }

    fn row(&mut self, row: &EpisodeRow) -> Result<()> {
        self.metrics.write_record(row.fields())?;
        self.metrics.flush()?;
        Ok(())
    }

    fn diagnostic(&self, episode: usize, err: &AcrlError) -> Result<()> {
        let mut f = File::create(self.dir.join("diagnostic.json"))?;
        let body = serde_json::json!({"episode": episode, "error": err.to_string()});
        writeln!(f, "{}", serde_json::to_string_pretty(&body)?)?;
        Ok(())
    }
}

/// Reward source for one run.
enum Labeler {
    Oracle,
    Model {
        committee: Committee,
        data: Vec<MemberData>,
    },
}

/// Draws up to `size` distinct states from the dataset distribution and
/// labels them through the counted oracle.
fn initial_dataset(
    env: &dyn Environment,
    oracle: &InstrumentedOracle,
    size: usize,
    seed: u64,
) -> Result<LabeledDataset> {
    let mut rng = rng::stream(seed, streams::DATASET);
    let mut seen = BTreeSet::new();
    let mut states = Vec::new();
    let mut attempts = 0;
    while states.len() < size && attempts < 50 * size {
        attempts += 1;
        let s = env.sample_dataset_state(&mut rng)?;
        if seen.insert(s.key()) {
            states.push(s);
        }
    }
    if states.len() < size {
        log::warn!("initial dataset holds {} distinct states, {} requested", states.len(), size);
    }
    let mut data = LabeledDataset::new(env.feature_dim(), env.label_dim());
    for s in states {
        match oracle.evaluate(&s) {
            Ok(label) => data.push(Row {
                features: env.featurize(&s)?,
                label,
                provenance: Provenance::Initial,
                key: Some(s.key()),
            })?,
            Err(e) => log::warn!("skipping initial state: {e}"),
        }
    }
    Ok(data)
}

fn model_label(committee: &Committee, env: &dyn Environment, state: &State) -> Result<Label> {
    let mean = committee.predict(&env.featurize(state)?)?.mean;
    if mean.iter().all(|v| v.is_finite()) {
        Ok(mean)
    } else {
        Err(AcrlError::Divergence(format!("reward model output {mean:?} on {state}")))
    }
}

/// Runs one experiment. Outputs go to `out` when given. The run is
/// deterministic in the configuration.
pub fn run_experiment(config: &ExperimentConfig, out: Option<&Path>) -> Result<RunOutcome> {
    config.validate()?;
    let env_config = config.env_config();
    let env = env_config.build()?;
    let mut outputs = out.map(|d| Outputs::create(d, config, env.as_ref())).transpose()?;
    let mut episode = 0;
    let result = run_inner(config, env, &env_config, outputs.as_mut(), &mut episode);
    if let (Err(e), Some(o)) = (&result, &outputs) {
        if matches!(e, AcrlError::Divergence(_)) {
            o.diagnostic(episode, e)?;
        }
    }
    result
}

fn run_inner(
    config: &ExperimentConfig,
    env: Arc<dyn Environment>,
    env_config: &crate::envs::EnvConfig,
    mut outputs: Option<&mut Outputs>,
    current_episode: &mut usize,
) -> Result<RunOutcome> {
    let run_seed = config.seeds.run;
    let model_seed = config.seeds.model;
    let objective: Arc<dyn Objective> = env.clone();
    let oracle = InstrumentedOracle::with_latency(objective, Duration::from_millis(env_config.latency_ms()));
    let mut outcome = RunOutcome::default();

    let mut labeler = if config.mode == Mode::Oracle {
        Labeler::Oracle
    } else {
        let rm = &config.reward_model;
        let dataset = initial_dataset(env.as_ref(), &oracle, rm.initial_size, model_seed)?;
        if dataset.len() < rm.committee.k {
            return domain("too few labelled initial states for the committee");
        }
        outcome.initial_keys = dataset.rows().iter().filter_map(|r| r.key.clone()).collect();
        if let Some(o) = outputs.as_deref_mut() {
            if let Some(log) = o.dataset.as_mut() {
                log.append(dataset.rows())?;
            }
        }
        let (committee, data) = build_committee(&dataset, &rm.committee, model_seed)?;
        Labeler::Model { committee, data }
    };

    let agent = &config.agent;
    let encoder = StateEncoder::calibrate(
        env.clone(),
        agent.calibration_episodes,
        &mut rng::stream(run_seed, streams::CALIBRATION),
    )?;
    let q = QFunction::new(
        encoder.input_dim(),
        &agent.hidden,
        agent.gamma,
        derive_seed(run_seed, streams::Q_INIT),
    )?;
    let mut learner = Learner::new(q, agent.lr, agent.sync_every);
    let mut buffer = ReplayBuffer::new(agent.buffer_capacity)?;
    let schedule = agent.epsilon.schedule()?;
    let acquisition = config.reward_model.acquisition.clone();
    let mut window = ExperienceWindow::new(match (&config.mode, &acquisition) {
        (Mode::Acrl, Some(a)) => a.window,
        _ => 0,
    });
    let mut finetune = config.reward_model.committee.clone();
    finetune.from_scratch = false;

    let mut env_rng = rng::stream(run_seed, streams::ENV);
    let mut policy_rng = rng::stream(run_seed, streams::POLICY);
    let mut replay_rng = rng::stream(run_seed, streams::REPLAY);
    let mut acq_rng = rng::stream(run_seed, streams::ACQUISITION);
    let mut spot_rng = rng::stream(run_seed, streams::SPOT_CHECK);

    let horizon = env.horizon();
    let mode = env.reward_mode();
    let mut model_queries = 0u64;
    let mut total_steps = 0usize;

    for e in 1..=config.episodes {
        *current_episode = e;
        let epsilon = schedule.epsilon_at(e - 1);
        let s0 = env.reset(&mut env_rng)?;
        let start = Arc::new(s0.clone());
        let mut label = |s: &State| -> Result<Label> {
            match &labeler {
                Labeler::Oracle => oracle.evaluate(s),
                Labeler::Model { committee, .. } => {
                    model_queries += 1;
                    model_label(committee, env.as_ref(), s)
                }
            }
        };
        let l0 = label(&s0)?;
        let mut prev = l0.clone();
        let mut s = s0.clone();
        let mut visited = vec![s0.clone()];
        window.push(&s0);
        let mut reward_sum = 0.0;
        for step in 1..=horizon {
            let (mut succ, inputs) = encoder.successors(&s, &start, step - 1)?;
            let idx = select_action(&learner.q, &inputs, epsilon, &mut policy_rng)?;
            let (action, next) = succ.swap_remove(idx);
            let l_next = label(&next)?;
            let r = mode.step_reward(&prev, &l_next, &l0).map_err(|err| match &labeler {
                Labeler::Model { .. } => AcrlError::Divergence(err.to_string()),
                Labeler::Oracle => err,
            })?;
            reward_sum += r;
            buffer.push(Transition::new(s, action, r, next.clone(), step, horizon, start.clone())?);
            total_steps += 1;
            if total_steps.is_multiple_of(agent.train_every) {
                learner.train(&buffer, agent.batch_size, &mut replay_rng, &encoder)?;
            }
            window.push(&next);
            visited.push(next.clone());
            s = next;
            prev = l_next;
        }
        let episode_return = true_episode_value(env.as_ref(), &s0, &s)?;

        let mut spot_check = None;
        if config.spot_check_every > 0 && e % config.spot_check_every == 0 {
            let pick = &visited[spot_rng.gen_range(0..visited.len())];
            match oracle.evaluate(pick) {
                Ok(l) => {
                    spot_check = Some(l[0]);
                    outcome.spot_check_keys.insert(pick.key());
                }
                Err(err) => log::warn!("spot check skipped: {err}"),
            }
        }

        let mut retrained = false;
        if let Labeler::Model { committee, data } = &mut labeler {
            let due = match (config.mode, &acquisition) {
                (Mode::Acrl, Some(a)) => e % a.every == 0,
                (Mode::FullUpdate, _) => true,
                _ => false,
            };
            if due {
                let clock = Instant::now();
                let before = oracle.calls();
                let (rows, candidates, selected) = if config.mode == Mode::Acrl {
                    let a = acquisition.as_ref().expect("acrl mode carries an acquisition block");
                    let round = acquisition_round(
                        &window,
                        committee,
                        data,
                        &oracle,
                        env.as_ref(),
                        &a.strategy,
                        a.budget,
                        &mut acq_rng,
                    )?;
                    (round.rows, round.candidate_count, round.selected_count)
                } else {
                    let rows = label_visited(env.as_ref(), &oracle, &data[0], &visited)?;
                    let n = rows.len();
                    (vec![rows; data.len()], visited.len(), n)
                };
                let mut distinct: BTreeMap<StateKey, Row> = BTreeMap::new();
                for r in rows.iter().flatten() {
                    if let Some(k) = &r.key {
                        if !outcome.acquired_keys.contains(k) {
                            distinct.entry(k.clone()).or_insert_with(|| r.clone());
                        }
                    }
                }
                append_acquired(data, rows)?;
                let calls = oracle.calls() - before;
                outcome.round_calls.push(calls);
                outcome.acquired_keys.extend(distinct.keys().cloned());
                let cfg = if config.mode == Mode::Acrl {
                    &config.reward_model.committee
                } else {
                    &finetune
                };
                *committee = retrain(committee, data, cfg, derive_seed(model_seed, e as u64))?;
                retrained = true;
                outcome.retrain_episodes.push(e);
                if let Some(o) = outputs.as_deref_mut() {
                    let rows: Vec<Row> = distinct.into_values().collect();
                    if let Some(log) = o.dataset.as_mut() {
                        log.append(&rows)?;
                    }
                    if let Some(log) = o.acquisitions.as_mut() {
                        let summary = crate::active::AcquisitionOutcome {
                            rows: Vec::new(),
                            candidate_count: candidates,
                            selected_count: selected,
                            oracle_calls: calls,
                            failures: 0,
                        };
                        let name = match (config.mode, &acquisition) {
                            (Mode::Acrl, Some(a)) => a.strategy.name(),
                            _ => "all_visited",
                        };
                        log.record(e, name, &summary, clock.elapsed().as_secs_f64())?;
                    }
                }
            }
        }

        let row = EpisodeRow {
            episode: e,
            episode_return,
            model_reward: match labeler {
                Labeler::Oracle => None,
                Labeler::Model { .. } => Some(reward_sum),
            },
            spot_check,
            epsilon,
            oracle_queries: oracle.calls(),
            model_queries,
            buffer_size: buffer.len(),
            retrained,
        };
        if let Some(o) = outputs.as_deref_mut() {
            o.row(&row)?;
        }
        outcome.rows.push(row);
        outcome.starts.push(s0);
        outcome.ends.push(s);
    }

    if let Some(o) = outputs {
        learner.q.save(&o.dir.join("checkpoints"))?;
        if let Labeler::Model { committee, .. } = &labeler {
            committee.save(&o.dir.join("checkpoints").join("committee"))?;
        }
    }
    outcome.oracle_queries = oracle.calls();
    outcome.model_queries = model_queries;
    outcome.q = Some(learner.q);
    if let Labeler::Model { committee, .. } = labeler {
        outcome.committee = Some(committee);
    }
    Ok(outcome)
}

/// Oracle labels for the distinct visited states a member does not hold,
/// in state-key order. Failed evaluations are skipped.
fn label_visited(
    env: &dyn Environment,
    oracle: &InstrumentedOracle,
    held: &MemberData,
    visited: &[State],
) -> Result<Vec<Row>> {
    let mut fresh: BTreeMap<StateKey, &State> = BTreeMap::new();
    for s in visited {
        let k = s.key();
        if !held.contains(&k) {
            fresh.entry(k).or_insert(s);
        }
    }
    let mut rows = Vec::with_capacity(fresh.len());
    for (k, s) in fresh {
        match oracle.evaluate(s) {
            Ok(label) => rows.push(Row {
                features: env.featurize(s)?,
                label,
                provenance: Provenance::Acquired,
                key: Some(k),
            }),
            Err(e) => log::warn!("skipping visited state: {e}"),
        }
    }
    Ok(rows)
}
