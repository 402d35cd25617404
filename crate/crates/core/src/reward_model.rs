//! The learned reward model: a committee of independently trained
//! regressors whose mean replaces the costly ground truth and whose spread
//! drives acquisition.
//!
//! Every member sees the whole initial dataset under its own seeded
//! train/validation split and, after acquisition, its own acquired rows, so
//! no two members train on the same data.

use std::collections::HashSet;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, domain, AcrlError, Result};
use crate::mdp::{Label, StateKey};
use crate::nn::{self, Network, Scratch, TrainConfig};
use crate::rng::{self, derive_seed};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Initial,
    Acquired,
}

impl Provenance {
    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::Initial => "initial",
            Provenance::Acquired => "acquired",
        }
    }
}

/// One labelled example.
#[derive(Clone, Debug, PartialEq)]
pub struct Row {
    pub features: Vec<f64>,
    pub label: Label,
    pub provenance: Provenance,
    /// Identity of the state the row was computed from, when known.
    pub key: Option<StateKey>,
}

/// Labelled rows with fixed feature and label widths.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDataset {
    feature_dim: usize,
    label_dim: usize,
    rows: Vec<Row>,
}

impl LabeledDataset {
    pub fn new(feature_dim: usize, label_dim: usize) -> Self {
        Self {
            feature_dim,
            label_dim,
            rows: Vec::new(),
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn label_dim(&self) -> usize {
        self.label_dim
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn rows(&self) -> &[Row] {
        &self.rows
    }

    pub fn check_row(&self, row: &Row) -> Result<()> {
        if row.features.len() != self.feature_dim {
            return domain(format!(
                "row has {} features, dataset has {}",
                row.features.len(),
                self.feature_dim
            ));
        }
        if row.label.len() != self.label_dim {
            return domain(format!(
                "row has {} label entries, dataset has {}",
                row.label.len(),
                self.label_dim
            ));
        }
        if row.label.iter().any(|v| !v.is_finite()) {
            return domain("labels must be finite");
        }
        Ok(())
    }

    pub fn push(&mut self, row: Row) -> Result<()> {
        self.check_row(&row)?;
        self.rows.push(row);
        Ok(())
    }

    fn columns(&self) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        self.rows
            .iter()
            .map(|r| (r.features.clone(), r.label.clone()))
            .unzip()
    }

    /// Header `f0..f{n-1}`, then `label` (or `label0..` for vector labels),
    /// then `provenance`.
    pub fn csv_header(feature_dim: usize, label_dim: usize) -> Vec<String> {
        let mut h: Vec<String> = (0..feature_dim).map(|i| format!("f{i}")).collect();
        if label_dim == 1 {
            h.push("label".into());
        } else {
            h.extend((0..label_dim).map(|i| format!("label{i}")));
        }
        h.push("provenance".into());
        h
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut reader = csv::Reader::from_path(path)?;
        let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
        let feature_dim = header.iter().filter(|h| h.starts_with('f')).count();
        let label_dim = header.iter().filter(|h| h.starts_with("label")).count();
        if header != Self::csv_header(feature_dim, label_dim) {
            return Err(AcrlError::Format {
                path: path.to_path_buf(),
                message: format!("unexpected dataset header {header:?}"),
            });
        }
        let mut data = Self::new(feature_dim, label_dim);
        for record in reader.records() {
            let record = record?;
            let parse = |i: usize| -> Result<f64> {
                record[i].parse().map_err(|_| AcrlError::Format {
                    path: path.to_path_buf(),
                    message: format!("bad number `{}`", &record[i]),
                })
            };
            let features = (0..feature_dim).map(parse).collect::<Result<_>>()?;
            let label = (feature_dim..feature_dim + label_dim).map(parse).collect::<Result<_>>()?;
            let provenance = match &record[feature_dim + label_dim] {
                "initial" => Provenance::Initial,
                "acquired" => Provenance::Acquired,
                other => {
                    return Err(AcrlError::Format {
                        path: path.to_path_buf(),
                        message: format!("unknown provenance `{other}`"),
                    })
                }
            };
            data.push(Row {
                features,
                label,
                provenance,
                key: None,
            })?;
        }
        Ok(data)
    }
}

/// Append-only CSV sink for dataset rows.
pub struct DatasetLog {
    file: std::fs::File,
}

impl DatasetLog {
    pub fn create(path: &Path, feature_dim: usize, label_dim: usize) -> Result<Self> {
        let mut file = OpenOptions::new().create(true).write(true).truncate(true).open(path)?;
        writeln!(file, "{}", LabeledDataset::csv_header(feature_dim, label_dim).join(","))?;
        Ok(Self { file })
    }

    pub fn append(&mut self, rows: &[Row]) -> Result<()> {
        for row in rows {
            let mut fields: Vec<String> = row.features.iter().map(|v| format!("{v:?}")).collect();
            fields.extend(row.label.iter().map(|v| format!("{v:?}")));
            fields.push(row.provenance.as_str().into());
            writeln!(self.file, "{}", fields.join(","))?;
        }
        self.file.flush()?;
        Ok(())
    }
}

/// Per-feature and per-output affine normalisation fitted on a member's
/// training rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub x_mean: Vec<f64>,
    pub x_scale: Vec<f64>,
    pub y_mean: Vec<f64>,
    pub y_scale: Vec<f64>,
}

fn mean_and_scale(columns: &[Vec<f64>], dim: usize) -> (Vec<f64>, Vec<f64>) {
    let n = columns.len() as f64;
    let mut mean = vec![0.0; dim];
    for c in columns {
        for (m, v) in mean.iter_mut().zip(c) {
            *m += v / n;
        }
    }
    let mut var = vec![0.0; dim];
    for c in columns {
        for ((s, v), m) in var.iter_mut().zip(c).zip(&mean) {
            *s += (v - m).powi(2) / n;
        }
    }
    let scale = var
        .into_iter()
        .zip(&mean)
        .map(|(v, m)| {
            let sd = v.sqrt();
            // Constant columns are left unscaled.
            if sd > 1e-9 * m.abs().max(1e-300) && sd > 0.0 {
                sd
            } else {
                1.0
            }
        })
        .collect();
    (mean, scale)
}

impl Standardizer {
    pub fn identity(feature_dim: usize, label_dim: usize) -> Self {
        Self {
            x_mean: vec![0.0; feature_dim],
            x_scale: vec![1.0; feature_dim],
            y_mean: vec![0.0; label_dim],
            y_scale: vec![1.0; label_dim],
        }
    }

    pub fn fit(inputs: &[Vec<f64>], targets: &[Vec<f64>]) -> Self {
        let (x_mean, x_scale) = mean_and_scale(inputs, inputs[0].len());
        let (y_mean, y_scale) = mean_and_scale(targets, targets[0].len());
        Self {
            x_mean,
            x_scale,
            y_mean,
            y_scale,
        }
    }

    pub fn scale_input_into(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(
            x.iter()
                .zip(&self.x_mean)
                .zip(&self.x_scale)
                .map(|((v, m), s)| (v - m) / s),
        );
    }

    pub fn scale_input(&self, x: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(x.len());
        self.scale_input_into(x, &mut out);
        out
    }

    pub fn scale_target(&self, y: &[f64]) -> Vec<f64> {
        y.iter()
            .zip(&self.y_mean)
            .zip(&self.y_scale)
            .map(|((v, m), s)| (v - m) / s)
            .collect()
    }

    pub fn unscale_output(&self, y: &[f64]) -> Vec<f64> {
        y.iter()
            .zip(&self.y_mean)
            .zip(&self.y_scale)
            .map(|((v, m), s)| v * s + m)
            .collect()
    }
}

/// One committee member: a network over standardised inputs and outputs.
#[derive(Clone, Debug, PartialEq)]
pub struct Member {
    pub net: Network,
    pub scaler: Standardizer,
}

impl Member {
    pub fn predict(&self, x: &[f64]) -> Result<Label> {
        let mut buf = Vec::new();
        let mut scratch = Scratch::default();
        self.predict_with(x, &mut buf, &mut scratch)
    }

    fn predict_with(&self, x: &[f64], buf: &mut Vec<f64>, scratch: &mut Scratch) -> Result<Label> {
        if x.len() != self.scaler.x_mean.len() {
            return domain(format!(
                "features have {} entries, member expects {}",
                x.len(),
                self.scaler.x_mean.len()
            ));
        }
        self.scaler.scale_input_into(x, buf);
        let out = self.net.forward_with(buf, scratch)?;
        Ok(self.scaler.unscale_output(out))
    }

    /// d output / d raw input features.
    pub fn input_gradient(&self, x: &[f64], output: usize) -> Result<Vec<f64>> {
        let g = self.net.input_gradient(&self.scaler.scale_input(x), output)?;
        Ok(g.iter()
            .zip(&self.scaler.x_scale)
            .map(|(g, s)| g * self.scaler.y_scale[output] / s)
            .collect())
    }

    /// Mean squared error in label units over `rows`.
    pub fn loss_on(&self, rows: &[Row]) -> Result<f64> {
        if rows.is_empty() {
            return domain("loss over no rows");
        }
        let mut total = 0.0;
        let mut count = 0usize;
        for r in rows {
            let p = self.predict(&r.features)?;
            for (a, b) in p.iter().zip(&r.label) {
                total += (a - b).powi(2);
                count += 1;
            }
        }
        Ok(total / count as f64)
    }
}

/// Committee mean and population standard deviation per output.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub mean: Label,
    pub std: Vec<f64>,
}

impl Prediction {
    /// Disagreement summarised over outputs.
    pub fn spread(&self) -> f64 {
        self.std.iter().sum::<f64>() / self.std.len() as f64
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Committee {
    members: Vec<Member>,
}

impl Committee {
    pub fn from_members(members: Vec<Member>) -> Result<Self> {
        if members.is_empty() {
            return domain("a committee needs at least one member");
        }
        let sizes = members[0].net.layer_sizes();
        if members.iter().any(|m| m.net.layer_sizes() != sizes) {
            return domain("committee members must share an architecture");
        }
        Ok(Self { members })
    }

    pub fn members(&self) -> &[Member] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.members[0].scaler.x_mean.len()
    }

    pub fn label_dim(&self) -> usize {
        self.members[0].net.output_dim()
    }

    pub fn member_outputs(&self, x: &[f64]) -> Result<Vec<Label>> {
        let mut buf = Vec::new();
        let mut scratch = Scratch::default();
        self.members
            .iter()
            .map(|m| m.predict_with(x, &mut buf, &mut scratch))
            .collect()
    }

    pub fn predict(&self, x: &[f64]) -> Result<Prediction> {
        let outputs = self.member_outputs(x)?;
        let k = outputs.len() as f64;
        let dim = outputs[0].len();
        let mut mean = Vec::with_capacity(dim);
        let mut std = Vec::with_capacity(dim);
        for j in 0..dim {
            // Offsets from the first member keep agreeing outputs exact.
            let d: Vec<f64> = outputs.iter().map(|o| o[j] - outputs[0][j]).collect();
            let m = d.iter().sum::<f64>() / k;
            mean.push(outputs[0][j] + m);
            std.push((d.iter().map(|v| (v - m).powi(2)).sum::<f64>() / k).sqrt());
        }
        Ok(Prediction { mean, std })
    }

    /// Mean of the members' first output.
    pub fn predict_mean(&self, x: &[f64]) -> Result<f64> {
        Ok(self.predict(x)?.mean[0])
    }

    /// Population standard deviation of member outputs, averaged over
    /// outputs.
    pub fn predict_std(&self, x: &[f64]) -> Result<f64> {
        Ok(self.predict(x)?.spread())
    }

    /// Gradient of the committee-mean first output with respect to the
    /// input features.
    pub fn mean_input_gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut acc = vec![0.0; x.len()];
        for m in &self.members {
            for (a, g) in acc.iter_mut().zip(m.input_gradient(x, 0)?) {
                *a += g;
            }
        }
        let k = self.members.len() as f64;
        Ok(acc.into_iter().map(|g| g / k).collect())
    }

    /// Writes `member_{i}.txt` (network checkpoint) and
    /// `member_{i}.scaler.json` for every member.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        for (i, m) in self.members.iter().enumerate() {
            m.net.save(&dir.join(format!("member_{i}.txt")))?;
            std::fs::write(
                dir.join(format!("member_{i}.scaler.json")),
                serde_json::to_string_pretty(&m.scaler)?,
            )?;
        }
        Ok(())
    }

    pub fn load(dir: &Path, k: usize) -> Result<Self> {
        let members = (0..k)
            .map(|i| {
                let net = Network::load(&dir.join(format!("member_{i}.txt")))?;
                let scaler: Standardizer = serde_json::from_str(&std::fs::read_to_string(
                    dir.join(format!("member_{i}.scaler.json")),
                )?)?;
                Ok(Member { net, scaler })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_members(members)
    }
}

/// Committee architecture and training schedule.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CommitteeConfig {
    pub k: usize,
    pub hidden: Vec<usize>,
    /// Fraction of the initial dataset in each member's train split.
    pub split_fraction: f64,
    pub train: TrainConfig,
    /// Retrain from fresh weights (default) or fine-tune existing members.
    pub from_scratch: bool,
    /// Mini-batch updates per fine-tuning pass.
    pub finetune_steps: usize,
}

impl Default for CommitteeConfig {
    fn default() -> Self {
        Self {
            k: 3,
            hidden: vec![32, 32],
            split_fraction: 0.8,
            train: TrainConfig::default(),
            from_scratch: true,
            finetune_steps: 50,
        }
    }
}

impl CommitteeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return config_err("reward_model.k", "needs at least one member");
        }
        if !(self.split_fraction > 0.0 && self.split_fraction <= 1.0) {
            return config_err("reward_model.split_fraction", "must lie in (0, 1]");
        }
        if self.hidden.contains(&0) {
            return config_err("reward_model.hidden", "layer widths must be positive");
        }
        if self.train.batch_size == 0 {
            return config_err("reward_model.train.batch_size", "must be positive");
        }
        if !(self.train.lr.is_finite() && self.train.lr > 0.0) {
            return config_err("reward_model.train.lr", "must be positive");
        }
        Ok(())
    }
}

/// A member's private training data.
#[derive(Clone, Debug, PartialEq)]
pub struct MemberData {
    pub train: LabeledDataset,
    pub validation: LabeledDataset,
    keys: HashSet<StateKey>,
}

impl MemberData {
    pub fn contains(&self, key: &StateKey) -> bool {
        self.keys.contains(key)
    }

    pub fn acquired(&self) -> impl Iterator<Item = &Row> {
        self.train.rows().iter().filter(|r| r.provenance == Provenance::Acquired)
    }
}

/// Trains one member from fresh weights on `data`.
pub fn train_member(data: &LabeledDataset, config: &CommitteeConfig, seed: u64) -> Result<Member> {
    if data.is_empty() {
        return domain("member training set is empty");
    }
    let (xs, ys) = data.columns();
    let scaler = Standardizer::fit(&xs, &ys);
    let xs: Vec<Vec<f64>> = xs.iter().map(|x| scaler.scale_input(x)).collect();
    let ys: Vec<Vec<f64>> = ys.iter().map(|y| scaler.scale_target(y)).collect();
    let mut sizes = vec![data.feature_dim()];
    sizes.extend(&config.hidden);
    sizes.push(data.label_dim());
    let net = Network::new(&sizes, derive_seed(seed, 0x1417))?;
    let (net, _) = nn::train(net, &xs, &ys, &config.train, derive_seed(seed, 0x7a1))?;
    Ok(Member { net, scaler })
}

fn finetune_member(member: &Member, data: &LabeledDataset, config: &CommitteeConfig, seed: u64) -> Result<Member> {
    if data.is_empty() {
        return domain("member training set is empty");
    }
    let scaler = &member.scaler;
    let rows = data.rows();
    let mut net = member.net.clone();
    nn::train_steps(
        &mut net,
        rows.len(),
        |i| (scaler.scale_input(&rows[i].features), scaler.scale_target(&rows[i].label)),
        config.finetune_steps,
        &config.train,
        derive_seed(seed, 0xf17e),
    )?;
    Ok(Member {
        net,
        scaler: scaler.clone(),
    })
}

fn member_seed(seed: u64, member: usize) -> u64 {
    derive_seed(seed, 0xc0de + member as u64)
}

/// Splits `dataset` once per member under distinct seeds and trains every
/// member on its own train split.
pub fn build_committee(
    dataset: &LabeledDataset,
    config: &CommitteeConfig,
    seed: u64,
) -> Result<(Committee, Vec<MemberData>)> {
    config.validate()?;
    if dataset.is_empty() {
        return domain("cannot build a committee from an empty dataset");
    }
    let n = dataset.len();
    let n_train = ((config.split_fraction * n as f64).ceil() as usize).clamp(1, n);
    let data: Vec<MemberData> = (0..config.k)
        .map(|i| {
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut rng::stream(member_seed(seed, i), 0x5917));
            let mut train_idx = order[..n_train].to_vec();
            let mut val_idx = order[n_train..].to_vec();
            train_idx.sort_unstable();
            val_idx.sort_unstable();
            let pick = |idx: &[usize]| {
                let mut d = LabeledDataset::new(dataset.feature_dim(), dataset.label_dim());
                d.rows = idx.iter().map(|&j| dataset.rows[j].clone()).collect();
                d
            };
            let keys = dataset.rows.iter().filter_map(|r| r.key.clone()).collect();
            MemberData {
                train: pick(&train_idx),
                validation: pick(&val_idx),
                keys,
            }
        })
        .collect();
    let committee = retrain_from_scratch(&data, config, seed)?;
    Ok((committee, data))
}

fn retrain_from_scratch(data: &[MemberData], config: &CommitteeConfig, seed: u64) -> Result<Committee> {
    let members = data
        .par_iter()
        .enumerate()
        .map(|(i, d)| train_member(&d.train, config, member_seed(seed, i)))
        .collect::<Result<Vec<_>>>()?;
    Committee::from_members(members)
}

/// Extends each member's train split with the rows selected for it.
/// Rows whose state the member already holds are skipped. Returns the
/// number of rows added per member.
pub fn append_acquired(data: &mut [MemberData], rows: Vec<Vec<Row>>) -> Result<Vec<usize>> {
    if rows.len() != data.len() {
        return domain(format!("{} row sets for {} members", rows.len(), data.len()));
    }
    for (d, set) in data.iter().zip(&rows) {
        for r in set {
            d.train.check_row(r)?;
            if r.provenance != Provenance::Acquired {
                return domain("appended rows must carry the acquired provenance");
            }
        }
    }
    let mut added = Vec::with_capacity(data.len());
    for (d, set) in data.iter_mut().zip(rows) {
        let mut count = 0;
        for r in set {
            if let Some(k) = &r.key {
                if !d.keys.insert(k.clone()) {
                    continue;
                }
            }
            d.train.rows.push(r);
            count += 1;
        }
        added.push(count);
    }
    Ok(added)
}

/// Retrains every member on its current data: from scratch with the same
/// per-member seeds as [`build_committee`], or by fine-tuning `current`.
pub fn retrain(
    current: &Committee,
    data: &[MemberData],
    config: &CommitteeConfig,
    seed: u64,
) -> Result<Committee> {
    if data.len() != current.len() {
        return domain("member data does not match the committee size");
    }
    if data.iter().any(|d| d.train.is_empty()) {
        return domain("a member's training set is empty");
    }
    if config.from_scratch {
        retrain_from_scratch(data, config, seed)
    } else {
        let members = current
            .members
            .par_iter()
            .zip(data.par_iter())
            .enumerate()
            .map(|(i, (m, d))| finetune_member(m, &d.train, config, member_seed(seed, i)))
            .collect::<Result<Vec<_>>>()?;
        Committee::from_members(members)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Dense;
    use rand::Rng;

    fn linear_member(w: Vec<f64>, b: f64) -> Member {
        let dim = w.len();
        Member {
            net: Network::from_layers(vec![Dense {
                inputs: dim,
                outputs: 1,
                weights: w,
                biases: vec![b],
            }])
            .unwrap(),
            scaler: Standardizer::identity(dim, 1),
        }
    }

    fn toy_dataset(n: usize, seed: u64) -> LabeledDataset {
        let mut r = rng::stream(seed, 0);
        let mut d = LabeledDataset::new(2, 1);
        for i in 0..n {
            let x = vec![r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0)];
            let y = vec![x[0] * 2.0 - x[1] + 0.5 * x[0] * x[1]];
            d.push(Row {
                features: x,
                label: y,
                provenance: Provenance::Initial,
                key: Some(crate::mdp::State::Tokens(vec![i as u32]).key()),
            })
            .unwrap();
        }
        d
    }

    fn small_config(k: usize) -> CommitteeConfig {
        CommitteeConfig {
            k,
            hidden: vec![8],
            train: TrainConfig {
                epochs: 20,
                batch_size: 16,
                lr: 3e-3,
            },
            ..CommitteeConfig::default()
        }
    }

    #[test]
    fn mean_and_std_of_fixed_outputs() {
        let c = Committee::from_members(vec![
            linear_member(vec![0.0], 1.0),
            linear_member(vec![0.0], 2.0),
            linear_member(vec![0.0], 3.0),
        ])
        .unwrap();
        assert_eq!(c.predict_mean(&[5.0]).unwrap(), 2.0);
        let std = c.predict_std(&[5.0]).unwrap();
        assert!((std - (2.0f64 / 3.0).sqrt()).abs() < 1e-12);
        assert!(c.predict_mean(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn identical_members_agree() {
        let m = linear_member(vec![1.5, -0.5], 0.25);
        let c = Committee::from_members(vec![m.clone(), m.clone(), m.clone()]).unwrap();
        let x = [0.3, 0.9];
        assert_eq!(c.predict_std(&x).unwrap(), 0.0);
        assert_eq!(c.predict_mean(&x).unwrap(), m.predict(&x).unwrap()[0]);
    }

    #[test]
    fn std_is_translation_invariant() {
        let members = vec![
            linear_member(vec![1.0], 0.0),
            linear_member(vec![2.0], 0.5),
            linear_member(vec![-1.0], 0.1),
        ];
        let shifted: Vec<Member> = members
            .iter()
            .map(|m| {
                let mut m = m.clone();
                m.scaler.y_mean[0] += 7.0;
                m
            })
            .collect();
        let a = Committee::from_members(members).unwrap();
        let b = Committee::from_members(shifted).unwrap();
        let x = [0.7];
        assert!((a.predict_std(&x).unwrap() - b.predict_std(&x).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn build_three_distinct_members_deterministically() {
        let data = toy_dataset(60, 1);
        let (c, splits) = build_committee(&data, &small_config(3), 5).unwrap();
        assert_eq!(c.len(), 3);
        assert_eq!(splits.len(), 3);
        assert_ne!(c.members[0].net, c.members[1].net);
        assert_ne!(c.members[1].net, c.members[2].net);
        assert_ne!(splits[0].train, splits[1].train);
        assert_eq!(splits[0].train.len(), 48);
        assert_eq!(splits[0].validation.len(), 12);
        let (c2, _) = build_committee(&data, &small_config(3), 5).unwrap();
        assert_eq!(c, c2);
    }

    #[test]
    fn degenerate_committee_is_a_single_net() {
        let data = toy_dataset(30, 2);
        let cfg = CommitteeConfig {
            split_fraction: 1.0,
            ..small_config(1)
        };
        let (c, splits) = build_committee(&data, &cfg, 9).unwrap();
        assert_eq!(splits[0].train, data);
        let single = train_member(&data, &cfg, member_seed(9, 0)).unwrap();
        assert_eq!(c.members[0], single);
        let x = [0.1, -0.4];
        assert_eq!(c.predict_mean(&x).unwrap(), single.predict(&x).unwrap()[0]);
    }

    #[test]
    fn build_rejects_bad_inputs() {
        let empty = LabeledDataset::new(2, 1);
        assert!(build_committee(&empty, &small_config(3), 0).is_err());
        let data = toy_dataset(10, 0);
        assert!(build_committee(&data, &small_config(0), 0).is_err());
        let cfg = CommitteeConfig {
            split_fraction: 0.0,
            ..small_config(2)
        };
        assert!(build_committee(&data, &cfg, 0).is_err());
    }

    fn acquired(x: f64, key: u32) -> Row {
        Row {
            features: vec![x, x],
            label: vec![x],
            provenance: Provenance::Acquired,
            key: Some(crate::mdp::State::Tokens(vec![1000 + key]).key()),
        }
    }

    #[test]
    fn append_is_isolated_per_member() {
        let data = toy_dataset(20, 3);
        let (_, mut splits) = build_committee(&data, &small_config(3), 1).unwrap();
        let before: Vec<usize> = splits.iter().map(|s| s.train.len()).collect();
        append_acquired(&mut splits, vec![vec![], vec![], vec![]]).unwrap();
        assert_eq!(before, splits.iter().map(|s| s.train.len()).collect::<Vec<_>>());

        let added = append_acquired(
            &mut splits,
            vec![vec![], vec![acquired(0.1, 0), acquired(0.2, 1)], vec![]],
        )
        .unwrap();
        assert_eq!(added, vec![0, 2, 0]);
        assert_eq!(splits[1].train.len(), before[1] + 2);
        assert_eq!(splits[0].train.len(), before[0]);
        // Re-appending the same states adds nothing.
        let added = append_acquired(&mut splits, vec![vec![], vec![acquired(0.1, 0)], vec![]]).unwrap();
        assert_eq!(added, vec![0, 0, 0]);

        let rows: Vec<Row> = (0..400).map(|i| acquired(i as f64 / 400.0, 10 + i)).collect();
        let before: Vec<usize> = splits.iter().map(|s| s.train.len()).collect();
        append_acquired(&mut splits, vec![rows.clone(), rows.clone(), rows]).unwrap();
        for (s, b) in splits.iter().zip(before) {
            assert_eq!(s.train.len(), b + 400);
        }
    }

    #[test]
    fn append_rejects_wrong_dimension_or_provenance() {
        let data = toy_dataset(10, 3);
        let (_, mut splits) = build_committee(&data, &small_config(1), 1).unwrap();
        let mut bad = acquired(0.1, 0);
        bad.features.push(1.0);
        assert!(append_acquired(&mut splits, vec![vec![bad]]).is_err());
        let mut initial = acquired(0.1, 0);
        initial.provenance = Provenance::Initial;
        assert!(append_acquired(&mut splits, vec![vec![initial]]).is_err());
    }

    #[test]
    fn retrain_without_new_rows_matches_fresh_build() {
        let data = toy_dataset(40, 4);
        let cfg = small_config(3);
        let (c, splits) = build_committee(&data, &cfg, 77).unwrap();
        let again = retrain(&c, &splits, &cfg, 77).unwrap();
        assert_eq!(c, again);
    }

    #[test]
    fn fine_tuning_changes_members_deterministically() {
        let data = toy_dataset(40, 4);
        let cfg = CommitteeConfig {
            from_scratch: false,
            ..small_config(2)
        };
        let (c, splits) = build_committee(&data, &cfg, 3).unwrap();
        let a = retrain(&c, &splits, &cfg, 4).unwrap();
        let b = retrain(&c, &splits, &cfg, 4).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn member_order_does_not_change_predictions() {
        let data = toy_dataset(30, 5);
        let (c, _) = build_committee(&data, &small_config(3), 2).unwrap();
        let mut rev = c.members.clone();
        rev.reverse();
        let r = Committee::from_members(rev).unwrap();
        let x = [0.2, 0.4];
        assert!((c.predict_mean(&x).unwrap() - r.predict_mean(&x).unwrap()).abs() < 1e-12);
        assert!((c.predict_std(&x).unwrap() - r.predict_std(&x).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn standardised_gradient_uses_chain_rule() {
        let mut m = linear_member(vec![2.0, -1.0], 0.0);
        m.scaler.x_scale = vec![4.0, 0.5];
        m.scaler.y_scale = vec![3.0];
        assert_eq!(m.input_gradient(&[1.0, 1.0], 0).unwrap(), vec![1.5, -6.0]);
    }

    #[test]
    fn dataset_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        let data = toy_dataset(5, 6);
        let mut log = DatasetLog::create(&path, 2, 1).unwrap();
        log.append(data.rows()).unwrap();
        log.append(&[acquired(0.5, 1)]).unwrap();
        let back = LabeledDataset::read_csv(&path).unwrap();
        assert_eq!(back.len(), 6);
        assert_eq!(back.rows()[5].provenance, Provenance::Acquired);
        assert_eq!(back.rows()[2].features, data.rows()[2].features);
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("f0,f1,label,provenance\n"));
    }

    #[test]
    fn committee_checkpoint_round_trip() {
        let data = toy_dataset(20, 7);
        let (c, _) = build_committee(&data, &small_config(2), 8).unwrap();
        let dir = tempfile::tempdir().unwrap();
        c.save(dir.path()).unwrap();
        assert_eq!(Committee::load(dir.path(), 2).unwrap(), c);
    }
}
