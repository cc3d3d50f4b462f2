//! Federated experiment engine.
//!
//! The pooled dataset is shuffled and cut into equal per-sensor shards. Each
//! sensor's training rows are revealed one batch per round. In every round
//! each sensor trains its federated model and its shadow model on the same
//! batch; the federated models are then replaced by their element-wise mean
//! while the shadow models never leave the sensor.
//!
//! A faulty sensor relabels every batch with fair coin flips before training,
//! which poisons both of its models.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::detect::{self, EnergyThreshold};
use crate::featex::{FeatureRow, Normalization};
use crate::learn::{self, CoefVector, Example, ModelKind, ModelShape, TrainConfig};
use crate::rng::{self, tag};
use crate::{par, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FedConfig {
    pub n_sensors: usize,
    pub n_rounds: usize,
    pub faulty_ids: BTreeSet<usize>,
    pub shuffle_seed: u64,
    pub train_fraction: f64,
    /// Flag threshold in MADs above the median coefficient distance.
    pub outlier_z: f64,
    /// Drop flagged sensors from the average. Off by default: flags are
    /// reported only.
    pub exclude_outliers: bool,
    pub train: TrainConfig,
    pub shape: ModelShape,
    /// Hidden width of the centralized MLP reference.
    pub reference_hidden: usize,
    pub pfa: f64,
}

impl Default for FedConfig {
    fn default() -> Self {
        FedConfig {
            n_sensors: 5,
            n_rounds: 20,
            faulty_ids: BTreeSet::new(),
            shuffle_seed: 0,
            train_fraction: 0.8,
            outlier_z: 7.0,
            exclude_outliers: false,
            train: TrainConfig::default(),
            shape: ModelShape::logistic(3),
            reference_hidden: 4,
            pfa: 0.01,
        }
    }
}

impl FedConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.n_sensors == 0 {
            return bad("n_sensors must be at least 1".into());
        }
        if self.n_rounds == 0 {
            return bad("n_rounds must be at least 1".into());
        }
        if let Some(id) = self.faulty_ids.iter().find(|&&id| id >= self.n_sensors) {
            return bad(format!(
                "faulty sensor id {id} out of range for {} sensors",
                self.n_sensors
            ));
        }
        if self.faulty_ids.len() >= self.n_sensors {
            return bad("at least one sensor must be healthy".into());
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return bad("train_fraction must be in (0, 1)".into());
        }
        if !(self.outlier_z > 0.0) {
            return bad("outlier_z must be positive".into());
        }
        if self.reference_hidden == 0 {
            return bad("reference_hidden must be at least 1".into());
        }
        self.shape.validate()?;
        self.train.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensorState {
    pub sensor_id: usize,
    pub train_rows: Vec<FeatureRow>,
    pub test_rows: Vec<FeatureRow>,
    /// Filled by [`SensorState::prepare`]; batch `r` is consumed in round `r`.
    pub batches: Vec<Vec<Example>>,
    pub batch_cursor: usize,
    pub fed_model: CoefVector,
    pub shadow_model: CoefVector,
    pub faulty: bool,
}

impl SensorState {
    /// Normalize the shard and cut its training rows into round batches.
    pub fn prepare(&mut self, stats: &Normalization, n_rounds: usize) -> Result<()> {
        self.train_rows = stats.apply(&self.train_rows);
        self.test_rows = stats.apply(&self.test_rows);
        self.batches = make_batches(self, n_rounds)?
            .iter()
            .map(|b| learn::examples(b))
            .collect();
        self.batch_cursor = 0;
        Ok(())
    }

    pub fn rows(&self) -> impl Iterator<Item = &FeatureRow> {
        self.train_rows.iter().chain(&self.test_rows)
    }
}

/// Stratified train/test split with an exact rounded train total,
/// keeping the shuffled order inside each side.
pub fn stratified_split(rows: &[FeatureRow], fraction: f64) -> (Vec<FeatureRow>, Vec<FeatureRow>) {
    let counts = [
        rows.iter().filter(|r| r.label == 0).count(),
        rows.iter().filter(|r| r.label == 1).count(),
    ];
    let total_train = (rows.len() as f64 * fraction).round() as usize;
    let exact = counts.map(|c| c as f64 * fraction);
    let mut quota = exact.map(|e| e.floor() as usize);
    let mut missing = total_train.saturating_sub(quota[0] + quota[1]);
    let mut by_remainder = [0usize, 1];
    by_remainder.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())));
    for &l in by_remainder.iter().cycle().take(4) {
        if missing == 0 {
            break;
        }
        if quota[l] < counts[l] {
            quota[l] += 1;
            missing -= 1;
        }
    }
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for r in rows {
        let l = r.label as usize;
        if quota[l] > 0 {
            quota[l] -= 1;
            train.push(*r);
        } else {
            test.push(*r);
        }
    }
    (train, test)
}

/// Shuffle, cut into `n_sensors` equal shards (remainder dropped) and split
/// each shard stratified-by-label into train and test rows.
pub fn partition_sensors(rows: &[FeatureRow], config: &FedConfig) -> Result<Vec<SensorState>> {
    config.validate()?;
    let needed = config.n_sensors * 10;
    if rows.len() < needed {
        return Err(Error::Data(format!(
            "dataset of {} rows is too small for {} sensors (need {needed})",
            rows.len(),
            config.n_sensors
        )));
    }
    for label in [0u8, 1] {
        if !rows.iter().any(|r| r.label == label) {
            return Err(Error::MissingLabel(label));
        }
    }
    let mut order: Vec<usize> = (0..rows.len()).collect();
    order.shuffle(&mut rng::stream(config.shuffle_seed, &[tag::SHUFFLE]));
    let shard = rows.len() / config.n_sensors;
    let model = learn::init_model(config.shape, &config.train)?;
    Ok((0..config.n_sensors)
        .map(|id| {
            let shard_rows: Vec<FeatureRow> = order[id * shard..(id + 1) * shard]
                .iter()
                .map(|&i| rows[i])
                .collect();
            let (train_rows, test_rows) = stratified_split(&shard_rows, config.train_fraction);
            SensorState {
                sensor_id: id,
                train_rows,
                test_rows,
                batches: Vec::new(),
                batch_cursor: 0,
                fed_model: model.clone(),
                shadow_model: model.clone(),
                faulty: config.faulty_ids.contains(&id),
            }
        })
        .collect())
}

/// `n_rounds` contiguous equal batches; the remainder goes to the last one.
pub fn make_batches(sensor: &SensorState, n_rounds: usize) -> Result<Vec<Vec<FeatureRow>>> {
    let rows = &sensor.train_rows;
    if n_rounds == 0 || rows.len() < n_rounds {
        return Err(Error::Data(format!(
            "sensor {} has {} training rows, fewer than {n_rounds} rounds",
            sensor.sensor_id,
            rows.len()
        )));
    }
    let size = rows.len() / n_rounds;
    Ok((0..n_rounds)
        .map(|r| {
            let end = if r + 1 == n_rounds { rows.len() } else { (r + 1) * size };
            rows[r * size..end].to_vec()
        })
        .collect())
}

/// Replace every label with an independent fair coin flip.
pub fn corrupt_labels(batch: &[Example], seed: u64) -> Vec<Example> {
    let mut rng = rng::stream(seed, &[]);
    batch
        .iter()
        .map(|ex| Example {
            x: ex.x.clone(),
            label: rng.random::<bool>() as u8,
        })
        .collect()
}

/// Element-wise arithmetic mean. Computed as a running mean, so averaging
/// copies of one vector returns it bit-for-bit.
pub fn fedavg(coefs: &[CoefVector]) -> Result<CoefVector> {
    let first = coefs.first().ok_or(Error::EmptyInput)?;
    if coefs
        .iter()
        .any(|c| c.shape != first.shape || c.values.len() != first.values.len())
    {
        return Err(Error::ShapeMismatch);
    }
    let mut mean = first.values.clone();
    for (k, c) in coefs.iter().enumerate().skip(1) {
        let n = (k + 1) as f64;
        for (m, v) in mean.iter_mut().zip(&c.values) {
            *m += (v - *m) / n;
        }
    }
    Ok(CoefVector {
        shape: first.shape,
        values: mean,
    })
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutlierReport {
    /// Euclidean distance of each vector to the coordinate-wise median.
    pub distances: Vec<f64>,
    pub median_distance: f64,
    pub mad: f64,
    pub flagged: Vec<bool>,
}

impl OutlierReport {
    pub fn flagged_indices(&self) -> BTreeSet<usize> {
        (0..self.flagged.len()).filter(|&i| self.flagged[i]).collect()
    }
}

/// Flag vectors whose distance to the coordinate-wise median exceeds
/// `median(d) + outlier_z * MAD(d)`, or `10 * median(d)` when the MAD is zero.
pub fn outlier_scores(coefs: &[CoefVector], outlier_z: f64) -> Result<OutlierReport> {
    if coefs.len() < 3 {
        return Err(Error::InsufficientPopulation {
            needed: 3,
            got: coefs.len(),
        });
    }
    let dim = coefs[0].values.len();
    if coefs
        .iter()
        .any(|c| c.shape != coefs[0].shape || c.values.len() != dim)
    {
        return Err(Error::ShapeMismatch);
    }
    let center: Vec<f64> = (0..dim)
        .map(|j| median(&coefs.iter().map(|c| c.values[j]).collect::<Vec<_>>()))
        .collect();
    let distances: Vec<f64> = coefs
        .iter()
        .map(|c| {
            c.values
                .iter()
                .zip(&center)
                .map(|(v, m)| (v - m).powi(2))
                .sum::<f64>()
                .sqrt()
        })
        .collect();
    let med = median(&distances);
    let mad = median(&distances.iter().map(|d| (d - med).abs()).collect::<Vec<_>>());
    let cut = if mad > 0.0 { med + outlier_z * mad } else { med * 10.0 };
    let flagged = distances.iter().map(|&d| d > cut).collect();
    Ok(OutlierReport {
        distances,
        median_distance: med,
        mad,
        flagged,
    })
}

pub fn detect_outliers(coefs: &[CoefVector], outlier_z: f64) -> Result<BTreeSet<usize>> {
    Ok(outlier_scores(coefs, outlier_z)?.flagged_indices())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorRound {
    pub sensor_id: usize,
    pub fed_accuracy: f64,
    pub shadow_accuracy: f64,
    pub coef_distance: f64,
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundReport {
    pub round: usize,
    pub per_sensor: Vec<SensorRound>,
    pub mean_fed_accuracy: f64,
    pub mean_shadow_accuracy: f64,
}

fn fault_seed(config: &FedConfig, sensor_id: usize, round: usize) -> u64 {
    rng::derive(
        config.shuffle_seed,
        &[tag::FAULT, sensor_id as u64, round as u64],
    )
}

/// One federated round. `eval` is the pooled (normalized) evaluation set.
pub fn run_round(
    states: &mut [SensorState],
    round_index: usize,
    config: &FedConfig,
    eval: &[Example],
) -> Result<RoundReport> {
    if round_index >= config.n_rounds {
        return Err(Error::InvalidParameter(format!(
            "round {round_index} out of range for {} rounds",
            config.n_rounds
        )));
    }
    let trained = par::try_map(states, |s| -> Result<(CoefVector, CoefVector)> {
        let batch = s.batches.get(round_index).ok_or_else(|| {
            Error::Data(format!("sensor {} has no batch {round_index}", s.sensor_id))
        })?;
        let corrupted;
        let batch = if s.faulty {
            corrupted = corrupt_labels(batch, fault_seed(config, s.sensor_id, round_index));
            &corrupted
        } else {
            batch
        };
        Ok((
            learn::train_batch(&s.fed_model, batch, &config.train)?,
            learn::train_batch(&s.shadow_model, batch, &config.train)?,
        ))
    })?;
    let (fed, shadow): (Vec<CoefVector>, Vec<CoefVector>) = trained.into_iter().unzip();

    let outliers = if fed.len() >= 3 {
        Some(outlier_scores(&fed, config.outlier_z)?)
    } else {
        None
    };
    let aggregate = match &outliers {
        Some(o) if config.exclude_outliers => {
            let kept: Vec<CoefVector> = fed
                .iter()
                .zip(&o.flagged)
                .filter(|(_, f)| !**f)
                .map(|(c, _)| c.clone())
                .collect();
            fedavg(&kept)?
        }
        _ => fedavg(&fed)?,
    };

    for (s, shadow) in states.iter_mut().zip(shadow) {
        s.fed_model = aggregate.clone();
        s.shadow_model = shadow;
        s.batch_cursor = round_index + 1;
    }

    let fed_accuracy = learn::accuracy(&aggregate, eval)?;
    let shadow_acc = par::try_map(states, |s| learn::accuracy(&s.shadow_model, eval))?;
    let per_sensor: Vec<SensorRound> = states
        .iter()
        .enumerate()
        .map(|(i, s)| SensorRound {
            sensor_id: s.sensor_id,
            fed_accuracy,
            shadow_accuracy: shadow_acc[i],
            coef_distance: outliers.as_ref().map_or(0.0, |o| o.distances[i]),
            flagged: outliers.as_ref().is_some_and(|o| o.flagged[i]),
        })
        .collect();
    let n = per_sensor.len() as f64;
    Ok(RoundReport {
        round: round_index,
        mean_fed_accuracy: per_sensor.iter().map(|p| p.fed_accuracy).sum::<f64>() / n,
        mean_shadow_accuracy: per_sensor.iter().map(|p| p.shadow_accuracy).sum::<f64>() / n,
        per_sensor,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorEnergy {
    pub sensor_id: usize,
    pub threshold: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyBaseline {
    /// Calibrated on every sensor's training noise rows.
    pub threshold: EnergyThreshold,
    /// Accuracy of `threshold` on the pooled set.
    pub accuracy: f64,
    /// Each sensor's own calibration, scored on the pooled set. Sensors with
    /// too few noise rows for the target Pfa are left out.
    pub per_sensor: Vec<SensorEnergy>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CentralizedAccuracy {
    pub logistic: f64,
    pub mlp: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FinalAccuracy {
    pub mean_fed: f64,
    pub mean_shadow: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: FedConfig,
    /// Coefficients each sensor sends per round.
    pub n_coefficients: usize,
    pub normalization: Normalization,
    /// `None` when the training split holds too few noise rows to calibrate.
    pub energy_baseline: Option<EnergyBaseline>,
    pub centralized_accuracy: CentralizedAccuracy,
    pub rounds: Vec<RoundReport>,
    #[serde(rename = "final")]
    pub final_accuracy: FinalAccuracy,
}

impl ExperimentReport {
    pub fn to_json(&self) -> String {
        let mut text = serde_json::to_string_pretty(self).expect("report serializes");
        text.push('\n');
        text
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Data(format!("malformed report: {e}")))
    }

    /// `round,sensor_id,fed_accuracy,shadow_accuracy,coef_distance,flagged`
    pub fn write_rounds_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let err = |e: csv::Error| Error::Data(e.to_string());
        w.write_record([
            "round",
            "sensor_id",
            "fed_accuracy",
            "shadow_accuracy",
            "coef_distance",
            "flagged",
        ])
        .map_err(err)?;
        for r in &self.rounds {
            for s in &r.per_sensor {
                w.write_record([
                    r.round.to_string(),
                    s.sensor_id.to_string(),
                    s.fed_accuracy.to_string(),
                    s.shadow_accuracy.to_string(),
                    s.coef_distance.to_string(),
                    s.flagged.to_string(),
                ])
                .map_err(err)?;
            }
        }
        w.flush().map_err(|e| Error::Data(e.to_string()))
    }

    pub fn save(&self, json_path: &Path, csv_path: &Path) -> Result<()> {
        std::fs::write(json_path, self.to_json()).map_err(|e| Error::io(json_path, e))?;
        let file = std::fs::File::create(csv_path).map_err(|e| Error::io(csv_path, e))?;
        self.write_rounds_csv(std::io::BufWriter::new(file))
            .map_err(|e| e.in_file(csv_path))
    }

    /// Fraction of the last `last_n` rounds in which `sensor_id` was flagged.
    pub fn flag_rate(&self, sensor_id: usize, last_n: usize) -> f64 {
        let tail = &self.rounds[self.rounds.len().saturating_sub(last_n)..];
        let hits = tail
            .iter()
            .filter(|r| r.per_sensor.iter().any(|s| s.sensor_id == sensor_id && s.flagged))
            .count();
        hits as f64 / tail.len() as f64
    }
}

fn energy_baseline(
    states: &[SensorState],
    pooled: &[FeatureRow],
    train: &[FeatureRow],
    pfa: f64,
) -> Result<Option<EnergyBaseline>> {
    let threshold = match detect::calibrate_on_rows(train, pfa) {
        Ok(th) => th,
        Err(Error::InsufficientCalibration { .. }) => return Ok(None),
        Err(e) => return Err(e),
    };
    let mut per_sensor = Vec::new();
    for s in states {
        match detect::calibrate_on_rows(&s.train_rows, pfa) {
            Ok(th) => per_sensor.push(SensorEnergy {
                sensor_id: s.sensor_id,
                threshold: th.threshold,
                accuracy: detect::energy_accuracy(pooled, &th)?,
            }),
            Err(Error::InsufficientCalibration { .. }) => {}
            Err(e) => return Err(e),
        }
    }
    Ok(Some(EnergyBaseline {
        accuracy: detect::energy_accuracy(pooled, &threshold)?,
        threshold,
        per_sensor,
    }))
}

/// Train a single model on every training row with as many passes as the
/// federated run makes in total.
pub fn train_centralized(
    shape: ModelShape,
    train: &[Example],
    config: &FedConfig,
) -> Result<CoefVector> {
    let init = learn::init_model(shape, &config.train)?;
    let cfg = TrainConfig {
        epochs_per_batch: config.n_rounds * config.train.epochs_per_batch,
        ..config.train
    };
    learn::train_batch(&init, train, &cfg)
}

pub fn run_experiment(rows: &[FeatureRow], config: &FedConfig) -> Result<ExperimentReport> {
    let mut states = partition_sensors(rows, config)?;

    let pooled_raw: Vec<FeatureRow> = states.iter().flat_map(|s| s.rows().copied()).collect();
    let train_raw: Vec<FeatureRow> = states
        .iter()
        .flat_map(|s| s.train_rows.iter().copied())
        .collect();

    let energy_baseline = energy_baseline(&states, &pooled_raw, &train_raw, config.pfa)?;

    let stats = Normalization::fit(&train_raw)?;
    for s in &mut states {
        s.prepare(&stats, config.n_rounds)?;
    }
    let eval = learn::examples(&stats.apply(&pooled_raw));
    let train_all = learn::examples(&stats.apply(&train_raw));

    let n_inputs = config.shape.n_inputs;
    let references = [
        ModelShape::logistic(n_inputs),
        ModelShape::mlp(n_inputs, config.reference_hidden),
    ];
    let refs = par::try_map(&references, |&shape| {
        let model = train_centralized(shape, &train_all, config)?;
        learn::accuracy(&model, &eval)
    })?;
    let centralized_accuracy = CentralizedAccuracy {
        logistic: refs[0],
        mlp: refs[1],
    };

    let mut rounds = Vec::with_capacity(config.n_rounds);
    for r in 0..config.n_rounds {
        rounds.push(run_round(&mut states, r, config, &eval)?);
    }
    let last = rounds.last().expect("n_rounds >= 1");
    let final_accuracy = FinalAccuracy {
        mean_fed: last.mean_fed_accuracy,
        mean_shadow: last.mean_shadow_accuracy,
    };
    Ok(ExperimentReport {
        config: config.clone(),
        n_coefficients: config.shape.coefficient_count(),
        normalization: stats,
        energy_baseline,
        centralized_accuracy,
        rounds,
        final_accuracy,
    })
}

/// `k` label-stratified folds as `(train, validation)` index lists.
pub fn stratified_kfold(rows: &[FeatureRow], k: usize, seed: u64) -> Result<Vec<(Vec<usize>, Vec<usize>)>> {
    if k < 2 {
        return Err(Error::InvalidParameter("k must be at least 2".into()));
    }
    let mut fold_of = vec![0usize; rows.len()];
    let mut offset = 0;
    for label in [0u8, 1] {
        let mut idx: Vec<usize> = (0..rows.len()).filter(|&i| rows[i].label == label).collect();
        if idx.len() < k {
            return Err(Error::Data(format!(
                "label {label} has {} rows, fewer than {k} folds",
                idx.len()
            )));
        }
        idx.shuffle(&mut rng::stream(seed, &[tag::FOLD, label as u64]));
        for (pos, &i) in idx.iter().enumerate() {
            fold_of[i] = (pos + offset) % k;
        }
        // continue dealing where this label stopped so fold totals stay even
        offset = (offset + idx.len()) % k;
    }
    Ok((0..k)
        .map(|f| {
            let (val, train): (Vec<usize>, Vec<usize>) =
                (0..rows.len()).partition(|&i| fold_of[i] == f);
            (train, val)
        })
        .collect())
}

pub fn model_kind_name(kind: ModelKind) -> &'static str {
    match kind {
        ModelKind::Logistic => "logistic",
        ModelKind::Mlp => "mlp",
    }
}
