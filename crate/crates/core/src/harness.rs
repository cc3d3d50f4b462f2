//! Configuration file and the five commands behind the `specsense` binary.
//!
//! The config is TOML with one section per command. Only `seed` and the input
//! path of the command being run are required; everything else has defaults.
//! Relative paths inside the file resolve against the file's directory.
//!
//! ```toml
//! seed = 7
//!
//! [generate]
//! noise_windows = 2000
//! windows_per_gain = 200
//! gains_db = [-23, -22, -21]
//!
//! [features]
//! n_channels = 10
//! max_lag = 100
//!
//! [extract]
//! iq_dir = "iq"
//!
//! [baseline]
//! dataset = "features/dataset.csv"
//!
//! [fedsim]
//! dataset = "features/dataset.csv"
//! n_rounds = 20
//! scenarios = [
//!     { model = "logistic", faulty_ids = [] },
//!     { model = "mlp", faulty_ids = [0, 1] },
//! ]
//!
//! [report]
//! reports = ["fed"]
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::detect;
use crate::featex::{balance_mask, Dataset, FeatureConfig, FeatureExtractor, FeatureRow, Normalization};
use crate::fed::{self, ExperimentReport, FedConfig};
use crate::iqgen::{self, CaptureMeta, GmskParams, IqWindowReader, SynthConfig, WINDOW_LEN};
use crate::learn::{self, ModelKind, ModelShape, TrainConfig};
use crate::rng::{self, tag};
use crate::{par, Error, Result};

/// Windows featurized per parallel batch while streaming an IQ file.
const EXTRACT_CHUNK: usize = 64;

pub const PAPER_SCALE_NOISE_WINDOWS: usize = 10_000;
pub const PAPER_SCALE_WINDOWS_PER_GAIN: usize = 1_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    Generate,
    Extract,
    Baseline,
    Fedsim,
    Report,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Generate => "generate",
            Command::Extract => "extract",
            Command::Baseline => "baseline",
            Command::Fedsim => "fedsim",
            Command::Report => "report",
        }
    }
}

/// Command-line values that sit next to the config file.
#[derive(Debug, Clone)]
pub struct RunOptions {
    pub config_path: PathBuf,
    pub out_dir: PathBuf,
    pub seed: Option<u64>,
    pub paper_scale: bool,
    /// Replaces the command's input path from the config.
    pub input: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenerateSection {
    pub noise_windows: usize,
    pub windows_per_gain: usize,
    pub gains_db: Vec<f64>,
    pub gmsk: GmskParams,
    pub sample_rate_hz: f64,
    pub center_freq_hz: f64,
    /// Cycles per sample; defaults to the center of the classified channel.
    pub signal_freq_offset: Option<f64>,
}

impl Default for GenerateSection {
    fn default() -> Self {
        let s = SynthConfig::default();
        GenerateSection {
            noise_windows: s.noise_windows,
            windows_per_gain: s.windows_per_gain,
            gains_db: s.gains_db,
            gmsk: s.gmsk,
            sample_rate_hz: s.sample_rate_hz,
            center_freq_hz: s.center_freq_hz,
            signal_freq_offset: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExtractSection {
    pub iq_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaselineSection {
    pub dataset: Option<PathBuf>,
    pub k_folds: usize,
    pub train_fraction: f64,
    pub pfa: f64,
    pub learning_rate: f64,
    /// Full-batch passes over the training split.
    pub epochs: usize,
    pub init_scale: f64,
    pub n_hidden: usize,
}

impl Default for BaselineSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        let f = FedConfig::default();
        BaselineSection {
            dataset: None,
            k_folds: 5,
            train_fraction: f.train_fraction,
            pfa: f.pfa,
            learning_rate: t.learning_rate,
            // same budget as the federated runs' centralized reference
            epochs: f.n_rounds * t.epochs_per_batch,
            init_scale: t.init_scale,
            n_hidden: f.reference_hidden,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub name: Option<String>,
    pub model: ModelKind,
    #[serde(default)]
    pub faulty_ids: BTreeSet<usize>,
}

impl Scenario {
    pub fn label(&self) -> String {
        if let Some(name) = &self.name {
            return name.clone();
        }
        let ids: Vec<String> = self.faulty_ids.iter().map(usize::to_string).collect();
        let faulty = if ids.is_empty() { "none".to_string() } else { ids.join("_") };
        format!("{}_faulty_{faulty}", fed::model_kind_name(self.model))
    }
}

/// Faulty sets {}, {0}, {0,1} for each model kind.
pub fn default_scenarios() -> Vec<Scenario> {
    let sets: [&[usize]; 3] = [&[], &[0], &[0, 1]];
    [ModelKind::Logistic, ModelKind::Mlp]
        .into_iter()
        .flat_map(|model| {
            sets.iter().map(move |ids| Scenario {
                name: None,
                model,
                faulty_ids: ids.iter().copied().collect(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FedsimSection {
    pub dataset: Option<PathBuf>,
    pub n_sensors: usize,
    pub n_rounds: usize,
    pub train_fraction: f64,
    pub outlier_z: f64,
    pub exclude_outliers: bool,
    pub learning_rate: f64,
    pub epochs_per_batch: usize,
    pub init_scale: f64,
    /// Hidden width for MLP scenarios and the centralized MLP reference.
    pub n_hidden: usize,
    pub pfa: f64,
    pub scenarios: Vec<Scenario>,
}

impl Default for FedsimSection {
    fn default() -> Self {
        let f = FedConfig::default();
        FedsimSection {
            dataset: None,
            n_sensors: f.n_sensors,
            n_rounds: f.n_rounds,
            train_fraction: f.train_fraction,
            outlier_z: f.outlier_z,
            exclude_outliers: f.exclude_outliers,
            learning_rate: f.train.learning_rate,
            epochs_per_batch: f.train.epochs_per_batch,
            init_scale: f.train.init_scale,
            n_hidden: f.reference_hidden,
            pfa: f.pfa,
            scenarios: default_scenarios(),
        }
    }
}

impl FedsimSection {
    pub fn fed_config(&self, seed: u64, scenario: &Scenario) -> FedConfig {
        let n_inputs = crate::featex::N_FEATURES;
        FedConfig {
            n_sensors: self.n_sensors,
            n_rounds: self.n_rounds,
            faulty_ids: scenario.faulty_ids.clone(),
            shuffle_seed: seed,
            train_fraction: self.train_fraction,
            outlier_z: self.outlier_z,
            exclude_outliers: self.exclude_outliers,
            train: TrainConfig {
                learning_rate: self.learning_rate,
                epochs_per_batch: self.epochs_per_batch,
                init_seed: seed,
                init_scale: self.init_scale,
            },
            shape: match scenario.model {
                ModelKind::Logistic => ModelShape::logistic(n_inputs),
                ModelKind::Mlp => ModelShape::mlp(n_inputs, self.n_hidden),
            },
            reference_hidden: self.n_hidden,
            pfa: self.pfa,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReportSection {
    /// Report files, or directories whose `*.json` reports are all read.
    pub reports: Vec<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub seed: Option<u64>,
    #[serde(default)]
    pub generate: GenerateSection,
    #[serde(default)]
    pub features: FeatureConfig,
    #[serde(default)]
    pub extract: ExtractSection,
    #[serde(default)]
    pub baseline: BaselineSection,
    #[serde(default)]
    pub fedsim: FedsimSection,
    #[serde(default)]
    pub report: ReportSection,
    /// Directory relative paths resolve against. Not part of the file.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl Config {
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg: Config = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.base_dir = base_dir.to_path_buf();
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        // an unreadable config is the caller's mistake, not bad data
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base).map_err(|e| e.in_file(path))
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// `--input` wins, then the config key; a missing key is an error naming it.
    fn input_path(&self, key: &str, value: &Option<PathBuf>, opts: &RunOptions) -> Result<PathBuf> {
        if let Some(p) = &opts.input {
            return Ok(p.clone());
        }
        value
            .as_deref()
            .map(|p| self.resolve(p))
            .ok_or_else(|| Error::MissingKey(key.into()))
    }

    pub fn master_seed(&self, opts: &RunOptions) -> Result<u64> {
        opts.seed
            .or(self.seed)
            .ok_or_else(|| Error::MissingKey("seed".into()))
    }

    pub fn synth_config(&self, seed: u64, paper_scale: bool) -> SynthConfig {
        let g = &self.generate;
        let offset = g.signal_freq_offset.unwrap_or_else(|| {
            iqgen::channel_center_offset(self.features.signal_channel(), self.features.n_channels)
        });
        SynthConfig {
            noise_windows: if paper_scale { PAPER_SCALE_NOISE_WINDOWS } else { g.noise_windows },
            windows_per_gain: if paper_scale {
                PAPER_SCALE_WINDOWS_PER_GAIN
            } else {
                g.windows_per_gain
            },
            gains_db: g.gains_db.clone(),
            gmsk: g.gmsk,
            sample_rate_hz: g.sample_rate_hz,
            center_freq_hz: g.center_freq_hz,
            signal_freq_offset: offset,
            master_seed: seed,
        }
    }
}

/// Written next to every command's outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: Command,
    pub config_path: PathBuf,
    pub output_dir: PathBuf,
    pub master_seed: u64,
    pub paper_scale: bool,
    /// Output file names, relative to `output_dir`.
    pub artifacts: Vec<String>,
}

/// What a command produced, for the caller to print.
#[derive(Debug, Clone, Default)]
pub struct Outcome {
    pub artifacts: Vec<PathBuf>,
    pub summary: String,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("artifact serializes");
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path, what: &str) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Data(format!("malformed {what}: {e}")).in_file(path))
}

fn file_name(p: &Path) -> String {
    p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Entry point used by the binary.
pub fn run(command: Command, opts: &RunOptions) -> Result<Outcome> {
    let cfg = Config::load(&opts.config_path)?;
    let seed = cfg.master_seed(opts)?;
    std::fs::create_dir_all(&opts.out_dir).map_err(|e| Error::io(&opts.out_dir, e))?;
    let mut outcome = match command {
        Command::Generate => cmd_generate(&cfg, seed, opts)?,
        Command::Extract => cmd_extract(&cfg, seed, opts)?,
        Command::Baseline => cmd_baseline(&cfg, seed, opts)?,
        Command::Fedsim => cmd_fedsim(&cfg, seed, opts)?,
        Command::Report => cmd_report(&cfg, opts)?,
    };
    let manifest_path = opts.out_dir.join(format!("{}.manifest.json", command.name()));
    let manifest = RunManifest {
        command,
        config_path: opts.config_path.clone(),
        output_dir: opts.out_dir.clone(),
        master_seed: seed,
        paper_scale: opts.paper_scale,
        artifacts: outcome.artifacts.iter().map(|p| file_name(p)).collect(),
    };
    write_json(&manifest_path, &manifest)?;
    outcome.artifacts.push(manifest_path);
    Ok(outcome)
}

fn reject_input(command: Command, opts: &RunOptions) -> Result<()> {
    match opts.input {
        Some(_) => Err(Error::Config(format!("{} takes no --input", command.name()))),
        None => Ok(()),
    }
}

// ---------------------------------------------------------------- generate

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptureEntry {
    pub iq_file: String,
    pub sidecar: String,
    #[serde(flatten)]
    pub meta: CaptureMeta,
    pub n_windows: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptureManifest {
    pub master_seed: u64,
    pub synth: SynthConfig,
    pub window_len: usize,
    pub captures: Vec<CaptureEntry>,
}

pub fn capture_stem(index: usize) -> String {
    format!("capture_{index:03}")
}

pub fn cmd_generate(cfg: &Config, seed: u64, opts: &RunOptions) -> Result<Outcome> {
    reject_input(Command::Generate, opts)?;
    let synth = cfg.synth_config(seed, opts.paper_scale);
    let sources = synth.sources()?;
    let out = &opts.out_dir;
    let mut artifacts = Vec::new();
    let mut captures = Vec::new();
    for src in &sources {
        let stem = capture_stem(src.index);
        let iq_path = out.join(format!("{stem}.iq"));
        let meta_path = out.join(format!("{stem}.meta.json"));
        let file = File::create(&iq_path).map_err(|e| Error::io(&iq_path, e))?;
        let mut w = BufWriter::new(file);
        let mut start = 0;
        while start < src.n_windows {
            let end = (start + EXTRACT_CHUNK).min(src.n_windows);
            let ids: Vec<usize> = (start..end).collect();
            for window in par::try_map(&ids, |&i| src.window(i))? {
                iqgen::encode_iq(&window, &mut w).map_err(|e| Error::io(&iq_path, e))?;
            }
            start = end;
        }
        w.flush().map_err(|e| Error::io(&iq_path, e))?;
        let meta = src.meta();
        meta.write(&meta_path)?;
        captures.push(CaptureEntry {
            iq_file: file_name(&iq_path),
            sidecar: file_name(&meta_path),
            meta,
            n_windows: src.n_windows,
        });
        artifacts.push(iq_path);
        artifacts.push(meta_path);
    }
    let manifest_path = out.join("captures.json");
    write_json(
        &manifest_path,
        &CaptureManifest {
            master_seed: seed,
            synth: synth.clone(),
            window_len: WINDOW_LEN,
            captures,
        },
    )?;
    artifacts.push(manifest_path);
    let windows: usize = sources.iter().map(|s| s.n_windows).sum();
    Ok(Outcome {
        summary: format!("wrote {} captures ({windows} windows)", sources.len()),
        artifacts,
    })
}

// ----------------------------------------------------------------- extract

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptureStats {
    pub iq_file: String,
    #[serde(flatten)]
    pub meta: CaptureMeta,
    pub windows: usize,
    /// Rows surviving label balancing.
    pub kept: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub master_seed: u64,
    pub features: FeatureConfig,
    pub channel_index: usize,
    pub rows: usize,
    /// Balanced counts `[noise, signal]`.
    pub label_counts: [usize; 2],
    /// Counts before balancing.
    pub raw_label_counts: [usize; 2],
    pub captures: Vec<CaptureStats>,
}

/// Every `*.iq` file in `dir`, sorted by name, with its parsed sidecar.
pub fn list_captures(dir: &Path) -> Result<Vec<(PathBuf, CaptureMeta)>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut iq: Vec<PathBuf> = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_file() && path.extension().is_some_and(|x| x == "iq") {
            iq.push(path);
        }
    }
    if iq.is_empty() {
        return Err(Error::Data("no .iq captures found".into()).in_file(dir));
    }
    iq.sort();
    iq.into_iter()
        .map(|p| {
            let meta = CaptureMeta::read(&p.with_extension("meta.json"))?;
            Ok((p, meta))
        })
        .collect()
}

/// Stream one capture window by window and featurize it.
pub fn extract_capture(path: &Path, meta: &CaptureMeta, extractor: &FeatureExtractor) -> Result<Vec<FeatureRow>> {
    let mut reader = IqWindowReader::open(path, WINDOW_LEN)?;
    let mut rows = Vec::with_capacity(reader.n_windows());
    loop {
        let chunk: Vec<_> = reader
            .by_ref()
            .take(EXTRACT_CHUNK)
            .collect::<Result<_>>()
            .map_err(|e| e.in_file(path))?;
        if chunk.is_empty() {
            break;
        }
        let part = par::try_map(&chunk, |w| extractor.extract(w, meta.truth_occupied, meta.gain_db))
            .map_err(|e| e.in_file(path))?;
        rows.extend(part);
    }
    Ok(rows)
}

pub fn cmd_extract(cfg: &Config, seed: u64, opts: &RunOptions) -> Result<Outcome> {
    let dir = cfg.input_path("extract.iq_dir", &cfg.extract.iq_dir, opts)?;
    let extractor = FeatureExtractor::new(&cfg.features)?;
    let captures = list_captures(&dir)?;
    let mut rows = Vec::new();
    let mut stats = Vec::with_capacity(captures.len());
    for (path, meta) in &captures {
        let part = extract_capture(path, meta, &extractor)?;
        stats.push(CaptureStats {
            iq_file: file_name(path),
            meta: *meta,
            windows: part.len(),
            kept: 0,
        });
        rows.extend(part);
    }
    let raw = Dataset::new(rows.clone()).label_counts();
    let keep = balance_mask(&rows)?;
    let mut at = 0;
    for st in &mut stats {
        st.kept = keep[at..at + st.windows].iter().filter(|&&k| k).count();
        at += st.windows;
    }
    let balanced: Vec<FeatureRow> = rows.into_iter().zip(keep).filter_map(|(r, k)| k.then_some(r)).collect();
    let dataset = Dataset::new(balanced);
    let dataset_path = opts.out_dir.join("dataset.csv");
    let stats_path = opts.out_dir.join("dataset.stats.json");
    dataset.save(&dataset_path)?;
    let counts = dataset.label_counts();
    write_json(
        &stats_path,
        &DatasetStats {
            master_seed: seed,
            features: cfg.features,
            channel_index: extractor.channel(),
            rows: dataset.len(),
            label_counts: counts,
            raw_label_counts: raw,
            captures: stats,
        },
    )?;
    Ok(Outcome {
        summary: format!(
            "{} rows ({} noise, {} signal) from {} captures",
            dataset.len(),
            counts[0],
            counts[1],
            captures.len()
        ),
        artifacts: vec![dataset_path, stats_path],
    })
}

// ---------------------------------------------------------------- baseline

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldSummary {
    pub fold_accuracies: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

impl FoldSummary {
    pub fn new(fold_accuracies: Vec<f64>) -> Self {
        let n = fold_accuracies.len() as f64;
        let mean = fold_accuracies.iter().sum::<f64>() / n;
        let var = fold_accuracies.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
        FoldSummary {
            fold_accuracies,
            mean,
            std: var.sqrt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelResult {
    pub n_coefficients: usize,
    pub accuracy: f64,
    pub kfold: FoldSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyResult {
    pub threshold: f64,
    pub pfa: f64,
    pub n_calibration: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineReport {
    pub master_seed: u64,
    pub config: BaselineSection,
    pub rows: usize,
    pub train_rows: usize,
    pub label_counts: [usize; 2],
    pub normalization: Normalization,
    pub energy: EnergyResult,
    pub logistic: ModelResult,
    pub mlp: ModelResult,
}

fn check_labels(rows: &[FeatureRow]) -> Result<()> {
    for label in [0u8, 1] {
        if !rows.iter().any(|r| r.label == label) {
            return Err(Error::MissingLabel(label));
        }
    }
    Ok(())
}

/// Fit normalization on `train`, train `shape`, score on `eval`.
fn fit_and_score(
    shape: ModelShape,
    train: &[FeatureRow],
    eval: &[FeatureRow],
    config: &TrainConfig,
) -> Result<f64> {
    let stats = Normalization::fit(train)?;
    let init = learn::init_model(shape, config)?;
    let model = learn::train_batch(&init, &learn::examples(&stats.apply(train)), config)?;
    learn::accuracy(&model, &learn::examples(&stats.apply(eval)))
}

pub fn run_baseline(rows: &[FeatureRow], section: &BaselineSection, seed: u64) -> Result<BaselineReport> {
    check_labels(rows)?;
    let mut order: Vec<usize> = (0..rows.len()).collect();
    order.shuffle(&mut rng::stream(seed, &[tag::SPLIT]));
    let shuffled: Vec<FeatureRow> = order.iter().map(|&i| rows[i]).collect();
    let (train, _) = fed::stratified_split(&shuffled, section.train_fraction);
    check_labels(&train)?;

    let th = detect::calibrate_on_rows(&train, section.pfa)?;
    let energy = EnergyResult {
        threshold: th.threshold,
        pfa: th.pfa_target,
        n_calibration: th.n_calibration,
        accuracy: detect::energy_accuracy(rows, &th)?,
    };

    let tc = TrainConfig {
        learning_rate: section.learning_rate,
        epochs_per_batch: section.epochs,
        init_seed: seed,
        init_scale: section.init_scale,
    };
    tc.validate()?;
    let n_inputs = crate::featex::N_FEATURES;
    let shapes = [ModelShape::logistic(n_inputs), ModelShape::mlp(n_inputs, section.n_hidden)];

    let full = par::try_map(&shapes, |&s| fit_and_score(s, &train, rows, &tc))?;
    let folds = fed::stratified_kfold(rows, section.k_folds, seed)?;
    let jobs: Vec<(usize, usize)> = (0..folds.len()).flat_map(|f| [(f, 0), (f, 1)]).collect();
    let scores = par::try_map(&jobs, |&(f, m)| {
        let (tr, va) = &folds[f];
        let pick = |idx: &[usize]| idx.iter().map(|&i| rows[i]).collect::<Vec<_>>();
        fit_and_score(shapes[m], &pick(tr), &pick(va), &tc)
    })?;
    let per_model = |m: usize| jobs.iter().zip(&scores).filter(|(j, _)| j.1 == m).map(|(_, &s)| s).collect();

    let result = |m: usize| ModelResult {
        n_coefficients: shapes[m].coefficient_count(),
        accuracy: full[m],
        kfold: FoldSummary::new(per_model(m)),
    };
    Ok(BaselineReport {
        master_seed: seed,
        config: section.clone(),
        rows: rows.len(),
        train_rows: train.len(),
        label_counts: Dataset::new(rows.to_vec()).label_counts(),
        normalization: Normalization::fit(&train)?,
        energy,
        logistic: result(0),
        mlp: result(1),
    })
}

pub fn cmd_baseline(cfg: &Config, seed: u64, opts: &RunOptions) -> Result<Outcome> {
    let path = cfg.input_path("baseline.dataset", &cfg.baseline.dataset, opts)?;
    let data = Dataset::load(&path)?;
    if data.is_empty() {
        return Err(Error::EmptyInput.in_file(&path));
    }
    let report = run_baseline(&data.rows, &cfg.baseline, seed)?;
    let out = opts.out_dir.join("baseline.json");
    write_json(&out, &report)?;
    let pct = |a: f64| format!("{:.2}%", a * 100.0);
    let mut summary = String::new();
    let _ = writeln!(summary, "energy detection  {}", pct(report.energy.accuracy));
    for (name, r) in [("logistic", &report.logistic), ("mlp", &report.mlp)] {
        let _ = writeln!(
            summary,
            "{name:<17} {}  ({}-fold {} +/- {})",
            pct(r.accuracy),
            r.kfold.fold_accuracies.len(),
            pct(r.kfold.mean),
            pct(r.kfold.std)
        );
    }
    Ok(Outcome {
        summary: summary.trim_end().to_string(),
        artifacts: vec![out],
    })
}

// ------------------------------------------------------------------ fedsim

/// One scenario's output file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub scenario: String,
    pub master_seed: u64,
    pub experiment: ExperimentReport,
}

impl ScenarioReport {
    pub fn gap(&self) -> f64 {
        let f = &self.experiment.final_accuracy;
        f.mean_fed - f.mean_shadow
    }
}

pub fn cmd_fedsim(cfg: &Config, seed: u64, opts: &RunOptions) -> Result<Outcome> {
    let section = &cfg.fedsim;
    if section.scenarios.is_empty() {
        return Err(Error::Config("fedsim.scenarios is empty".into()));
    }
    let mut names = BTreeSet::new();
    let mut plan = Vec::new();
    for s in &section.scenarios {
        let name = s.label();
        if name.is_empty() || name.contains(['/', '\\']) {
            return Err(Error::Config(format!("bad scenario name {name:?}")));
        }
        if !names.insert(name.clone()) {
            return Err(Error::Config(format!("duplicate scenario name {name:?}")));
        }
        let fc = section.fed_config(seed, s);
        fc.validate()?;
        plan.push((name, fc));
    }
    let path = cfg.input_path("fedsim.dataset", &section.dataset, opts)?;
    let data = Dataset::load(&path)?;

    let mut artifacts = Vec::new();
    let mut reports = Vec::new();
    for (name, fc) in plan {
        let experiment = fed::run_experiment(&data.rows, &fc)?;
        let report = ScenarioReport {
            scenario: name.clone(),
            master_seed: seed,
            experiment,
        };
        let json = opts.out_dir.join(format!("{name}.json"));
        let csv = opts.out_dir.join(format!("{name}.rounds.csv"));
        report.experiment.save(&json, &csv)?;
        // the wrapper replaces the bare report written by save()
        write_json(&json, &report)?;
        artifacts.push(json);
        artifacts.push(csv);
        reports.push(report);
    }

    let summary_csv = opts.out_dir.join("summary.csv");
    let mut w = csv::Writer::from_path(&summary_csv).map_err(|e| Error::Data(e.to_string()).in_file(&summary_csv))?;
    let err = |e: csv::Error| Error::Data(e.to_string()).in_file(&summary_csv);
    w.write_record(["scenario", "model", "faulty_ids", "mean_fed", "mean_shadow", "gap"])
        .map_err(err)?;
    for r in &reports {
        let f = &r.experiment.final_accuracy;
        w.write_record([
            r.scenario.clone(),
            fed::model_kind_name(r.experiment.config.shape.kind).to_string(),
            faulty_list(&r.experiment.config.faulty_ids),
            f.mean_fed.to_string(),
            f.mean_shadow.to_string(),
            r.gap().to_string(),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| Error::io(&summary_csv, e))?;
    artifacts.push(summary_csv);

    let table = summary_table(&reports);
    let summary_txt = opts.out_dir.join("summary.txt");
    std::fs::write(&summary_txt, &table).map_err(|e| Error::io(&summary_txt, e))?;
    artifacts.push(summary_txt);
    Ok(Outcome {
        summary: table.trim_end().to_string(),
        artifacts,
    })
}

fn faulty_list(ids: &BTreeSet<usize>) -> String {
    ids.iter().map(usize::to_string).collect::<Vec<_>>().join(" ")
}

/// Left-aligned first column, right-aligned rest.
pub fn aligned_table(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut width: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for row in rows {
        for (w, cell) in width.iter_mut().zip(row) {
            *w = (*w).max(cell.len());
        }
    }
    let line = |cells: Vec<&str>| {
        let mut s = String::new();
        for (i, (cell, w)) in cells.iter().zip(&width).enumerate() {
            if i == 0 {
                let _ = write!(s, "{cell:<w$}");
            } else {
                let _ = write!(s, "  {cell:>w$}");
            }
        }
        s.trim_end().to_string() + "\n"
    };
    let mut out = line(header.to_vec());
    out += &line(width.iter().map(|&w| "-".repeat(w)).collect::<Vec<_>>().iter().map(String::as_str).collect());
    for row in rows {
        out += &line(row.iter().map(String::as_str).collect());
    }
    out
}

fn pct(a: f64) -> String {
    format!("{:.2}", a * 100.0)
}

pub fn summary_table(reports: &[ScenarioReport]) -> String {
    let rows: Vec<Vec<String>> = reports
        .iter()
        .map(|r| {
            let e = &r.experiment;
            let faulty = faulty_list(&e.config.faulty_ids);
            vec![
                r.scenario.clone(),
                fed::model_kind_name(e.config.shape.kind).to_string(),
                if faulty.is_empty() { "-".into() } else { faulty },
                e.n_coefficients.to_string(),
                pct(e.final_accuracy.mean_fed),
                pct(e.final_accuracy.mean_shadow),
                pct(r.gap()),
                e.energy_baseline.as_ref().map_or("-".into(), |b| pct(b.accuracy)),
                pct(e.centralized_accuracy.logistic),
                pct(e.centralized_accuracy.mlp),
            ]
        })
        .collect();
    aligned_table(
        &[
            "scenario", "model", "faulty", "coefs", "fed%", "shadow%", "gap", "energy%", "central_lr%",
            "central_mlp%",
        ],
        &rows,
    )
}

// ------------------------------------------------------------------ report

/// Expand directories into their `*.json` files (manifests skipped).
fn report_files(inputs: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for p in inputs {
        if p.is_dir() {
            let mut found: Vec<PathBuf> = std::fs::read_dir(p)
                .map_err(|e| Error::io(p, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| {
                    f.is_file()
                        && f.extension().is_some_and(|x| x == "json")
                        && !file_name(f).ends_with(".manifest.json")
                })
                .collect();
            found.sort();
            files.extend(found);
        } else {
            files.push(p.clone());
        }
    }
    if files.is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok(files)
}

pub fn write_curve(report: &ScenarioReport, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Data(e.to_string()).in_file(path))?;
    let err = |e: csv::Error| Error::Data(e.to_string()).in_file(path);
    w.write_record(["round", "mean_fed", "mean_shadow"]).map_err(err)?;
    for r in &report.experiment.rounds {
        w.write_record([
            r.round.to_string(),
            r.mean_fed_accuracy.to_string(),
            r.mean_shadow_accuracy.to_string(),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn cmd_report(cfg: &Config, opts: &RunOptions) -> Result<Outcome> {
    let inputs = match &opts.input {
        Some(p) => vec![p.clone()],
        None => cfg.report.reports.iter().map(|p| cfg.resolve(p)).collect(),
    };
    let files = report_files(&inputs)?;
    let mut reports: BTreeMap<String, ScenarioReport> = BTreeMap::new();
    let mut order = Vec::new();
    for f in &files {
        let r: ScenarioReport = read_json(f, "report")?;
        if reports.contains_key(&r.scenario) {
            return Err(Error::Data(format!("scenario {:?} appears twice", r.scenario)).in_file(f));
        }
        order.push(r.scenario.clone());
        reports.insert(r.scenario.clone(), r);
    }
    let mut artifacts = Vec::new();
    let mut listed = Vec::new();
    for name in &order {
        let r = reports.remove(name).expect("inserted above");
        let path = opts.out_dir.join(format!("{name}.curve.csv"));
        write_curve(&r, &path)?;
        artifacts.push(path);
        listed.push(r);
    }
    let mut table = summary_table(&listed);
    table.push('\n');
    let flag_rows: Vec<Vec<String>> = listed
        .iter()
        .flat_map(|r| {
            let e = &r.experiment;
            let half = e.rounds.len().div_ceil(2);
            (0..e.config.n_sensors).map(move |s| {
                vec![
                    r.scenario.clone(),
                    s.to_string(),
                    if e.config.faulty_ids.contains(&s) { "yes" } else { "no" }.into(),
                    pct(e.rounds.last().map_or(0.0, |l| l.per_sensor[s].shadow_accuracy)),
                    pct(e.flag_rate(s, half)),
                ]
            })
        })
        .collect();
    table += &aligned_table(&["scenario", "sensor", "faulty", "shadow%", "flagged% (last half)"], &flag_rows);
    let text_path = opts.out_dir.join("report.txt");
    std::fs::write(&text_path, &table).map_err(|e| Error::io(&text_path, e))?;
    artifacts.push(text_path);
    Ok(Outcome {
        summary: table.trim_end().to_string(),
        artifacts,
    })
}
