//! Window features: FFT channelization, per-channel mean power, and the
//! kurtosis and skewness of the channel's autocorrelation magnitude profile.

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::iqgen::{Capture, Complex32, Complex64, ComplexSample, WINDOW_LEN};
use crate::{Error, Result};

pub const FEATURE_NAMES: [&str; 3] = ["power", "acf_kurtosis", "acf_skewness"];
pub const N_FEATURES: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct IqWindow {
    pub samples: Vec<ComplexSample>,
    pub gain_db: Option<f64>,
    pub truth_occupied: bool,
    pub index: usize,
}

/// Non-overlapping consecutive windows; a trailing partial window is dropped.
pub fn window_split(capture: &Capture) -> Result<Vec<IqWindow>> {
    if capture.samples.len() < WINDOW_LEN {
        return Err(Error::Data(format!(
            "capture of {} samples is shorter than one {WINDOW_LEN}-sample window",
            capture.samples.len()
        )));
    }
    Ok(capture
        .samples
        .chunks_exact(WINDOW_LEN)
        .enumerate()
        .map(|(index, chunk)| IqWindow {
            samples: chunk.to_vec(),
            gain_db: capture.gain_db,
            truth_occupied: capture.truth_occupied,
            index,
        })
        .collect())
}

/// Splits a window's spectrum into equal contiguous channels.
///
/// Channels are numbered in FFT-shifted order, so channel 0 is the lowest
/// frequency. Each channel's time series is the inverse DFT of the spectrum
/// with every out-of-channel bin zeroed.
#[derive(Clone)]
pub struct Channelizer {
    n_channels: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl fmt::Debug for Channelizer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Channelizer")
            .field("n_channels", &self.n_channels)
            .finish()
    }
}

impl Channelizer {
    pub fn new(n_channels: usize) -> Result<Self> {
        if n_channels < 1 || !WINDOW_LEN.is_multiple_of(n_channels) {
            return Err(Error::InvalidParameter(format!(
                "n_channels must be a positive divisor of {WINDOW_LEN}, got {n_channels}"
            )));
        }
        let mut planner = FftPlanner::new();
        Ok(Channelizer {
            n_channels,
            forward: planner.plan_fft_forward(WINDOW_LEN),
            inverse: planner.plan_fft_inverse(WINDOW_LEN),
        })
    }

    pub fn n_channels(&self) -> usize {
        self.n_channels
    }

    fn check_len(samples: &[ComplexSample]) -> Result<()> {
        if samples.len() != WINDOW_LEN {
            return Err(Error::DimensionMismatch {
                expected: WINDOW_LEN,
                got: samples.len(),
            });
        }
        Ok(())
    }

    pub fn spectrum(&self, samples: &[ComplexSample]) -> Result<Vec<Complex64>> {
        Self::check_len(samples)?;
        let mut buf: Vec<Complex64> = samples
            .iter()
            .map(|s| Complex64::new(s.re as f64, s.im as f64))
            .collect();
        self.forward.process(&mut buf);
        Ok(buf)
    }

    /// Unshifted DFT bin indices belonging to `channel`.
    pub fn channel_bins(&self, channel: usize) -> impl Iterator<Item = usize> {
        let width = WINDOW_LEN / self.n_channels;
        (channel * width..(channel + 1) * width).map(|m| (m + WINDOW_LEN / 2) % WINDOW_LEN)
    }

    pub fn channel_series(&self, spectrum: &[Complex64], channel: usize) -> Result<Vec<Complex64>> {
        if channel >= self.n_channels {
            return Err(Error::InvalidParameter(format!(
                "channel {channel} out of range for {} channels",
                self.n_channels
            )));
        }
        let mut buf = vec![Complex64::new(0.0, 0.0); WINDOW_LEN];
        for k in self.channel_bins(channel) {
            buf[k] = spectrum[k];
        }
        self.inverse.process(&mut buf);
        let scale = 1.0 / WINDOW_LEN as f64;
        buf.iter_mut().for_each(|x| *x *= scale);
        Ok(buf)
    }

    pub fn channelize(&self, samples: &[ComplexSample]) -> Result<Vec<Vec<Complex64>>> {
        let spectrum = self.spectrum(samples)?;
        (0..self.n_channels)
            .map(|c| self.channel_series(&spectrum, c))
            .collect()
    }
}

pub fn channelize(samples: &[ComplexSample], n_channels: usize) -> Result<Vec<Vec<Complex64>>> {
    Channelizer::new(n_channels)?.channelize(samples)
}

pub fn series_power(series: &[Complex64]) -> f64 {
    series.iter().map(|x| x.norm_sqr()).sum::<f64>() / series.len() as f64
}

/// Biased autocorrelation magnitude for lags `1..=max_lag`, normalized by
/// the lag-0 energy.
pub fn autocorrelation(series: &[Complex64], max_lag: usize) -> Result<Vec<f64>> {
    if max_lag < 1 || max_lag >= series.len() {
        return Err(Error::InvalidParameter(format!(
            "max_lag must be in [1, {}), got {max_lag}",
            series.len()
        )));
    }
    let energy: f64 = series.iter().map(|x| x.norm_sqr()).sum();
    if energy == 0.0 {
        return Err(Error::ZeroPower);
    }
    Ok((1..=max_lag)
        .map(|k| {
            let acc = series[..series.len() - k]
                .iter()
                .zip(&series[k..])
                .fold(Complex64::new(0.0, 0.0), |acc, (a, b)| acc + a * b.conj());
            acc.norm() / energy
        })
        .collect())
}

/// Population central moments (m2, m3, m4).
fn central_moments(values: &[f64]) -> (f64, f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for v in values {
        let d = v - mean;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    (m2 / n, m3 / n, m4 / n)
}

fn non_degenerate(values: &[f64], m2: f64) -> Result<()> {
    let scale = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if !(m2 > scale * scale * 1e-28) {
        return Err(Error::Degenerate);
    }
    Ok(())
}

/// Moment skewness `m3 / m2^1.5`.
pub fn sample_skewness(values: &[f64]) -> Result<f64> {
    if values.len() < 3 {
        return Err(Error::InvalidParameter("skewness needs at least 3 values".into()));
    }
    let (m2, m3, _) = central_moments(values);
    non_degenerate(values, m2)?;
    Ok(m3 / m2.powf(1.5))
}

/// Population excess kurtosis `m4 / m2^2 - 3`.
pub fn sample_excess_kurtosis(values: &[f64]) -> Result<f64> {
    if values.len() < 4 {
        return Err(Error::InvalidParameter("kurtosis needs at least 4 values".into()));
    }
    let (m2, _, m4) = central_moments(values);
    non_degenerate(values, m2)?;
    Ok(m4 / (m2 * m2) - 3.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeatureConfig {
    pub n_channels: usize,
    pub max_lag: usize,
    /// Channel whose rows feed the classifiers; `None` means `n_channels / 2`.
    pub channel_index: Option<usize>,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            n_channels: 10,
            max_lag: 100,
            channel_index: None,
        }
    }
}

impl FeatureConfig {
    pub fn signal_channel(&self) -> usize {
        self.channel_index.unwrap_or(self.n_channels / 2)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureRow {
    pub power: f64,
    pub acf_kurtosis: f64,
    pub acf_skewness: f64,
    pub label: u8,
    pub gain_db: Option<f64>,
    pub channel_index: usize,
}

impl FeatureRow {
    pub fn features(&self) -> [f64; N_FEATURES] {
        [self.power, self.acf_kurtosis, self.acf_skewness]
    }

    fn with_features(&self, f: [f64; N_FEATURES]) -> FeatureRow {
        FeatureRow {
            power: f[0],
            acf_kurtosis: f[1],
            acf_skewness: f[2],
            ..*self
        }
    }
}

/// Reusable extractor; holds the FFT plans so it can be shared across threads.
#[derive(Debug, Clone)]
pub struct FeatureExtractor {
    channelizer: Channelizer,
    max_lag: usize,
    channel: usize,
}

impl FeatureExtractor {
    pub fn new(config: &FeatureConfig) -> Result<Self> {
        let channelizer = Channelizer::new(config.n_channels)?;
        let channel = config.signal_channel();
        if channel >= config.n_channels {
            return Err(Error::InvalidParameter(format!(
                "channel_index {channel} out of range for {} channels",
                config.n_channels
            )));
        }
        if config.max_lag < 1 || config.max_lag >= WINDOW_LEN {
            return Err(Error::InvalidParameter(format!(
                "max_lag must be in [1, {WINDOW_LEN}), got {}",
                config.max_lag
            )));
        }
        Ok(FeatureExtractor {
            channelizer,
            max_lag: config.max_lag,
            channel,
        })
    }

    pub fn channel(&self) -> usize {
        self.channel
    }

    pub fn channel_series(&self, samples: &[ComplexSample]) -> Result<Vec<Complex64>> {
        let spectrum = self.channelizer.spectrum(samples)?;
        self.channelizer.channel_series(&spectrum, self.channel)
    }

    pub fn power(&self, samples: &[ComplexSample]) -> Result<f64> {
        Ok(series_power(&self.channel_series(samples)?))
    }

    pub fn extract(
        &self,
        samples: &[ComplexSample],
        truth_occupied: bool,
        gain_db: Option<f64>,
    ) -> Result<FeatureRow> {
        let series = self.channel_series(samples)?;
        let acf = autocorrelation(&series, self.max_lag)?;
        Ok(FeatureRow {
            power: series_power(&series),
            acf_kurtosis: sample_excess_kurtosis(&acf)?,
            acf_skewness: sample_skewness(&acf)?,
            label: truth_occupied as u8,
            gain_db,
            channel_index: self.channel,
        })
    }

    pub fn extract_window(&self, window: &IqWindow) -> Result<FeatureRow> {
        self.extract(&window.samples, window.truth_occupied, window.gain_db)
    }
}

pub fn extract_features(
    window: &IqWindow,
    channel_index: usize,
    n_channels: usize,
    max_lag: usize,
) -> Result<FeatureRow> {
    FeatureExtractor::new(&FeatureConfig {
        n_channels,
        max_lag,
        channel_index: Some(channel_index),
    })?
    .extract_window(window)
}

/// Equalize label counts. Every label-0 row is kept; label-1 rows are taken
/// from the lowest gain upward until the counts match, so the surplus comes
/// off the strongest captures. Kept rows stay in their original order.
///
/// When signal rows are the minority, the first label-0 rows are kept instead.
pub fn balance_labels(rows: Vec<FeatureRow>) -> Result<Vec<FeatureRow>> {
    let keep = balance_mask(&rows)?;
    Ok(rows
        .into_iter()
        .zip(keep)
        .filter_map(|(r, k)| k.then_some(r))
        .collect())
}

/// Which rows [`balance_labels`] keeps.
pub fn balance_mask(rows: &[FeatureRow]) -> Result<Vec<bool>> {
    let n_noise = rows.iter().filter(|r| r.label == 0).count();
    let n_signal = rows.len() - n_noise;
    if n_noise == 0 {
        return Err(Error::MissingLabel(0));
    }
    if n_signal == 0 {
        return Err(Error::MissingLabel(1));
    }
    let mut keep = vec![false; rows.len()];
    if n_signal >= n_noise {
        let mut signal: Vec<usize> = (0..rows.len()).filter(|&i| rows[i].label == 1).collect();
        signal.sort_by(|&a, &b| {
            let ga = rows[a].gain_db.unwrap_or(f64::NEG_INFINITY);
            let gb = rows[b].gain_db.unwrap_or(f64::NEG_INFINITY);
            ga.total_cmp(&gb)
        });
        for &i in &signal[..n_noise] {
            keep[i] = true;
        }
        for (k, r) in keep.iter_mut().zip(rows) {
            *k |= r.label == 0;
        }
    } else {
        let mut noise_left = n_signal;
        for (k, r) in keep.iter_mut().zip(rows) {
            if r.label == 1 {
                *k = true;
            } else if noise_left > 0 {
                *k = true;
                noise_left -= 1;
            }
        }
    }
    Ok(keep)
}

/// Per-feature z-score statistics (population standard deviation).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: [f64; N_FEATURES],
    pub std: [f64; N_FEATURES],
}

impl Normalization {
    pub fn identity() -> Self {
        Normalization {
            mean: [0.0; N_FEATURES],
            std: [1.0; N_FEATURES],
        }
    }

    pub fn fit(rows: &[FeatureRow]) -> Result<Self> {
        if rows.len() < 2 {
            return Err(Error::InvalidParameter(
                "normalization needs at least 2 rows".into(),
            ));
        }
        let n = rows.len() as f64;
        let mut mean = [0.0; N_FEATURES];
        let mut std = [0.0; N_FEATURES];
        for j in 0..N_FEATURES {
            mean[j] = rows.iter().map(|r| r.features()[j]).sum::<f64>() / n;
            let var = rows
                .iter()
                .map(|r| (r.features()[j] - mean[j]).powi(2))
                .sum::<f64>()
                / n;
            std[j] = var.sqrt();
            if !(std[j] > mean[j].abs() * 1e-12) {
                return Err(Error::ZeroVariance(FEATURE_NAMES[j].into()));
            }
        }
        Ok(Normalization { mean, std })
    }

    pub fn apply_row(&self, row: &FeatureRow) -> FeatureRow {
        let f = row.features();
        let mut z = [0.0; N_FEATURES];
        for j in 0..N_FEATURES {
            z[j] = (f[j] - self.mean[j]) / self.std[j];
        }
        row.with_features(z)
    }

    pub fn apply(&self, rows: &[FeatureRow]) -> Vec<FeatureRow> {
        rows.iter().map(|r| self.apply_row(r)).collect()
    }
}

/// Feature rows for the classified channel, plus optional normalization
/// fitted on training rows.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub rows: Vec<FeatureRow>,
    pub normalization: Option<Normalization>,
}

impl Dataset {
    pub fn new(rows: Vec<FeatureRow>) -> Self {
        Dataset {
            rows,
            normalization: None,
        }
    }

    pub fn feature_names(&self) -> [&'static str; N_FEATURES] {
        FEATURE_NAMES
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn label_counts(&self) -> [usize; 2] {
        let ones = self.rows.iter().filter(|r| r.label == 1).count();
        [self.rows.len() - ones, ones]
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let err = |e: csv::Error| Error::Data(e.to_string());
        w.write_record(CSV_HEADER).map_err(err)?;
        for r in &self.rows {
            w.write_record([
                sig9(r.power),
                sig9(r.acf_kurtosis),
                sig9(r.acf_skewness),
                r.label.to_string(),
                r.gain_db.map(sig9).unwrap_or_default(),
                r.channel_index.to_string(),
            ])
            .map_err(err)?;
        }
        w.flush().map_err(|e| Error::Data(e.to_string()))
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut reader = csv::Reader::from_reader(input);
        let headers = reader
            .headers()
            .map_err(|e| Error::Data(e.to_string()))?
            .clone();
        let mut cols = [0usize; 6];
        for (slot, name) in cols.iter_mut().zip(CSV_HEADER) {
            *slot = headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::Data(format!("missing column `{name}`")))?;
        }
        let mut rows = Vec::new();
        for (line, record) in reader.records().enumerate() {
            let record = record.map_err(|e| Error::Data(e.to_string()))?;
            let bad = |what: &str| Error::Data(format!("row {}: bad {what}", line + 1));
            let num = |c: usize, what: &str| -> Result<f64> {
                let v: f64 = record[c].trim().parse().map_err(|_| bad(what))?;
                v.is_finite().then_some(v).ok_or_else(|| bad(what))
            };
            let label: u8 = record[cols[3]].trim().parse().map_err(|_| bad("label"))?;
            if label > 1 {
                return Err(bad("label"));
            }
            let gain = record[cols[4]].trim();
            rows.push(FeatureRow {
                power: num(cols[0], "power")?,
                acf_kurtosis: num(cols[1], "acf_kurtosis")?,
                acf_skewness: num(cols[2], "acf_skewness")?,
                label,
                gain_db: if gain.is_empty() {
                    None
                } else {
                    Some(num(cols[4], "gain_db")?)
                },
                channel_index: record[cols[5]]
                    .trim()
                    .parse()
                    .map_err(|_| bad("channel_index"))?,
            });
        }
        Ok(Dataset::new(rows))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file))
            .map_err(|e| e.in_file(path))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_csv(std::io::BufReader::new(file)).map_err(|e| e.in_file(path))
    }
}

pub const CSV_HEADER: [&str; 6] = [
    "power",
    "acf_kurtosis",
    "acf_skewness",
    "label",
    "gain_db",
    "channel_index",
];

/// Nine significant digits in scientific notation.
fn sig9(v: f64) -> String {
    format!("{v:.8e}")
}

/// Convenience for tests and the in-process pipeline.
pub fn to_samples(series: &[Complex64]) -> Vec<ComplexSample> {
    series
        .iter()
        .map(|x| Complex32::new(x.re as f32, x.im as f32))
        .collect()
}
