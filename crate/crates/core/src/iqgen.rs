//! Labeled IQ capture synthesis and raw IQ file I/O.
//!
//! A capture is either pure unit-power AWGN (transmitter off) or a GMSK burst
//! at a given power plus the same unit-power AWGN. Because the noise floor is
//! fixed, `gain_db` is also the wideband SNR in dB.
//!
//! Each window of a capture is synthesized from its own ChaCha stream derived
//! from `(master_seed, capture_index, window_index)`, so windows can be
//! generated in any order (or streamed without materializing the capture) and
//! the result is always the same.

use std::f64::consts::PI;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

pub use rustfft::num_complex::{Complex32, Complex64};

use crate::rng::{self, tag};
use crate::{par, Error, Result};

/// Stored sample type; matches the on-disk 32-bit float format.
pub type ComplexSample = Complex32;

/// Samples per analysis window.
pub const WINDOW_LEN: usize = 10_000;

pub const DEFAULT_SAMPLE_RATE_HZ: f64 = 40e6;
pub const DEFAULT_CENTER_FREQ_HZ: f64 = 2.1e9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GmskParams {
    pub samples_per_symbol: usize,
    /// Bandwidth-time product of the Gaussian frequency filter.
    pub bt: f64,
    pub modulation_index: f64,
    pub pulse_span_symbols: usize,
}

impl Default for GmskParams {
    fn default() -> Self {
        GmskParams {
            samples_per_symbol: 8,
            bt: 0.3,
            modulation_index: 0.5,
            pulse_span_symbols: 4,
        }
    }
}

impl GmskParams {
    pub fn validate(&self) -> Result<()> {
        if self.samples_per_symbol < 2 {
            return Err(Error::InvalidParameter(
                "samples_per_symbol must be at least 2".into(),
            ));
        }
        if !(self.bt > 0.0 && self.bt <= 1.0) {
            return Err(Error::InvalidParameter("bt must be in (0, 1]".into()));
        }
        if self.modulation_index != 0.5 {
            return Err(Error::InvalidParameter(
                "GMSK modulation index is fixed at 0.5".into(),
            ));
        }
        if self.pulse_span_symbols == 0 {
            return Err(Error::InvalidParameter(
                "pulse_span_symbols must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Truncated Gaussian frequency filter, normalized to unit sum.
    pub fn gaussian_taps(&self) -> Vec<f64> {
        let len = self.pulse_span_symbols * self.samples_per_symbol;
        let center = (len as f64 - 1.0) / 2.0;
        let alpha = 2.0 * PI * PI * self.bt * self.bt / std::f64::consts::LN_2;
        let mut taps: Vec<f64> = (0..len)
            .map(|j| {
                let t = (j as f64 - center) / self.samples_per_symbol as f64;
                (-alpha * t * t).exp()
            })
            .collect();
        let sum: f64 = taps.iter().sum();
        taps.iter_mut().for_each(|t| *t /= sum);
        taps
    }
}

/// Streaming GMSK modulator. NRZ symbols are upsampled, run through the
/// Gaussian filter and integrated into phase one sample at a time, so
/// successive calls produce a phase-continuous signal.
#[derive(Debug, Clone)]
pub struct GmskModulator {
    taps: Vec<f64>,
    history: Vec<f64>,
    head: usize,
    phase: f64,
    phase_step: f64,
    sps: usize,
}

impl GmskModulator {
    pub fn new(params: &GmskParams) -> Result<Self> {
        params.validate()?;
        let taps = params.gaussian_taps();
        Ok(GmskModulator {
            history: vec![0.0; taps.len()],
            taps,
            head: 0,
            phase: 0.0,
            phase_step: PI * params.modulation_index / params.samples_per_symbol as f64,
            sps: params.samples_per_symbol,
        })
    }

    pub fn with_phase(mut self, phase: f64) -> Self {
        self.phase = phase;
        self
    }

    /// Number of symbols after which the filter has no start-up transient.
    pub fn settling_symbols(&self) -> usize {
        self.taps.len().div_ceil(self.sps)
    }

    pub fn push_bit(&mut self, bit: bool, out: &mut Vec<Complex64>) {
        let nrz = if bit { 1.0 } else { -1.0 };
        let len = self.taps.len();
        for _ in 0..self.sps {
            self.head = (self.head + 1) % len;
            self.history[self.head] = nrz;
            // taps[j] multiplies the value pushed j samples ago
            let mut freq = 0.0;
            for (j, tap) in self.taps.iter().enumerate() {
                freq += tap * self.history[(self.head + len - j) % len];
            }
            self.phase = (self.phase + self.phase_step * freq).rem_euclid(2.0 * PI);
            out.push(Complex64::from_polar(1.0, self.phase));
        }
    }
}

/// Modulate a bit sequence; output has `bits.len() * samples_per_symbol`
/// unit-magnitude samples.
pub fn gmsk_modulate(bits: &[bool], params: &GmskParams) -> Result<Vec<Complex64>> {
    if bits.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut modulator = GmskModulator::new(params)?;
    let mut out = Vec::with_capacity(bits.len() * params.samples_per_symbol);
    for &bit in bits {
        modulator.push_bit(bit, &mut out);
    }
    Ok(out)
}

fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R, sigma: f64) -> Complex64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re * sigma, im * sigma)
}

/// Add circular complex white Gaussian noise of total variance `noise_power`.
pub fn add_awgn(samples: &[Complex64], noise_power: f64, seed: u64) -> Result<Vec<Complex64>> {
    if !(noise_power >= 0.0) || !noise_power.is_finite() {
        return Err(Error::InvalidParameter(
            "noise_power must be finite and non-negative".into(),
        ));
    }
    if noise_power == 0.0 {
        return Ok(samples.to_vec());
    }
    let sigma = (noise_power / 2.0).sqrt();
    let mut rng = rng::stream(seed, &[]);
    Ok(samples
        .iter()
        .map(|&s| s + complex_gaussian(&mut rng, sigma))
        .collect())
}

/// Normalized frequency (cycles/sample) at the center of `channel` when the
/// band is cut into `n_channels` equal channels, lowest frequency first.
pub fn channel_center_offset(channel: usize, n_channels: usize) -> f64 {
    (channel as f64 + 0.5) / n_channels as f64 - 0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub noise_windows: usize,
    pub windows_per_gain: usize,
    pub gains_db: Vec<f64>,
    pub gmsk: GmskParams,
    pub sample_rate_hz: f64,
    pub center_freq_hz: f64,
    /// Baseband frequency of the transmitted signal, cycles per sample.
    pub signal_freq_offset: f64,
    pub master_seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            noise_windows: 2000,
            windows_per_gain: 200,
            gains_db: default_gains_db(),
            gmsk: GmskParams::default(),
            sample_rate_hz: DEFAULT_SAMPLE_RATE_HZ,
            center_freq_hz: DEFAULT_CENTER_FREQ_HZ,
            signal_freq_offset: channel_center_offset(5, 10),
            master_seed: 0,
        }
    }
}

/// Eleven levels from -23 dB to -13 dB in 1 dB steps: the transition region
/// where a 1%-Pfa energy detector on a tenth of the band starts to miss.
pub fn default_gains_db() -> Vec<f64> {
    (0..11).map(|i| -23.0 + i as f64).collect()
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.gains_db.is_empty() {
            return Err(Error::InvalidParameter("gain list is empty".into()));
        }
        if let Some(g) = self.gains_db.iter().find(|g| !g.is_finite()) {
            return Err(Error::InvalidParameter(format!("gain {g} dB is not finite")));
        }
        if self.noise_windows == 0 || self.windows_per_gain == 0 {
            return Err(Error::InvalidParameter(
                "window counts must be at least 1".into(),
            ));
        }
        if !(self.signal_freq_offset.abs() <= 0.5) {
            return Err(Error::InvalidParameter(
                "signal_freq_offset must be within [-0.5, 0.5]".into(),
            ));
        }
        self.gmsk.validate()
    }

    /// One source per capture: the noise-only capture first, then one per gain.
    pub fn sources(&self) -> Result<Vec<CaptureSource>> {
        self.validate()?;
        let noise = std::iter::once((None, self.noise_windows));
        let signal = self.gains_db.iter().map(|&g| (Some(g), self.windows_per_gain));
        Ok(noise
            .chain(signal)
            .enumerate()
            .map(|(index, (gain_db, n_windows))| CaptureSource {
                index,
                gain_db,
                n_windows,
                seed: rng::derive(self.master_seed, &[tag::CAPTURE, index as u64]),
                gmsk: self.gmsk,
                signal_freq_offset: self.signal_freq_offset,
                sample_rate_hz: self.sample_rate_hz,
                center_freq_hz: self.center_freq_hz,
            })
            .collect())
    }
}

/// Recipe for one capture; windows can be produced independently.
#[derive(Debug, Clone, PartialEq)]
pub struct CaptureSource {
    pub index: usize,
    pub gain_db: Option<f64>,
    pub n_windows: usize,
    pub seed: u64,
    pub gmsk: GmskParams,
    pub signal_freq_offset: f64,
    pub sample_rate_hz: f64,
    pub center_freq_hz: f64,
}

impl CaptureSource {
    pub fn meta(&self) -> CaptureMeta {
        CaptureMeta {
            gain_db: self.gain_db,
            sample_rate_hz: self.sample_rate_hz,
            center_freq_hz: self.center_freq_hz,
            truth_occupied: self.gain_db.is_some(),
            seed: self.seed,
        }
    }

    pub fn window(&self, window_index: usize) -> Result<Vec<ComplexSample>> {
        let mut rng = rng::stream(self.seed, &[window_index as u64]);
        let first_sample = (window_index * WINDOW_LEN) as f64;
        let signal = match self.gain_db {
            None => None,
            Some(gain_db) => {
                let amplitude = 10f64.powf(gain_db / 10.0).sqrt();
                let mut modulator =
                    GmskModulator::new(&self.gmsk)?.with_phase(rng.random::<f64>() * 2.0 * PI);
                let warmup = modulator.settling_symbols() * self.gmsk.samples_per_symbol;
                let n_symbols = (WINDOW_LEN + warmup).div_ceil(self.gmsk.samples_per_symbol);
                let mut baseband = Vec::with_capacity(n_symbols * self.gmsk.samples_per_symbol);
                for _ in 0..n_symbols {
                    modulator.push_bit(rng.random::<bool>(), &mut baseband);
                }
                Some((amplitude, baseband.split_off(warmup)))
            }
        };
        let sigma = std::f64::consts::FRAC_1_SQRT_2;
        let samples = (0..WINDOW_LEN)
            .map(|n| {
                let mut x = complex_gaussian(&mut rng, sigma);
                if let Some((amplitude, baseband)) = &signal {
                    let cycles = (self.signal_freq_offset * (first_sample + n as f64)).fract();
                    x += baseband[n] * Complex64::from_polar(*amplitude, 2.0 * PI * cycles);
                }
                Complex32::new(x.re as f32, x.im as f32)
            })
            .collect();
        Ok(samples)
    }

    pub fn synthesize(&self) -> Result<Capture> {
        let windows = par::try_map_range(self.n_windows, |w| self.window(w))?;
        Ok(Capture::new(windows.concat(), self.meta()))
    }
}

/// Synthesize the full labeled capture set described by `config`.
pub fn synth_capture_set(config: &SynthConfig) -> Result<Vec<Capture>> {
    config.sources()?.iter().map(CaptureSource::synthesize).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Capture {
    pub samples: Vec<ComplexSample>,
    pub gain_db: Option<f64>,
    pub sample_rate_hz: f64,
    pub center_freq_hz: f64,
    pub truth_occupied: bool,
    pub seed: u64,
}

impl Capture {
    pub fn new(samples: Vec<ComplexSample>, meta: CaptureMeta) -> Self {
        Capture {
            samples,
            gain_db: meta.gain_db,
            sample_rate_hz: meta.sample_rate_hz,
            center_freq_hz: meta.center_freq_hz,
            truth_occupied: meta.truth_occupied,
            seed: meta.seed,
        }
    }

    pub fn meta(&self) -> CaptureMeta {
        CaptureMeta {
            gain_db: self.gain_db,
            sample_rate_hz: self.sample_rate_hz,
            center_freq_hz: self.center_freq_hz,
            truth_occupied: self.truth_occupied,
            seed: self.seed,
        }
    }

    pub fn mean_power(&self) -> f64 {
        mean_power(&self.samples)
    }
}

pub fn mean_power(samples: &[ComplexSample]) -> f64 {
    let sum: f64 = samples
        .iter()
        .map(|s| (s.re as f64).powi(2) + (s.im as f64).powi(2))
        .sum();
    sum / samples.len() as f64
}

/// Sidecar metadata stored next to each raw IQ file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaptureMeta {
    #[serde(with = "gain_field")]
    pub gain_db: Option<f64>,
    pub sample_rate_hz: f64,
    pub center_freq_hz: f64,
    pub truth_occupied: bool,
    pub seed: u64,
}

impl CaptureMeta {
    pub fn validate(&self) -> Result<()> {
        if self.truth_occupied != self.gain_db.is_some() {
            return Err(Error::Data(
                "truth_occupied must be false exactly when gain_db is \"noise\"".into(),
            ));
        }
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let meta: CaptureMeta = serde_json::from_str(&text)
            .map_err(|e| Error::Data(format!("corrupt sidecar: {e}")).in_file(path))?;
        meta.validate().map_err(|e| e.in_file(path))?;
        Ok(meta)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self).expect("sidecar serializes");
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// `gain_db` is a number, or the string "noise" for transmitter-off captures.
mod gain_field {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Db(f64),
        Tag(String),
    }

    pub fn serialize<S: Serializer>(value: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
        match value {
            Some(g) => Repr::Db(*g).serialize(s),
            None => Repr::Tag("noise".into()).serialize(s),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Db(g) => Ok(Some(g)),
            Repr::Tag(t) if t == "noise" => Ok(None),
            Repr::Tag(t) => Err(serde::de::Error::custom(format!(
                "gain_db must be a number or \"noise\", got {t:?}"
            ))),
        }
    }
}

/// Write interleaved little-endian f32 `re, im` pairs with no header.
pub fn write_iq(capture: &Capture, path: &Path) -> Result<()> {
    if let Some(i) = capture
        .samples
        .iter()
        .position(|s| !s.re.is_finite() || !s.im.is_finite())
    {
        return Err(Error::NonFiniteSample(i));
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut writer = BufWriter::new(file);
    encode_iq(&capture.samples, &mut writer)
        .and_then(|_| writer.flush())
        .map_err(|e| Error::io(path, e))
}

/// Append samples in the raw IQ layout used by [`write_iq`].
pub fn encode_iq<W: Write>(samples: &[ComplexSample], out: &mut W) -> std::io::Result<()> {
    for s in samples {
        out.write_all(&s.re.to_le_bytes())?;
        out.write_all(&s.im.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_iq(path: &Path, meta: CaptureMeta) -> Result<Capture> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let samples = decode_iq(&bytes, 0)?;
    Ok(Capture::new(samples, meta))
}

fn decode_iq(bytes: &[u8], first_index: usize) -> Result<Vec<ComplexSample>> {
    if !bytes.len().is_multiple_of(8) {
        return Err(Error::MalformedIq);
    }
    bytes
        .chunks_exact(8)
        .enumerate()
        .map(|(i, chunk)| {
            let re = f32::from_le_bytes(chunk[0..4].try_into().unwrap());
            let im = f32::from_le_bytes(chunk[4..8].try_into().unwrap());
            if re.is_finite() && im.is_finite() {
                Ok(Complex32::new(re, im))
            } else {
                Err(Error::NonFiniteSample(first_index + i))
            }
        })
        .collect()
}

/// Reads a raw IQ file one window at a time. A trailing partial window is
/// dropped, matching [`crate::featex::window_split`].
pub struct IqWindowReader {
    reader: BufReader<File>,
    remaining: usize,
    read: usize,
    window_len: usize,
}

impl IqWindowReader {
    pub fn open(path: &Path, window_len: usize) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let len = file.metadata().map_err(|e| Error::io(path, e))?.len() as usize;
        if !len.is_multiple_of(8) {
            return Err(Error::MalformedIq.in_file(path));
        }
        Ok(IqWindowReader {
            reader: BufReader::new(file),
            remaining: len / 8 / window_len,
            read: 0,
            window_len,
        })
    }

    pub fn n_windows(&self) -> usize {
        self.remaining
    }
}

impl Iterator for IqWindowReader {
    type Item = Result<Vec<ComplexSample>>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.remaining == 0 {
            return None;
        }
        self.remaining -= 1;
        let mut buf = vec![0u8; self.window_len * 8];
        if let Err(e) = self.reader.read_exact(&mut buf) {
            return Some(Err(Error::Data(format!("short read: {e}"))));
        }
        let out = decode_iq(&buf, self.read * self.window_len);
        self.read += 1;
        Some(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn phase_diff(a: Complex64, b: Complex64) -> f64 {
        (b * a.conj()).arg()
    }

    #[test]
    fn constant_bits_advance_quarter_turn_per_symbol() {
        let params = GmskParams::default();
        let out = gmsk_modulate(&[true; 64], &params).unwrap();
        let sps = params.samples_per_symbol;
        for sym in params.pulse_span_symbols + 1..64 {
            let advance = phase_diff(out[(sym - 1) * sps], out[sym * sps]);
            assert!((advance - PI / 2.0).abs() < 1e-6, "symbol {sym}: {advance}");
        }
        let out = gmsk_modulate(&[false; 64], &params).unwrap();
        let advance = phase_diff(out[40 * sps], out[41 * sps]);
        assert!((advance + PI / 2.0).abs() < 1e-6);
    }

    #[test]
    fn output_length_and_constant_envelope() {
        let bits: Vec<bool> = (0..300).map(|i| (i * 7 + i / 3) % 5 < 2).collect();
        let out = gmsk_modulate(&bits, &GmskParams::default()).unwrap();
        assert_eq!(out.len(), 300 * 8);
        assert!(out.iter().all(|s| (s.norm() - 1.0).abs() < 1e-9));
    }

    #[test]
    fn empty_bits_rejected() {
        assert!(matches!(
            gmsk_modulate(&[], &GmskParams::default()),
            Err(Error::EmptyInput)
        ));
    }

    #[test]
    fn bad_params_rejected() {
        let mut p = GmskParams { samples_per_symbol: 1, ..GmskParams::default() };
        assert!(p.validate().is_err());
        p = GmskParams::default();
        p.modulation_index = 0.7;
        assert!(p.validate().is_err());
        p = GmskParams::default();
        p.bt = 0.0;
        assert!(p.validate().is_err());
    }

    #[test]
    fn streaming_matches_one_shot() {
        let params = GmskParams::default();
        let bits: Vec<bool> = (0..50).map(|i| i % 3 == 0).collect();
        let whole = gmsk_modulate(&bits, &params).unwrap();
        let mut m = GmskModulator::new(&params).unwrap();
        let mut parts = Vec::new();
        for &b in &bits {
            m.push_bit(b, &mut parts);
        }
        assert_eq!(whole, parts);
    }

    #[test]
    fn awgn_zero_power_is_identity() {
        let x: Vec<Complex64> = (0..10).map(|i| Complex64::new(i as f64, -1.0)).collect();
        assert_eq!(add_awgn(&x, 0.0, 9).unwrap(), x);
        assert!(add_awgn(&x, -1.0, 9).is_err());
    }

    #[test]
    fn awgn_is_deterministic_and_calibrated() {
        let zeros = vec![Complex64::new(0.0, 0.0); 1_000_000];
        let a = add_awgn(&zeros, 1.0, 42).unwrap();
        let b = add_awgn(&zeros, 1.0, 42).unwrap();
        assert_eq!(a, b);
        let power = a.iter().map(|s| s.norm_sqr()).sum::<f64>() / a.len() as f64;
        assert!((power - 1.0).abs() < 0.01, "{power}");
    }

    #[test]
    fn capture_set_layout() {
        let cfg = SynthConfig {
            noise_windows: 3,
            windows_per_gain: 2,
            gains_db: vec![-10.0, -8.0, 0.0],
            ..SynthConfig::default()
        };
        let set = synth_capture_set(&cfg).unwrap();
        assert_eq!(set.len(), 4);
        assert_eq!(set[0].samples.len(), 3 * WINDOW_LEN);
        assert!(!set[0].truth_occupied && set[0].gain_db.is_none());
        for c in &set[1..] {
            assert_eq!(c.samples.len(), 2 * WINDOW_LEN);
            assert!(c.truth_occupied && c.gain_db.is_some());
        }
        assert_eq!(set, synth_capture_set(&cfg).unwrap());
    }

    #[test]
    fn default_sweep_has_eleven_levels() {
        let cfg = SynthConfig::default();
        assert_eq!(cfg.sources().unwrap().len(), 12);
        assert_eq!(cfg.gains_db.first(), Some(&-23.0));
        assert_eq!(cfg.gains_db.last(), Some(&-13.0));
    }

    #[test]
    fn synth_config_validation() {
        let empty = SynthConfig {
            gains_db: vec![],
            ..SynthConfig::default()
        };
        assert!(empty.validate().is_err());
        let inf = SynthConfig {
            gains_db: vec![f64::NEG_INFINITY],
            ..SynthConfig::default()
        };
        assert!(inf.validate().is_err());
    }

    #[test]
    fn zero_db_capture_power_is_signal_plus_noise() {
        let cfg = SynthConfig {
            noise_windows: 1,
            windows_per_gain: 100,
            gains_db: vec![0.0],
            ..SynthConfig::default()
        };
        let sources = cfg.sources().unwrap();
        let capture = sources[1].synthesize().unwrap();
        let power = capture.mean_power();
        assert!((power - 2.0).abs() < 0.04, "{power}");
    }

    #[test]
    fn window_order_does_not_matter() {
        let cfg = SynthConfig::default();
        let src = &cfg.sources().unwrap()[3];
        let late = src.window(7).unwrap();
        let _ = src.window(2).unwrap();
        assert_eq!(late, src.window(7).unwrap());
    }

    #[test]
    fn iq_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.iq");
        let meta = CaptureMeta {
            gain_db: Some(-3.5),
            sample_rate_hz: 40e6,
            center_freq_hz: 2.1e9,
            truth_occupied: true,
            seed: 11,
        };
        let samples: Vec<Complex32> = (0..37)
            .map(|i| Complex32::new(i as f32 * 0.25 - 3.0, (i as f32).sin()))
            .collect();
        let capture = Capture::new(samples, meta);
        write_iq(&capture, &path).unwrap();
        assert_eq!(std::fs::metadata(&path).unwrap().len(), 37 * 8);
        assert_eq!(read_iq(&path, meta).unwrap(), capture);

        std::fs::write(&path, [0u8; 12]).unwrap();
        let err = read_iq(&path, meta).unwrap_err();
        assert_eq!(err.to_string(), "malformed IQ file");

        std::fs::write(&path, [0u8; 16]).unwrap();
        let two = read_iq(&path, meta).unwrap();
        assert_eq!(two.samples, vec![Complex32::new(0.0, 0.0); 2]);

        let mut nan = Vec::new();
        nan.extend_from_slice(&1f32.to_le_bytes());
        nan.extend_from_slice(&f32::NAN.to_le_bytes());
        std::fs::write(&path, nan).unwrap();
        assert!(matches!(read_iq(&path, meta), Err(Error::NonFiniteSample(0))));
    }

    #[test]
    fn window_reader_drops_partial_tail() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.iq");
        let meta = SynthConfig::default().sources().unwrap()[0].meta();
        let samples: Vec<Complex32> = (0..25).map(|i| Complex32::new(i as f32, 0.0)).collect();
        write_iq(&Capture::new(samples, meta), &path).unwrap();
        let windows: Vec<_> = IqWindowReader::open(&path, 10)
            .unwrap()
            .collect::<Result<_>>()
            .unwrap();
        assert_eq!(windows.len(), 2);
        assert_eq!(windows[1][0], Complex32::new(10.0, 0.0));
    }

    #[test]
    fn sidecar_gain_encoding() {
        let noise = CaptureMeta {
            gain_db: None,
            sample_rate_hz: 40e6,
            center_freq_hz: 2.1e9,
            truth_occupied: false,
            seed: 1,
        };
        let text = serde_json::to_string(&noise).unwrap();
        assert!(text.contains("\"gain_db\":\"noise\""));
        assert_eq!(serde_json::from_str::<CaptureMeta>(&text).unwrap(), noise);
        let bad = text.replace("\"noise\"", "\"loud\"");
        assert!(serde_json::from_str::<CaptureMeta>(&bad).is_err());
        let inconsistent = CaptureMeta {
            truth_occupied: true,
            ..noise
        };
        assert!(inconsistent.validate().is_err());
    }
}
