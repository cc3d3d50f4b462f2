use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustfft::{num_complex::Complex64, FftPlanner};

use specsense::featex::{self, FeatureConfig, FeatureExtractor};
use specsense::iqgen::{self, Capture, CaptureMeta, ComplexSample, GmskParams, SynthConfig, WINDOW_LEN};
use specsense::pipeline;

fn white_noise(n: usize, seed: u64) -> Vec<ComplexSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = std::f32::consts::FRAC_1_SQRT_2;
    (0..n)
        .map(|_| {
            let re: f32 = rng.sample(StandardNormal);
            let im: f32 = rng.sample(StandardNormal);
            ComplexSample::new(re * s, im * s)
        })
        .collect()
}

#[test]
fn gmsk_spectrum_is_confined() {
    let mut rng = ChaCha8Rng::seed_from_u64(40);
    let bits: Vec<bool> = (0..4096).map(|_| rng.random()).collect();
    let params = GmskParams::default();
    let mut x = iqgen::gmsk_modulate(&bits, &params).unwrap();
    let n = x.len();
    FftPlanner::new().plan_fft_forward(n).process(&mut x);
    let sps = params.samples_per_symbol as f64;
    let mut inside = 0.0;
    let mut total = 0.0;
    for (k, v) in x.iter().enumerate() {
        let f = if k < n / 2 { k as f64 } else { k as f64 - n as f64 } / n as f64;
        let p = v.norm_sqr();
        total += p;
        // |f| <= one symbol rate, in cycles per sample
        if f.abs() * sps <= 1.0 {
            inside += p;
        }
    }
    assert!(inside / total >= 0.99, "in-band share {}", inside / total);
}

#[test]
fn white_noise_splits_evenly_across_channels() {
    let x = white_noise(WINDOW_LEN, 1);
    let total = iqgen::mean_power(&x);
    for c in featex::channelize(&x, 10).unwrap() {
        let share = featex::series_power(&c) / (total / 10.0);
        assert!((0.75..=1.25).contains(&share), "share {share}");
    }
}

#[test]
fn white_noise_acf_is_small() {
    let x: Vec<Complex64> = white_noise(WINDOW_LEN, 2)
        .iter()
        .map(|s| Complex64::new(s.re as f64, s.im as f64))
        .collect();
    let r = featex::autocorrelation(&x, 100).unwrap();
    let mean = r.iter().sum::<f64>() / r.len() as f64;
    assert!(mean < 0.03, "mean acf {mean}");
}

#[test]
fn kurtosis_of_gaussian_is_near_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let v: Vec<f64> = (0..1_000_000).map(|_| rng.sample(StandardNormal)).collect();
    let k = featex::sample_excess_kurtosis(&v).unwrap();
    assert!(k.abs() < 0.03, "kurtosis {k}");
    assert!(featex::sample_skewness(&v).unwrap().abs() < 0.03);
}

#[test]
fn capture_power_matches_gain() {
    let synth = SynthConfig {
        noise_windows: 100,
        windows_per_gain: 100,
        gains_db: vec![-20.0, 0.0, 10.0],
        ..SynthConfig::default()
    };
    for src in synth.sources().unwrap() {
        let cap = src.synthesize().unwrap();
        let expect = 1.0 + src.gain_db.map_or(0.0, |g| 10f64.powf(g / 10.0));
        let got = cap.mean_power();
        assert!((got / expect - 1.0).abs() < 0.02, "gain {:?}: {got} vs {expect}", src.gain_db);
    }
}

#[test]
fn noise_row_power_is_a_tenth() {
    let srcs = SynthConfig::default().sources().unwrap();
    let ex = FeatureExtractor::new(&FeatureConfig::default()).unwrap();
    for w in 0..5 {
        let x = srcs[0].window(w).unwrap();
        let row = ex.extract(&x, false, None).unwrap();
        assert_eq!(row.label, 0);
        let ratio = row.power / (iqgen::mean_power(&x) / 10.0);
        assert!((0.85..1.15).contains(&ratio), "ratio {ratio}");
    }
}

#[test]
fn strong_signal_beats_paired_noise() {
    let synth = SynthConfig {
        noise_windows: 20,
        windows_per_gain: 20,
        gains_db: vec![10.0],
        ..SynthConfig::default()
    };
    let rows = pipeline::synth_rows(&synth, &FeatureConfig::default()).unwrap();
    let (noise, signal) = rows.split_at(20);
    for (n, s) in noise.iter().zip(signal) {
        assert_eq!((n.label, s.label), (0, 1));
        assert!(s.power > n.power);
    }
    let mean = |r: &[featex::FeatureRow]| r.iter().map(|x| x.power).sum::<f64>() / r.len() as f64;
    assert!(mean(signal) >= 5.0 * mean(noise));
}

#[test]
fn dataset_build_is_deterministic_and_labels_follow_captures() {
    let synth = SynthConfig {
        noise_windows: 30,
        windows_per_gain: 3,
        ..SynthConfig::default()
    };
    let features = FeatureConfig::default();
    let a = pipeline::build_dataset(&synth, &features).unwrap();
    let b = pipeline::build_dataset(&synth, &features).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.label_counts(), [30, 30]);
    for r in &a.rows {
        assert_eq!(r.label == 1, r.gain_db.is_some());
        assert_eq!(r.channel_index, 5);
    }
    // the top gain loses its three rows
    assert!(a.rows.iter().all(|r| r.gain_db != Some(-13.0)));
}

fn iq_file(samples: &[ComplexSample]) -> (tempfile::TempDir, std::path::PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.iq");
    let meta = CaptureMeta {
        gain_db: None,
        sample_rate_hz: 40e6,
        center_freq_hz: 2.1e9,
        truth_occupied: false,
        seed: 0,
    };
    iqgen::write_iq(&Capture::new(samples.to_vec(), meta), &path).unwrap();
    (dir, path)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn iq_round_trip_is_bit_exact(v in prop::collection::vec((-1e30f32..1e30, -1e30f32..1e30), 0..300)) {
        let samples: Vec<ComplexSample> = v.iter().map(|&(a, b)| ComplexSample::new(a, b)).collect();
        let (_dir, path) = iq_file(&samples);
        let meta = CaptureMeta { gain_db: Some(1.5), sample_rate_hz: 1.0, center_freq_hz: 1.0, truth_occupied: true, seed: 9 };
        let back = iqgen::read_iq(&path, meta).unwrap();
        prop_assert_eq!(back.samples.len(), samples.len());
        for (x, y) in back.samples.iter().zip(&samples) {
            prop_assert_eq!(x.re.to_bits(), y.re.to_bits());
            prop_assert_eq!(x.im.to_bits(), y.im.to_bits());
        }
    }

    #[test]
    fn acf_stays_in_unit_interval(
        v in prop::collection::vec((-1e3f64..1e3, -1e3f64..1e3), 2..200),
        lag_frac in 0.0f64..1.0,
    ) {
        let s: Vec<Complex64> = v.iter().map(|&(a, b)| Complex64::new(a, b)).collect();
        prop_assume!(s.iter().any(|z| z.norm() > 1e-6));
        let max_lag = 1 + ((s.len() - 2) as f64 * lag_frac) as usize;
        for r in featex::autocorrelation(&s, max_lag).unwrap() {
            prop_assert!((0.0..=1.0 + 1e-12).contains(&r), "r = {}", r);
        }
    }

    #[test]
    fn gmsk_envelope_is_constant(bits in prop::collection::vec(any::<bool>(), 1..200)) {
        let x = iqgen::gmsk_modulate(&bits, &GmskParams::default()).unwrap();
        prop_assert_eq!(x.len(), bits.len() * 8);
        for s in &x {
            prop_assert!((s.norm() - 1.0).abs() < 1e-9);
        }
    }
}
