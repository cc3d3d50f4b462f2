//! In-process synthesis → features → balanced dataset, without writing IQ
//! files. Windows are synthesized and featurized in parallel; output order is
//! always (capture, window).

use crate::featex::{balance_labels, Dataset, FeatureConfig, FeatureExtractor, FeatureRow};
use crate::iqgen::{CaptureSource, SynthConfig};
use crate::{par, Result};

/// Synthesis settings with the signal placed at the center of the
/// classified channel.
pub fn aligned_synth(mut synth: SynthConfig, features: &FeatureConfig) -> SynthConfig {
    synth.signal_freq_offset =
        crate::iqgen::channel_center_offset(features.signal_channel(), features.n_channels);
    synth
}

pub fn feature_rows(sources: &[CaptureSource], extractor: &FeatureExtractor) -> Result<Vec<FeatureRow>> {
    let jobs: Vec<(usize, usize)> = sources
        .iter()
        .enumerate()
        .flat_map(|(c, s)| (0..s.n_windows).map(move |w| (c, w)))
        .collect();
    par::try_map(&jobs, |&(c, w)| {
        let src = &sources[c];
        let samples = src.window(w)?;
        extractor.extract(&samples, src.gain_db.is_some(), src.gain_db)
    })
}

/// Unbalanced feature rows for every synthesized window.
pub fn synth_rows(synth: &SynthConfig, features: &FeatureConfig) -> Result<Vec<FeatureRow>> {
    let extractor = FeatureExtractor::new(features)?;
    feature_rows(&synth.sources()?, &extractor)
}

pub fn build_dataset(synth: &SynthConfig, features: &FeatureConfig) -> Result<Dataset> {
    Ok(Dataset::new(balance_labels(synth_rows(synth, features)?)?))
}

/// Classified-channel power of `n_windows` fresh noise-only windows.
pub fn noise_powers(seed: u64, n_windows: usize, features: &FeatureConfig) -> Result<Vec<f64>> {
    let synth = SynthConfig {
        noise_windows: n_windows,
        master_seed: seed,
        ..SynthConfig::default()
    };
    let source = synth.sources()?.swap_remove(0);
    let extractor = FeatureExtractor::new(features)?;
    par::try_map_range(n_windows, |w| extractor.power(&source.window(w)?))
}
