//! Energy-detection baseline.

use serde::{Deserialize, Serialize};

use crate::featex::FeatureRow;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyThreshold {
    pub threshold: f64,
    pub pfa_target: f64,
    pub n_calibration: usize,
}

/// Empirical-quantile threshold: the `ceil(N (1 - pfa))`-th smallest noise
/// power, so at most `pfa * N` calibration values lie strictly above it.
pub fn calibrate_threshold(noise_powers: &[f64], pfa: f64) -> Result<EnergyThreshold> {
    if !(pfa > 0.0 && pfa < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "pfa must be in (0, 1), got {pfa}"
        )));
    }
    let needed = (1.0 / pfa).ceil() as usize;
    if noise_powers.len() < needed {
        return Err(Error::InsufficientCalibration {
            needed,
            got: noise_powers.len(),
        });
    }
    if let Some(p) = noise_powers.iter().find(|p| !p.is_finite() || **p < 0.0) {
        return Err(Error::Data(format!("invalid calibration power {p}")));
    }
    let mut sorted = noise_powers.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    // guard against 0.99 * 100 = 98.99999999999999
    let rank = ((n as f64 * (1.0 - pfa)) - 1e-9).ceil().max(1.0) as usize;
    let threshold = sorted[rank.min(n) - 1];
    if !(threshold > 0.0) {
        return Err(Error::Data("calibration threshold is not positive".into()));
    }
    Ok(EnergyThreshold {
        threshold,
        pfa_target: pfa,
        n_calibration: n,
    })
}

/// Occupied iff the power is strictly above the threshold.
pub fn energy_decide(power: f64, th: &EnergyThreshold) -> u8 {
    (power > th.threshold) as u8
}

pub fn energy_accuracy(rows: &[FeatureRow], th: &EnergyThreshold) -> Result<f64> {
    if rows.is_empty() {
        return Err(Error::EmptyInput);
    }
    let correct = rows
        .iter()
        .filter(|r| energy_decide(r.power, th) == r.label)
        .count();
    Ok(correct as f64 / rows.len() as f64)
}

/// Calibrate on the label-0 rows of `rows`.
pub fn calibrate_on_rows(rows: &[FeatureRow], pfa: f64) -> Result<EnergyThreshold> {
    let noise: Vec<f64> = rows.iter().filter(|r| r.label == 0).map(|r| r.power).collect();
    calibrate_threshold(&noise, pfa)
}
