//! Tracking metrics computed from episode logs.

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::env::{self, EpisodeLog, TrajectorySpec, TRAINING_FREQ_RANGE};
use crate::safety::FaultRecord;

pub const BIN_WIDTH_HZ: f64 = 0.05;

/// Mean absolute value.
pub fn mae(errors: &[f64]) -> Result<f64, HarnessError> {
    if errors.is_empty() {
        return Err(HarnessError::EmptyInput("mae"));
    }
    Ok(errors.iter().map(|e| e.abs()).sum::<f64>() / errors.len() as f64)
}

/// `(max|F| − A) / A × 100`.
pub fn overshoot_pct(trace: &[f64], amplitude: f64) -> Result<f64, HarnessError> {
    if trace.is_empty() {
        return Err(HarnessError::EmptyInput("overshoot_pct"));
    }
    if !(amplitude > 0.0) {
        return Err(HarnessError::Config(format!("amplitude must be > 0, got {amplitude}")));
    }
    let peak = trace.iter().map(|f| f.abs()).fold(0.0, f64::max);
    Ok((peak - amplitude) / amplitude * 100.0)
}

/// Absolute error of the samples whose instantaneous frequency falls in `[lo, hi)`
/// (the last bin is closed).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FreqBin {
    pub lo: f64,
    pub hi: f64,
    pub samples: usize,
    /// `None` when no sample fell in the bin.
    pub mae: Option<f64>,
}

/// Bin edges covering the training band in 0.05 Hz steps.
pub fn bin_edges() -> Vec<(f64, f64)> {
    let (lo, hi) = TRAINING_FREQ_RANGE;
    let n = ((hi - lo) / BIN_WIDTH_HZ).round() as usize;
    (0..n).map(|i| (lo + i as f64 * BIN_WIDTH_HZ, if i + 1 == n { hi } else { lo + (i + 1) as f64 * BIN_WIDTH_HZ })).collect()
}

/// Bins `(frequency, |error|)` samples; samples outside the band are ignored.
pub fn frequency_bins(samples: impl IntoIterator<Item = (f64, f64)>) -> Vec<FreqBin> {
    let edges = bin_edges();
    let mut sums = vec![(0usize, 0.0f64); edges.len()];
    let last = edges.len() - 1;
    for (freq, err) in samples {
        let hit = edges
            .iter()
            .position(|&(lo, hi)| freq >= lo - 1e-12 && (freq < hi - 1e-12 || (freq <= hi + 1e-12 && hi == edges[last].1)));
        if let Some(i) = hit {
            sums[i].0 += 1;
            sums[i].1 += err.abs();
        }
    }
    edges
        .into_iter()
        .zip(sums)
        .map(|((lo, hi), (n, s))| FreqBin { lo, hi, samples: n, mae: (n > 0).then(|| s / n as f64) })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub trajectory: TrajectorySpec,
    pub steps: usize,
    /// N
    pub mae: f64,
    pub max_overshoot_pct: f64,
    /// N
    pub peak_force: f64,
    pub bins: Vec<FreqBin>,
    /// No e-stop during the episode.
    pub stable: bool,
    pub fault: Option<FaultRecord>,
    /// Where the underlying episode log lives, when it was written.
    pub episode_ref: Option<String>,
}

impl EvalReport {
    pub fn from_log(log: &EpisodeLog) -> Result<Self, HarnessError> {
        let errors: Vec<f64> = log.steps.iter().map(|s| s.f_des - s.f).collect();
        let forces: Vec<f64> = log.steps.iter().map(|s| s.f).collect();
        let amplitude = log.spec.amplitude();
        let bins = frequency_bins(log.steps.iter().map(|s| (log.spec.instantaneous_frequency(s.t), s.f_des - s.f)));
        Ok(Self {
            trajectory: log.spec,
            steps: log.steps.len(),
            mae: mae(&errors)?,
            max_overshoot_pct: overshoot_pct(&forces, amplitude)?,
            peak_force: forces.iter().map(|f| f.abs()).fold(0.0, f64::max),
            bins,
            stable: !log.summary.truncated,
            fault: log.summary.fault,
            episode_ref: None,
        })
    }

    /// MAE of the bin starting at `lo` (Hz).
    pub fn bin_mae(&self, lo: f64) -> Option<f64> {
        self.bins.iter().find(|b| (b.lo - lo).abs() < 1e-9).and_then(|b| b.mae)
    }
}

/// Metrics recomputed from a stored log, with consistency checks against
/// the values the log itself carries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayReport {
    pub report: EvalReport,
    pub recomputed_total_reward: f64,
    pub logged_total_reward: f64,
    /// Steps whose logged reward differs from the reward recomputed from its forces.
    pub reward_mismatches: usize,
    /// Steps whose logged desired force differs from the trajectory generator.
    pub trajectory_mismatches: usize,
}

impl ReplayReport {
    pub fn is_consistent(&self) -> bool {
        self.reward_mismatches == 0
            && self.trajectory_mismatches == 0
            && self.recomputed_total_reward == self.logged_total_reward
    }
}

pub fn replay(log: &EpisodeLog) -> Result<ReplayReport, HarnessError> {
    let report = EvalReport::from_log(log)?;
    let mut total = 0.0;
    let mut reward_mismatches = 0;
    let mut trajectory_mismatches = 0;
    for s in &log.steps {
        let r = env::reward(s.f_des, s.f, log.config.reward_divisor);
        total += r;
        if r != s.reward {
            reward_mismatches += 1;
        }
        if env::desired_force(&log.spec, s.t).map_or(true, |f| f != s.f_des) {
            trajectory_mismatches += 1;
        }
    }
    Ok(ReplayReport {
        report,
        recomputed_total_reward: total,
        logged_total_reward: log.summary.total_reward,
        reward_mismatches,
        trajectory_mismatches,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn mae_examples() {
        assert_eq!(mae(&[1.0, -2.0, 3.0]).unwrap(), 2.0);
        assert_eq!(mae(&[0.0; 10]).unwrap(), 0.0);
        assert!(mae(&[]).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let noise: Vec<f64> = (0..100_000).map(|_| rng.random_range(-10.0..10.0)).collect();
        assert!((mae(&noise).unwrap() - 5.0).abs() < 0.1);
    }

    #[test]
    fn overshoot_examples() {
        assert!((overshoot_pct(&[0.0, 175.0, -20.0], 50.0).unwrap() - 250.0).abs() < 1e-12);
        assert!((overshoot_pct(&[-75.0, 10.0], 50.0).unwrap() - 50.0).abs() < 1e-12);
        assert_eq!(overshoot_pct(&[50.0], 50.0).unwrap(), 0.0);
        assert_eq!(overshoot_pct(&[0.0], 50.0).unwrap(), -100.0);
        assert!(overshoot_pct(&[], 50.0).is_err());
    }

    #[test]
    fn bins_cover_band_exactly() {
        let edges = bin_edges();
        assert_eq!(edges.len(), 6);
        assert_eq!(edges[0].0, 0.05);
        assert_eq!(edges[5].1, 0.35);
        for w in edges.windows(2) {
            assert_eq!(w[0].1, w[1].0);
        }
        let bins = frequency_bins([(0.05, 1.0), (0.0999, 3.0), (0.35, 2.0), (0.5, 9.0), (0.2, -4.0)]);
        assert_eq!(bins[0].samples, 2);
        assert_eq!(bins[0].mae, Some(2.0));
        assert_eq!(bins[3].mae, Some(4.0));
        assert_eq!(bins[5].mae, Some(2.0));
        assert_eq!(bins[1].mae, None);
        assert_eq!(bins.iter().map(|b| b.samples).sum::<usize>(), 4);
    }
}
