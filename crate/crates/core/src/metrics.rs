//! Trial aggregation and threshold calibration.

use serde::{Deserialize, Serialize};

use crate::detector::{threshold_for_pf, DetectionRule};
use crate::error::{Error, Result};
use crate::experiment::{hypothesis_scores, Family, SimContext};
use crate::params::SystemConfig;

/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.959_963_984_540_054;

/// Counts from one simulated window.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct TrialStats {
    /// Replicas fully inside the central window.
    pub true_starts: u64,
    /// Of those, replicas credited by some candidate.
    pub detected_starts: u64,
    /// Users with all replicas inside the central window.
    pub true_users: u64,
    /// Of those, users whose replicas were correctly grouped from some
    /// replica used as anchor.
    pub correct_users: u64,
    /// Users whose first-replica anchor obtained partners.
    pub formed_pairs: u64,
    /// Of those, partner sets that are exactly the anchor user's replicas.
    pub correct_pairs: u64,
    /// Users attributed to the central window.
    pub offered: u64,
    pub decoded: u64,
    /// Central-window length in packet durations.
    pub elapsed_packets: f64,
}

impl TrialStats {
    pub fn merge(mut self, o: &TrialStats) -> TrialStats {
        self.true_starts += o.true_starts;
        self.detected_starts += o.detected_starts;
        self.true_users += o.true_users;
        self.correct_users += o.correct_users;
        self.formed_pairs += o.formed_pairs;
        self.correct_pairs += o.correct_pairs;
        self.offered += o.offered;
        self.decoded += o.decoded;
        self.elapsed_packets += o.elapsed_packets;
        self
    }
}

/// Batch estimates with 95% confidence half-widths.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub trials: usize,
    pub pd: f64,
    pub pd_ci: f64,
    pub pcc: f64,
    pub pcc_ci: f64,
    pub plr: f64,
    pub plr_ci: f64,
    /// Spectral efficiency, b/s/Hz.
    pub xi: f64,
    pub xi_ci: f64,
    pub totals: TrialStats,
}

/// Normal-approximation half-width for a binomial proportion.
pub fn binomial_half_width(p: f64, n: u64) -> f64 {
    if n == 0 {
        return f64::NAN;
    }
    Z95 * (p * (1.0 - p) / n as f64).sqrt()
}

/// Half-width for the mean of i.i.d. samples.
pub fn mean_half_width(samples: &[f64]) -> f64 {
    let n = samples.len();
    if n < 2 {
        return f64::NAN;
    }
    let mean = samples.iter().sum::<f64>() / n as f64;
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    Z95 * (var / n as f64).sqrt()
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        f64::NAN
    } else {
        num as f64 / den as f64
    }
}

/// Reduces per-trial counts to detection, combining, loss and efficiency figures.
pub fn aggregate(stats: &[TrialStats], rate: f64) -> Result<Summary> {
    if stats.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let totals = stats.iter().fold(TrialStats::default(), |acc, s| acc.merge(s));
    if totals.offered == 0 {
        return Err(Error::EmptyBatch);
    }
    let pd = ratio(totals.detected_starts, totals.true_starts);
    let pcc = ratio(totals.correct_users, totals.true_users);
    let plr = 1.0 - ratio(totals.decoded, totals.offered);
    let xi = rate * totals.decoded as f64 / totals.elapsed_packets;
    let per_trial_xi: Vec<f64> = stats.iter().map(|s| rate * s.decoded as f64 / s.elapsed_packets).collect();
    Ok(Summary {
        trials: stats.len(),
        pd,
        pd_ci: binomial_half_width(pd, totals.true_starts),
        pcc,
        pcc_ci: binomial_half_width(pcc, totals.true_users),
        plr,
        plr_ci: binomial_half_width(plr, totals.offered),
        xi,
        xi_ci: mean_half_width(&per_trial_xi),
        totals,
    })
}

/// Outcome of threshold calibration, stored as JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Calibration {
    pub lambda: f64,
    pub target_pf: f64,
    pub g_cal: f64,
    pub es_n0_db: f64,
    pub rule: DetectionRule,
    pub h0_samples: usize,
}

impl Calibration {
    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

/// Minimum H0 sample count accepted for a target false-alarm rate.
pub fn required_trials(target_pf: f64) -> usize {
    (100.0 / target_pf).ceil() as usize
}

/// Picks the threshold whose empirical false-alarm rate under H0, at load
/// `g_cal`, equals `target_pf`. `trials` is the number of H0 test intervals.
pub fn calibrate_threshold(
    cfg: &SystemConfig,
    g_cal: f64,
    target_pf: f64,
    trials: usize,
    rule: DetectionRule,
    workers: usize,
) -> Result<Calibration> {
    if !(target_pf > 0.0 && target_pf <= 1.0) {
        return Err(Error::InvalidArgument(format!("target P_F {target_pf} outside (0, 1]")));
    }
    let required = required_trials(target_pf);
    if trials < required {
        return Err(Error::InsufficientTrials { required, actual: trials });
    }
    let cal_cfg = SystemConfig { channel_load: g_cal, ..cfg.clone() };
    let ctx = SimContext::<f64>::new(&cal_cfg)?;
    let scores = hypothesis_scores(&ctx, trials, 0, 0, Family::Calibration, workers)?;
    let h0 = match rule {
        DetectionRule::Plain => &scores.h0_plain,
        DetectionRule::InterferenceAware => &scores.h0_ia,
    };
    Ok(Calibration {
        lambda: threshold_for_pf(h0, target_pf)?,
        target_pf,
        g_cal,
        es_n0_db: cfg.es_n0_db,
        rule,
        h0_samples: h0.len(),
    })
}
