//! Sync-word detection: non-coherent and interference-aware soft correlation,
//! window scanning with local-peak suppression, and ROC bookkeeping.

use std::fmt;
use std::str::FromStr;

use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{SyncWord, INTERFERER_POWER};
use crate::scalar::Scalar;
use crate::traffic::GroundTruth;
use crate::waveform::SignalBuffer;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectionRule {
    /// |Σ y_i* s_i|
    Plain,
    /// Plain correlation scaled by the noise-plus-interference variance,
    /// minus the sync-word energy correction.
    InterferenceAware,
}

impl FromStr for DetectionRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plain" => Ok(Self::Plain),
            "ia" | "interference_aware" => Ok(Self::InterferenceAware),
            other => Err(Error::InvalidArgument(format!("unknown rule {other:?}"))),
        }
    }
}

impl fmt::Display for DetectionRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Plain => "plain",
            Self::InterferenceAware => "ia",
        })
    }
}

#[inline]
fn correlate<T: Scalar>(taps: impl Iterator<Item = Complex<T>>, sync: &[i8]) -> Complex<T> {
    let mut acc = Complex::new(T::zero(), T::zero());
    for (y, &s) in taps.zip(sync) {
        if s > 0 {
            acc.re += y.re;
            acc.im -= y.im;
        } else {
            acc.re -= y.re;
            acc.im += y.im;
        }
    }
    acc
}

/// Non-coherent soft correlation of `n_sw` symbol taps against the sync word.
pub fn lambda1<T: Scalar>(y: &[Complex<T>], s: &SyncWord) -> Result<T> {
    if y.len() != s.len() {
        return Err(Error::LengthMismatch { expected: s.len(), actual: y.len() });
    }
    Ok(correlate(y.iter().copied(), s.symbols()).norm())
}

/// Gain on the correlation term of the interference-aware rule. Averaging
/// the Gaussian likelihood ratio over the unknown carrier phase gives
/// `I0(2·|Σ y_i* s_i| / v)`, so the large-argument approximation of its
/// logarithm carries a factor 2 on the correlation.
pub const IA_CORRELATION_GAIN: f64 = 2.0;

/// Interference-aware rule for interference variance `sigma_i2` and noise
/// variance `two_sigma2`: `(g·Λ1 − n_sw) / (σ_I² + 2σ²)` with
/// `g = IA_CORRELATION_GAIN`.
pub fn lambda1_ia<T: Scalar>(y: &[Complex<T>], s: &SyncWord, sigma_i2: T, two_sigma2: T) -> Result<T> {
    lambda1_ia_with_gain(y, s, sigma_i2, two_sigma2, T::lit(IA_CORRELATION_GAIN))
}

/// Interference-aware rule with an explicit correlation gain `gain`:
/// `(gain·Λ1 − n_sw) / (σ_I² + 2σ²)`. `gain = 1` drops the factor 2 of the
/// phase-averaged likelihood ratio.
pub fn lambda1_ia_with_gain<T: Scalar>(y: &[Complex<T>], s: &SyncWord, sigma_i2: T, two_sigma2: T, gain: T) -> Result<T> {
    let total = sigma_i2 + two_sigma2;
    if !(total > T::zero()) || sigma_i2 < T::zero() {
        return Err(Error::NonPositiveVariance(total.as_f64()));
    }
    let plain = lambda1(y, s)?;
    Ok(ia_from_plain(plain, T::from_count(s.len()), total, gain))
}

#[inline]
fn ia_from_plain<T: Scalar>(plain: T, n_sw: T, total_var: T, gain: T) -> T {
    (gain * plain - n_sw) / total_var
}

/// Interference variance on the test interval starting at `pos`, from genie
/// occupancy, excluding a sync word that actually starts there.
pub fn interference_variance(gt: &GroundTruth, pos: i64, n_sw: usize) -> f64 {
    let osf = gt.osf as i64;
    let sum: u64 = (0..n_sw as i64).map(|i| gt.occupancy_at(pos + i * osf) as u64).sum();
    let own = if gt.live_replica_near(pos, osf / 2).is_some() { n_sw as u64 } else { 0 };
    (sum.saturating_sub(own)) as f64 / n_sw as f64 * INTERFERER_POWER
}

/// Everything the scorer needs besides the buffer.
#[derive(Debug, Clone, Copy)]
pub struct Scorer<'a> {
    pub sync: &'a SyncWord,
    pub rule: DetectionRule,
    pub noise_var: f64,
    pub genie: Option<&'a GroundTruth>,
}

impl<'a> Scorer<'a> {
    pub fn new(sync: &'a SyncWord, rule: DetectionRule, noise_var: f64, genie: Option<&'a GroundTruth>) -> Result<Self> {
        if rule == DetectionRule::InterferenceAware && genie.is_none() {
            return Err(Error::MissingGenie);
        }
        Ok(Self { sync, rule, noise_var, genie })
    }

    /// Score of the test interval starting at absolute grid index `pos`;
    /// `None` when the interval leaves the buffer.
    pub fn score<T: Scalar>(&self, buf: &SignalBuffer<T>, pos: i64) -> Option<f64> {
        let n = self.sync.len();
        let rel = pos - buf.origin;
        let last = rel + ((n - 1) * buf.osf) as i64;
        if rel < 0 || last >= buf.len() as i64 {
            return None;
        }
        let taps = buf.samples[rel as usize..].iter().step_by(buf.osf).copied();
        let plain = correlate(taps, self.sync.symbols()).norm().as_f64();
        Some(match self.rule {
            DetectionRule::Plain => plain,
            DetectionRule::InterferenceAware => {
                let gt = self.genie.expect("checked at construction");
                let total = interference_variance(gt, pos, n) + self.noise_var;
                ia_from_plain(plain, n as f64, total, IA_CORRELATION_GAIN)
            }
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    /// Absolute grid index of the hypothesized sync-word start.
    pub position: i64,
    pub score: f64,
}

/// Detected candidates, strictly increasing in position.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CandidateSet {
    pub candidates: Vec<Candidate>,
}

impl CandidateSet {
    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    pub fn positions(&self) -> impl Iterator<Item = i64> + '_ {
        self.candidates.iter().map(|c| c.position)
    }

    pub fn contains(&self, pos: i64) -> bool {
        self.candidates.binary_search_by_key(&pos, |c| c.position).is_ok()
    }

    pub fn remove(&mut self, pos: i64) -> bool {
        match self.candidates.binary_search_by_key(&pos, |c| c.position) {
            Ok(i) => {
                self.candidates.remove(i);
                true
            }
            Err(_) => false,
        }
    }

    /// Candidates in the absolute range `[lo, hi)`.
    pub fn range(&self, lo: i64, hi: i64) -> &[Candidate] {
        let a = self.candidates.partition_point(|c| c.position < lo);
        let b = self.candidates.partition_point(|c| c.position < hi);
        &self.candidates[a..b]
    }
}

/// Non-maximum suppression with a radius of `min_gap` samples: an
/// above-threshold position survives unless another above-threshold position
/// closer than `min_gap` has a higher score (ties favour the smaller
/// position). Survivors are therefore at least `min_gap` apart. Input must be
/// in ascending position order.
pub fn suppress_local_peaks(above: impl IntoIterator<Item = Candidate>, min_gap: i64) -> CandidateSet {
    let all: Vec<Candidate> = above.into_iter().collect();
    let beats = |q: &Candidate, c: &Candidate| q.score > c.score || (q.score == c.score && q.position < c.position);
    let mut out = Vec::new();
    for (i, c) in all.iter().enumerate() {
        let before = all[..i].iter().rev().take_while(|q| c.position - q.position < min_gap);
        let after = all[i + 1..].iter().take_while(|q| q.position - c.position < min_gap);
        if !before.chain(after).any(|q| beats(q, c)) {
            out.push(*c);
        }
    }
    CandidateSet { candidates: out }
}

/// Scores held for a contiguous range of test positions, refreshed locally
/// when the buffer changes.
#[derive(Debug, Clone)]
pub struct ScoreMap {
    pub lo: i64,
    pub scores: Vec<f64>,
}

impl ScoreMap {
    pub fn compute<T: Scalar>(buf: &SignalBuffer<T>, scorer: &Scorer<'_>, lo: i64, hi: i64) -> Self {
        let lo = lo.max(buf.origin);
        let hi = hi.max(lo);
        let scores = (lo..hi).map(|p| scorer.score(buf, p).unwrap_or(f64::NEG_INFINITY)).collect();
        Self { lo, scores }
    }

    pub fn hi(&self) -> i64 {
        self.lo + self.scores.len() as i64
    }

    pub fn get(&self, pos: i64) -> Option<f64> {
        let rel = pos - self.lo;
        if rel < 0 {
            None
        } else {
            self.scores.get(rel as usize).copied()
        }
    }

    /// Recomputes scores for positions in `[lo, hi)`.
    pub fn refresh<T: Scalar>(&mut self, buf: &SignalBuffer<T>, scorer: &Scorer<'_>, lo: i64, hi: i64) {
        let a = lo.max(self.lo);
        let b = hi.min(self.hi());
        for p in a..b {
            self.scores[(p - self.lo) as usize] = scorer.score(buf, p).unwrap_or(f64::NEG_INFINITY);
        }
    }

    /// Thresholded, peak-suppressed candidates in `[lo, hi)`.
    pub fn candidates(&self, threshold: f64, lo: i64, hi: i64, min_gap: i64) -> CandidateSet {
        let a = (lo - self.lo).clamp(0, self.scores.len() as i64) as usize;
        let b = (hi - self.lo).clamp(a as i64, self.scores.len() as i64) as usize;
        let above = self.scores[a..b]
            .iter()
            .enumerate()
            .filter(|(_, &s)| s > threshold)
            .map(|(k, &s)| Candidate { position: self.lo + (a + k) as i64, score: s });
        suppress_local_peaks(above, min_gap)
    }
}

/// Evaluates the rule at every grid position of the buffer and returns the
/// peak-suppressed positions whose score exceeds `threshold`.
pub fn scan<T: Scalar>(
    buf: &SignalBuffer<T>,
    sync: &SyncWord,
    rule: DetectionRule,
    threshold: f64,
    noise_var: f64,
    genie: Option<&GroundTruth>,
) -> Result<CandidateSet> {
    let scorer = Scorer::new(sync, rule, noise_var, genie)?;
    let map = ScoreMap::compute(buf, &scorer, buf.origin, buf.end());
    Ok(map.candidates(threshold, buf.origin, buf.end(), buf.osf as i64))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RocPoint {
    pub threshold: f64,
    pub pf: f64,
    pub pd: f64,
}

/// (λ, P_F, P_D) triples in ascending λ.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
}

fn sorted(scores: &[f64]) -> Vec<f64> {
    let mut v = scores.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// Fraction of sorted `xs` strictly above `t`.
fn exceed_fraction(xs: &[f64], t: f64) -> f64 {
    let below = xs.partition_point(|&x| x <= t);
    (xs.len() - below) as f64 / xs.len() as f64
}

/// Empirical P_F and P_D at each threshold.
pub fn roc_sweep(h0: &[f64], h1: &[f64], thresholds: &[f64]) -> Result<RocCurve> {
    if h0.is_empty() || h1.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let (s0, s1) = (sorted(h0), sorted(h1));
    let mut ts = thresholds.to_vec();
    ts.sort_by(f64::total_cmp);
    Ok(RocCurve {
        points: ts
            .into_iter()
            .map(|t| RocPoint { threshold: t, pf: exceed_fraction(&s0, t), pd: exceed_fraction(&s1, t) })
            .collect(),
    })
}

/// Area under the ROC curve, Pr{H1 score > H0 score} with ties counted half.
pub fn auc(h0: &[f64], h1: &[f64]) -> Result<f64> {
    if h0.is_empty() || h1.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let s0 = sorted(h0);
    let mut wins = 0.0;
    for &x in h1 {
        let lt = s0.partition_point(|&y| y < x);
        let le = s0.partition_point(|&y| y <= x);
        wins += lt as f64 + 0.5 * (le - lt) as f64;
    }
    Ok(wins / (h0.len() as f64 * h1.len() as f64))
}

/// Threshold whose empirical exceedance fraction under `h0` is closest to
/// `target_pf` from below, i.e. the (1 − target_pf) quantile.
pub fn threshold_for_pf(h0: &[f64], target_pf: f64) -> Result<f64> {
    if h0.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if !(target_pf > 0.0 && target_pf <= 1.0) {
        return Err(Error::InvalidArgument(format!("target P_F {target_pf} outside (0, 1]")));
    }
    let s = sorted(h0);
    let k = (((1.0 - target_pf) * s.len() as f64).floor() as usize).min(s.len() - 1);
    Ok(s[k])
}

/// Detection probability at the threshold hitting `target_pf` on `h0`.
pub fn pd_at_pf(h0: &[f64], h1: &[f64], target_pf: f64) -> Result<(f64, f64, f64)> {
    let t = threshold_for_pf(h0, target_pf)?;
    let s0 = sorted(h0);
    let s1 = sorted(h1);
    Ok((t, exceed_fraction(&s0, t), exceed_fraction(&s1, t)))
}
