//! Combining, the mutual-information decoding model, ideal interference
//! cancellation and the sliding-window SIC receiver.
//!
//! Decoding is genie-assisted: the SNIR of every symbol follows from the
//! ground-truth occupancy under a Gaussian interference surrogate, and a
//! packet decodes when the average mutual information of the combined
//! observation reaches the code rate. The waveform still drives detection and
//! matching in two-phase mode.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::detector::{CandidateSet, DetectionRule, ScoreMap, Scorer};
use crate::error::{Error, Result};
use crate::matcher::{compatible_both_ways, select_partners, MatchGeometry};
use crate::params::{DerivedParams, SyncWord, SystemConfig, INTERFERER_POWER};
use crate::scalar::Scalar;
use crate::traffic::{GroundTruth, ReplicaRecord, UserTransmission};
use crate::waveform::{add_replica_clipped, replica_extent, PulseTable, SignalBuffer};

/// Per-symbol SNIR of one replica: `1 / (2σ² + c_j·P_I)` with `c_j` the
/// number of other live replicas covering tap `j`.
pub fn symbol_snir<T: Scalar>(start: i64, n_s: usize, gt: &GroundTruth, noise_var: T) -> Vec<T> {
    let p_i = T::lit(INTERFERER_POWER);
    gt.occupancy_taps(start, n_s)
        .into_iter()
        .map(|c| {
            let others = T::from_count(c.saturating_sub(1) as usize);
            T::one() / (noise_var + others * p_i)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Combiner {
    /// Maximal ratio: SNIRs add.
    #[default]
    Mrc,
    /// Selection: best replica per symbol.
    Sc,
    /// Equal gain with coherent co-phasing.
    Egc,
}

impl FromStr for Combiner {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mrc" => Ok(Self::Mrc),
            "sc" => Ok(Self::Sc),
            "egc" => Ok(Self::Egc),
            other => Err(Error::InvalidArgument(format!("unknown combiner {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CombinedObservation<T> {
    pub snir: Vec<T>,
    pub replicas: Vec<ReplicaRecord>,
}

/// Combines per-replica SNIR sequences of equal length.
pub fn combine<T: Scalar>(rule: Combiner, per_replica: &[Vec<T>]) -> Vec<T> {
    assert!(!per_replica.is_empty(), "combining needs at least one replica");
    let n = per_replica[0].len();
    let k = T::from_count(per_replica.len());
    (0..n)
        .map(|j| {
            let col = per_replica.iter().map(|r| r[j]);
            match rule {
                Combiner::Mrc => col.sum(),
                Combiner::Sc => col.fold(T::zero(), T::max),
                Combiner::Egc => {
                    let amp: T = col.map(|s| s.sqrt()).sum();
                    amp * amp / k
                }
            }
        })
        .collect()
}

/// Maximal-ratio combination of the given replicas.
pub fn mrc_combine<T: Scalar>(replicas: &[ReplicaRecord], gt: &GroundTruth, n_s: usize, noise_var: T) -> CombinedObservation<T> {
    let per: Vec<Vec<T>> = replicas.iter().map(|r| symbol_snir(r.start, n_s, gt, noise_var)).collect();
    CombinedObservation { snir: combine(Combiner::Mrc, &per), replicas: replicas.to_vec() }
}

/// Average mutual information of a Gaussian codebook, bits per symbol.
pub fn mutual_information<T: Scalar>(snir: &[T]) -> T {
    if snir.is_empty() {
        return T::zero();
    }
    let total: T = snir.iter().map(|&s| (T::one() + s).log2()).sum();
    total / T::from_count(snir.len())
}

/// Decoding succeeds when the mutual information reaches the rate.
pub fn decode<T: Scalar>(snir: &[T], rate: T) -> bool {
    !snir.is_empty() && mutual_information(snir) >= rate
}

/// Removes a decoded user: occupancy over all its replicas drops by one and,
/// when a buffer is given, its exact waveform is subtracted.
pub fn cancel<T: Scalar>(
    gt: &mut GroundTruth,
    buf: Option<&mut SignalBuffer<T>>,
    user: &UserTransmission,
    params: &DerivedParams,
    pulse: &PulseTable<T>,
) -> Result<()> {
    gt.mark_cancelled(user.user_id)?;
    for r in 0..user.replica_count() {
        gt.shift_occupancy(user.replica_start(r, params), -1);
    }
    if let Some(buf) = buf {
        for r in 0..user.replica_count() {
            add_replica_clipped(buf, &user.packet, &user.placement(r, params), pulse, -T::one());
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReceiverMode {
    /// Sync-word detection and replica matching on the received signal.
    TwoPhase,
    /// Replica positions and pairings known to the receiver.
    Ideal,
}

impl FromStr for ReceiverMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "two_phase" => Ok(Self::TwoPhase),
            "ideal" => Ok(Self::Ideal),
            other => Err(Error::InvalidArgument(format!("unknown mode {other:?}"))),
        }
    }
}

impl fmt::Display for ReceiverMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::TwoPhase => "two_phase",
            Self::Ideal => "ideal",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Action {
    /// Decoded from a single replica.
    DecodedSingle,
    /// Decoded after combining.
    DecodedCombined,
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::DecodedSingle => "decoded_single",
            Self::DecodedCombined => "decoded_combined",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Event {
    pub window: usize,
    /// SIC iteration within the window.
    pub iteration: usize,
    pub user_id: usize,
    pub action: Action,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DecodingOutcome {
    pub decoded: Vec<bool>,
    /// Window and iteration in which each user was decoded.
    pub decoded_at: Vec<Option<(usize, usize)>>,
    pub windows: usize,
    /// SIC iterations run in each window.
    pub iterations: Vec<usize>,
    pub events: Vec<Event>,
}

impl DecodingOutcome {
    pub fn decoded_count(&self) -> usize {
        self.decoded.iter().filter(|&&d| d).count()
    }

    pub fn write_events_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["window", "iteration", "user_id", "action"])?;
        for e in &self.events {
            w.write_record(&[e.window.to_string(), e.iteration.to_string(), e.user_id.to_string(), e.action.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Receiver settings beyond the scenario configuration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReceiverSettings {
    pub rule: DetectionRule,
    pub threshold: f64,
    pub combiner: Combiner,
}

/// Sliding-window SIC receiver over the absolute range `[lo, hi)`.
pub struct SicReceiver<'a, T: Scalar> {
    cfg: &'a SystemConfig,
    params: &'a DerivedParams,
    sync: &'a SyncWord,
    pulse: &'a PulseTable<T>,
    users: &'a [UserTransmission],
    settings: ReceiverSettings,
    lo: i64,
    hi: i64,
}

impl<'a, T: Scalar> SicReceiver<'a, T> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        cfg: &'a SystemConfig,
        params: &'a DerivedParams,
        sync: &'a SyncWord,
        pulse: &'a PulseTable<T>,
        users: &'a [UserTransmission],
        settings: ReceiverSettings,
        lo: i64,
        hi: i64,
    ) -> Self {
        Self { cfg, params, sync, pulse, users, settings, lo, hi }
    }

    fn window_starts(&self) -> Vec<i64> {
        let w = self.params.samples_per_window as i64;
        let shift = self.params.samples_per_shift as i64;
        let mut out = vec![self.lo];
        let mut ws = self.lo;
        while ws + w < self.hi {
            ws += shift;
            out.push(ws);
        }
        out
    }

    fn snir_of(&self, gt: &GroundTruth, rec: &ReplicaRecord) -> Vec<f64> {
        symbol_snir(rec.start, self.cfg.n_s, gt, self.params.noise_var)
    }

    fn try_decode(&self, gt: &GroundTruth, recs: &[ReplicaRecord]) -> bool {
        let per: Vec<Vec<f64>> = recs.iter().map(|r| self.snir_of(gt, r)).collect();
        decode(&combine(self.settings.combiner, &per), self.cfg.rate)
    }

    fn record(&self, user: &UserTransmission, r: usize) -> ReplicaRecord {
        ReplicaRecord { user_id: user.user_id, replica: r, start: user.replica_start(r, self.params) }
    }

    /// Runs the receiver. `buf` is required in two-phase mode and is
    /// modified by cancellation, as is `gt`.
    pub fn run(&self, mode: ReceiverMode, gt: &mut GroundTruth, buf: Option<&mut SignalBuffer<T>>) -> Result<DecodingOutcome> {
        let mut out = DecodingOutcome {
            decoded: vec![false; self.users.len()],
            decoded_at: vec![None; self.users.len()],
            ..Default::default()
        };
        match mode {
            ReceiverMode::Ideal => self.run_ideal(gt, &mut out)?,
            ReceiverMode::TwoPhase => {
                let buf = buf.ok_or_else(|| Error::InvalidArgument("two-phase mode needs a signal buffer".into()))?;
                self.run_two_phase(gt, buf, &mut out)?
            }
        }
        Ok(out)
    }

    fn finish(&self, out: &mut DecodingOutcome, user: usize, window: usize, iteration: usize, action: Action) {
        out.decoded[user] = true;
        out.decoded_at[user] = Some((window, iteration));
        out.events.push(Event { window, iteration, user_id: user, action });
    }

    fn run_ideal(&self, gt: &mut GroundTruth, out: &mut DecodingOutcome) -> Result<()> {
        let w = self.params.samples_per_window as i64;
        let packet = self.params.samples_per_packet as i64;
        for (wi, ws) in self.window_starts().into_iter().enumerate() {
            let we = (ws + w).min(self.hi);
            let mut iters = 0;
            for it in 0..self.cfg.sic_max_iters {
                iters += 1;
                let mut progress = false;
                // users with at least one live replica fully inside, by first such replica
                let mut seen = vec![false; self.users.len()];
                let mut order: Vec<usize> = Vec::new();
                let from = gt.records.partition_point(|r| r.start < ws);
                for rec in gt.records[from..].iter().take_while(|r| r.start + packet <= we) {
                    if !gt.is_cancelled(rec.user_id) && !seen[rec.user_id] {
                        seen[rec.user_id] = true;
                        order.push(rec.user_id);
                    }
                }
                for uid in order {
                    if gt.is_cancelled(uid) {
                        continue;
                    }
                    let user = &self.users[uid];
                    let recs: Vec<ReplicaRecord> = (0..user.replica_count())
                        .map(|r| self.record(user, r))
                        .filter(|r| r.start >= ws && r.start + packet <= we)
                        .collect();
                    if self.try_decode(gt, &recs) {
                        cancel(gt, None::<&mut SignalBuffer<T>>, user, self.params, self.pulse)?;
                        let action = if recs.len() > 1 { Action::DecodedCombined } else { Action::DecodedSingle };
                        self.finish(out, uid, wi, it, action);
                        progress = true;
                    }
                }
                if !progress {
                    break;
                }
            }
            out.iterations.push(iters);
            out.windows += 1;
        }
        Ok(())
    }

    fn run_two_phase(&self, gt: &mut GroundTruth, buf: &mut SignalBuffer<T>, out: &mut DecodingOutcome) -> Result<()> {
        let osf = self.params.samples_per_symbol as i64;
        let tol = osf / 2;
        let n_s = self.cfg.n_s;
        let n_sw = self.cfg.n_sw;
        let packet = self.params.samples_per_packet as i64;
        let w = self.params.samples_per_window as i64;
        let threshold = self.settings.threshold;

        let mut scores = {
            let scorer = Scorer::new(self.sync, self.settings.rule, self.params.noise_var, Some(&*gt))?;
            ScoreMap::compute(buf, &scorer, self.lo, self.hi)
        };
        let mut pair_cache: HashMap<(i64, i64), Option<f64>> = HashMap::new();
        let tap_span = ((n_s - 1) as i64) * osf + 1;

        for (wi, ws) in self.window_starts().into_iter().enumerate() {
            let we = (ws + w).min(self.hi);
            let geom = MatchGeometry::for_window(self.params, ws, we);
            let mut iters = 0;
            for it in 0..self.cfg.sic_max_iters {
                iters += 1;
                let mut set: CandidateSet = scores.candidates(threshold, ws, we - packet + 1, osf);
                let anchors: Vec<i64> = set.positions().collect();
                let mut progress = false;
                for anchor in anchors {
                    if !set.contains(anchor) {
                        continue;
                    }
                    // A candidate that is not a live replica never decodes in the
                    // genie model, whatever it is paired with.
                    let Some(arec) = gt.live_replica_near(anchor, tol) else { continue };
                    let user = &self.users[arec.user_id];

                    let mut action = None;
                    if self.try_decode(gt, &[arec]) {
                        action = Some(Action::DecodedSingle);
                    } else {
                        let pool = compatible_both_ways(anchor, &set, &geom);
                        let m = select_partners(anchor, &pool, self.cfg.d, |a, b| {
                            let key = (a.min(b), a.max(b));
                            *pair_cache.entry(key).or_insert_with(|| lambda2_in(buf, key.0, key.1, n_s))
                        });
                        if !m.partners.is_empty() {
                            let mut recs = vec![arec];
                            let mut consistent = true;
                            for &(p, _) in &m.partners {
                                match gt.live_replica_near(p, tol) {
                                    Some(r) if r.user_id == arec.user_id && !recs.iter().any(|x| x.replica == r.replica) => recs.push(r),
                                    _ => {
                                        consistent = false;
                                        break;
                                    }
                                }
                            }
                            // Combining with a foreign packet yields garbage.
                            if consistent && self.try_decode(gt, &recs) {
                                action = Some(Action::DecodedCombined);
                            }
                        }
                    }
                    let Some(action) = action else { continue };

                    cancel(gt, Some(&mut *buf), user, self.params, self.pulse)?;
                    self.finish(out, user.user_id, wi, it, action);
                    progress = true;

                    let scorer = Scorer::new(self.sync, self.settings.rule, self.params.noise_var, Some(&*gt))?;
                    for r in 0..user.replica_count() {
                        let start = user.replica_start(r, self.params);
                        let (e_lo, e_hi) = replica_extent(start, n_s, self.pulse);
                        scores.refresh(buf, &scorer, e_lo - ((n_sw - 1) as i64) * osf, e_hi);
                        pair_cache.retain(|&(a, b), _| {
                            let hit = |p: i64| p < e_hi && p + tap_span > e_lo;
                            !hit(a) && !hit(b)
                        });
                        let stale: Vec<i64> = set.range(start - tol, start + tol + 1).iter().map(|c| c.position).collect();
                        for p in stale {
                            set.remove(p);
                        }
                    }
                }
                if !progress {
                    break;
                }
            }
            out.iterations.push(iters);
            out.windows += 1;
        }
        Ok(())
    }
}

fn lambda2_in<T: Scalar>(buf: &SignalBuffer<T>, a: i64, b: i64, n_s: usize) -> Option<f64> {
    let span = ((n_s.checked_sub(1)?) * buf.osf) as i64;
    let (ra, rb) = (a - buf.origin, b - buf.origin);
    if ra < 0 || rb < 0 || ra + span >= buf.len() as i64 || rb + span >= buf.len() as i64 {
        return None;
    }
    let ya = buf.samples[ra as usize..].iter().step_by(buf.osf).take(n_s);
    let yb = buf.samples[rb as usize..].iter().step_by(buf.osf).take(n_s);
    let mut re = T::zero();
    let mut im = T::zero();
    for (x, y) in ya.zip(yb) {
        re += x.re * y.re + x.im * y.im;
        im += x.im * y.re - x.re * y.im;
    }
    Some(re.hypot(im).as_f64())
}
