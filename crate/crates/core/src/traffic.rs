//! Poisson user arrivals, replica placement and ground-truth bookkeeping.

use std::io::Write;

use rand::Rng;
use rand_distr::{Distribution, Poisson};

use crate::error::{Error, Result};
use crate::params::{DerivedParams, SyncWord, SystemConfig};
use crate::waveform::{PacketSymbols, ReplicaPlacement};

/// One user's transmission: `d` replicas of one packet within its virtual frame.
#[derive(Debug, Clone, PartialEq)]
pub struct UserTransmission {
    pub user_id: usize,
    /// Virtual-frame start, absolute sample index (symbol aligned).
    pub vf_start: i64,
    /// Epoch in grid samples, `0..osf`.
    pub epoch: i64,
    pub f_norm: f64,
    /// Slot index of each replica, ascending.
    pub replica_slots: Vec<usize>,
    pub replica_phases: Vec<f64>,
    pub packet: PacketSymbols,
}

impl UserTransmission {
    pub fn replica_start(&self, r: usize, params: &DerivedParams) -> i64 {
        self.vf_start + (self.replica_slots[r] * params.samples_per_slot) as i64 + self.epoch
    }

    pub fn placement(&self, r: usize, params: &DerivedParams) -> ReplicaPlacement {
        ReplicaPlacement {
            start: self.replica_start(r, params),
            f_norm: self.f_norm,
            phase: self.replica_phases[r],
        }
    }

    pub fn replica_count(&self) -> usize {
        self.replica_slots.len()
    }
}

/// Draws `d` slot indices in `[0, n_slots - n_p]` whose packets do not overlap.
pub fn draw_slots<R: Rng + ?Sized>(cfg: &SystemConfig, rng: &mut R) -> Vec<usize> {
    let max_start = cfg.n_slots - cfg.n_p;
    let mut slots: Vec<usize> = Vec::with_capacity(cfg.d);
    while slots.len() < cfg.d {
        let s = rng.random_range(0..=max_start);
        if slots.iter().all(|&o| s.abs_diff(o) >= cfg.n_p) {
            slots.push(s);
        }
    }
    slots.sort_unstable();
    slots
}

/// Arrival span `[lo, hi)` in samples for a central window of `window` samples:
/// one virtual frame of guard on each side.
pub fn arrival_span(window: usize, params: &DerivedParams) -> (i64, i64) {
    let vf = params.samples_per_vf as i64;
    (-vf, window as i64 + vf)
}

/// Poisson user arrivals over the central window widened by one virtual frame
/// on each side. Arrival instants are uniform on the symbol grid.
pub fn draw_users<R: Rng + ?Sized>(
    cfg: &SystemConfig,
    params: &DerivedParams,
    sync: &SyncWord,
    window: usize,
    rng: &mut R,
) -> Vec<UserTransmission> {
    let (lo, hi) = arrival_span(window, params);
    let span_packets = (hi - lo) as f64 / params.samples_per_packet as f64;
    let mean = cfg.channel_load * span_packets;
    if mean <= 0.0 {
        return Vec::new();
    }
    let count = Poisson::new(mean).expect("positive Poisson mean").sample(rng) as usize;
    let osf = cfg.osf as i64;
    let symbols_in_span = (hi - lo) / osf;
    (0..count)
        .map(|user_id| {
            let vf_start = lo + rng.random_range(0..symbols_in_span) * osf;
            let epoch = rng.random_range(0..osf);
            let f_norm = if cfg.f_max_norm > 0.0 {
                rng.random_range(-cfg.f_max_norm..=cfg.f_max_norm)
            } else {
                0.0
            };
            let replica_slots = draw_slots(cfg, rng);
            let replica_phases = (0..cfg.d)
                .map(|_| rng.random_range(0.0..std::f64::consts::TAU))
                .collect();
            let packet = PacketSymbols::random(sync, cfg.n_s, rng);
            UserTransmission { user_id, vf_start, epoch, f_norm, replica_slots, replica_phases, packet }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReplicaRecord {
    pub user_id: usize,
    pub replica: usize,
    /// Absolute grid index of the first symbol.
    pub start: i64,
}

/// Genie view of the channel: replica positions and per-sample occupancy.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    /// Sorted by start.
    pub records: Vec<ReplicaRecord>,
    /// Absolute index of `occupancy[0]`.
    pub origin: i64,
    /// Number of live replicas covering each grid sample.
    pub occupancy: Vec<u16>,
    /// Samples covered by one replica, `n_s * osf`.
    pub replica_len: usize,
    pub osf: usize,
    cancelled: Vec<bool>,
}

impl GroundTruth {
    pub fn end(&self) -> i64 {
        self.origin + self.occupancy.len() as i64
    }

    pub fn user_count(&self) -> usize {
        self.cancelled.len()
    }

    pub fn is_cancelled(&self, user_id: usize) -> bool {
        self.cancelled[user_id]
    }

    pub(crate) fn mark_cancelled(&mut self, user_id: usize) -> Result<()> {
        if self.cancelled[user_id] {
            return Err(Error::AlreadyCancelled(user_id));
        }
        self.cancelled[user_id] = true;
        Ok(())
    }

    #[inline]
    pub fn occupancy_at(&self, abs: i64) -> u16 {
        let rel = abs - self.origin;
        if rel < 0 {
            0
        } else {
            self.occupancy.get(rel as usize).copied().unwrap_or(0)
        }
    }

    /// Occupancy at `count` symbol-spaced taps starting at `start`.
    pub fn occupancy_taps(&self, start: i64, count: usize) -> Vec<u16> {
        (0..count).map(|j| self.occupancy_at(start + (j * self.osf) as i64)).collect()
    }

    /// Adds `delta` to the occupancy over one replica span.
    pub(crate) fn shift_occupancy(&mut self, start: i64, delta: i32) {
        let lo = (start - self.origin).max(0) as usize;
        let hi = ((start + self.replica_len as i64 - self.origin).max(0) as usize).min(self.occupancy.len());
        for c in &mut self.occupancy[lo.min(hi)..hi] {
            *c = (*c as i32 + delta).max(0) as u16;
        }
    }

    /// Rebuilds occupancy from the live replica records.
    pub fn recompute_occupancy(&mut self) {
        let n = self.occupancy.len();
        let mut diff = vec![0i32; n + 1];
        for r in self.records.iter().filter(|r| !self.cancelled[r.user_id]) {
            let lo = (r.start - self.origin).clamp(0, n as i64) as usize;
            let hi = (r.start + self.replica_len as i64 - self.origin).clamp(0, n as i64) as usize;
            diff[lo] += 1;
            diff[hi] -= 1;
        }
        let mut acc = 0i32;
        for (c, d) in self.occupancy.iter_mut().zip(&diff) {
            acc += d;
            *c = acc as u16;
        }
    }

    pub fn total_occupancy(&self) -> u64 {
        self.occupancy.iter().map(|&c| c as u64).sum()
    }

    /// Live replica whose start lies within `tol` samples of `pos`, nearest first.
    pub fn live_replica_near(&self, pos: i64, tol: i64) -> Option<ReplicaRecord> {
        let from = self.records.partition_point(|r| r.start < pos - tol);
        self.records[from..]
            .iter()
            .take_while(|r| r.start <= pos + tol)
            .filter(|r| !self.cancelled[r.user_id])
            .min_by_key(|r| ((r.start - pos).abs(), r.start))
            .copied()
    }

    /// Any replica (live or cancelled) starting within `tol` samples of `pos`.
    pub fn any_replica_near(&self, pos: i64, tol: i64) -> bool {
        let from = self.records.partition_point(|r| r.start < pos - tol);
        self.records.get(from).is_some_and(|r| r.start <= pos + tol)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["user_id", "replica", "start_sample"])?;
        for r in &self.records {
            w.write_record(&[r.user_id.to_string(), r.replica.to_string(), r.start.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Ground truth over the absolute sample range `[origin, origin + len)`.
pub fn build_ground_truth(
    users: &[UserTransmission],
    params: &DerivedParams,
    origin: i64,
    len: usize,
) -> GroundTruth {
    let mut records: Vec<ReplicaRecord> = users
        .iter()
        .flat_map(|u| {
            (0..u.replica_count()).map(move |r| ReplicaRecord {
                user_id: u.user_id,
                replica: r,
                start: u.replica_start(r, params),
            })
        })
        .collect();
    records.sort_by_key(|r| (r.start, r.user_id, r.replica));
    let user_count = users.iter().map(|u| u.user_id + 1).max().unwrap_or(0);
    let mut gt = GroundTruth {
        records,
        origin,
        occupancy: vec![0; len],
        replica_len: params.samples_per_packet,
        osf: params.samples_per_symbol,
        cancelled: vec![false; user_count],
    };
    gt.recompute_occupancy();
    gt
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::{derive, standard_sync_word};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn user(id: usize, vf_start: i64, slots: Vec<usize>, n_s: usize) -> UserTransmission {
        let mut rng = ChaCha8Rng::seed_from_u64(id as u64);
        UserTransmission {
            user_id: id,
            vf_start,
            epoch: 0,
            f_norm: 0.0,
            replica_phases: vec![0.0; slots.len()],
            replica_slots: slots,
            packet: PacketSymbols::random(&standard_sync_word(), n_s, &mut rng),
        }
    }

    #[test]
    fn zero_load_draws_nobody() {
        let cfg = SystemConfig { channel_load: 0.0, ..Default::default() };
        let p = derive(&cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(draw_users(&cfg, &p, &standard_sync_word(), p.samples_per_window, &mut rng).is_empty());
    }

    #[test]
    fn slots_never_self_interfere() {
        let cfg = SystemConfig { d: 3, n_p: 2, n_slots: 8, n_s: 100, ..Default::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..2000 {
            let s = draw_slots(&cfg, &mut rng);
            assert_eq!(s.len(), 3);
            assert!(s.iter().all(|&x| x <= cfg.n_slots - cfg.n_p));
            assert!(s.windows(2).all(|w| w[1] - w[0] >= cfg.n_p));
        }
        let cfg = SystemConfig::default();
        for _ in 0..2000 {
            let s = draw_slots(&cfg, &mut rng);
            assert!(s[1] > s[0]);
        }
    }

    #[test]
    fn replica_start_arithmetic() {
        let cfg = SystemConfig { n_s: 100, ..Default::default() };
        let p = derive(&cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let users = draw_users(&cfg, &p, &standard_sync_word(), p.samples_per_window, &mut rng);
        assert!(!users.is_empty());
        for u in &users {
            assert!((0..4).contains(&u.epoch));
            assert!(u.f_norm.abs() <= cfg.f_max_norm);
            assert!(u.replica_phases.iter().all(|&ph| (0.0..std::f64::consts::TAU).contains(&ph)));
            for r in 0..cfg.d {
                let want = u.vf_start + (u.replica_slots[r] * p.samples_per_slot) as i64 + u.epoch;
                assert_eq!(u.replica_start(r, &p), want);
            }
        }
    }

    #[test]
    fn single_user_occupancy() {
        let cfg = SystemConfig { n_s: 50, ..Default::default() };
        let p = derive(&cfg).unwrap();
        let users = vec![user(0, 1000, vec![2, 7], 50)];
        let gt = build_ground_truth(&users, &p, 0, 20_000);
        let taps_per_phase = gt.occupancy.iter().step_by(4).filter(|&&c| c == 1).count();
        assert_eq!(taps_per_phase, 2 * 50);
        assert!(gt.occupancy.iter().all(|&c| c <= 1));
        assert_eq!(gt.records.len(), 2);
    }

    #[test]
    fn overlapping_users_occupancy() {
        let cfg = SystemConfig { n_s: 50, ..Default::default() };
        let p = derive(&cfg).unwrap();
        let users = vec![user(0, 0, vec![0, 5], 50), user(1, 0, vec![0, 9], 50)];
        let gt = build_ground_truth(&users, &p, 0, 20_000);
        assert!(gt.occupancy_taps(0, 50).iter().all(|&c| c == 2));
        assert!(gt.occupancy_taps(5 * 200, 50).iter().all(|&c| c == 1));
    }

    #[test]
    fn empty_users_zero_occupancy() {
        let p = derive(&SystemConfig::default()).unwrap();
        let gt = build_ground_truth(&[], &p, -10, 1000);
        assert!(gt.occupancy.iter().all(|&c| c == 0));
        assert_eq!(gt.total_occupancy(), 0);
    }

    #[test]
    fn recompute_is_idempotent() {
        let cfg = SystemConfig { n_s: 100, channel_load: 2.0, ..Default::default() };
        let p = derive(&cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let users = draw_users(&cfg, &p, &standard_sync_word(), p.samples_per_window, &mut rng);
        let (lo, hi) = arrival_span(p.samples_per_window, &p);
        let len = (hi - lo) as usize + p.samples_per_vf;
        let mut gt = build_ground_truth(&users, &p, lo, len);
        let before = gt.occupancy.clone();
        gt.recompute_occupancy();
        assert_eq!(before, gt.occupancy);
        gt.recompute_occupancy();
        assert_eq!(before, gt.occupancy);
    }

    #[test]
    fn nearest_replica_lookup() {
        let cfg = SystemConfig { n_s: 50, ..Default::default() };
        let p = derive(&cfg).unwrap();
        let users = vec![user(0, 0, vec![0, 5], 50), user(1, 400, vec![0, 9], 50)];
        let gt = build_ground_truth(&users, &p, 0, 20_000);
        assert_eq!(gt.live_replica_near(401, 2).unwrap().user_id, 1);
        assert_eq!(gt.live_replica_near(1002, 2).unwrap().replica, 1);
        assert!(gt.live_replica_near(1003, 2).is_none());
    }

    #[test]
    fn csv_export() {
        let cfg = SystemConfig { n_s: 50, ..Default::default() };
        let p = derive(&cfg).unwrap();
        let gt = build_ground_truth(&[user(0, 0, vec![0, 5], 50)], &p, 0, 5000);
        let mut out = Vec::new();
        gt.write_csv(&mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "user_id,replica,start_sample\n0,0,0\n0,1,1000\n");
    }
}
