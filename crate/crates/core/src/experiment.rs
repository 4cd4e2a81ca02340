//! Monte Carlo experiment families: ROC, detection/combining and
//! throughput, with deterministic per-trial seeding, worker pools, CSV
//! output and the golden-run manifest.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::detector::{auc, pd_at_pf, roc_sweep, DetectionRule, ScoreMap, Scorer};
use crate::error::{Error, Result};
use crate::matcher::{match_anchor, MatchGeometry};
use crate::metrics::{aggregate, calibrate_threshold, Calibration, Summary, TrialStats};
use crate::params::{derive, sync_word_for, DerivedParams, SyncWord, SystemConfig};
use crate::receiver::{Combiner, ReceiverMode, ReceiverSettings, SicReceiver};
use crate::scalar::Scalar;
use crate::traffic::{build_ground_truth, draw_users, GroundTruth, UserTransmission};
use crate::waveform::{add_awgn, add_replica_clipped, replica_extent, PulseTable, SignalBuffer};

/// H0 test positions drawn per simulated window.
pub const H0_PER_WINDOW: usize = 400;
/// Trials per parallel batch when running until a sample count is reached.
/// Fixed so that the set of simulated trials never depends on worker count.
pub const CHUNK: u64 = 16;
/// Upper bound on windows simulated while collecting hypothesis samples.
const MAX_WINDOWS: u64 = 1 << 20;

/// Random-stream families, so experiments never share trials.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    Roc = 1,
    Calibration = 2,
    Detect = 3,
    Throughput = 4,
}

/// Stream identifier for trial `trial` of sweep point `point` in `family`.
pub fn stream_id(family: Family, point: usize, trial: u64) -> u64 {
    assert!(trial < 1 << 32 && point < 1 << 24, "trial or sweep index out of range");
    ((family as u64) << 56) | ((point as u64) << 32) | trial
}

/// Independent generator for one trial: a pure function of the master seed
/// and the stream identifier.
pub fn trial_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Immutable per-configuration state shared by all trials.
#[derive(Debug, Clone)]
pub struct SimContext<T: Scalar> {
    pub cfg: SystemConfig,
    pub params: DerivedParams,
    pub sync: SyncWord,
    pub pulse: PulseTable<T>,
}

impl<T: Scalar> SimContext<T> {
    pub fn new(cfg: &SystemConfig) -> Result<Self> {
        let params = derive(cfg)?;
        Ok(Self {
            cfg: cfg.clone(),
            sync: sync_word_for(cfg.n_sw),
            pulse: PulseTable::new(cfg.osf, cfg.rolloff, cfg.pulse_half_span),
            params,
        })
    }

    fn tol(&self) -> i64 {
        (self.params.samples_per_symbol / 2) as i64
    }
}

/// One realisation of the channel over the buffer `[lo, hi)`.
#[derive(Debug, Clone)]
pub struct TrialSignal<T> {
    pub users: Vec<UserTransmission>,
    pub gt: GroundTruth,
    pub buf: SignalBuffer<T>,
}

/// Draws users for a central region of `central` samples (plus one virtual
/// frame of guard on each side), synthesises the part of the aggregate
/// signal falling in `[lo, hi)` and adds noise there.
pub fn generate_trial<T: Scalar, R: Rng + ?Sized>(
    ctx: &SimContext<T>,
    central: usize,
    lo: i64,
    hi: i64,
    rng: &mut R,
) -> TrialSignal<T> {
    let len = (hi - lo) as usize;
    let users = draw_users(&ctx.cfg, &ctx.params, &ctx.sync, central, rng);
    let mut buf = SignalBuffer::zeros(lo, len, ctx.params.samples_per_symbol);
    for u in &users {
        for r in 0..u.replica_count() {
            let at = u.placement(r, &ctx.params);
            let (a, b) = replica_extent(at.start, ctx.cfg.n_s, &ctx.pulse);
            if b > lo && a < hi {
                add_replica_clipped(&mut buf, &u.packet, &at, &ctx.pulse, T::one());
            }
        }
    }
    add_awgn(&mut buf, ctx.params.noise_var, rng);
    let gt = build_ground_truth(&users, &ctx.params, lo, len);
    TrialSignal { users, gt, buf }
}

/// Trial over one central window `[0, W)`, buffer restricted to it.
pub fn central_trial<T: Scalar, R: Rng + ?Sized>(ctx: &SimContext<T>, rng: &mut R) -> TrialSignal<T> {
    let w = ctx.params.samples_per_window;
    generate_trial(ctx, w, 0, w as i64, rng)
}

/// Receiver span for a central region of `central` samples: the whole
/// arrival span plus one packet so that late arrivals are complete.
pub fn receiver_span(ctx_params: &DerivedParams, central: usize) -> (i64, i64) {
    let vf = ctx_params.samples_per_vf as i64;
    (-vf, central as i64 + vf + ctx_params.samples_per_packet as i64)
}

// ---------------------------------------------------------------------------
// Worker pool helpers

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::InvalidArgument(format!("cannot start worker pool: {e}")))
}

/// Evaluates `f` for every trial index in `range` on the pool, in order.
fn par_trials<R: Send>(
    pool: &rayon::ThreadPool,
    range: std::ops::Range<u64>,
    f: impl Fn(u64) -> Result<R> + Sync,
) -> Result<Vec<R>> {
    pool.install(|| range.into_par_iter().map(&f).collect::<Result<Vec<R>>>())
}

// ---------------------------------------------------------------------------
// Hypothesis samples for ROC and calibration

/// Scores of both rules on sync-free (H0) and sync-aligned (H1) intervals.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct HypothesisScores {
    pub h0_plain: Vec<f64>,
    pub h0_ia: Vec<f64>,
    pub h1_plain: Vec<f64>,
    pub h1_ia: Vec<f64>,
    pub windows: usize,
}

impl HypothesisScores {
    fn extend(&mut self, o: HypothesisScores) {
        self.h0_plain.extend(o.h0_plain);
        self.h0_ia.extend(o.h0_ia);
        self.h1_plain.extend(o.h1_plain);
        self.h1_ia.extend(o.h1_ia);
        self.windows += o.windows;
    }

    fn truncate(&mut self, n_h0: usize, n_h1: usize) {
        self.h0_plain.truncate(n_h0);
        self.h0_ia.truncate(n_h0);
        self.h1_plain.truncate(n_h1);
        self.h1_ia.truncate(n_h1);
    }
}

/// Scores from one central window: every true sync word whose interval lies
/// inside the window (H1) and `H0_PER_WINDOW` random grid positions farther
/// than one symbol from any true start (H0).
pub fn window_hypotheses<T: Scalar>(ctx: &SimContext<T>, rng: &mut ChaCha8Rng) -> Result<HypothesisScores> {
    let trial = central_trial(ctx, rng);
    let osf = ctx.params.samples_per_symbol as i64;
    let last = ((ctx.cfg.n_sw - 1) as i64) * osf;
    let w = ctx.params.samples_per_window as i64;
    let nv = ctx.params.noise_var;
    let plain = Scorer::new(&ctx.sync, DetectionRule::Plain, nv, None)?;
    let ia = Scorer::new(&ctx.sync, DetectionRule::InterferenceAware, nv, Some(&trial.gt))?;
    let mut out = HypothesisScores { windows: 1, ..Default::default() };
    for rec in &trial.gt.records {
        if rec.start >= 0 && rec.start + last < w {
            if let (Some(a), Some(b)) = (plain.score(&trial.buf, rec.start), ia.score(&trial.buf, rec.start)) {
                out.h1_plain.push(a);
                out.h1_ia.push(b);
            }
        }
    }
    let positions = w - last;
    let mut attempts = 0;
    while out.h0_plain.len() < H0_PER_WINDOW && attempts < 100 * H0_PER_WINDOW {
        attempts += 1;
        let pos = rng.random_range(0..positions);
        if trial.gt.any_replica_near(pos, osf - 1) {
            continue;
        }
        if let (Some(a), Some(b)) = (plain.score(&trial.buf, pos), ia.score(&trial.buf, pos)) {
            out.h0_plain.push(a);
            out.h0_ia.push(b);
        }
    }
    Ok(out)
}

/// Simulates windows in fixed-size batches until at least `n_h0` H0 and
/// `n_h1` H1 samples are collected, then truncates to exactly those counts.
pub fn hypothesis_scores<T: Scalar>(
    ctx: &SimContext<T>,
    n_h0: usize,
    n_h1: usize,
    point: usize,
    family: Family,
    workers: usize,
) -> Result<HypothesisScores> {
    if n_h1 > 0 && ctx.cfg.channel_load == 0.0 {
        return Err(Error::InvalidArgument("H1 samples need a positive channel load".into()));
    }
    let pool = pool(workers)?;
    let mut acc = HypothesisScores::default();
    let mut next = 0u64;
    while acc.h0_plain.len() < n_h0 || acc.h1_plain.len() < n_h1 {
        if next >= MAX_WINDOWS {
            return Err(Error::InsufficientTrials { required: n_h0.max(n_h1), actual: acc.h0_plain.len().min(acc.h1_plain.len()) });
        }
        let batch = par_trials(&pool, next..next + CHUNK, |t| {
            let mut rng = trial_rng(ctx.cfg.seed, stream_id(family, point, t));
            window_hypotheses(ctx, &mut rng)
        })?;
        for b in batch {
            acc.extend(b);
        }
        next += CHUNK;
    }
    acc.truncate(n_h0, n_h1);
    Ok(acc)
}

/// Configuration used for an ROC point at load `g`. The ROC load counts
/// transmitted replicas per packet duration, so users arrive at `g / d`.
pub fn roc_config(cfg: &SystemConfig, g: f64) -> SystemConfig {
    SystemConfig { channel_load: g / cfg.d as f64, ..cfg.clone() }
}

/// ROC of both rules at one load.
#[derive(Debug, Clone, PartialEq)]
pub struct RocResult {
    pub g: f64,
    pub scores: HypothesisScores,
    pub auc_plain: f64,
    pub auc_ia: f64,
}

impl RocResult {
    /// (threshold, P_F, P_D) of `rule` at the threshold hitting `target_pf`.
    pub fn operating_point(&self, rule: DetectionRule, target_pf: f64) -> Result<(f64, f64, f64)> {
        match rule {
            DetectionRule::Plain => pd_at_pf(&self.scores.h0_plain, &self.scores.h1_plain, target_pf),
            DetectionRule::InterferenceAware => pd_at_pf(&self.scores.h0_ia, &self.scores.h1_ia, target_pf),
        }
    }

    /// Threshold grid covering both rules' score ranges, `points` per rule.
    pub fn threshold_grid(&self, points: usize) -> Vec<f64> {
        let mut grid = Vec::with_capacity(2 * points);
        for (h0, h1) in [(&self.scores.h0_plain, &self.scores.h1_plain), (&self.scores.h0_ia, &self.scores.h1_ia)] {
            let lo = h0.iter().chain(h1.iter()).copied().fold(f64::INFINITY, f64::min) - 1.0;
            let hi = h0.iter().chain(h1.iter()).copied().fold(f64::NEG_INFINITY, f64::max) + 1.0;
            let n = points.max(2);
            grid.extend((0..n).map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64));
        }
        grid.sort_by(f64::total_cmp);
        grid.dedup();
        grid
    }

    /// CSV with columns `threshold,pf_plain,pd_plain,pf_ia,pd_ia`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let grid = self.threshold_grid(1001);
        let plain = roc_sweep(&self.scores.h0_plain, &self.scores.h1_plain, &grid)?;
        let ia = roc_sweep(&self.scores.h0_ia, &self.scores.h1_ia, &grid)?;
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["threshold", "pf_plain", "pd_plain", "pf_ia", "pd_ia"])?;
        for (p, q) in plain.points.iter().zip(&ia.points) {
            w.write_record(&[fmt_f(p.threshold), fmt_f(p.pf), fmt_f(p.pd), fmt_f(q.pf), fmt_f(q.pd)])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Collects `n` H0 and `n` H1 samples per load and computes both AUCs.
pub fn run_roc(cfg: &SystemConfig, gs: &[f64], n: usize, workers: usize) -> Result<Vec<RocResult>> {
    gs.iter()
        .enumerate()
        .map(|(i, &g)| {
            let ctx = SimContext::<f64>::new(&roc_config(cfg, g))?;
            let scores = hypothesis_scores(&ctx, n, n, i, Family::Roc, workers)?;
            Ok(RocResult {
                g,
                auc_plain: auc(&scores.h0_plain, &scores.h1_plain)?,
                auc_ia: auc(&scores.h0_ia, &scores.h1_ia)?,
                scores,
            })
        })
        .collect()
}

/// File name of the ROC CSV for load `g`.
pub fn roc_file_name(g: f64) -> String {
    format!("roc_g{g}.csv")
}

// ---------------------------------------------------------------------------
// Detection and correct combining

/// Detection and combining counts over the central window of one trial.
/// The whole window `[0, W)` is scanned once (no cancellation); a replica
/// counts as detected when a candidate lies within half a symbol of its
/// start, and a user is correctly combined when matching anchored on its
/// first replica returns exactly its other replicas.
pub fn detect_stats<T: Scalar>(ctx: &SimContext<T>, trial: &TrialSignal<T>, rule: DetectionRule, threshold: f64) -> Result<TrialStats> {
    let w = ctx.params.samples_per_window as i64;
    let osf = ctx.params.samples_per_symbol as i64;
    let packet = ctx.params.samples_per_packet as i64;
    let tol = ctx.tol();
    let scorer = Scorer::new(&ctx.sync, rule, ctx.params.noise_var, Some(&trial.gt))?;
    let map = ScoreMap::compute(&trial.buf, &scorer, 0, w);
    let set = map.candidates(threshold, 0, w, osf);
    let geom = MatchGeometry::for_window(&ctx.params, 0, w);
    let nearest = |start: i64| {
        set.range(start - tol, start + tol + 1)
            .iter()
            .min_by_key(|c| ((c.position - start).abs(), c.position))
            .map(|c| c.position)
    };
    let inside = |start: i64| start >= 0 && start + packet <= w;

    let mut s = TrialStats { elapsed_packets: w as f64 / packet as f64, ..Default::default() };
    for rec in trial.gt.records.iter().filter(|r| inside(r.start)) {
        s.true_starts += 1;
        if nearest(rec.start).is_some() {
            s.detected_starts += 1;
        }
    }
    for u in &trial.users {
        let starts: Vec<i64> = (0..u.replica_count()).map(|r| u.replica_start(r, &ctx.params)).collect();
        if !starts.iter().all(|&p| inside(p)) {
            continue;
        }
        s.true_users += 1;
        s.offered += 1;
        // Anchors are tried in position order and a wrong grouping consumes
        // nothing, so a later replica of the same user gets its own attempt.
        let mut grouped = false;
        for (r, &start) in starts.iter().enumerate() {
            let Some(anchor) = nearest(start) else { continue };
            let m = match_anchor(anchor, &set, &trial.buf, ctx.cfg.n_s, ctx.cfg.d, &geom);
            debug_assert!(m.partners.iter().all(|&(q, _)| geom.is_compatible(anchor.min(q), anchor.max(q))));
            let others = starts.iter().enumerate().filter(|&(k, _)| k != r).map(|(_, &p)| p);
            let correct = m.partners.len() == starts.len() - 1
                && others.clone().all(|p| m.partners.iter().any(|&(q, _)| (q - p).abs() <= tol));
            if r == 0 && !m.partners.is_empty() {
                s.formed_pairs += 1;
                s.correct_pairs += u64::from(correct);
            }
            if correct {
                grouped = true;
                break;
            }
        }
        s.correct_users += u64::from(grouped);
    }
    Ok(s)
}

/// Detection summary at one load.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectResult {
    pub g: f64,
    pub summary: Summary,
}

/// Runs `trials` central windows per load with a fixed threshold.
pub fn run_detect(
    cfg: &SystemConfig,
    gs: &[f64],
    trials: usize,
    rule: DetectionRule,
    threshold: f64,
    workers: usize,
) -> Result<Vec<DetectResult>> {
    let pool = pool(workers)?;
    gs.iter()
        .enumerate()
        .map(|(i, &g)| {
            let ctx = SimContext::<f64>::new(&SystemConfig { channel_load: g, ..cfg.clone() })?;
            let stats = par_trials(&pool, 0..trials as u64, |t| {
                let mut rng = trial_rng(cfg.seed, stream_id(Family::Detect, i, t));
                let trial = central_trial(&ctx, &mut rng);
                detect_stats(&ctx, &trial, rule, threshold)
            })?;
            Ok(DetectResult { g, summary: aggregate(&stats, cfg.rate)? })
        })
        .collect()
}

/// CSV with columns `g,pd,pd_ci,pcc,pcc_ci,pd_sq`.
pub fn write_detection_csv<W: Write>(rows: &[DetectResult], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["g", "pd", "pd_ci", "pcc", "pcc_ci", "pd_sq"])?;
    for r in rows {
        let s = &r.summary;
        w.write_record(&[fmt_f(r.g), fmt_f(s.pd), fmt_f(s.pd_ci), fmt_f(s.pcc), fmt_f(s.pcc_ci), fmt_f(s.pd * s.pd)])?;
    }
    w.flush()?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Throughput

/// Which receivers a throughput run evaluates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeSelection {
    TwoPhase,
    Ideal,
    Both,
}

impl ModeSelection {
    pub fn includes(self, mode: ReceiverMode) -> bool {
        matches!(
            (self, mode),
            (Self::Both, _) | (Self::TwoPhase, ReceiverMode::TwoPhase) | (Self::Ideal, ReceiverMode::Ideal)
        )
    }
}

impl FromStr for ModeSelection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "two_phase" => Ok(Self::TwoPhase),
            "ideal" => Ok(Self::Ideal),
            "both" => Ok(Self::Both),
            other => Err(Error::InvalidArgument(format!("unknown mode {other:?}"))),
        }
    }
}

impl fmt::Display for ModeSelection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::TwoPhase => "two_phase",
            Self::Ideal => "ideal",
            Self::Both => "both",
        })
    }
}

/// Per-trial throughput counts of both receivers on the same channel.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ThroughputTrial {
    pub two_phase: Option<TrialStats>,
    pub ideal: Option<TrialStats>,
}

/// Runs the selected receivers on one trial whose central region spans
/// `windows` receiver windows. Users are attributed to the central region by
/// the start of their first replica.
pub fn throughput_stats<T: Scalar>(
    ctx: &SimContext<T>,
    trial: TrialSignal<T>,
    windows: usize,
    settings: ReceiverSettings,
    modes: ModeSelection,
) -> Result<ThroughputTrial> {
    let central = windows * ctx.params.samples_per_window;
    let (lo, hi) = receiver_span(&ctx.params, central);
    let TrialSignal { users, gt, mut buf } = trial;
    let offered: Vec<usize> = users
        .iter()
        .filter(|u| (0..central as i64).contains(&u.replica_start(0, &ctx.params)))
        .map(|u| u.user_id)
        .collect();
    let rx = SicReceiver::new(&ctx.cfg, &ctx.params, &ctx.sync, &ctx.pulse, &users, settings, lo, hi);
    let count = |decoded: &[bool]| TrialStats {
        offered: offered.len() as u64,
        decoded: offered.iter().filter(|&&u| decoded[u]).count() as u64,
        elapsed_packets: central as f64 / ctx.params.samples_per_packet as f64,
        ..Default::default()
    };
    let mut out = ThroughputTrial::default();
    if modes.includes(ReceiverMode::Ideal) {
        let mut g = gt.clone();
        out.ideal = Some(count(&rx.run(ReceiverMode::Ideal, &mut g, None)?.decoded));
    }
    if modes.includes(ReceiverMode::TwoPhase) {
        let mut g = gt;
        out.two_phase = Some(count(&rx.run(ReceiverMode::TwoPhase, &mut g, Some(&mut buf))?.decoded));
    }
    Ok(out)
}

/// Throughput summary at one load.
#[derive(Debug, Clone, PartialEq)]
pub struct ThroughputResult {
    pub g: f64,
    pub two_phase: Option<Summary>,
    pub ideal: Option<Summary>,
    /// Per-trial decoded counts `(two_phase, ideal)` on shared channels.
    pub paired: Vec<(Option<u64>, Option<u64>)>,
}

/// Simulates `trials` channels per load, each with a central region of
/// `windows_per_trial` receiver windows.
#[allow(clippy::too_many_arguments)]
pub fn run_throughput(
    cfg: &SystemConfig,
    gs: &[f64],
    trials: usize,
    windows_per_trial: usize,
    settings: ReceiverSettings,
    modes: ModeSelection,
    workers: usize,
) -> Result<Vec<ThroughputResult>> {
    if windows_per_trial == 0 {
        return Err(Error::InvalidArgument("windows per trial must be positive".into()));
    }
    let pool = pool(workers)?;
    gs.iter()
        .enumerate()
        .map(|(i, &g)| {
            let ctx = SimContext::<f64>::new(&SystemConfig { channel_load: g, ..cfg.clone() })?;
            let central = windows_per_trial * ctx.params.samples_per_window;
            let (lo, hi) = receiver_span(&ctx.params, central);
            let per = par_trials(&pool, 0..trials as u64, |t| {
                let mut rng = trial_rng(cfg.seed, stream_id(Family::Throughput, i, t));
                let trial = generate_trial(&ctx, central, lo, hi, &mut rng);
                throughput_stats(&ctx, trial, windows_per_trial, settings, modes)
            })?;
            let summarize = |pick: fn(&ThroughputTrial) -> Option<TrialStats>| -> Result<Option<Summary>> {
                let v: Vec<TrialStats> = per.iter().filter_map(pick).collect();
                if v.is_empty() {
                    Ok(None)
                } else {
                    aggregate(&v, cfg.rate).map(Some)
                }
            };
            Ok(ThroughputResult {
                g,
                two_phase: summarize(|t| t.two_phase)?,
                ideal: summarize(|t| t.ideal)?,
                paired: per.iter().map(|t| (t.two_phase.map(|s| s.decoded), t.ideal.map(|s| s.decoded))).collect(),
            })
        })
        .collect()
}

/// CSV with columns `g,xi_two_phase,xi_ideal,plr_two_phase,plr_ideal` followed
/// by the matching confidence half-widths. Receivers not run are `NaN`.
pub fn write_throughput_csv<W: Write>(rows: &[ThroughputResult], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "g",
        "xi_two_phase",
        "xi_ideal",
        "plr_two_phase",
        "plr_ideal",
        "xi_two_phase_ci",
        "xi_ideal_ci",
        "plr_two_phase_ci",
        "plr_ideal_ci",
    ])?;
    let get = |s: &Option<Summary>, f: fn(&Summary) -> f64| fmt_f(s.as_ref().map(f).unwrap_or(f64::NAN));
    for r in rows {
        w.write_record(&[
            fmt_f(r.g),
            get(&r.two_phase, |s| s.xi),
            get(&r.ideal, |s| s.xi),
            get(&r.two_phase, |s| s.plr),
            get(&r.ideal, |s| s.plr),
            get(&r.two_phase, |s| s.xi_ci),
            get(&r.ideal, |s| s.xi_ci),
            get(&r.two_phase, |s| s.plr_ci),
            get(&r.ideal, |s| s.plr_ci),
        ])?;
    }
    w.flush()?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Output helpers

/// Shortest round-trip representation, so files are byte-stable.
pub fn fmt_f(x: f64) -> String {
    if x.is_nan() {
        "NaN".into()
    } else {
        format!("{x}")
    }
}

/// Writes a file atomically: the content goes to a temporary file in the
/// target directory, which is then renamed over `path`.
pub fn write_atomic(path: &Path, f: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    std::fs::create_dir_all(&dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(&dir)?;
    {
        let mut w = std::io::BufWriter::new(tmp.as_file_mut());
        f(&mut w)?;
        w.flush()?;
    }
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

/// Lower-case hex SHA-256 of `bytes`.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

// ---------------------------------------------------------------------------
// Golden run

/// False-alarm rate per tested position at which the operating threshold
/// is calibrated.
pub const DEFAULT_TARGET_PF: f64 = 0.05;

/// Reduced trial counts for the golden run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GoldenSpec {
    pub roc_g: f64,
    /// H0 and H1 samples for the ROC.
    pub roc_samples: usize,
    pub cal_g: f64,
    pub target_pf: f64,
    pub detect_trials: usize,
    pub throughput_trials: usize,
    pub windows_per_trial: usize,
}

impl Default for GoldenSpec {
    fn default() -> Self {
        Self {
            roc_g: 1.5,
            roc_samples: 2000,
            cal_g: 1.0,
            target_pf: DEFAULT_TARGET_PF,
            detect_trials: 4,
            throughput_trials: 2,
            windows_per_trial: 1,
        }
    }
}

/// Hashes identifying a golden run's inputs and outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_sha256: String,
    pub seed: u64,
    pub lambda: f64,
    pub spec: GoldenSpec,
    /// CSV file name → SHA-256.
    pub files: BTreeMap<String, String>,
}

pub const DETECTION_CSV: &str = "detection.csv";
pub const THROUGHPUT_CSV: &str = "throughput.csv";
pub const MANIFEST_JSON: &str = "manifest.json";

/// Runs all three experiment families at reduced size, writes their CSVs
/// and `manifest.json` into `out`, and returns the manifest.
pub fn golden_run(cfg: &SystemConfig, spec: &GoldenSpec, out: &Path, workers: usize) -> Result<Manifest> {
    cfg.validate()?;
    let mut files = BTreeMap::new();
    let mut emit = |name: String, body: &dyn Fn(&mut dyn Write) -> Result<()>| -> Result<()> {
        let mut bytes = Vec::new();
        body(&mut bytes)?;
        write_atomic(&out.join(&name), |w| Ok(w.write_all(&bytes)?))?;
        files.insert(name, sha256_hex(&bytes));
        Ok(())
    };

    let roc = run_roc(cfg, &[spec.roc_g], spec.roc_samples, workers)?;
    emit(roc_file_name(spec.roc_g), &|w| roc[0].write_csv(w))?;

    let trials = crate::metrics::required_trials(spec.target_pf);
    let cal = calibrate_threshold(cfg, spec.cal_g, spec.target_pf, trials, DetectionRule::Plain, workers)?;
    let gs = [0.5, 1.0, 1.5];
    let det = run_detect(cfg, &gs, spec.detect_trials, DetectionRule::Plain, cal.lambda, workers)?;
    emit(DETECTION_CSV.into(), &|w| write_detection_csv(&det, w))?;

    let settings = ReceiverSettings { rule: DetectionRule::Plain, threshold: cal.lambda, combiner: Combiner::Mrc };
    let thr = run_throughput(cfg, &[0.5, 1.0], spec.throughput_trials, spec.windows_per_trial, settings, ModeSelection::Both, workers)?;
    emit(THROUGHPUT_CSV.into(), &|w| write_throughput_csv(&thr, w))?;

    let manifest = Manifest {
        config_sha256: sha256_hex(cfg.to_json().as_bytes()),
        seed: cfg.seed,
        lambda: cal.lambda,
        spec: *spec,
        files,
    };
    let text = serde_json::to_string_pretty(&manifest)?;
    write_atomic(&out.join(MANIFEST_JSON), |w| Ok(w.write_all(text.as_bytes())?))?;
    Ok(manifest)
}

/// Experiment family selected on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Subcommand {
    Roc,
    Detect,
    Throughput,
    Calibrate,
}

/// Fully resolved description of one experiment run.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub subcommand: Subcommand,
    pub base: SystemConfig,
    pub gs: Vec<f64>,
    pub trials: usize,
    pub out: PathBuf,
    pub workers: usize,
    pub rule: DetectionRule,
    pub modes: ModeSelection,
    pub threshold: f64,
    pub target_pf: f64,
    pub g_cal: f64,
    pub windows_per_trial: usize,
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        self.base.validate()?;
        if self.gs.is_empty() && self.subcommand != Subcommand::Calibrate {
            return Err(Error::InvalidArgument("load sweep is empty".into()));
        }
        if let Some(g) = self.gs.iter().find(|g| !(g.is_finite() && **g >= 0.0)) {
            return Err(Error::InvalidArgument(format!("invalid load {g}")));
        }
        if self.trials == 0 {
            return Err(Error::InvalidArgument("trials must be positive".into()));
        }
        Ok(())
    }
}

/// Result of [`run_experiment`], for reporting.
#[derive(Debug, Clone, PartialEq)]
pub enum Report {
    Roc(Vec<RocResult>),
    Detect(Vec<DetectResult>),
    Throughput(Vec<ThroughputResult>),
    Calibrate(Calibration),
}

/// Runs one experiment family and writes its output file(s) into `spec.out`.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<Report> {
    spec.validate()?;
    std::fs::create_dir_all(&spec.out)?;
    match spec.subcommand {
        Subcommand::Roc => {
            let res = run_roc(&spec.base, &spec.gs, spec.trials, spec.workers)?;
            for r in &res {
                write_atomic(&spec.out.join(roc_file_name(r.g)), |w| r.write_csv(w))?;
            }
            Ok(Report::Roc(res))
        }
        Subcommand::Detect => {
            let res = run_detect(&spec.base, &spec.gs, spec.trials, spec.rule, spec.threshold, spec.workers)?;
            write_atomic(&spec.out.join(DETECTION_CSV), |w| write_detection_csv(&res, w))?;
            Ok(Report::Detect(res))
        }
        Subcommand::Throughput => {
            let settings = ReceiverSettings { rule: spec.rule, threshold: spec.threshold, combiner: Combiner::Mrc };
            let res = run_throughput(&spec.base, &spec.gs, spec.trials, spec.windows_per_trial, settings, spec.modes, spec.workers)?;
            write_atomic(&spec.out.join(THROUGHPUT_CSV), |w| write_throughput_csv(&res, w))?;
            Ok(Report::Throughput(res))
        }
        Subcommand::Calibrate => {
            let cal = calibrate_threshold(&spec.base, spec.g_cal, spec.target_pf, spec.trials, spec.rule, spec.workers)?;
            let text = serde_json::to_string_pretty(&cal)?;
            write_atomic(&spec.out.join("calibration.json"), |w| Ok(w.write_all(text.as_bytes())?))?;
            Ok(Report::Calibrate(cal))
        }
    }
}
