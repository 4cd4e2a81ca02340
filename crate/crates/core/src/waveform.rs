//! Complex-baseband synthesis on the oversampled grid.
//!
//! The transmit and receive filters are collapsed into a single raised-cosine
//! pulse, so symbol-spaced taps of an isolated replica reproduce its symbols.
//! Epochs live on the grid: a replica starts at an integer sample index.

use std::io::Write;

use num_complex::Complex;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::params::SyncWord;
use crate::scalar::Scalar;

/// Time-domain raised-cosine pulse at `t` symbol periods from the peak.
pub fn rc_pulse<T: Scalar>(t: T, rolloff: T) -> T {
    let one = T::one();
    let pi = T::PI();
    if t.abs() < T::lit(1e-9) {
        return one;
    }
    let x = T::lit(2.0) * rolloff * t;
    let denom = one - x * x;
    if denom.abs() < T::lit(1e-6) {
        // limit at t = ±1/(2·rolloff)
        let u = one / (T::lit(2.0) * rolloff);
        return pi / T::lit(4.0) * sinc(u);
    }
    sinc(t) * (pi * rolloff * t).cos() / denom
}

/// Normalized sinc, sin(πx)/(πx).
pub fn sinc<T: Scalar>(x: T) -> T {
    if x.abs() < T::lit(1e-12) {
        T::one()
    } else {
        let px = T::PI() * x;
        px.sin() / px
    }
}

/// Raised-cosine samples on the grid, truncated to ±`half_span` symbols.
#[derive(Debug, Clone)]
pub struct PulseTable<T> {
    taps: Vec<T>,
    osf: usize,
    half_span: usize,
}

impl<T: Scalar> PulseTable<T> {
    pub fn new(osf: usize, rolloff: f64, half_span: usize) -> Self {
        let reach = (half_span * osf) as i64;
        let taps = (-reach..=reach)
            .map(|k| rc_pulse(T::lit(k as f64 / osf as f64), T::lit(rolloff)))
            .collect();
        Self { taps, osf, half_span }
    }

    /// Samples on each side of the peak.
    pub fn reach(&self) -> usize {
        self.half_span * self.osf
    }

    pub fn osf(&self) -> usize {
        self.osf
    }

    /// Value at grid offset `k` from the peak, zero outside the truncation.
    pub fn at(&self, k: i64) -> T {
        let r = self.reach() as i64;
        if k.abs() > r {
            T::zero()
        } else {
            self.taps[(k + r) as usize]
        }
    }

    pub fn taps(&self) -> &[T] {
        &self.taps
    }
}

/// Symbol sequence of one packet: sync word followed by random BPSK data.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PacketSymbols {
    symbols: Vec<i8>,
}

impl PacketSymbols {
    pub fn random<R: Rng + ?Sized>(sync: &SyncWord, n_s: usize, rng: &mut R) -> Self {
        assert!(sync.len() <= n_s);
        let mut symbols = Vec::with_capacity(n_s);
        symbols.extend_from_slice(sync.symbols());
        symbols.extend((sync.len()..n_s).map(|_| if rng.random::<bool>() { 1i8 } else { -1 }));
        Self { symbols }
    }

    pub fn from_symbols(symbols: Vec<i8>) -> Result<Self> {
        if symbols.iter().any(|&s| s != 1 && s != -1) {
            return Err(Error::InvalidArgument("packet symbols must be ±1".into()));
        }
        Ok(Self { symbols })
    }

    pub fn symbols(&self) -> &[i8] {
        &self.symbols
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }
}

/// Complex samples on the oversampled grid. `origin` is the absolute index
/// of the first sample; the sample period is `1/osf` symbol periods.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalBuffer<T> {
    pub samples: Vec<Complex<T>>,
    pub origin: i64,
    pub osf: usize,
}

impl<T: Scalar> SignalBuffer<T> {
    pub fn zeros(origin: i64, len: usize, osf: usize) -> Self {
        Self { samples: vec![Complex::new(T::zero(), T::zero()); len], origin, osf }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Absolute index one past the last sample.
    pub fn end(&self) -> i64 {
        self.origin + self.samples.len() as i64
    }

    /// Sample period in symbol periods.
    pub fn sample_period(&self) -> f64 {
        1.0 / self.osf as f64
    }

    #[inline]
    pub fn get(&self, abs: i64) -> Option<Complex<T>> {
        let rel = abs - self.origin;
        if rel < 0 {
            None
        } else {
            self.samples.get(rel as usize).copied()
        }
    }

    fn check_range(&self, start: i64, end: i64) -> Result<()> {
        if start < self.origin || end > self.end() || start > end {
            Err(Error::OutOfRange { start, end, len: self.samples.len() })
        } else {
            Ok(())
        }
    }

    pub fn is_finite(&self) -> bool {
        self.samples.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    pub fn energy(&self) -> T {
        self.samples.iter().map(|z| z.norm_sqr()).sum()
    }

    /// Writes `index,re,im` rows with absolute sample indices.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["index", "re", "im"])?;
        for (k, z) in self.samples.iter().enumerate() {
            w.write_record(&[
                (self.origin + k as i64).to_string(),
                z.re.to_string(),
                z.im.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Where and how one replica is received.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReplicaPlacement {
    /// Absolute grid index of the first symbol's peak, epoch included.
    pub start: i64,
    /// Frequency offset times the symbol period.
    pub f_norm: f64,
    /// Carrier phase in radians.
    pub phase: f64,
}

/// Absolute sample range touched by a replica including pulse tails.
pub fn replica_extent<T: Scalar>(start: i64, n_s: usize, pulse: &PulseTable<T>) -> (i64, i64) {
    let reach = pulse.reach() as i64;
    let osf = pulse.osf() as i64;
    (start - reach, start + (n_s as i64 - 1) * osf + reach + 1)
}

/// Adds `gain` times the pulse-shaped, rotated replica to the buffer.
pub fn add_replica<T: Scalar>(
    buf: &mut SignalBuffer<T>,
    pkt: &PacketSymbols,
    at: &ReplicaPlacement,
    pulse: &PulseTable<T>,
    gain: T,
) -> Result<()> {
    let (lo, hi) = replica_extent(at.start, pkt.len(), pulse);
    buf.check_range(lo, hi)?;
    accumulate(buf, pkt, at, pulse, gain);
    Ok(())
}

/// Like [`add_replica`] but silently drops the samples outside the buffer.
pub fn add_replica_clipped<T: Scalar>(
    buf: &mut SignalBuffer<T>,
    pkt: &PacketSymbols,
    at: &ReplicaPlacement,
    pulse: &PulseTable<T>,
    gain: T,
) {
    accumulate(buf, pkt, at, pulse, gain);
}

fn accumulate<T: Scalar>(
    buf: &mut SignalBuffer<T>,
    pkt: &PacketSymbols,
    at: &ReplicaPlacement,
    pulse: &PulseTable<T>,
    gain: T,
) {
    if pkt.is_empty() {
        return;
    }
    let (lo, hi) = replica_extent(at.start, pkt.len(), pulse);
    if hi <= buf.origin || lo >= buf.end() {
        return;
    }
    let osf = pulse.osf();
    let taps = pulse.taps();
    let span = (hi - lo) as usize;

    // Real pulse train first; the rotation is applied once per sample.
    let mut train = vec![T::zero(); span];
    for (i, &a) in pkt.symbols().iter().enumerate() {
        let seg = &mut train[i * osf..i * osf + taps.len()];
        if a > 0 {
            seg.iter_mut().zip(taps).for_each(|(acc, &g)| *acc += g);
        } else {
            seg.iter_mut().zip(taps).for_each(|(acc, &g)| *acc -= g);
        }
    }

    let step = 2.0 * std::f64::consts::PI * at.f_norm / osf as f64;
    let first = step * (lo - at.start) as f64 + at.phase;
    let w = Complex::new(step.cos(), step.sin());
    let mut rot = Complex::new(first.cos(), first.sin());
    let len = buf.len() as i64;
    for (k, &r) in train.iter().enumerate() {
        if k % 1024 == 1023 {
            // re-anchor the recursive phasor
            let th = first + step * k as f64;
            rot = Complex::new(th.cos(), th.sin());
        }
        let idx = lo - buf.origin + k as i64;
        if (0..len).contains(&idx) {
            let amp = r * gain;
            let z = &mut buf.samples[idx as usize];
            z.re += amp * T::lit(rot.re);
            z.im += amp * T::lit(rot.im);
        }
        rot *= w;
    }
}

/// Adds one replica to the buffer: `start_sample + epoch_offset` is the
/// grid position of the first symbol.
pub fn synthesize_replica<T: Scalar>(
    buf: &mut SignalBuffer<T>,
    pkt: &PacketSymbols,
    start_sample: i64,
    epoch_offset: i64,
    f_norm: f64,
    phase: f64,
    pulse: &PulseTable<T>,
) -> Result<()> {
    let at = ReplicaPlacement { start: start_sample + epoch_offset, f_norm, phase };
    add_replica(buf, pkt, &at, pulse, T::one())
}

/// Adds i.i.d. circular complex Gaussian noise of variance `noise_var` per sample.
pub fn add_awgn<T: Scalar, R: Rng + ?Sized>(buf: &mut SignalBuffer<T>, noise_var: f64, rng: &mut R) {
    assert!(noise_var >= 0.0, "noise variance must be nonnegative");
    if noise_var == 0.0 {
        return;
    }
    let sd = (noise_var / 2.0).sqrt();
    for z in &mut buf.samples {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        z.re += T::lit(sd * re);
        z.im += T::lit(sd * im);
    }
}

/// `count` samples spaced one symbol apart, beginning at absolute index `start`.
pub fn extract_symbol_taps<T: Scalar>(
    buf: &SignalBuffer<T>,
    start: i64,
    count: usize,
) -> Result<Vec<Complex<T>>> {
    if count == 0 {
        return Ok(Vec::new());
    }
    let osf = buf.osf as i64;
    let last = start + (count as i64 - 1) * osf;
    buf.check_range(start, last + 1)?;
    let rel = (start - buf.origin) as usize;
    Ok(buf.samples[rel..].iter().step_by(buf.osf).take(count).copied().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::standard_sync_word;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn packet(n: usize, seed: u64) -> PacketSymbols {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        PacketSymbols::random(&standard_sync_word(), n, &mut rng)
    }

    #[test]
    fn pulse_peak_and_zeros() {
        assert_eq!(rc_pulse(0.0f64, 0.2), 1.0);
        for k in 1..20 {
            assert!(rc_pulse(k as f64, 0.2).abs() < 1e-15);
            assert!(rc_pulse(-(k as f64), 0.2).abs() < 1e-15);
        }
    }

    #[test]
    fn pulse_singular_point_matches_limit() {
        let beta = 0.2f64;
        let t0 = 1.0 / (2.0 * beta);
        // independent oracle: symmetric finite approach to the removable singularity
        let h = 1e-5;
        let oracle = 0.5 * (rc_pulse(t0 - h, beta) + rc_pulse(t0 + h, beta));
        let v = rc_pulse(t0, beta);
        assert!((v - oracle).abs() < 1e-8, "{v} vs {oracle}");
        // π/4·sinc(2.5) = 0.1
        assert!((v - 0.1).abs() < 1e-12);
        assert!((rc_pulse(-t0, beta) - v).abs() < 1e-15);
    }

    #[test]
    fn pulse_full_rolloff_singularity() {
        // rolloff 1 puts the singularity at t = 0.5; value there is π/4·sinc(0.5) = 0.5
        assert!((rc_pulse(0.5f64, 1.0) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn pulse_generic_f32() {
        assert_eq!(rc_pulse(0.0f32, 0.2), 1.0);
        assert!(rc_pulse(3.0f32, 0.2).abs() < 1e-6);
    }

    #[test]
    fn truncation_energy_loss_small() {
        let osf = 4;
        let short = PulseTable::<f64>::new(osf, 0.2, 8);
        let long = PulseTable::<f64>::new(osf, 0.2, 64);
        let e = |t: &PulseTable<f64>| t.taps().iter().map(|g| g * g).sum::<f64>();
        let loss = 1.0 - e(&short) / e(&long);
        assert!(loss >= 0.0 && loss < 1e-3, "loss {loss}");
    }

    #[test]
    fn isolated_replica_taps_equal_symbols() {
        let pulse = PulseTable::<f64>::new(4, 0.2, 8);
        let pkt = packet(200, 3);
        let mut buf = SignalBuffer::zeros(-100, 1200, 4);
        synthesize_replica(&mut buf, &pkt, 0, 0, 0.0, 0.0, &pulse).unwrap();
        let taps = extract_symbol_taps(&buf, 0, 200).unwrap();
        for (z, &a) in taps.iter().zip(pkt.symbols()) {
            assert!((z.re - a as f64).abs() < 1e-12 && z.im.abs() < 1e-12);
        }
    }

    #[test]
    fn opposite_phase_replicas_cancel() {
        let pulse = PulseTable::<f64>::new(4, 0.2, 8);
        let pkt = packet(100, 5);
        let mut buf = SignalBuffer::zeros(-64, 600, 4);
        synthesize_replica(&mut buf, &pkt, 0, 0, 0.0, 0.3, &pulse).unwrap();
        synthesize_replica(&mut buf, &pkt, 0, 0, 0.0, 0.3 + std::f64::consts::PI, &pulse).unwrap();
        for z in extract_symbol_taps(&buf, 0, 100).unwrap() {
            assert!(z.norm() < 1e-12);
        }
    }

    #[test]
    fn frequency_ramp_at_taps() {
        let pulse = PulseTable::<f64>::new(4, 0.2, 8);
        let pkt = packet(64, 7);
        let phi = 0.7;
        let mut buf = SignalBuffer::zeros(-40, 400, 4);
        synthesize_replica(&mut buf, &pkt, 0, 0, 0.01, phi, &pulse).unwrap();
        let taps = extract_symbol_taps(&buf, 0, 64).unwrap();
        for (k, z) in taps.iter().enumerate() {
            let th = 2.0 * std::f64::consts::PI * 0.01 * k as f64 + phi;
            let want = Complex::new(th.cos(), th.sin()) * pkt.symbols()[k] as f64;
            assert!((z - want).norm() < 1e-9, "tap {k}");
        }
    }

    #[test]
    fn epoch_offset_shifts_grid() {
        let pulse = PulseTable::<f64>::new(4, 0.2, 8);
        let pkt = packet(50, 9);
        let mut a = SignalBuffer::zeros(-40, 400, 4);
        let mut b = SignalBuffer::zeros(-40, 400, 4);
        synthesize_replica(&mut a, &pkt, 10, 3, 0.0, 0.0, &pulse).unwrap();
        synthesize_replica(&mut b, &pkt, 13, 0, 0.0, 0.0, &pulse).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn half_symbol_offset_taps_match_convolution() {
        let osf = 4;
        let beta = 0.2;
        let pulse = PulseTable::<f64>::new(osf, beta, 8);
        let pkt = packet(40, 11);
        let mut buf = SignalBuffer::zeros(-64, 400, osf);
        synthesize_replica(&mut buf, &pkt, 0, 0, 0.0, 0.0, &pulse).unwrap();
        let taps = extract_symbol_taps(&buf, 2, 39).unwrap();
        // direct convolution oracle at t = k + 0.5
        for (k, z) in taps.iter().enumerate() {
            let want: f64 = pkt
                .symbols()
                .iter()
                .enumerate()
                .filter(|(i, _)| (k as f64 + 0.5 - *i as f64).abs() <= 8.0)
                .map(|(i, &a)| a as f64 * rc_pulse(k as f64 + 0.5 - i as f64, beta))
                .sum();
            assert!((z.re - want).abs() < 1e-12 && z.im.abs() < 1e-12);
        }
    }

    #[test]
    fn out_of_range_rejected() {
        let pulse = PulseTable::<f64>::new(4, 0.2, 8);
        let pkt = packet(50, 1);
        let mut buf = SignalBuffer::zeros(0, 300, 4);
        assert!(matches!(
            synthesize_replica(&mut buf, &pkt, 0, 0, 0.0, 0.0, &pulse),
            Err(Error::OutOfRange { .. })
        ));
        assert!(extract_symbol_taps(&buf, 290, 4).is_err());
        assert!(extract_symbol_taps(&buf, -1, 1).is_err());
        assert!(extract_symbol_taps(&buf, 5000, 0).unwrap().is_empty());
    }

    #[test]
    fn clipped_matches_full_inside() {
        let pulse = PulseTable::<f64>::new(4, 0.2, 8);
        let pkt = packet(60, 2);
        let mut full = SignalBuffer::zeros(-100, 600, 4);
        synthesize_replica(&mut full, &pkt, 0, 0, 0.003, 0.2, &pulse).unwrap();
        let mut part = SignalBuffer::zeros(50, 100, 4);
        add_replica_clipped(&mut part, &pkt, &ReplicaPlacement { start: 0, f_norm: 0.003, phase: 0.2 }, &pulse, 1.0);
        for (k, z) in part.samples.iter().enumerate() {
            assert!((z - full.get(50 + k as i64).unwrap()).norm() < 1e-12);
        }
    }

    #[test]
    fn zero_noise_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut buf = SignalBuffer::<f64>::zeros(0, 64, 4);
        buf.samples[3] = Complex::new(1.0, -2.0);
        let before = buf.clone();
        add_awgn(&mut buf, 0.0, &mut rng);
        assert_eq!(buf, before);
    }

    #[test]
    fn awgn_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let n = 1_000_000;
        let mut buf = SignalBuffer::<f64>::zeros(0, n, 4);
        add_awgn(&mut buf, 0.1, &mut rng);
        let mean: Complex<f64> = buf.samples.iter().sum::<Complex<f64>>() / n as f64;
        let var = buf.energy() / n as f64;
        assert!((var - 0.1).abs() < 0.001, "var {var}");
        let sigma = 0.1f64.sqrt();
        assert!(mean.norm() < 3.0 * sigma / 1000.0, "mean {mean}");
    }

    #[test]
    fn replica_energy_stable_under_truncation() {
        let pkt = packet(1000, 13);
        let energy = |half: usize| {
            let pulse = PulseTable::<f64>::new(4, 0.2, half);
            let mut buf = SignalBuffer::zeros(-200, 4400, 4);
            synthesize_replica(&mut buf, &pkt, 0, 0, 0.0, 0.0, &pulse).unwrap();
            buf.energy()
        };
        let e8 = energy(8);
        let e40 = energy(40);
        assert!(((e8 - e40) / e40).abs() < 1e-3);
        // average sample power of an RC train is 1 - rolloff/4
        let per_sample = e40 / 4000.0;
        assert!((per_sample - 0.95).abs() < 0.05, "{per_sample}");
    }

    #[test]
    fn csv_dump_has_header() {
        let buf = SignalBuffer::<f64>::zeros(5, 2, 4);
        let mut out = Vec::new();
        buf.write_csv(&mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "index,re,im\n5,0,0\n6,0,0\n");
    }
}
