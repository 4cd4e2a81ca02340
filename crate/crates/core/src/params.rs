//! Scenario configuration, derived sample-domain quantities and the sync word.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Received power of every interfering symbol (perfect power control, unit symbol energy).
pub const INTERFERER_POWER: f64 = 1.0;

/// Hex constant of the 32-bit sync word.
pub const STANDARD_SYNC_HEX: u32 = 0x1ACF_FC1D;

/// All scenario knobs. Time quantities are in packet durations unless noted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SystemConfig {
    /// Channel load: user packets per packet duration.
    pub channel_load: f64,
    pub es_n0_db: f64,
    /// Maximum frequency offset times the symbol period.
    pub f_max_norm: f64,
    /// Replicas per user.
    pub d: usize,
    /// Symbols per packet, sync word included.
    pub n_s: usize,
    /// Sync-word symbols.
    pub n_sw: usize,
    /// Slots per packet.
    pub n_p: usize,
    /// Slots per virtual frame.
    pub n_slots: usize,
    /// Samples per symbol.
    pub osf: usize,
    pub rolloff: f64,
    /// Pulse truncation, symbols on each side of the peak.
    pub pulse_half_span: usize,
    pub window_packets: f64,
    pub window_shift_packets: f64,
    /// Code rate in bits per symbol.
    pub rate: f64,
    /// Detection threshold.
    pub lambda: f64,
    pub sic_max_iters: usize,
    pub trials: usize,
    pub seed: u64,
}

impl Default for SystemConfig {
    fn default() -> Self {
        Self {
            channel_load: 1.0,
            es_n0_db: 10.0,
            f_max_norm: 0.01,
            d: 2,
            n_s: 1000,
            n_sw: 32,
            n_p: 1,
            n_slots: 100,
            osf: 4,
            rolloff: 0.2,
            pulse_half_span: 8,
            window_packets: 100.0,
            window_shift_packets: 10.0,
            rate: 1.0,
            lambda: 14.0,
            sic_max_iters: 10,
            trials: 100,
            seed: 1,
        }
    }
}

impl SystemConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if !(self.channel_load >= 0.0 && self.channel_load.is_finite()) {
            return fail(format!("channel_load must be finite and >= 0, got {}", self.channel_load));
        }
        if !self.es_n0_db.is_finite() {
            return fail("es_n0_db must be finite".into());
        }
        if !(self.f_max_norm >= 0.0 && self.f_max_norm < 0.5) {
            return fail(format!("f_max_norm must lie in [0, 0.5), got {}", self.f_max_norm));
        }
        if self.d < 2 {
            return fail(format!("d must be >= 2, got {}", self.d));
        }
        if self.n_s == 0 || self.n_sw == 0 || self.n_sw > self.n_s {
            return fail(format!("need 0 < n_sw <= n_s, got n_sw={} n_s={}", self.n_sw, self.n_s));
        }
        if self.n_p == 0 || self.n_s % self.n_p != 0 {
            return fail(format!("n_s={} is not divisible by n_p={}", self.n_s, self.n_p));
        }
        if self.d * self.n_p > self.n_slots {
            return fail(format!(
                "d*n_p={} exceeds n_slots={}: replicas cannot be placed",
                self.d * self.n_p,
                self.n_slots
            ));
        }
        if self.osf < 2 {
            return fail(format!("osf must be >= 2, got {}", self.osf));
        }
        if !(self.rolloff > 0.0 && self.rolloff <= 1.0) {
            return fail(format!("rolloff must lie in (0, 1], got {}", self.rolloff));
        }
        if self.pulse_half_span == 0 {
            return fail("pulse_half_span must be positive".into());
        }
        if !(self.window_packets > 0.0) || !(self.window_shift_packets > 0.0) {
            return fail("window and shift lengths must be positive".into());
        }
        if !(self.rate > 0.0 && self.rate.is_finite()) {
            return fail(format!("rate must be positive, got {}", self.rate));
        }
        if !self.lambda.is_finite() {
            return fail("lambda must be finite".into());
        }
        if self.sic_max_iters == 0 || self.trials == 0 {
            return fail("sic_max_iters and trials must be positive".into());
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: SystemConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

/// Sample-domain quantities derived from a [`SystemConfig`].
#[derive(Debug, Clone, PartialEq)]
pub struct DerivedParams {
    pub samples_per_symbol: usize,
    pub symbols_per_packet: usize,
    pub samples_per_packet: usize,
    pub samples_per_slot: usize,
    pub samples_per_window: usize,
    pub samples_per_shift: usize,
    /// Virtual-frame length in samples.
    pub samples_per_vf: usize,
    /// Complex noise variance 2σ² per symbol-spaced tap, with Es = 1.
    pub noise_var: f64,
}

impl DerivedParams {
    /// Slot duration ΔT in samples.
    pub fn slot_duration_samples(&self) -> usize {
        self.samples_per_slot
    }

    pub fn sync_samples(&self, n_sw: usize) -> usize {
        n_sw * self.samples_per_symbol
    }
}

fn whole_samples(packets: f64, samples_per_packet: usize, what: &str) -> Result<usize> {
    let exact = packets * samples_per_packet as f64;
    let rounded = exact.round();
    if (exact - rounded).abs() > 1e-9 * exact.max(1.0) || rounded < 1.0 {
        return Err(Error::Config(format!(
            "{what} of {packets} packets is not a positive whole number of samples"
        )));
    }
    Ok(rounded as usize)
}

pub fn derive(cfg: &SystemConfig) -> Result<DerivedParams> {
    cfg.validate()?;
    let samples_per_packet = cfg.n_s * cfg.osf;
    let samples_per_slot = samples_per_packet / cfg.n_p;
    if samples_per_slot * cfg.n_p != samples_per_packet {
        return Err(Error::Config("samples_per_slot is not an integer".into()));
    }
    Ok(DerivedParams {
        samples_per_symbol: cfg.osf,
        symbols_per_packet: cfg.n_s,
        samples_per_packet,
        samples_per_slot,
        samples_per_window: whole_samples(cfg.window_packets, samples_per_packet, "window")?,
        samples_per_shift: whole_samples(cfg.window_shift_packets, samples_per_packet, "window shift")?,
        samples_per_vf: cfg.n_slots * samples_per_slot,
        noise_var: 10f64.powf(-cfg.es_n0_db / 10.0),
    })
}

/// Known antipodal prefix shared by all users.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SyncWord {
    symbols: Vec<i8>,
}

impl SyncWord {
    /// Builds a sync word from ±1 symbols.
    pub fn new(symbols: Vec<i8>) -> Result<Self> {
        if symbols.is_empty() || symbols.iter().any(|&s| s != 1 && s != -1) {
            return Err(Error::InvalidArgument("sync word symbols must be ±1".into()));
        }
        Ok(Self { symbols })
    }

    /// Reads the low `bits` bits of `word` MSB-first, mapping bit b to 2b−1.
    pub fn from_bits(word: u64, bits: usize) -> Self {
        assert!((1..=64).contains(&bits));
        let symbols = (0..bits)
            .rev()
            .map(|k| if (word >> k) & 1 == 1 { 1 } else { -1 })
            .collect();
        Self { symbols }
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

    pub fn energy(&self) -> f64 {
        self.symbols.len() as f64
    }
}

/// The 32-symbol word 0x1ACFFC1D.
pub fn standard_sync_word() -> SyncWord {
    SyncWord::from_bits(STANDARD_SYNC_HEX as u64, 32)
}

/// Sync word of length `n_sw`: the standard word when `n_sw == 32`,
/// otherwise its cyclic extension or truncation.
pub fn sync_word_for(n_sw: usize) -> SyncWord {
    let base = standard_sync_word();
    let symbols = (0..n_sw).map(|i| base.symbols[i % base.len()]).collect();
    SyncWord { symbols }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noise_variance_from_es_n0() {
        let cfg = SystemConfig { es_n0_db: 10.0, ..Default::default() };
        let p = derive(&cfg).unwrap();
        assert!((p.noise_var - 0.1).abs() < 1e-15);
    }

    #[test]
    fn packet_and_window_sizes() {
        let p = derive(&SystemConfig::default()).unwrap();
        assert_eq!(p.samples_per_packet, 4000);
        assert_eq!(p.samples_per_slot, 4000);
        assert_eq!(p.slot_duration_samples(), 4000);
        assert_eq!(p.samples_per_window, 400_000);
        assert_eq!(p.samples_per_shift, 40_000);
        assert_eq!(p.samples_per_vf, 400_000);
    }

    #[test]
    fn rejects_indivisible_packet() {
        let cfg = SystemConfig { n_s: 1000, n_p: 3, n_slots: 300, ..Default::default() };
        assert!(matches!(derive(&cfg), Err(Error::Config(_))));
    }

    #[test]
    fn rejects_fractional_window() {
        let cfg = SystemConfig { window_packets: 1.0001, n_s: 100, ..Default::default() };
        assert!(derive(&cfg).is_err());
    }

    #[test]
    fn rejects_invariant_violations() {
        let base = SystemConfig::default();
        for bad in [
            SystemConfig { n_sw: 1001, ..base.clone() },
            SystemConfig { d: 60, n_p: 2, n_slots: 100, ..base.clone() },
            SystemConfig { osf: 1, ..base.clone() },
            SystemConfig { rolloff: 0.0, ..base.clone() },
            SystemConfig { rolloff: 1.5, ..base.clone() },
            SystemConfig { channel_load: -0.1, ..base.clone() },
            SystemConfig { d: 1, ..base.clone() },
        ] {
            assert!(bad.validate().is_err(), "{bad:?}");
        }
    }

    #[test]
    fn sync_word_prefix_bits() {
        let s = standard_sync_word();
        assert_eq!(s.len(), 32);
        assert_eq!(&s.symbols()[..8], &[-1, -1, -1, 1, 1, -1, 1, -1]);
        assert_eq!(s.energy(), 32.0);
        // 0x1D = 00011101
        assert_eq!(&s.symbols()[24..], &[-1, -1, -1, 1, 1, 1, -1, 1]);
    }

    #[test]
    fn config_json_round_trip() {
        let cfg = SystemConfig { channel_load: 1.5, seed: 0xdead_beef, ..Default::default() };
        let back = SystemConfig::from_json(&cfg.to_json()).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn config_rejects_unknown_keys() {
        let err = SystemConfig::from_json(r#"{"channel_load": 1.0, "bogus": 3}"#);
        assert!(matches!(err, Err(Error::Json(_))));
    }

    #[test]
    fn derive_is_deterministic() {
        let cfg = SystemConfig::default();
        assert_eq!(derive(&cfg).unwrap(), derive(&cfg).unwrap());
    }
}
