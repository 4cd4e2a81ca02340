//! Replica matching: slot-compatibility filtering and full-packet
//! non-coherent correlation between candidates.

use num_complex::Complex;

use crate::detector::CandidateSet;
use crate::error::{Error, Result};
use crate::params::DerivedParams;
use crate::scalar::Scalar;
use crate::waveform::{extract_symbol_taps, SignalBuffer};

/// Sample-domain geometry of the compatibility criterion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MatchGeometry {
    /// Slot duration ΔT in samples.
    pub slot: i64,
    /// Packet duration in samples.
    pub packet: i64,
    /// Allowed deviation from an exact multiple of `slot`.
    pub tol: i64,
    /// Receiver window `[window_lo, window_hi)`, absolute samples.
    pub window_lo: i64,
    pub window_hi: i64,
}

impl MatchGeometry {
    /// Geometry for the receiver window `[window_lo, window_hi)`. Each
    /// candidate may sit up to half a symbol from its true start, so two
    /// candidates of the same user can be off by up to a symbol; the
    /// tolerance is therefore one sample short of a symbol.
    pub fn for_window(params: &DerivedParams, window_lo: i64, window_hi: i64) -> Self {
        Self {
            slot: params.samples_per_slot as i64,
            packet: params.samples_per_packet as i64,
            tol: params.samples_per_symbol as i64 - 1,
            window_lo,
            window_hi,
        }
    }

    /// `later` is compatible with `earlier` when it lies a whole number of
    /// slots and at least one packet after it, both up to `tol`, and before
    /// the last slot of the window.
    pub fn is_compatible(&self, earlier: i64, later: i64) -> bool {
        let gap = later - earlier;
        if gap < self.packet - self.tol || gap <= 0 {
            return false;
        }
        if later >= self.window_hi - self.slot || earlier < self.window_lo {
            return false;
        }
        let r = gap.rem_euclid(self.slot);
        r.min(self.slot - r) <= self.tol
    }
}

/// Candidates compatible with `anchor`, looking forward from it.
pub fn compatible_set(anchor: i64, set: &CandidateSet, geom: &MatchGeometry) -> Vec<i64> {
    set.range(anchor + 1, geom.window_hi)
        .iter()
        .map(|c| c.position)
        .filter(|&p| geom.is_compatible(anchor, p))
        .collect()
}

/// Candidates compatible with `anchor` in either direction, ascending.
pub fn compatible_both_ways(anchor: i64, set: &CandidateSet, geom: &MatchGeometry) -> Vec<i64> {
    let mut out: Vec<i64> = set
        .range(geom.window_lo, anchor)
        .iter()
        .map(|c| c.position)
        .filter(|&p| geom.is_compatible(p, anchor))
        .collect();
    out.extend(compatible_set(anchor, set, geom));
    out
}

/// Full-packet non-coherent correlation |Σ_j y1_j · conj(yi_j)|.
pub fn lambda2<T: Scalar>(y1: &[Complex<T>], yi: &[Complex<T>]) -> Result<T> {
    if y1.len() != yi.len() {
        return Err(Error::LengthMismatch { expected: y1.len(), actual: yi.len() });
    }
    let mut re = T::zero();
    let mut im = T::zero();
    for (a, b) in y1.iter().zip(yi) {
        // a · conj(b)
        re += a.re * b.re + a.im * b.im;
        im += a.im * b.re - a.re * b.im;
    }
    Ok(re.hypot(im))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    pub anchor: i64,
    /// At most `d − 1` partners by descending score.
    pub partners: Vec<(i64, f64)>,
}

impl MatchResult {
    pub fn positions(&self) -> impl Iterator<Item = i64> + '_ {
        std::iter::once(self.anchor).chain(self.partners.iter().map(|p| p.0))
    }
}

/// Ranks `pool` by `score(anchor, p)` and keeps the best `d − 1`; ties go to
/// the smaller position. Candidates the scorer cannot evaluate are skipped.
pub fn select_partners(
    anchor: i64,
    pool: &[i64],
    d: usize,
    mut score: impl FnMut(i64, i64) -> Option<f64>,
) -> MatchResult {
    let mut scored: Vec<(i64, f64)> =
        pool.iter().filter(|&&p| p != anchor).filter_map(|&p| score(anchor, p).map(|s| (p, s))).collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    scored.truncate(d.saturating_sub(1));
    MatchResult { anchor, partners: scored }
}

/// Matches `anchor` against its compatible candidates by full-packet
/// correlation of `n_s` symbol taps read from `buf`.
pub fn match_anchor<T: Scalar>(
    anchor: i64,
    set: &CandidateSet,
    buf: &SignalBuffer<T>,
    n_s: usize,
    d: usize,
    geom: &MatchGeometry,
) -> MatchResult {
    let pool = compatible_both_ways(anchor, set, geom);
    let Ok(ya) = extract_symbol_taps(buf, anchor, n_s) else {
        return MatchResult { anchor, partners: Vec::new() };
    };
    select_partners(anchor, &pool, d, |_, p| {
        let yp = extract_symbol_taps(buf, p, n_s).ok()?;
        lambda2(&ya, &yp).ok().map(|v| v.as_f64())
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detector::Candidate;

    fn set(ps: &[i64]) -> CandidateSet {
        CandidateSet { candidates: ps.iter().map(|&p| Candidate { position: p, score: 1.0 }).collect() }
    }

    fn geom() -> MatchGeometry {
        MatchGeometry { slot: 4000, packet: 4000, tol: 2, window_lo: 0, window_hi: 400_000 }
    }

    #[test]
    fn tolerance_is_one_sample_short_of_a_symbol() {
        let p = crate::params::derive(&crate::params::SystemConfig::default()).unwrap();
        let g = MatchGeometry::for_window(&p, 0, 400_000);
        assert_eq!((g.slot, g.packet, g.tol), (4000, 4000, 3));
        assert!(g.is_compatible(0, 12_003));
        assert!(!g.is_compatible(0, 12_004));
        assert!(!g.is_compatible(0, 2000));
    }

    #[test]
    fn multiples_of_slot_within_tolerance() {
        let s = set(&[0, 12_000, 12_001]);
        assert_eq!(compatible_set(0, &s, &geom()), vec![12_000, 12_001]);
    }

    #[test]
    fn half_slot_excluded() {
        let s = set(&[0, 2000, 6000]);
        assert!(compatible_set(0, &s, &geom()).is_empty());
    }

    #[test]
    fn one_packet_apart_included() {
        let s = set(&[100, 4100, 4099, 4103]);
        let mut got = compatible_set(100, &s, &geom());
        got.sort();
        assert_eq!(got, vec![4099, 4100]);
    }

    #[test]
    fn wraps_below_multiple() {
        assert!(geom().is_compatible(0, 7998));
        assert!(!geom().is_compatible(0, 7997));
    }

    #[test]
    fn window_tail_excluded() {
        let g = geom();
        assert!(g.is_compatible(0, 392_000));
        assert!(!g.is_compatible(0, 396_000));
        assert!(!g.is_compatible(-4000, 8000));
    }

    #[test]
    fn both_directions() {
        let s = set(&[0, 8000, 16_000]);
        assert_eq!(compatible_both_ways(8000, &s, &geom()), vec![0, 16_000]);
    }

    #[test]
    fn lambda2_basics() {
        let y: Vec<Complex<f64>> = (0..1000).map(|k| Complex::new(if k % 3 == 0 { 1.0 } else { -1.0 }, 0.0)).collect();
        assert!((lambda2(&y, &y).unwrap() - 1000.0).abs() < 1e-9);
        let rot = Complex::from_polar(1.0, 2.2);
        let yr: Vec<_> = y.iter().map(|z| z * rot).collect();
        assert!((lambda2(&y, &yr).unwrap() - 1000.0).abs() < 1e-9);
        assert!(lambda2(&y, &y[..999]).is_err());
    }

    #[test]
    fn anchor_alone_has_no_partners() {
        let s = set(&[500]);
        let buf = SignalBuffer::<f64>::zeros(0, 100_000, 4);
        let m = match_anchor(500, &s, &buf, 100, 2, &geom());
        assert!(m.partners.is_empty());
    }

    #[test]
    fn ties_prefer_smaller_position() {
        let m = select_partners(0, &[8000, 4000, 12_000], 3, |_, p| Some(if p == 12_000 { 2.0 } else { 1.0 }));
        assert_eq!(m.partners, vec![(12_000, 2.0), (4000, 1.0)]);
    }
}
