//! Algebraic properties of the signal kernels, checked on random inputs.

use num_complex::Complex;
use proptest::prelude::*;

use ecra::detector::{lambda1, lambda1_ia, lambda1_ia_with_gain, roc_sweep, IA_CORRELATION_GAIN};
use ecra::matcher::lambda2;
use ecra::params::{derive, standard_sync_word, SyncWord, SystemConfig};
use ecra::receiver::{cancel, combine, decode, Combiner};
use ecra::traffic::{build_ground_truth, UserTransmission};
use ecra::waveform::{rc_pulse, PacketSymbols, PulseTable};

fn complex_vec(len: usize) -> impl Strategy<Value = Vec<Complex<f64>>> {
    prop::collection::vec((-3.0f64..3.0, -3.0f64..3.0).prop_map(|(re, im)| Complex::new(re, im)), len)
}

fn sync() -> SyncWord {
    standard_sync_word()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn lambda1_phase_invariant(y in complex_vec(32), theta in 0.0f64..std::f64::consts::TAU) {
        let s = sync();
        let rot = Complex::from_polar(1.0, theta);
        let yr: Vec<_> = y.iter().map(|z| z * rot).collect();
        let (a, b) = (lambda1(&y, &s).unwrap(), lambda1(&yr, &s).unwrap());
        prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a));
    }

    #[test]
    fn lambda1_homogeneous(y in complex_vec(32), mag in 0.01f64..100.0, theta in 0.0f64..std::f64::consts::TAU) {
        let s = sync();
        let c = Complex::from_polar(mag, theta);
        let ys: Vec<_> = y.iter().map(|z| z * c).collect();
        let (a, b) = (lambda1(&y, &s).unwrap(), lambda1(&ys, &s).unwrap());
        prop_assert!((b - mag * a).abs() <= 1e-10 * (1.0 + mag * a));
    }

    #[test]
    fn ia_rule_is_affine_in_lambda1(y in complex_vec(32), sigma_i2 in 0.0f64..20.0, two_sigma2 in 0.01f64..2.0, gain in 0.5f64..3.0) {
        let s = sync();
        let plain = lambda1(&y, &s).unwrap();
        let n_sw = s.len() as f64;
        let expect = (gain * plain - n_sw) / (sigma_i2 + two_sigma2);
        let got = lambda1_ia_with_gain(&y, &s, sigma_i2, two_sigma2, gain).unwrap();
        prop_assert!((got - expect).abs() <= 1e-10 * (1.0 + expect.abs()));
        let default = lambda1_ia(&y, &s, sigma_i2, two_sigma2).unwrap();
        let expect_default = (IA_CORRELATION_GAIN * plain - n_sw) / (sigma_i2 + two_sigma2);
        prop_assert!((default - expect_default).abs() <= 1e-10 * (1.0 + expect_default.abs()));
    }

    #[test]
    fn pulse_has_nyquist_zeros(rolloff in 0.01f64..=1.0, k in 1i32..40) {
        prop_assert!((rc_pulse(0.0, rolloff) - 1.0).abs() < 1e-12);
        prop_assert!(rc_pulse(k as f64, rolloff).abs() < 1e-12);
        prop_assert!(rc_pulse(-(k as f64), rolloff).abs() < 1e-12);
    }

    #[test]
    fn lambda2_symmetric(a in complex_vec(64), b in complex_vec(64)) {
        let (x, y) = (lambda2(&a, &b).unwrap(), lambda2(&b, &a).unwrap());
        prop_assert!((x - y).abs() <= 1e-12 * (1.0 + x));
    }

    #[test]
    fn mrc_adds_and_never_decreases(
        a in prop::collection::vec(0.0f64..50.0, 1..64),
        extra in prop::collection::vec(0.0f64..50.0, 64),
    ) {
        let b: Vec<f64> = extra[..a.len()].to_vec();
        let one = combine(Combiner::Mrc, std::slice::from_ref(&a));
        let two = combine(Combiner::Mrc, &[a.clone(), b.clone()]);
        prop_assert_eq!(&one, &a);
        for j in 0..a.len() {
            prop_assert!((two[j] - (a[j] + b[j])).abs() <= 1e-12 * (1.0 + two[j]));
            prop_assert!(two[j] >= one[j]);
        }
    }

    #[test]
    fn decode_is_monotone(
        base in prop::collection::vec(0.0f64..5.0, 1..200),
        bump in prop::collection::vec(0.0f64..2.0, 200),
        rate in 0.1f64..3.0,
    ) {
        let raised: Vec<f64> = base.iter().zip(&bump).map(|(s, d)| s + d).collect();
        if decode(&base, rate) {
            prop_assert!(decode(&raised, rate));
        }
    }

    #[test]
    fn roc_is_monotone(
        h0 in prop::collection::vec(-10.0f64..10.0, 1..200),
        h1 in prop::collection::vec(-10.0f64..10.0, 1..200),
        thresholds in prop::collection::vec(-12.0f64..12.0, 1..50),
    ) {
        let curve = roc_sweep(&h0, &h1, &thresholds).unwrap();
        for w in curve.points.windows(2) {
            prop_assert!(w[0].threshold <= w[1].threshold);
            prop_assert!(w[1].pf <= w[0].pf);
            prop_assert!(w[1].pd <= w[0].pd);
        }
        for p in &curve.points {
            prop_assert!((0.0..=1.0).contains(&p.pf) && (0.0..=1.0).contains(&p.pd));
        }
    }

    #[test]
    fn cancellation_conserves_occupancy(
        starts in prop::collection::vec((0i64..2000, 0usize..4), 1..12),
        victim in 0usize..12,
    ) {
        let cfg = SystemConfig { n_s: 100, n_slots: 20, window_packets: 40.0, window_shift_packets: 10.0, ..SystemConfig::default() };
        let params = derive(&cfg).unwrap();
        let s = sync();
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(7);
        let users: Vec<UserTransmission> = starts
            .iter()
            .enumerate()
            .map(|(user_id, &(vf_symbol, epoch))| UserTransmission {
                user_id,
                vf_start: vf_symbol * cfg.osf as i64,
                epoch: epoch as i64,
                f_norm: 0.0,
                replica_slots: vec![1, 7],
                replica_phases: vec![0.0, 1.0],
                packet: PacketSymbols::random(&s, cfg.n_s, &mut rng),
            })
            .collect();
        let span = params.samples_per_window;
        let mut gt = build_ground_truth(&users, &params, 0, span);
        let before = gt.total_occupancy();
        let victim = victim % users.len();
        let pulse = PulseTable::<f64>::new(cfg.osf, cfg.rolloff, cfg.pulse_half_span);
        cancel::<f64>(&mut gt, None, &users[victim], &params, &pulse).unwrap();
        let drop = (cfg.d * params.samples_per_packet) as u64;
        prop_assert_eq!(gt.total_occupancy(), before - drop);
        let mut fresh = gt.clone();
        fresh.recompute_occupancy();
        prop_assert_eq!(fresh.total_occupancy(), gt.total_occupancy());
        prop_assert!(cancel::<f64>(&mut gt, None, &users[victim], &params, &pulse).is_err());
    }
}
