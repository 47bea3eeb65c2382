use num_complex::Complex64;
use proptest::prelude::*;
mod common;

use common::*;
use sisrafnet::channel::{add_noise, ls_at_pilots, ChannelProfile, PilotPattern};
use sisrafnet::rng::rng_for;

const MATCHED_SEEDS: u64 = 50;

#[test]
fn two_equal_taps_match_closed_form() {
    assert!(two_tap_error() < 1e-9);
}

#[test]
fn frequency_correlation_falls_with_delay_spread() {
    for p in [ChannelProfile::cdl_a(), ChannelProfile::cdl_d()] {
        let (short, long) = (
            mean_freq_corr(&p, 30e-9, MATCHED_SEEDS),
            mean_freq_corr(&p, 300e-9, MATCHED_SEEDS),
        );
        assert!(short > long, "{:?}: 30 ns {short} vs 300 ns {long}", p.kind);
    }
}

#[test]
fn slot_correlation_falls_with_velocity() {
    for p in [ChannelProfile::cdl_a(), ChannelProfile::cdl_d()] {
        let (slow, fast) = (
            mean_slot_corr(&p, 3.0, MATCHED_SEEDS),
            mean_slot_corr(&p, 30.0, MATCHED_SEEDS),
        );
        assert!(slow > fast, "{:?}: 3 km/h {slow} vs 30 km/h {fast}", p.kind);
    }
}

#[test]
fn los_profile_has_a_mean_component() {
    let bias = |p: &ChannelProfile| {
        (0..MATCHED_SEEDS)
            .map(|s| {
                let g = &realization(p, 30e-9, 3.0, 1, s).slots[0];
                let m: Complex64 = g.data().iter().sum::<Complex64>() / g.data().len() as f64;
                m.norm() / g.mean_power().sqrt()
            })
            .sum::<f64>()
            / MATCHED_SEEDS as f64
    };
    let (a, d) = (
        bias(&ChannelProfile::cdl_a()),
        bias(&ChannelProfile::cdl_d()),
    );
    assert!(d > a, "CDL-D {d} vs CDL-A {a}");
}

#[test]
fn generation_is_seed_deterministic() {
    let p = ChannelProfile::cdl_a();
    assert_eq!(
        realization(&p, 30e-9, 30.0, 3, 7),
        realization(&p, 30e-9, 30.0, 3, 7)
    );
    assert_ne!(
        realization(&p, 30e-9, 30.0, 3, 7),
        realization(&p, 30e-9, 30.0, 3, 8)
    );
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn realizations_have_unit_power(seed in any::<u64>(), d in any::<bool>(), ds in 10e-9..500e-9f64, kmh in 0.0..120.0f64) {
        let p = if d { ChannelProfile::cdl_d() } else { ChannelProfile::cdl_a() };
        let r = realization(&p, ds, kmh, 3, seed);
        prop_assert!((r.mean_power() - 1.0).abs() < 0.02);
        prop_assert!(r.slots.iter().all(|g| g.is_finite() && g.shape() == [240, 14]));
    }

    #[test]
    fn noise_free_pilots_are_exact(seed in any::<u64>(), name in prop::sample::select(vec!["P1", "P2", "P3", "P4", "P5"])) {
        let r = realization(&ChannelProfile::cdl_a(), 100e-9, 10.0, 1, seed);
        let pat = PilotPattern::standard(name, 240).unwrap();
        let obs = ls_at_pilots(&r.slots[0], &pat, f64::INFINITY, &mut rng_for(seed, &[1])).unwrap();
        prop_assert_eq!(obs.sigma2, 0.0);
        let truth = pat.extract(&r.slots[0]);
        for (a, b) in obs.grid.data().iter().zip(truth.data()) {
            prop_assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn measured_snr_tracks_request(seed in any::<u64>(), snr in -5.0..25.0f64) {
        let r = realization(&ChannelProfile::cdl_d(), 30e-9, 3.0, 1, seed);
        let (y, s2) = add_noise(&r.slots[0], snr, &mut rng_for(seed, &[2]));
        let noise: f64 = y.data().iter().zip(r.slots[0].data()).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>()
            / y.data().len() as f64;
        let measured = 10.0 * (r.slots[0].mean_power() / noise).log10();
        prop_assert!((measured - snr).abs() < 0.3, "{} vs {}", measured, snr);
        prop_assert!(s2 > 0.0);
    }
}
