use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use topotrack::tracker::{run_tracker, Measurement, Scan, Tracker, TrackerConfig};

/// Two to three straight-line targets with misses and uniform clutter.
fn scenario(seed: u64, scans: usize) -> Vec<Scan> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let targets: Vec<[f64; 4]> = (0..rng.random_range(2..=3))
        .map(|_| {
            [
                rng.random_range(-50.0..50.0),
                rng.random_range(-50.0..50.0),
                rng.random_range(-6.0..6.0),
                rng.random_range(-6.0..6.0),
            ]
        })
        .collect();
    (0..scans)
        .map(|k| {
            let t = k as f64;
            let mut meas = Vec::new();
            for s in &targets {
                if rng.random_bool(0.85) {
                    let pos = [
                        s[0] + s[2] * t + rng.random_range(-1.0..1.0),
                        s[1] + s[3] * t + rng.random_range(-1.0..1.0),
                    ];
                    meas.push(Measurement::isotropic(t, pos, 0.6));
                }
            }
            for _ in 0..rng.random_range(0..3) {
                let pos = [
                    rng.random_range(-150.0..150.0),
                    rng.random_range(-150.0..150.0),
                ];
                meas.push(Measurement::isotropic(t, pos, 0.6));
            }
            Scan::from_measurements(t, meas)
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn hypotheses_respect_scan_constraint_and_score_decomposition(seed in any::<u64>(), max_hyp in 1usize..8) {
        let config = TrackerConfig { max_hypotheses: max_hyp, ..TrackerConfig::default() };
        let mut tracker = Tracker::new(config.clone(), None).unwrap();
        for scan in scenario(seed, 15) {
            tracker.process(&scan).unwrap();
            let hyps = tracker.hypotheses();
            prop_assert!(!hyps.is_empty() && hyps.len() <= max_hyp);
            for w in hyps.windows(2) {
                prop_assert!(w[0].score >= w[1].score);
            }
            for h in hyps {
                h.audit().unwrap();
                let expected = h.track_llr_sum() + h.prior_terms;
                prop_assert!((h.score - expected).abs() <= 1e-9 * (1.0 + expected.abs()));
            }
        }
    }

    #[test]
    fn tracking_is_deterministic(seed in any::<u64>()) {
        let scans = scenario(seed, 12);
        let config = TrackerConfig::default();
        let a = run_tracker(&scans, &config, None).unwrap();
        let b = run_tracker(&scans, &config, None).unwrap();
        prop_assert_eq!(a, b);
    }
}

#[test]
fn clean_targets_are_tracked_to_the_end() {
    let scans: Vec<Scan> = (0..30)
        .map(|k| {
            let t = k as f64;
            Scan::from_measurements(
                t,
                vec![
                    Measurement::isotropic(t, [5.0 * t, 0.0], 0.5),
                    Measurement::isotropic(t, [0.0, 100.0 - 3.0 * t], 0.5),
                ],
            )
        })
        .collect();
    let out = run_tracker(&scans, &TrackerConfig::default(), None).unwrap();
    assert_eq!(out.tracks.len(), 2);
    for track in &out.tracks {
        assert_eq!(track.history.len(), 30);
        assert!(track.history.iter().all(|h| h.measurement.is_some()));
        let j = track.history[0].measurement;
        assert!(track.history.iter().all(|h| h.measurement == j));
    }
}
