use super::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

const STD: f64 = 1.0;

fn scan(t: f64, points: &[[f64; 2]]) -> Scan {
    Scan::from_measurements(
        t,
        points
            .iter()
            .map(|p| Measurement::isotropic(t, *p, STD))
            .collect(),
    )
}

fn one_track_parent(config: &TrackerConfig) -> Hypothesis {
    let children = expand_and_score(
        &[Hypothesis::empty()],
        &scan(0.0, &[[0.0, 0.0]]),
        0,
        config,
        None,
    )
    .unwrap();
    prune(children, config).remove(0)
}

struct Uniform(Vec<String>, Vec<f64>);

impl BehaviorLikelihood for Uniform {
    fn classes(&self) -> &[String] {
        &self.0
    }
    fn priors(&self) -> &[f64] {
        &self.1
    }
    fn observe(&self, _window: &[Sample]) -> Result<FeatureObservation> {
        Ok(FeatureObservation {
            class_log_likelihoods: vec![-3.25; self.0.len()],
            uniform_log_density: Some(-7.0),
        })
    }
}

#[test]
fn one_track_one_measurement_three_children() {
    let config = TrackerConfig::default();
    let parent = one_track_parent(&config);
    assert_eq!(parent.tracks.len(), 1);
    let children = expand_and_score(
        std::slice::from_ref(&parent),
        &scan(1.0, &[[0.5, 0.0]]),
        1,
        &config,
        None,
    )
    .unwrap();
    assert_eq!(children.len(), 3);
    let mut kinds: Vec<_> = children.iter().map(|c| c.events[1][0]).collect();
    kinds.sort();
    assert_eq!(
        kinds,
        vec![
            Event::Track(parent.tracks[0].id),
            Event::NewTrack,
            Event::FalseAlarm
        ]
    );
    for c in &children {
        assert!(c.score.is_finite());
        assert!((c.score - c.track_llr_sum() - c.prior_terms).abs() < 1e-9);
        c.audit().unwrap();
    }
}

#[test]
fn empty_scan_charges_misses() {
    let config = TrackerConfig::default();
    let parent = one_track_parent(&config);
    let children = expand_and_score(
        std::slice::from_ref(&parent),
        &scan(1.0, &[]),
        1,
        &config,
        None,
    )
    .unwrap();
    assert_eq!(children.len(), 1);
    let expected = parent.score + (1.0 - config.detection_probability).ln();
    assert!((children[0].score - expected).abs() < 1e-12);
    assert_eq!(children[0].tracks[0].misses, 1);
}

#[test]
fn proximity_consistent_assignment_wins() {
    let config = TrackerConfig::default();
    let s0 = scan(0.0, &[[0.0, 0.0], [100.0, 0.0]]);
    let hyps = prune(
        expand_and_score(&[Hypothesis::empty()], &s0, 0, &config, None).unwrap(),
        &config,
    );
    let parent = hyps[0].clone();
    assert_eq!(parent.tracks.len(), 2);
    let s1 = scan(1.0, &[[99.0, 1.0], [1.0, -1.0]]);
    let best = prune(
        expand_and_score(std::slice::from_ref(&parent), &s1, 1, &config, None).unwrap(),
        &config,
    )
    .remove(0);
    assert_eq!(
        best.events[1],
        vec![
            Event::Track(parent.tracks[1].id),
            Event::Track(parent.tracks[0].id)
        ]
    );
}

#[test]
fn prune_keeps_best_sorted() {
    let config = TrackerConfig::default();
    let mut children = Vec::new();
    for i in 0..50 {
        let mut h = Hypothesis::empty();
        h.score = ((i * 37) % 50) as f64;
        h.events = vec![vec![Event::FalseAlarm; i % 3]];
        children.push(h);
    }
    let kept = prune(children.clone(), &config);
    assert_eq!(kept.len(), 10);
    assert!(kept.windows(2).all(|w| w[0].score >= w[1].score));
    assert_eq!(kept[0].score, 49.0);
    assert_eq!(prune(children[..4].to_vec(), &config).len(), 4);

    let mut tied = Vec::new();
    for events in [
        vec![vec![Event::FalseAlarm]],
        vec![vec![Event::NewTrack]],
        vec![vec![Event::Track(TrackId {
            scan: 0,
            measurement: 0,
        })]],
    ] {
        let mut h = Hypothesis::empty();
        h.events = events;
        tied.push(h);
    }
    let a = prune(tied.clone(), &config);
    tied.reverse();
    let b = prune(tied, &config);
    assert_eq!(a, b);
    assert_eq!(
        a[0].events[0][0],
        Event::Track(TrackId {
            scan: 0,
            measurement: 0
        })
    );
}

#[test]
fn uniform_likelihood_keeps_posterior() {
    let obs = FeatureObservation {
        class_log_likelihoods: vec![-2.0, -2.0],
        uniform_log_density: Some(-5.0),
    };
    let post = [0.3, 0.7];
    let up = feature_llr_update(&post, &obs, &[0.5, 0.5], FalseTargetModel::Marginal).unwrap();
    assert_eq!(up.posterior, post.to_vec());
    assert_eq!(up.delta_llr, 0.0);
    let up = feature_llr_update(&post, &obs, &[0.5, 0.5], FalseTargetModel::Uniform).unwrap();
    assert_eq!(up.posterior, post.to_vec());
    assert_eq!(up.delta_llr, 3.0);
}

#[test]
fn bayes_rule_on_two_classes() {
    let (l1, l2) = (0.8f64, 0.1f64);
    let obs = FeatureObservation {
        class_log_likelihoods: vec![l1.ln(), l2.ln()],
        uniform_log_density: None,
    };
    let up =
        feature_llr_update(&[0.5, 0.5], &obs, &[0.5, 0.5], FalseTargetModel::Marginal).unwrap();
    assert!((up.posterior[0] - l1 / (l1 + l2)).abs() < 1e-15);
    assert!((up.posterior.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    // A uniform-prior track against the uniform-prior marginal gains nothing.
    assert!(up.delta_llr.abs() < 1e-15);
    let up =
        feature_llr_update(&[0.9, 0.1], &obs, &[0.5, 0.5], FalseTargetModel::Marginal).unwrap();
    let expected = ((0.9 * l1 + 0.1 * l2) / (0.5 * l1 + 0.5 * l2)).ln();
    assert!((up.delta_llr - expected).abs() < 1e-12);
}

#[test]
fn degenerate_likelihoods_are_floored() {
    let obs = FeatureObservation {
        class_log_likelihoods: vec![f64::NEG_INFINITY, f64::NEG_INFINITY],
        uniform_log_density: None,
    };
    let up =
        feature_llr_update(&[0.4, 0.6], &obs, &[0.5, 0.5], FalseTargetModel::Marginal).unwrap();
    assert!(up.degenerate);
    assert_eq!(up.posterior, vec![0.4, 0.6]);
    let obs = FeatureObservation {
        class_log_likelihoods: vec![f64::NAN, -1.0],
        uniform_log_density: None,
    };
    let up =
        feature_llr_update(&[0.5, 0.5], &obs, &[0.5, 0.5], FalseTargetModel::Marginal).unwrap();
    assert!(up.degenerate && up.delta_llr.is_finite());
    assert!((up.posterior.iter().sum::<f64>() - 1.0).abs() < 1e-12);
}

#[test]
fn short_window_defers_update() {
    let config = TrackerConfig {
        behavior_window: 3,
        ..TrackerConfig::default()
    };
    let model = Uniform(default_behavior_classes(), vec![0.5, 0.5]);
    let mut tr = one_track_parent(&config).tracks.remove(0);
    tr.window.clear();
    tr.push_window(3);
    tr.push_window(3);
    assert_eq!(
        behavior_window_update(&mut tr, &model, &config).unwrap(),
        None
    );
    assert_eq!(tr.llr_behavior, 0.0);
    tr.push_window(3);
    assert_eq!(
        behavior_window_update(&mut tr, &model, &config).unwrap(),
        Some(0.0)
    );
    assert_eq!(tr.behavior_trace.len(), 1);
}

#[test]
fn gate_examples() {
    let config = TrackerConfig::default();
    let tr = one_track_parent(&config).tracks.remove(0);
    assert!(gate(
        &tr,
        &Measurement::isotropic(1.0, [0.0, 0.0], STD),
        &config
    ));
    let pred = tr.state.predict(1.0, &config.motion()).unwrap();
    let p = pred.covariance();
    let s = (p[(0, 0)] + STD * STD).sqrt();
    assert!(!gate(
        &tr,
        &Measurement::isotropic(1.0, [100.0 * s, 0.0], STD),
        &config
    ));
}

#[test]
fn gate_acceptance_rate_matches_quantile() {
    let config = TrackerConfig {
        gate_probability: 0.99,
        ..TrackerConfig::default()
    };
    let tr = one_track_parent(&config).tracks.remove(0);
    let pred = tr.state.predict(1.0, &config.motion()).unwrap();
    let x = pred.estimate();
    let cov = pred.covariance().fixed_view::<2, 2>(0, 0).into_owned()
        + nalgebra::Matrix2::identity() * STD * STD;
    let l = cov.cholesky().unwrap().l();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let n = 20_000;
    let mut accepted = 0;
    for _ in 0..n {
        let w = nalgebra::Vector2::new(
            StandardNormal.sample(&mut rng),
            StandardNormal.sample(&mut rng),
        );
        let z = nalgebra::Vector2::new(x[0], x[1]) + l * w;
        if gate(
            &tr,
            &Measurement::isotropic(1.0, [z[0], z[1]], STD),
            &config,
        ) {
            accepted += 1;
        }
    }
    let rate = accepted as f64 / n as f64;
    assert!((rate - 0.99).abs() < 0.003, "rate {rate}");
}

#[test]
fn single_clean_target_gives_one_track() {
    let scans: Vec<Scan> = (0..30)
        .map(|k| {
            let t = k as f64;
            scan(t, &[[3.0 * t, 10.0 - 0.5 * t]])
        })
        .collect();
    let out = run_tracker(&scans, &TrackerConfig::default(), None).unwrap();
    assert_eq!(out.tracks.len(), 1);
    assert!(out.tracks[0]
        .history
        .iter()
        .all(|h| h.measurement == Some(0)));
    assert_eq!(out.tracks[0].history.len(), 30);
    assert_eq!(out.tracks[0].behavior_posterior, vec![0.5, 0.5]);
    assert_eq!(out.best_scores.len(), 30);
}

#[test]
fn scans_out_of_order_rejected() {
    let scans = vec![scan(1.0, &[[0.0, 0.0]]), scan(0.5, &[[0.0, 0.0]])];
    assert!(matches!(
        run_tracker(&scans, &TrackerConfig::default(), None),
        Err(Error::RejectedInput(_))
    ));
}

#[test]
fn invalid_config_rejected() {
    let c = TrackerConfig {
        max_hypotheses: 0,
        ..TrackerConfig::default()
    };
    assert!(matches!(c.validate(), Err(Error::Config(_))));
    let c = TrackerConfig {
        detection_probability: 1.5,
        ..TrackerConfig::default()
    };
    assert!(matches!(c.validate(), Err(Error::Config(_))));
}

#[test]
fn two_crossing_targets_keep_scores_consistent() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let config = TrackerConfig::default();
    let mut tracker = Tracker::new(config.clone(), None).unwrap();
    for k in 0..40 {
        let t = k as f64;
        let mut pts = vec![[5.0 * t, 0.0], [100.0, -80.0 + 4.0 * t]];
        for p in &mut pts {
            p[0] += rng.random_range(-0.5..0.5);
            p[1] += rng.random_range(-0.5..0.5);
        }
        if k % 7 == 3 {
            pts.push([
                rng.random_range(0.0..200.0),
                rng.random_range(-100.0..100.0),
            ]);
        }
        tracker.process(&scan(t, &pts)).unwrap();
        for h in tracker.hypotheses() {
            h.audit().unwrap();
            assert!(h.score.is_finite());
            assert!((h.score - h.track_llr_sum() - h.prior_terms).abs() < 1e-6);
        }
    }
    let out = tracker.output();
    let long: Vec<_> = out
        .tracks
        .iter()
        .filter(|t| t.history.len() >= 30)
        .collect();
    assert_eq!(long.len(), 2);
}

#[test]
fn uniform_behavior_is_neutral() {
    let model = Uniform(default_behavior_classes(), vec![0.5, 0.5]);
    let config = TrackerConfig {
        behavior_window: 5,
        behavior_period: 3,
        ..TrackerConfig::default()
    };
    let scans: Vec<Scan> = (0..25)
        .map(|k| {
            let t = k as f64;
            scan(t, &[[2.0 * t, 0.0], [2.0 * t, 3.0 + 0.2 * t]])
        })
        .collect();
    let base = run_tracker(&scans, &config, None).unwrap();
    let with = run_tracker(&scans, &config, Some(&model)).unwrap();
    assert_eq!(base.assignment_histories(), with.assignment_histories());
    assert_eq!(base.best_scores, with.best_scores);
    assert!(with.tracks.iter().any(|t| !t.behavior_trace.is_empty()));
}

#[test]
fn scan_lines_round_trip() {
    let mut s = scan(2.5, &[[1.0, 2.0], [3.0, 4.0]]);
    s.type_likelihoods[1] = Some(vec![0.2, 0.8]);
    let mut buf = Vec::new();
    write_scans(&mut buf, std::slice::from_ref(&s)).unwrap();
    let text = String::from_utf8(buf.clone()).unwrap();
    assert!(text.starts_with("{\"t\":2.5,\"measurements\":[{\"pos\":[1.0,2.0]"));
    let back = read_scans(&buf[..]).unwrap();
    assert_eq!(back, vec![s]);
    let bad = "{\"t\":0,\"measurements\":[{\"pos\":[0,0],\"cov\":[[1,0],[0,-1]]}]}\n";
    assert!(matches!(
        read_scans(bad.as_bytes()),
        Err(Error::RejectedInput(_))
    ));
}

#[test]
fn type_term_favors_consistent_class() {
    let config = TrackerConfig::default();
    let mut scans = Vec::new();
    for k in 0..10 {
        let t = k as f64;
        let mut s = scan(t, &[[t, 0.0]]);
        s.type_likelihoods[0] = Some(vec![0.9, 0.1]);
        scans.push(s);
    }
    let out = run_tracker(&scans, &config, None).unwrap();
    let tr = &out.tracks[0];
    assert!(tr.type_posterior[0] > 0.999);
    assert!(tr.llr_type > 0.0);
}
