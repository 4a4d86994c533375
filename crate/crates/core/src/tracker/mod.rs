//! Multiple hypothesis tracker. Each track's score sums a kinematic term from
//! the SRIF, an optional type term from per-measurement class likelihoods,
//! and a behavior term updated at a slower rate from windowed diagrams of the
//! track's own state estimates.

pub mod io;
pub mod srif;

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::classify::ModelKind;
use crate::error::{Error, Result};
use crate::pipeline::BehaviorClassifier;
use crate::trajectory::Sample;

pub use io::{
    read_scans, write_scans, AssignmentHistory, BehaviorPoint, HistoryEntry, TrackReport,
    TrackerOutput,
};
pub use srif::{srif_update, Measurement, MotionModel, SrifState, SrifUpdate};

const LN_2PI: f64 = 1.837_877_066_409_345_3;
/// Log-likelihood substituted for non-finite class likelihoods.
const LN_LIKELIHOOD_FLOOR: f64 = -700.0;
/// Smallest probability fed to a logarithm for assignment priors.
const PROB_FLOOR: f64 = 1e-300;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FalseTargetModel {
    /// Class-prior mixture of the class likelihoods.
    Marginal,
    /// Uniform density over count vectors with the observed total, where the
    /// model provides one; otherwise falls back to `Marginal`.
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackerConfig {
    pub max_hypotheses: usize,
    /// Probability mass inside the gate for a correctly associated measurement.
    pub gate_probability: f64,
    pub detection_probability: f64,
    /// Per square meter.
    pub false_alarm_density: f64,
    /// Per square meter.
    pub new_track_density: f64,
    /// Extra log-score charged when a track is started.
    pub new_track_penalty: f64,
    /// Consecutive misses after which a track is terminated.
    pub max_misses: usize,
    /// Behavior window length in scans.
    pub behavior_window: usize,
    /// Scans between behavior updates of one track.
    pub behavior_period: usize,
    pub process_noise: f64,
    pub initial_velocity_std: f64,
    /// Cap on children generated from one parent per scan.
    pub max_children: usize,
    pub false_target: FalseTargetModel,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            max_hypotheses: 10,
            gate_probability: 0.9999,
            detection_probability: 0.9,
            false_alarm_density: 1e-6,
            new_track_density: 1e-6,
            new_track_penalty: 0.0,
            max_misses: 5,
            behavior_window: 20,
            behavior_period: 10,
            process_noise: 8.0,
            initial_velocity_std: 15.0,
            max_children: 100,
            false_target: FalseTargetModel::Marginal,
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_hypotheses < 1 {
            return Err(Error::config("max_hypotheses must be at least 1"));
        }
        if !(self.detection_probability > 0.0 && self.detection_probability <= 1.0) {
            return Err(Error::config("detection_probability must be in (0, 1]"));
        }
        if !(self.gate_probability > 0.0 && self.gate_probability < 1.0) {
            return Err(Error::config("gate_probability must be in (0, 1)"));
        }
        if !(self.false_alarm_density > 0.0 && self.new_track_density > 0.0) {
            return Err(Error::config(
                "false-alarm and new-track densities must be positive",
            ));
        }
        if !self.new_track_penalty.is_finite() {
            return Err(Error::config("new_track_penalty must be finite"));
        }
        if self.max_misses < 1 || self.behavior_period < 1 || self.max_children < 1 {
            return Err(Error::config(
                "max_misses, behavior_period and max_children must be at least 1",
            ));
        }
        if !(self.process_noise >= 0.0 && self.process_noise.is_finite()) {
            return Err(Error::config(
                "process_noise must be finite and nonnegative",
            ));
        }
        if !(self.initial_velocity_std > 0.0 && self.initial_velocity_std.is_finite()) {
            return Err(Error::config("initial_velocity_std must be positive"));
        }
        Ok(())
    }

    /// Chi-square quantile with two degrees of freedom.
    pub fn gate_threshold(&self) -> f64 {
        -2.0 * (1.0 - self.gate_probability).ln()
    }

    pub fn motion(&self) -> MotionModel {
        MotionModel {
            accel_psd: self.process_noise,
        }
    }
}

/// Tracks are named after the scan and measurement that started them, so the
/// same track carries the same id in every hypothesis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TrackId {
    pub scan: usize,
    pub measurement: usize,
}

impl fmt::Display for TrackId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "T{}.{}", self.scan, self.measurement)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scan {
    pub t: f64,
    pub measurements: Vec<Measurement>,
    /// Optional per-measurement class likelihoods for the type term.
    pub type_likelihoods: Vec<Option<Vec<f64>>>,
}

impl Scan {
    pub fn new(t: f64, positions: Vec<([f64; 2], [[f64; 2]; 2])>) -> Self {
        let measurements: Vec<_> = positions
            .into_iter()
            .map(|(p, c)| Measurement::new(t, p, c))
            .collect();
        let n = measurements.len();
        Self {
            t,
            measurements,
            type_likelihoods: vec![None; n],
        }
    }

    pub fn from_measurements(t: f64, measurements: Vec<Measurement>) -> Self {
        let n = measurements.len();
        Self {
            t,
            measurements,
            type_likelihoods: vec![None; n],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.t.is_finite() {
            return Err(Error::input("scan time is not finite"));
        }
        if self.type_likelihoods.len() != self.measurements.len() {
            return Err(Error::input("type likelihoods do not match measurements"));
        }
        for m in &self.measurements {
            if m.t != self.t {
                return Err(Error::input("measurement time differs from scan time"));
            }
            m.whitener()?;
        }
        for lik in self.type_likelihoods.iter().flatten() {
            if lik.is_empty() || lik.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
                return Err(Error::input(
                    "type likelihoods must be finite and nonnegative",
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    pub id: TrackId,
    pub state: SrifState,
    /// `(scan index, measurement index)` for every scan since the track started.
    pub history: Vec<(usize, Option<usize>)>,
    pub llr_kinematic: f64,
    pub llr_type: f64,
    pub llr_behavior: f64,
    /// Empty until the first type observation.
    pub type_posterior: Vec<f64>,
    pub behavior_posterior: Vec<f64>,
    pub behavior_trace: Vec<(f64, Vec<f64>)>,
    /// Recent state estimates, at most `behavior_window` long.
    pub window: Vec<Sample>,
    pub since_behavior: usize,
    pub misses: usize,
    pub active: bool,
    pub degenerate_updates: usize,
}

impl Track {
    pub fn total_llr(&self) -> f64 {
        self.llr_kinematic + self.llr_type + self.llr_behavior
    }

    fn push_window(&mut self, capacity: usize) {
        let x = self.state.estimate();
        self.window.push(Sample::new(self.state.t, x[0], x[1], 0.0));
        if self.window.len() > capacity.max(1) {
            let excess = self.window.len() - capacity.max(1);
            self.window.drain(..excess);
        }
    }
}

/// What a measurement is explained by in one hypothesis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Event {
    Track(TrackId),
    NewTrack,
    FalseAlarm,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    pub tracks: Vec<Track>,
    pub score: f64,
    /// Detection, miss, false-alarm and new-track log terms.
    pub prior_terms: f64,
    /// Index of the parent in the previous scan's hypothesis list.
    pub parent: Option<usize>,
    /// `events[k][j]` explains measurement `j` of scan `k`.
    pub events: Vec<Vec<Event>>,
}

impl Hypothesis {
    pub fn empty() -> Self {
        Self {
            tracks: Vec::new(),
            score: 0.0,
            prior_terms: 0.0,
            parent: None,
            events: Vec::new(),
        }
    }

    pub fn track_llr_sum(&self) -> f64 {
        self.tracks.iter().map(Track::total_llr).sum()
    }

    /// Checks that no measurement is claimed twice and that track histories
    /// agree with the event log.
    pub fn audit(&self) -> Result<()> {
        let mut owner: HashMap<(usize, usize), TrackId> = HashMap::new();
        for tr in &self.tracks {
            let mut last_scan = None;
            for &(k, j) in &tr.history {
                if last_scan.is_some_and(|s| s >= k) {
                    return Err(Error::State(format!(
                        "track {} has two entries for a scan",
                        tr.id
                    )));
                }
                last_scan = Some(k);
                if let Some(j) = j {
                    if let Some(other) = owner.insert((k, j), tr.id) {
                        return Err(Error::State(format!(
                            "measurement {j} of scan {k} claimed by {other} and {}",
                            tr.id
                        )));
                    }
                    match self.events.get(k).and_then(|e| e.get(j)) {
                        Some(Event::Track(id)) if *id == tr.id => {}
                        Some(Event::NewTrack)
                            if tr.id
                                == (TrackId {
                                    scan: k,
                                    measurement: j,
                                }) => {}
                        _ => {
                            return Err(Error::State(format!(
                                "event log disagrees with track {} at scan {k}",
                                tr.id
                            )))
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

/// Result of one likelihood-ratio feature update.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureUpdate {
    pub posterior: Vec<f64>,
    pub delta_llr: f64,
    /// Set when non-finite or all-zero likelihoods were floored.
    pub degenerate: bool,
}

/// Class log-likelihoods of one feature observation.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureObservation {
    pub class_log_likelihoods: Vec<f64>,
    /// Log density under a uniform false-target model, when one is defined.
    pub uniform_log_density: Option<f64>,
}

/// Bayes update of a class posterior and the log-likelihood ratio of the
/// observation against the false-target model. `marginal_weights` defines the
/// marginal false-target density.
pub fn feature_llr_update(
    posterior: &[f64],
    obs: &FeatureObservation,
    marginal_weights: &[f64],
    false_target: FalseTargetModel,
) -> Result<FeatureUpdate> {
    let k = posterior.len();
    if k == 0 || obs.class_log_likelihoods.len() != k || marginal_weights.len() != k {
        return Err(Error::config("class count mismatch in feature update"));
    }
    let sum: f64 = posterior.iter().sum();
    if !((sum - 1.0).abs() < 1e-6) || posterior.iter().any(|p| !(*p >= 0.0)) {
        return Err(Error::State("posterior is not a probability vector".into()));
    }
    let mut degenerate = false;
    let ll: Vec<f64> = obs
        .class_log_likelihoods
        .iter()
        .map(|&v| {
            if v.is_finite() {
                v.max(LN_LIKELIHOOD_FLOOR)
            } else {
                degenerate = true;
                LN_LIKELIHOOD_FLOOR
            }
        })
        .collect();
    let uniform = match false_target {
        FalseTargetModel::Uniform => obs.uniform_log_density,
        FalseTargetModel::Marginal => None,
    };
    if ll.iter().all(|&v| v == ll[0]) {
        let delta_llr = match uniform {
            Some(u) => ll[0] - u,
            None => 0.0,
        };
        return Ok(FeatureUpdate {
            posterior: posterior.to_vec(),
            delta_llr,
            degenerate,
        });
    }
    let m = ll.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut r: Vec<f64> = ll.iter().map(|&v| (v - m).exp()).collect();
    let mut mix: f64 = posterior.iter().zip(&r).map(|(p, r)| p * r).sum();
    if !(mix > 0.0) {
        degenerate = true;
        for v in &mut r {
            *v = v.max(PROB_FLOOR);
        }
        mix = posterior.iter().zip(&r).map(|(p, r)| p * r).sum();
    }
    let new_post: Vec<f64> = posterior.iter().zip(&r).map(|(p, r)| p * r / mix).collect();
    let delta_llr = match uniform {
        Some(u) => m + mix.ln() - u,
        None => {
            let marginal: f64 = marginal_weights.iter().zip(&r).map(|(w, r)| w * r).sum();
            mix.ln() - marginal.max(PROB_FLOOR).ln()
        }
    };
    Ok(FeatureUpdate {
        posterior: new_post,
        delta_llr,
        degenerate,
    })
}

/// Source of behavior likelihoods for windows of state estimates.
pub trait BehaviorLikelihood {
    fn classes(&self) -> &[String];
    /// Initial posterior of a new track, also the false-target mixture weights.
    fn priors(&self) -> &[f64];
    fn observe(&self, window: &[Sample]) -> Result<FeatureObservation>;
}

impl BehaviorLikelihood for BehaviorClassifier {
    fn classes(&self) -> &[String] {
        &self.model.classes
    }

    fn priors(&self) -> &[f64] {
        &self.model.priors
    }

    fn observe(&self, window: &[Sample]) -> Result<FeatureObservation> {
        let x = self.features(window)?;
        let class_log_likelihoods = self.model.class_log_likelihoods(&x)?;
        let uniform_log_density = match self.model.kind() {
            ModelKind::Logistic => None,
            ModelKind::Poisson | ModelKind::Multinomial => {
                let mut total = 0.0;
                let mut offset = 0;
                for b in &self.featurizer.binning {
                    let bins = b.rows * b.cols;
                    let n: f64 = x[offset..offset + bins].iter().sum();
                    total -= ln_compositions(n, bins as f64);
                    offset += bins;
                }
                Some(total)
            }
        };
        Ok(FeatureObservation {
            class_log_likelihoods,
            uniform_log_density,
        })
    }
}

/// ln of the number of ways to place `n` counts in `k` bins.
fn ln_compositions(n: f64, k: f64) -> f64 {
    use statrs::function::gamma::ln_gamma;
    ln_gamma(n + k) - ln_gamma(n + 1.0) - ln_gamma(k)
}

/// Behavior-class names reported when no model is attached.
pub fn default_behavior_classes() -> Vec<String> {
    vec!["normal".to_string(), "aggressive".to_string()]
}

type ObservationCache = HashMap<(TrackId, Vec<(usize, Option<usize>)>), FeatureObservation>;

/// Applies a behavior update from the last `behavior_window` state estimates.
/// Returns the log-likelihood increment, or `None` when the window is too
/// short and the update is deferred.
pub fn behavior_window_update(
    track: &mut Track,
    behavior: &dyn BehaviorLikelihood,
    config: &TrackerConfig,
) -> Result<Option<f64>> {
    behavior_update_cached(track, behavior, config, None)
}

fn behavior_update_cached(
    track: &mut Track,
    behavior: &dyn BehaviorLikelihood,
    config: &TrackerConfig,
    cache: Option<&mut ObservationCache>,
) -> Result<Option<f64>> {
    let w = config.behavior_window;
    if w == 0 || track.window.len() < w {
        return Ok(None);
    }
    let window = &track.window[track.window.len() - w..];
    let observed = match cache {
        Some(cache) => {
            let key = (track.id, track.history.clone());
            match cache.get(&key) {
                Some(obs) => Ok(obs.clone()),
                None => {
                    let obs = behavior.observe(window);
                    if let Ok(o) = &obs {
                        cache.insert(key, o.clone());
                    }
                    obs
                }
            }
        }
        None => behavior.observe(window),
    };
    let obs = match observed {
        Ok(o) => o,
        Err(Error::InsufficientData(_)) => return Ok(None),
        Err(e) => return Err(e),
    };
    let up = feature_llr_update(
        &track.behavior_posterior,
        &obs,
        behavior.priors(),
        config.false_target,
    )?;
    track.behavior_posterior = up.posterior;
    track.llr_behavior += up.delta_llr;
    if up.degenerate {
        track.degenerate_updates += 1;
    }
    track.since_behavior = 0;
    track
        .behavior_trace
        .push((track.state.t, track.behavior_posterior.clone()));
    Ok(Some(up.delta_llr))
}

/// Squared-residual gate on the predicted measurement.
pub fn gate(track: &Track, m: &Measurement, config: &TrackerConfig) -> bool {
    srif_update(&track.state, m, &config.motion())
        .map(|u| u.residual.norm_squared() <= config.gate_threshold())
        .unwrap_or(false)
}

fn ln_clamped(p: f64) -> f64 {
    p.max(PROB_FLOOR).ln()
}

fn type_update(posterior: &[f64], lik: &[f64]) -> Result<FeatureUpdate> {
    let k = lik.len();
    let prior = if posterior.len() == k {
        posterior.to_vec()
    } else {
        vec![1.0 / k as f64; k]
    };
    let obs = FeatureObservation {
        class_log_likelihoods: lik.iter().map(|v| v.ln()).collect(),
        uniform_log_density: None,
    };
    feature_llr_update(
        &prior,
        &obs,
        &vec![1.0 / k as f64; k],
        FalseTargetModel::Marginal,
    )
}

#[derive(Debug, Clone, Copy)]
enum Choice {
    Track(usize),
    NewTrack,
    FalseAlarm,
}

struct Candidate {
    update: SrifUpdate,
    kinematic: f64,
    type_update: Option<FeatureUpdate>,
}

/// Bounded best-first enumeration of joint assignment events for one parent.
struct Enumerator<'a> {
    options: &'a [Vec<(Choice, f64)>],
    suffix_bound: Vec<f64>,
    limit: usize,
    used: Vec<bool>,
    path: Vec<Choice>,
    best: Vec<(f64, Vec<Choice>)>,
}

impl Enumerator<'_> {
    fn worst_kept(&self) -> f64 {
        if self.best.len() < self.limit {
            f64::NEG_INFINITY
        } else {
            self.best.last().map_or(f64::NEG_INFINITY, |b| b.0)
        }
    }

    fn run(&mut self, j: usize, partial: f64) {
        if j == self.options.len() {
            let pos = self.best.partition_point(|b| b.0 >= partial);
            if pos < self.limit {
                self.best.insert(pos, (partial, self.path.clone()));
                self.best.truncate(self.limit);
            }
            return;
        }
        if partial + self.suffix_bound[j] < self.worst_kept() {
            return;
        }
        for idx in 0..self.options[j].len() {
            let (choice, value) = self.options[j][idx];
            if let Choice::Track(i) = choice {
                if self.used[i] {
                    continue;
                }
                self.used[i] = true;
            }
            self.path.push(choice);
            self.run(j + 1, partial + value);
            self.path.pop();
            if let Choice::Track(i) = choice {
                self.used[i] = false;
            }
        }
    }
}

/// Expands every parent by the joint events of one scan and scores the
/// children. Behavior updates due at this scan are folded into the scores.
pub fn expand_and_score(
    parents: &[Hypothesis],
    scan: &Scan,
    scan_index: usize,
    config: &TrackerConfig,
    behavior: Option<&dyn BehaviorLikelihood>,
) -> Result<Vec<Hypothesis>> {
    if parents.is_empty() {
        return Err(Error::State("expansion needs at least one parent".into()));
    }
    let motion = config.motion();
    let gate_threshold = config.gate_threshold();
    let ln_pd = ln_clamped(config.detection_probability);
    let ln_miss = ln_clamped(1.0 - config.detection_probability);
    let ln_fa = config.false_alarm_density.ln();
    let ln_nt = config.new_track_density.ln() - config.new_track_penalty;
    let mut cache = ObservationCache::new();
    let mut children = Vec::new();

    let meas_norm: Vec<f64> = scan
        .measurements
        .iter()
        .map(|m| -LN_2PI - 0.5 * m.log_det_cov())
        .collect();
    let new_track_type: Vec<Option<FeatureUpdate>> = scan
        .type_likelihoods
        .iter()
        .map(|lik| lik.as_ref().map(|l| type_update(&[], l)).transpose())
        .collect::<Result<_>>()?;

    for (pi, parent) in parents.iter().enumerate() {
        let mut predicted = Vec::with_capacity(parent.tracks.len());
        for tr in &parent.tracks {
            predicted.push(if tr.active {
                Some(tr.state.predict(scan.t, &motion)?)
            } else {
                None
            });
        }
        let mut options: Vec<Vec<(Choice, f64)>> = Vec::with_capacity(scan.measurements.len());
        let mut candidates: Vec<HashMap<usize, Candidate>> = Vec::new();
        for (j, m) in scan.measurements.iter().enumerate() {
            let mut opts = Vec::new();
            let mut cands = HashMap::new();
            for (i, pred) in predicted.iter().enumerate() {
                let Some(pred) = pred else { continue };
                let update = pred.correct(m)?;
                if update.residual.norm_squared() > gate_threshold {
                    continue;
                }
                let kinematic = update.delta_llr + meas_norm[j];
                let type_up = match &scan.type_likelihoods[j] {
                    Some(lik) => Some(type_update(&parent.tracks[i].type_posterior, lik)?),
                    None => None,
                };
                let type_llr = type_up.as_ref().map_or(0.0, |u| u.delta_llr);
                // Gain over leaving the track undetected.
                opts.push((Choice::Track(i), ln_pd + kinematic + type_llr - ln_miss));
                cands.insert(
                    i,
                    Candidate {
                        update,
                        kinematic,
                        type_update: type_up,
                    },
                );
            }
            let nt_type = new_track_type[j].as_ref().map_or(0.0, |u| u.delta_llr);
            opts.push((Choice::NewTrack, ln_nt + nt_type));
            opts.push((Choice::FalseAlarm, ln_fa));
            // Highest value first; the stable sort keeps the listing order on ties.
            opts.sort_by(|a, b| b.1.total_cmp(&a.1));
            options.push(opts);
            candidates.push(cands);
        }

        let mut suffix_bound = vec![0.0; options.len() + 1];
        for j in (0..options.len()).rev() {
            suffix_bound[j] = suffix_bound[j + 1] + options[j][0].1;
        }
        let mut en = Enumerator {
            options: &options,
            suffix_bound,
            limit: config.max_children,
            used: vec![false; parent.tracks.len()],
            path: Vec::new(),
            best: Vec::new(),
        };
        en.run(0, 0.0);

        for (_, path) in en.best {
            let mut child = Hypothesis {
                tracks: parent.tracks.clone(),
                score: parent.score,
                prior_terms: parent.prior_terms,
                parent: Some(pi),
                events: parent.events.clone(),
            };
            let mut assigned: Vec<Option<usize>> = vec![None; parent.tracks.len()];
            let mut events = Vec::with_capacity(path.len());
            let mut new_tracks = Vec::new();
            for (j, choice) in path.iter().enumerate() {
                match *choice {
                    Choice::Track(i) => {
                        assigned[i] = Some(j);
                        events.push(Event::Track(parent.tracks[i].id));
                    }
                    Choice::NewTrack => {
                        events.push(Event::NewTrack);
                        new_tracks.push(j);
                    }
                    Choice::FalseAlarm => {
                        events.push(Event::FalseAlarm);
                        child.prior_terms += ln_fa;
                        child.score += ln_fa;
                    }
                }
            }
            child.events.push(events);
            for (i, tr) in child.tracks.iter_mut().enumerate() {
                if !tr.active {
                    continue;
                }
                match assigned[i] {
                    Some(j) => {
                        let c = &candidates[j][&i];
                        tr.state = c.update.state.clone();
                        tr.llr_kinematic += c.kinematic;
                        child.score += c.kinematic;
                        if let Some(u) = &c.type_update {
                            tr.type_posterior = u.posterior.clone();
                            tr.llr_type += u.delta_llr;
                            child.score += u.delta_llr;
                        }
                        child.prior_terms += ln_pd;
                        child.score += ln_pd;
                        tr.history.push((scan_index, Some(j)));
                        tr.misses = 0;
                    }
                    None => {
                        tr.state = predicted[i].clone().expect("active track was predicted");
                        child.prior_terms += ln_miss;
                        child.score += ln_miss;
                        tr.history.push((scan_index, None));
                        tr.misses += 1;
                        if tr.misses >= config.max_misses {
                            tr.active = false;
                        }
                    }
                }
            }
            for j in new_tracks {
                let m = &scan.measurements[j];
                let mut tr = Track {
                    id: TrackId {
                        scan: scan_index,
                        measurement: j,
                    },
                    state: SrifState::from_measurement(m, config.initial_velocity_std)?,
                    history: vec![(scan_index, Some(j))],
                    llr_kinematic: 0.0,
                    llr_type: 0.0,
                    llr_behavior: 0.0,
                    type_posterior: Vec::new(),
                    behavior_posterior: match behavior {
                        Some(b) => b.priors().to_vec(),
                        None => vec![0.5, 0.5],
                    },
                    behavior_trace: Vec::new(),
                    window: Vec::new(),
                    since_behavior: 0,
                    misses: 0,
                    active: true,
                    degenerate_updates: 0,
                };
                if let Some(u) = &new_track_type[j] {
                    tr.type_posterior = u.posterior.clone();
                    tr.llr_type = u.delta_llr;
                    child.score += u.delta_llr;
                }
                child.prior_terms += ln_nt;
                child.score += ln_nt;
                child.tracks.push(tr);
            }
            for tr in child.tracks.iter_mut().filter(|t| t.active) {
                tr.push_window(config.behavior_window);
                tr.since_behavior += 1;
                if let Some(b) = behavior {
                    if tr.since_behavior >= config.behavior_period {
                        if let Some(delta) =
                            behavior_update_cached(tr, b, config, Some(&mut cache))?
                        {
                            child.score += delta;
                        }
                    }
                }
            }
            children.push(child);
        }
    }
    Ok(children)
}

/// Keeps the best `max_hypotheses` children; ties go to the lexicographically
/// smaller event log.
pub fn prune(mut children: Vec<Hypothesis>, config: &TrackerConfig) -> Vec<Hypothesis> {
    children.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then_with(|| a.events.cmp(&b.events))
    });
    children.truncate(config.max_hypotheses.max(1));
    children
}

/// Incremental tracker state.
pub struct Tracker<'a> {
    config: TrackerConfig,
    behavior: Option<&'a dyn BehaviorLikelihood>,
    hypotheses: Vec<Hypothesis>,
    scans: Vec<f64>,
    best_scores: Vec<f64>,
}

impl<'a> Tracker<'a> {
    pub fn new(
        config: TrackerConfig,
        behavior: Option<&'a dyn BehaviorLikelihood>,
    ) -> Result<Self> {
        config.validate()?;
        if let Some(b) = behavior {
            let p = b.priors();
            if p.len() != b.classes().len() || p.is_empty() {
                return Err(Error::config("behavior priors do not match classes"));
            }
        }
        Ok(Self {
            config,
            behavior,
            hypotheses: vec![Hypothesis::empty()],
            scans: Vec::new(),
            best_scores: Vec::new(),
        })
    }

    pub fn process(&mut self, scan: &Scan) -> Result<()> {
        scan.validate()?;
        if let Some(&last) = self.scans.last() {
            if scan.t < last {
                return Err(Error::input(format!(
                    "scans out of order: {} follows {}",
                    scan.t, last
                )));
            }
        }
        let children = expand_and_score(
            &self.hypotheses,
            scan,
            self.scans.len(),
            &self.config,
            self.behavior,
        )?;
        self.hypotheses = prune(children, &self.config);
        self.scans.push(scan.t);
        self.best_scores.push(self.hypotheses[0].score);
        Ok(())
    }

    pub fn hypotheses(&self) -> &[Hypothesis] {
        &self.hypotheses
    }

    pub fn best(&self) -> &Hypothesis {
        &self.hypotheses[0]
    }

    pub fn best_scores(&self) -> &[f64] {
        &self.best_scores
    }

    pub fn output(&self) -> TrackerOutput {
        let classes = match self.behavior {
            Some(b) => b.classes().to_vec(),
            None => default_behavior_classes(),
        };
        TrackerOutput::from_hypothesis(self.best(), &self.scans, classes, self.best_scores.clone())
    }
}

pub fn run_tracker(
    scans: &[Scan],
    config: &TrackerConfig,
    behavior: Option<&dyn BehaviorLikelihood>,
) -> Result<TrackerOutput> {
    let mut tracker = Tracker::new(config.clone(), behavior)?;
    for scan in scans {
        tracker.process(scan)?;
    }
    Ok(tracker.output())
}

#[cfg(test)]
mod tests;
