//! Synthetic labeled driver trajectories, the two-vehicle intersection
//! scenario, and the Monte Carlo association study.

use std::collections::HashMap;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::classify::{ModelKind, TrainConfig};
use crate::error::{Error, Result};
use crate::pipeline::BehaviorClassifier;
use crate::tracker::{
    run_tracker, BehaviorLikelihood, Measurement, Scan, SrifState, TrackerConfig, TrackerOutput,
};
use crate::trajectory::{Sample, SignalKind, Tracklet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DriverClass {
    Normal,
    Aggressive,
}

impl DriverClass {
    pub fn as_str(self) -> &'static str {
        match self {
            DriverClass::Normal => "normal",
            DriverClass::Aggressive => "aggressive",
        }
    }

    pub fn class_names() -> Vec<String> {
        vec!["normal".into(), "aggressive".into()]
    }
}

impl std::fmt::Display for DriverClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Parameter ranges a driver of one class is drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriverProfile {
    pub class: DriverClass,
    /// m/s
    pub cruise_speed: (f64, f64),
    /// m/s^2, used for both speeding up and braking
    pub acceleration: (f64, f64),
    /// m/s
    pub oscillation_amplitude: (f64, f64),
    /// Hz
    pub oscillation_frequency: (f64, f64),
    /// Corner speed as a fraction of cruise speed.
    pub turn_speed_factor: (f64, f64),
}

impl DriverProfile {
    pub fn normal() -> Self {
        Self {
            class: DriverClass::Normal,
            cruise_speed: (8.0, 13.0),
            acceleration: (0.8, 1.6),
            oscillation_amplitude: (0.1, 0.8),
            oscillation_frequency: (0.01, 0.03),
            turn_speed_factor: (0.3, 0.45),
        }
    }

    pub fn aggressive() -> Self {
        Self {
            class: DriverClass::Aggressive,
            cruise_speed: (12.0, 19.0),
            acceleration: (2.0, 3.8),
            oscillation_amplitude: (1.5, 4.0),
            oscillation_frequency: (0.04, 0.1),
            turn_speed_factor: (0.45, 0.65),
        }
    }

    fn ranges(&self) -> [(&'static str, (f64, f64)); 5] {
        [
            ("cruise_speed", self.cruise_speed),
            ("acceleration", self.acceleration),
            ("oscillation_amplitude", self.oscillation_amplitude),
            ("oscillation_frequency", self.oscillation_frequency),
            ("turn_speed_factor", self.turn_speed_factor),
        ]
    }

    pub fn validate(&self) -> Result<()> {
        for (name, (lo, hi)) in self.ranges() {
            if !(lo.is_finite() && hi.is_finite() && lo >= 0.0 && lo <= hi) {
                return Err(Error::config(format!(
                    "{} range {name} is invalid",
                    self.class
                )));
            }
        }
        if self.cruise_speed.0 <= 0.0 || self.acceleration.0 <= 0.0 {
            return Err(Error::config(
                "cruise speed and acceleration must be positive",
            ));
        }
        Ok(())
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> Driver {
        let mut draw = |(lo, hi): (f64, f64)| {
            if hi > lo {
                rng.random_range(lo..hi)
            } else {
                lo
            }
        };
        let cruise = draw(self.cruise_speed);
        let accel = draw(self.acceleration);
        let amp = draw(self.oscillation_amplitude);
        let freq = draw(self.oscillation_frequency);
        let turn = draw(self.turn_speed_factor);
        Driver {
            cruise,
            accel,
            brake: 1.3 * accel,
            amp,
            freq,
            phase: rng.random_range(0.0..std::f64::consts::TAU),
            turn_factor: turn,
        }
    }
}

/// Every aggressive range must lie strictly above the matching normal range.
pub fn check_dominance(normal: &DriverProfile, aggressive: &DriverProfile) -> Result<()> {
    normal.validate()?;
    aggressive.validate()?;
    for ((name, n), (_, a)) in normal.ranges().into_iter().zip(aggressive.ranges()) {
        if !(a.0 > n.0 && a.1 > n.1) {
            return Err(Error::config(format!(
                "aggressive {name} range does not dominate the normal range"
            )));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy)]
struct Driver {
    cruise: f64,
    accel: f64,
    brake: f64,
    amp: f64,
    freq: f64,
    phase: f64,
    turn_factor: f64,
}

/// Speed-tracking time constant, s.
const RESPONSE: f64 = 0.5;
const SIM_STEPS_PER_SAMPLE: usize = 20;

impl Driver {
    fn target(&self, t: f64) -> f64 {
        (self.cruise + self.amp * (std::f64::consts::TAU * self.freq * t + self.phase).sin())
            .max(0.5)
    }

    /// One controller step toward `min(target, allowed)`.
    fn step(&self, v: f64, t: f64, allowed: f64, dt: f64) -> f64 {
        let desired = self.target(t).min(allowed);
        let a = ((desired - v) / RESPONSE).clamp(-2.0 * self.brake, self.accel);
        (v + a * dt).max(0.0)
    }

    fn allowed(&self, node_speed: f64, distance: f64) -> f64 {
        (node_speed * node_speed + 2.0 * self.brake * distance.max(0.0)).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PopulationConfig {
    pub normal: DriverProfile,
    pub aggressive: DriverProfile,
    /// Fraction of aggressive drivers.
    pub aggressive_fraction: f64,
    pub sample_period: f64,
    /// Road grid block length, m.
    pub block_length: f64,
    pub turn_probability: f64,
    pub stop_probability: f64,
    /// Stop dwell range, s.
    pub dwell: (f64, f64),
}

impl Default for PopulationConfig {
    fn default() -> Self {
        Self {
            normal: DriverProfile::normal(),
            aggressive: DriverProfile::aggressive(),
            aggressive_fraction: 0.5,
            sample_period: 1.0,
            block_length: 300.0,
            turn_probability: 0.15,
            stop_probability: 0.25,
            dwell: (1.0, 3.0),
        }
    }
}

impl PopulationConfig {
    pub fn validate(&self) -> Result<()> {
        check_dominance(&self.normal, &self.aggressive)?;
        if !(0.0..=1.0).contains(&self.aggressive_fraction) {
            return Err(Error::config("class mix must be a fraction in [0, 1]"));
        }
        if !(self.sample_period > 0.0 && self.block_length > 0.0) {
            return Err(Error::config(
                "sample period and block length must be positive",
            ));
        }
        for p in [self.turn_probability, self.stop_probability] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::config("probabilities must be in [0, 1]"));
            }
        }
        if !(self.dwell.0 >= 0.0 && self.dwell.0 <= self.dwell.1) {
            return Err(Error::config("dwell range is invalid"));
        }
        Ok(())
    }
}

fn rotate(h: (f64, f64), turn: i32) -> (f64, f64) {
    match turn {
        1 => (-h.1, h.0),
        -1 => (h.1, -h.0),
        _ => h,
    }
}

/// One road-following path of `len` samples on a square grid.
fn grid_path<R: Rng>(
    driver: &Driver,
    cfg: &PopulationConfig,
    len: usize,
    rng: &mut R,
) -> Vec<Sample> {
    let headings = [(1.0, 0.0), (0.0, 1.0), (-1.0, 0.0), (0.0, -1.0)];
    let mut heading: (f64, f64) = headings[rng.random_range(0..4)];
    let mut to_node = rng.random_range(0.2..1.0) * cfg.block_length;
    let mut pos = (
        -heading.0 * (cfg.block_length - to_node),
        -heading.1 * (cfg.block_length - to_node),
    );
    let plan = |rng: &mut R| -> (i32, bool) {
        let turn = if rng.random_bool(cfg.turn_probability) {
            if rng.random_bool(0.5) {
                1
            } else {
                -1
            }
        } else {
            0
        };
        (turn, rng.random_bool(cfg.stop_probability))
    };
    let (mut turn, mut stop) = plan(rng);
    let mut v = rng.random_range(0.5..1.0) * driver.cruise;
    let mut dwell = 0.0;
    let dt = cfg.sample_period / SIM_STEPS_PER_SAMPLE as f64;
    let mut out = Vec::with_capacity(len);
    for k in 0..len {
        let t0 = k as f64 * cfg.sample_period;
        out.push(Sample::new(t0, pos.0, pos.1, 0.0));
        for s in 0..SIM_STEPS_PER_SAMPLE {
            let t = t0 + s as f64 * dt;
            if dwell > 0.0 {
                dwell -= dt;
                v = 0.0;
                continue;
            }
            let node_speed = if stop {
                0.0
            } else if turn != 0 {
                driver.turn_factor * driver.cruise
            } else {
                f64::INFINITY
            };
            let mut allowed = driver.allowed(node_speed, to_node);
            if stop {
                // Keep rolling up to the line instead of creeping forever.
                allowed = allowed.max(1.0);
            }
            v = driver.step(v, t, allowed, dt);
            let ds = v * dt;
            if ds >= to_node {
                pos = (pos.0 + heading.0 * to_node, pos.1 + heading.1 * to_node);
                let mut rest = ds - to_node;
                if stop {
                    v = 0.0;
                    rest = 0.0;
                    dwell = rng.random_range(cfg.dwell.0..=cfg.dwell.1);
                }
                heading = rotate(heading, turn);
                to_node = cfg.block_length - rest;
                pos = (pos.0 + heading.0 * rest, pos.1 + heading.1 * rest);
                (turn, stop) = plan(rng);
            } else {
                pos = (pos.0 + heading.0 * ds, pos.1 + heading.1 * ds);
                to_node -= ds;
            }
        }
    }
    out
}

/// Labeled road-following paths; exactly `round(n * fraction)` are aggressive.
pub fn generate_population(
    n: usize,
    length: usize,
    config: &PopulationConfig,
    seed: u64,
) -> Result<Vec<Tracklet>> {
    config.validate()?;
    if n < 2 {
        return Err(Error::config("population needs at least 2 paths"));
    }
    if length < 10 {
        return Err(Error::config("path length must be at least 10 samples"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_aggr = (n as f64 * config.aggressive_fraction).round() as usize;
    let mut classes: Vec<DriverClass> = (0..n)
        .map(|i| {
            if i < n_aggr {
                DriverClass::Aggressive
            } else {
                DriverClass::Normal
            }
        })
        .collect();
    classes.shuffle(&mut rng);
    let mut out = Vec::with_capacity(n);
    for (i, class) in classes.into_iter().enumerate() {
        let mut path_rng = ChaCha8Rng::seed_from_u64(rng.next_u64());
        let profile = match class {
            DriverClass::Normal => &config.normal,
            DriverClass::Aggressive => &config.aggressive,
        };
        let driver = profile.sample(&mut path_rng);
        let samples = grid_path(&driver, config, length, &mut path_rng);
        out.push(Tracklet::new(format!("path{i:04}"), samples).with_label(class.as_str()));
    }
    Ok(out)
}

/// Non-overlapping consecutive windows of `w` samples; a trailing partial
/// window is dropped.
pub fn window_slices(tracklet: &Tracklet, w: usize) -> Vec<Tracklet> {
    if w == 0 {
        return Vec::new();
    }
    (0..tracklet.len() / w)
        .map(|i| {
            let mut s = tracklet.slice(i * w, w);
            s.id = format!("{}_w{w}_{i}", tracklet.id);
            s
        })
        .collect()
}

/// Path-level train/test split with windows cut per requested length.
#[derive(Debug, Clone)]
pub struct WindowedDataset {
    pub train_paths: Vec<Tracklet>,
    pub test_paths: Vec<Tracklet>,
    pub windows: Vec<usize>,
}

impl WindowedDataset {
    pub fn train_windows(&self, w: usize) -> Vec<Tracklet> {
        self.train_paths
            .iter()
            .flat_map(|t| window_slices(t, w))
            .collect()
    }

    pub fn test_windows(&self, w: usize) -> Vec<Tracklet> {
        self.test_paths
            .iter()
            .flat_map(|t| window_slices(t, w))
            .collect()
    }

    /// Every `(train window, test window)` pair.
    pub fn cells(&self) -> Vec<(usize, usize)> {
        self.windows
            .iter()
            .flat_map(|&a| self.windows.iter().map(move |&b| (a, b)))
            .collect()
    }
}

/// Splits paths per class by `train_fraction` (seeded) and records the window grid.
pub fn windowed_dataset(
    tracklets: &[Tracklet],
    windows: &[usize],
    train_fraction: f64,
    seed: u64,
) -> Result<WindowedDataset> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::config("train fraction must be in (0, 1)"));
    }
    let shortest = tracklets.iter().map(Tracklet::len).min().unwrap_or(0);
    if let Some(&w) = windows.iter().find(|&&w| w == 0 || w > shortest) {
        return Err(Error::config(format!(
            "window {w} does not fit paths of length {shortest}"
        )));
    }
    let mut by_class: Vec<(String, Vec<usize>)> = Vec::new();
    for (i, t) in tracklets.iter().enumerate() {
        let label = t.label.clone().unwrap_or_default();
        match by_class.iter_mut().find(|(l, _)| *l == label) {
            Some((_, v)) => v.push(i),
            None => by_class.push((label, vec![i])),
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (_, mut idx) in by_class {
        idx.shuffle(&mut rng);
        let mut cut = ((idx.len() as f64) * train_fraction).round() as usize;
        if idx.len() >= 2 {
            cut = cut.clamp(1, idx.len() - 1);
        }
        train.extend(idx[..cut].iter().map(|&i| tracklets[i].clone()));
        test.extend(idx[cut..].iter().map(|&i| tracklets[i].clone()));
    }
    Ok(WindowedDataset {
        train_paths: train,
        test_paths: test,
        windows: windows.to_vec(),
    })
}

/// Airborne electro-optical sensor reduced to the ground plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SensorModel {
    /// Angular noise standard deviation, rad.
    pub angular_noise: f64,
    /// Maps angular error to ground error, m.
    pub slant_range: f64,
    /// Added in quadrature to the declared measurement std, m.
    pub noise_floor: f64,
    pub detection_probability: f64,
    /// Motion detection fails below `min_dropout_speed + dropout_gain *
    /// ground_std`: the target must move further per second than a fraction
    /// of the position noise to stand out. In 1/s.
    pub dropout_gain: f64,
    /// m/s
    pub min_dropout_speed: f64,
}

impl Default for SensorModel {
    fn default() -> Self {
        Self {
            angular_noise: 0.001,
            slant_range: 5000.0,
            noise_floor: 0.5,
            detection_probability: 0.95,
            dropout_gain: 0.5,
            min_dropout_speed: 0.0,
        }
    }
}

impl SensorModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.angular_noise >= 0.0 && self.angular_noise.is_finite()) {
            return Err(Error::config(
                "angular noise must be finite and nonnegative",
            ));
        }
        if !(self.slant_range > 0.0 && self.noise_floor > 0.0) {
            return Err(Error::config(
                "slant range and noise floor must be positive",
            ));
        }
        if !(0.0..=1.0).contains(&self.detection_probability)
            || !(self.dropout_gain >= 0.0 && self.min_dropout_speed >= 0.0)
        {
            return Err(Error::config("invalid detection model"));
        }
        Ok(())
    }

    pub fn ground_std(&self) -> f64 {
        self.angular_noise * self.slant_range
    }

    pub fn declared_std(&self) -> f64 {
        self.ground_std().hypot(self.noise_floor)
    }

    pub fn dropout_speed(&self) -> f64 {
        self.min_dropout_speed + self.dropout_gain * self.ground_std()
    }

    pub fn detection_probability_at(&self, speed: f64) -> f64 {
        if speed < self.dropout_speed() {
            0.0
        } else {
            self.detection_probability
        }
    }

    /// Noisy measurement of a ground-truth position.
    pub fn measure<R: Rng>(&self, t: f64, x: f64, y: f64, rng: &mut R) -> Measurement {
        let s = self.ground_std();
        let nx: f64 = StandardNormal.sample(rng);
        let ny: f64 = StandardNormal.sample(rng);
        Measurement::isotropic(t, [x + s * nx, y + s * ny], self.declared_std())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IntersectionConfig {
    pub sensor: SensorModel,
    pub scan_period: f64,
    /// Time from the first scan until both vehicles stop, s.
    pub approach_duration: f64,
    /// Time spent stopped, s.
    pub dwell: f64,
    /// Time simulated after departure, s.
    pub depart_duration: f64,
    /// Distance of the speeder's and the normal driver's stop lines before
    /// the point where their lanes meet, m.
    pub stop_offsets: (f64, f64),
    /// Lateral lane offset from the road center line, m.
    pub lane_offset: f64,
    /// Exit of the eastbound speeder.
    pub speeder_exit: Exit,
    /// Exit of the northbound normal driver.
    pub normal_exit: Exit,
    pub speeder: DriverProfile,
    pub normal: DriverProfile,
}

impl Default for IntersectionConfig {
    fn default() -> Self {
        Self {
            sensor: SensorModel::default(),
            scan_period: 1.0,
            approach_duration: 40.0,
            dwell: 0.5,
            depart_duration: 50.0,
            stop_offsets: (6.0, 12.0),
            lane_offset: 2.0,
            speeder_exit: Exit::Left,
            normal_exit: Exit::Right,
            speeder: DriverProfile::aggressive(),
            normal: DriverProfile::normal(),
        }
    }
}

/// Direction taken at the intersection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Exit {
    Straight,
    Left,
    Right,
}

impl Exit {
    fn apply(self, h: (f64, f64)) -> (f64, f64) {
        match self {
            Exit::Straight => h,
            Exit::Left => rotate(h, 1),
            Exit::Right => rotate(h, -1),
        }
    }
}

/// Ground truth and scans of one intersection trial.
#[derive(Debug, Clone)]
pub struct ScenarioResult {
    pub sigma: f64,
    /// Speeder first, then the normal driver; samples at every scan time.
    pub truth: Vec<Tracklet>,
    pub truth_speed: Vec<Vec<f64>>,
    pub scans: Vec<Scan>,
    /// Vehicle index of every measurement.
    pub origins: Vec<Vec<Option<usize>>>,
    pub stop_time: f64,
    pub depart_time: f64,
}

/// Dense `(t, distance, speed)` profile sampled every `dt`.
type Profile = Vec<(f64, f64, f64)>;

fn approach_profile(driver: &Driver, duration: f64, dt: f64) -> Profile {
    let runway = driver.cruise * (duration + 30.0) + 200.0;
    let mut s = 0.0;
    let mut v = driver.cruise;
    let mut t = 0.0;
    let mut out = vec![(t, s, v)];
    loop {
        let allowed = driver.allowed(0.0, runway - s).max(1.0);
        v = driver.step(v, t, allowed, dt);
        s += v * dt;
        t += dt;
        if s >= runway {
            out.push((t, runway, 0.0));
            break;
        }
        out.push((t, s, v));
    }
    // Re-express as time until the stop and distance before the line.
    let t_stop = t;
    out.iter()
        .map(|&(ti, si, vi)| (duration - (t_stop - ti), si - runway, vi))
        .filter(|p| p.0 >= -dt)
        .collect()
}

fn depart_profile(driver: &Driver, start: f64, duration: f64, dt: f64) -> Profile {
    let mut s = 0.0;
    let mut v = 0.0;
    let mut t = 0.0;
    let mut out = vec![(start, s, v)];
    while t < duration + dt {
        v = driver.step(v, t, f64::INFINITY, dt);
        s += v * dt;
        t += dt;
        out.push((start + t, s, v));
    }
    out
}

/// Distance along the road and speed at time `t`.
fn profile_at(profile: &Profile, t: f64) -> (f64, f64) {
    let i = profile.partition_point(|p| p.0 <= t);
    if i == 0 {
        return (profile[0].1, profile[0].2);
    }
    if i >= profile.len() {
        let p = profile[profile.len() - 1];
        return (p.1, p.2);
    }
    let (a, b) = (profile[i - 1], profile[i]);
    let w = if b.0 > a.0 {
        (t - a.0) / (b.0 - a.0)
    } else {
        0.0
    };
    (a.1 + w * (b.1 - a.1), a.2 + w * (b.2 - a.2))
}

/// A speeder heading east and a normal driver heading north stop at a shared
/// intersection, then leave through the point where their lanes meet. With
/// the default exits (speeder left, normal right) each leaves along the
/// other's line of approach.
pub fn generate_intersection_scenario(
    sigma: f64,
    config: &IntersectionConfig,
    seed: u64,
) -> Result<ScenarioResult> {
    let mut sensor = config.sensor;
    sensor.angular_noise = sigma;
    sensor.validate()?;
    config.speeder.validate()?;
    config.normal.validate()?;
    if !(config.scan_period > 0.0 && config.approach_duration > 0.0 && config.depart_duration > 0.0)
        || !(config.dwell >= 0.0)
    {
        return Err(Error::config("scenario durations must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let drivers = [
        config.speeder.sample(&mut rng),
        config.normal.sample(&mut rng),
    ];
    let classes = [config.speeder.class, config.normal.class];
    let entries = [(1.0, 0.0), (0.0, 1.0)];
    let exits = [
        config.speeder_exit.apply(entries[0]),
        config.normal_exit.apply(entries[1]),
    ];
    // Where the eastbound and northbound lanes meet.
    let corner = (config.lane_offset, -config.lane_offset);
    let offsets = [config.stop_offsets.0, config.stop_offsets.1];
    let position = |v: usize, s: f64| {
        if s <= offsets[v] {
            let back = offsets[v] - s;
            (
                corner.0 - entries[v].0 * back,
                corner.1 - entries[v].1 * back,
            )
        } else {
            let ahead = s - offsets[v];
            (corner.0 + exits[v].0 * ahead, corner.1 + exits[v].1 * ahead)
        }
    };
    let dt = 0.01;
    let stop_time = config.approach_duration;
    let depart_time = stop_time + config.dwell;
    let approach: Vec<Profile> = drivers
        .iter()
        .map(|d| approach_profile(d, stop_time, dt))
        .collect();
    let depart: Vec<Profile> = drivers
        .iter()
        .map(|d| depart_profile(d, depart_time, config.depart_duration, dt))
        .collect();
    let end = depart_time + config.depart_duration;
    let n_scans = (end / config.scan_period).floor() as usize + 1;

    let mut truth: Vec<Vec<Sample>> = (0..2).map(|_| Vec::with_capacity(n_scans)).collect();
    let mut truth_speed: Vec<Vec<f64>> = (0..2).map(|_| Vec::with_capacity(n_scans)).collect();
    let mut scans = Vec::with_capacity(n_scans);
    let mut origins = Vec::with_capacity(n_scans);
    for k in 0..n_scans {
        let t = k as f64 * config.scan_period;
        let mut detections = Vec::new();
        for v in 0..2 {
            let (s, speed) = if t <= stop_time {
                profile_at(&approach[v], t)
            } else if t < depart_time {
                (0.0, 0.0)
            } else {
                profile_at(&depart[v], t)
            };
            let (x, y) = position(v, s);
            truth[v].push(Sample::new(t, x, y, 0.0));
            truth_speed[v].push(speed);
            let pd = sensor.detection_probability_at(speed);
            if pd > 0.0 && rng.random_bool(pd) {
                detections.push((v, sensor.measure(t, x, y, &mut rng)));
            }
        }
        detections.shuffle(&mut rng);
        origins.push(detections.iter().map(|d| Some(d.0)).collect());
        scans.push(Scan::from_measurements(
            t,
            detections.into_iter().map(|d| d.1).collect(),
        ));
    }
    let truth = truth
        .into_iter()
        .zip(classes)
        .enumerate()
        .map(|(v, (samples, class))| {
            Tracklet::new(format!("vehicle{v}"), samples).with_label(class.as_str())
        })
        .collect();
    Ok(ScenarioResult {
        sigma,
        truth,
        truth_speed,
        scans,
        origins,
        stop_time,
        depart_time,
    })
}

/// Track owning most of a vehicle's detections in the selected scans.
fn majority_owner(
    scenario: &ScenarioResult,
    owners: &HashMap<(usize, usize), String>,
    vehicle: usize,
    select: impl Fn(f64) -> bool,
) -> Option<String> {
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for (k, scan) in scenario.scans.iter().enumerate() {
        if !select(scan.t) {
            continue;
        }
        for (j, origin) in scenario.origins[k].iter().enumerate() {
            if *origin == Some(vehicle) {
                if let Some(id) = owners.get(&(k, j)) {
                    *counts.entry(id.as_str()).or_default() += 1;
                }
            }
        }
    }
    let mut best: Option<(&str, usize)> = None;
    for (id, c) in counts {
        best = match best {
            Some((bid, bc)) if bc > c || (bc == c && bid < id) => Some((bid, bc)),
            _ => Some((id, c)),
        };
    }
    best.map(|b| b.0.to_string())
}

/// True when each vehicle's pre- and post-intersection detections belong
/// mostly to the same track, and the two vehicles own different tracks.
pub fn association_correct(scenario: &ScenarioResult, output: &TrackerOutput) -> bool {
    let mut owners = HashMap::new();
    for tr in &output.tracks {
        for h in &tr.history {
            if let Some(j) = h.measurement {
                owners.insert((h.scan, j), tr.id.clone());
            }
        }
    }
    let mut pre_owners = Vec::new();
    for v in 0..scenario.truth.len() {
        let pre = majority_owner(scenario, &owners, v, |t| t < scenario.stop_time);
        let post = majority_owner(scenario, &owners, v, |t| t > scenario.depart_time);
        match (pre, post) {
            (Some(a), Some(b)) if a == b => pre_owners.push(a),
            _ => return false,
        }
    }
    pre_owners.sort();
    pre_owners.dedup();
    pre_owners.len() == scenario.truth.len()
}

/// Runs the SRIF over noisy measurements of a path and returns the filtered
/// positions at the sample times.
pub fn filter_tracklet<R: Rng>(
    tracklet: &Tracklet,
    sensor: &SensorModel,
    tracker: &TrackerConfig,
    rng: &mut R,
) -> Result<Tracklet> {
    let motion = tracker.motion();
    let mut state: Option<SrifState> = None;
    let mut out = Vec::with_capacity(tracklet.len());
    for s in &tracklet.samples {
        let m = sensor.measure(s.t, s.x, s.y, rng);
        let next = match &state {
            None => SrifState::from_measurement(&m, tracker.initial_velocity_std)?,
            Some(st) => crate::tracker::srif_update(st, &m, &motion)?.state,
        };
        let x = next.estimate();
        out.push(Sample::new(s.t, x[0], x[1], 0.0));
        state = Some(next);
    }
    let mut t = Tracklet::new(tracklet.id.clone(), out);
    t.label = tracklet.label.clone();
    Ok(t)
}

/// Behavior model for the tracker, trained on SRIF-filtered windows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BehaviorTrainingConfig {
    pub paths: usize,
    pub path_length: usize,
    pub model: ModelKind,
    pub signals: Vec<SignalKind>,
    pub rows: usize,
    pub cols: usize,
    pub augmented: bool,
    /// Train on filtered state estimates instead of ground truth.
    pub filtered: bool,
    pub population: PopulationConfig,
    pub train: TrainConfig,
}

impl Default for BehaviorTrainingConfig {
    fn default() -> Self {
        Self {
            paths: 200,
            path_length: 360,
            model: ModelKind::Logistic,
            signals: vec![SignalKind::Speed],
            rows: 8,
            cols: 8,
            augmented: true,
            filtered: true,
            population: PopulationConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

pub fn train_tracker_model(
    config: &BehaviorTrainingConfig,
    sensor: &SensorModel,
    tracker: &TrackerConfig,
    seed: u64,
) -> Result<BehaviorClassifier> {
    let paths = generate_population(config.paths, config.path_length, &config.population, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_f117);
    let mut windows = Vec::new();
    for p in &paths {
        let source = if config.filtered {
            filter_tracklet(p, sensor, tracker, &mut rng)?
        } else {
            p.clone()
        };
        windows.extend(window_slices(&source, tracker.behavior_window));
    }
    let mut train = config.train;
    train.sgd.seed = seed;
    BehaviorClassifier::train(
        config.model,
        &windows,
        &DriverClass::class_names(),
        &config.signals,
        config.augmented,
        (config.rows, config.cols),
        &train,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MonteCarloConfig {
    pub sigmas: Vec<f64>,
    pub trials: usize,
    pub scenario: IntersectionConfig,
    pub tracker: TrackerConfig,
    /// Worker threads; 0 uses the available parallelism.
    pub threads: usize,
}

impl Default for MonteCarloConfig {
    fn default() -> Self {
        Self {
            sigmas: vec![0.0, 0.0005, 0.001, 0.0015, 0.002],
            trials: 100,
            scenario: IntersectionConfig::default(),
            tracker: TrackerConfig::default(),
            threads: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialOutcome {
    pub sigma: f64,
    pub trial: usize,
    pub seed: u64,
    pub baseline_correct: bool,
    pub behavior_correct: bool,
    /// Final behavior posterior of each track in the behavior run's best hypothesis.
    pub behavior_posteriors: Vec<(String, Vec<f64>)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloRow {
    pub sigma: f64,
    pub variant: String,
    pub trials: usize,
    pub successes: usize,
    pub rate: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloTable {
    pub rows: Vec<MonteCarloRow>,
    pub trials: Vec<TrialOutcome>,
}

impl MonteCarloTable {
    pub fn rate(&self, sigma: f64, variant: &str) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.sigma == sigma && r.variant == variant)
            .map(|r| r.rate)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for row in &self.rows {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Seed of one trial, derived from the master seed.
pub fn trial_seed(master: u64, sigma_index: usize, trial: usize) -> u64 {
    // splitmix64 over the packed indices
    let mut z = master
        .wrapping_add(0x9e37_79b9_7f4a_7c15u64.wrapping_mul(1 + sigma_index as u64))
        .wrapping_add((trial as u64).wrapping_mul(0xbf58_476d_1ce4_e5b9));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn run_trial(
    sigma: f64,
    config: &MonteCarloConfig,
    model: &dyn BehaviorLikelihood,
    seed: u64,
) -> Result<(ScenarioResult, TrackerOutput, TrackerOutput)> {
    let scenario = generate_intersection_scenario(sigma, &config.scenario, seed)?;
    let baseline = run_tracker(&scenario.scans, &config.tracker, None)?;
    let behavior = run_tracker(&scenario.scans, &config.tracker, Some(model))?;
    Ok((scenario, baseline, behavior))
}

pub fn monte_carlo<M: BehaviorLikelihood + Sync>(
    config: &MonteCarloConfig,
    model: &M,
    seed: u64,
) -> Result<MonteCarloTable> {
    if config.trials < 1 {
        return Err(Error::config("at least one trial is required"));
    }
    config.tracker.validate()?;
    let jobs: Vec<(usize, usize)> = (0..config.sigmas.len())
        .flat_map(|s| (0..config.trials).map(move |t| (s, t)))
        .collect();
    let threads = if config.threads == 0 {
        std::thread::available_parallelism().map_or(1, |n| n.get())
    } else {
        config.threads
    }
    .min(jobs.len())
    .max(1);
    let chunk = jobs.len().div_ceil(threads);
    let results: Vec<Result<TrialOutcome>> = std::thread::scope(|scope| {
        let handles: Vec<_> = jobs
            .chunks(chunk)
            .map(|part| {
                scope.spawn(move || {
                    part.iter()
                        .map(|&(si, trial)| {
                            let sigma = config.sigmas[si];
                            let s = trial_seed(seed, si, trial);
                            let (scenario, base, with) = run_trial(sigma, config, model, s)?;
                            Ok(TrialOutcome {
                                sigma,
                                trial,
                                seed: s,
                                baseline_correct: association_correct(&scenario, &base),
                                behavior_correct: association_correct(&scenario, &with),
                                behavior_posteriors: with
                                    .tracks
                                    .iter()
                                    .map(|t| (t.id.clone(), t.behavior_posterior.clone()))
                                    .collect(),
                            })
                        })
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("Monte Carlo worker panicked"))
            .collect()
    });
    let trials = results.into_iter().collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::new();
    for &sigma in &config.sigmas {
        for variant in ["baseline", "behavior"] {
            let outcomes: Vec<bool> = trials
                .iter()
                .filter(|t| t.sigma == sigma)
                .map(|t| {
                    if variant == "baseline" {
                        t.baseline_correct
                    } else {
                        t.behavior_correct
                    }
                })
                .collect();
            let n = outcomes.len();
            let successes = outcomes.iter().filter(|&&c| c).count();
            let rate = successes as f64 / n as f64;
            rows.push(MonteCarloRow {
                sigma,
                variant: variant.to_string(),
                trials: n,
                successes,
                rate,
                stderr: (rate * (1.0 - rate) / n as f64).sqrt(),
            });
        }
    }
    Ok(MonteCarloTable { rows, trials })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_profiles_dominate() {
        check_dominance(&DriverProfile::normal(), &DriverProfile::aggressive()).unwrap();
        let mut bad = DriverProfile::aggressive();
        bad.cruise_speed.0 = 5.0;
        assert!(matches!(
            check_dominance(&DriverProfile::normal(), &bad),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn population_is_deterministic() {
        let cfg = PopulationConfig::default();
        let a = generate_population(2, 50, &cfg, 3).unwrap();
        let b = generate_population(2, 50, &cfg, 3).unwrap();
        assert_eq!(a, b);
        let c = generate_population(2, 50, &cfg, 4).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn invalid_mix_rejected() {
        let cfg = PopulationConfig {
            aggressive_fraction: 1.5,
            ..PopulationConfig::default()
        };
        assert!(matches!(
            generate_population(10, 50, &cfg, 0),
            Err(Error::Config(_))
        ));
        assert!(generate_population(1, 50, &PopulationConfig::default(), 0).is_err());
    }

    #[test]
    fn window_arithmetic() {
        let p = generate_population(2, 360, &PopulationConfig::default(), 1).unwrap();
        assert_eq!(window_slices(&p[0], 30).len(), 12);
        let ds = windowed_dataset(&p, &[5, 10, 15, 20, 25, 30], 0.5, 0).unwrap();
        assert_eq!(ds.cells().len(), 36);
        assert!(windowed_dataset(&p, &[400], 0.5, 0).is_err());
    }

    #[test]
    fn dropout_only_when_slow() {
        let cfg = IntersectionConfig::default();
        let s = generate_intersection_scenario(0.001, &cfg, 9).unwrap();
        for (k, scan) in s.scans.iter().enumerate() {
            for v in 0..2 {
                let detected = s.origins[k].contains(&Some(v));
                if s.truth_speed[v][k] < 2.5 {
                    assert!(!detected);
                }
            }
            assert_eq!(scan.measurements.len(), s.origins[k].len());
        }
        let stopped = s.truth_speed[1].iter().filter(|&&v| v < 2.5).count();
        assert!(
            (1..5).contains(&stopped),
            "normal driver dropout {stopped} scans"
        );
    }

    #[test]
    fn trial_seeds_are_distinct() {
        let mut seen = std::collections::HashSet::new();
        for s in 0..5 {
            for t in 0..100 {
                assert!(seen.insert(trial_seed(42, s, t)));
            }
        }
    }
}
