//! Tracklets and the scalar behavior signals derived from them.
//!
//! Velocities are backward difference quotients stamped at the later sample
//! time. Speed is the velocity norm, acceleration the norm of the backward
//! difference of consecutive velocities, and turning the mean of two
//! consecutive speeds scaled by the sine of the angle between them.

use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Sample {
    pub fn new(t: f64, x: f64, y: f64, z: f64) -> Self {
        Self { t, x, y, z }
    }

    pub fn position(&self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.z)
    }
}

/// A time-ordered run of positional samples believed to belong to one target.
#[derive(Debug, Clone, PartialEq)]
pub struct Tracklet {
    pub id: String,
    pub samples: Vec<Sample>,
    pub label: Option<String>,
}

impl Tracklet {
    pub fn new(id: impl Into<String>, samples: Vec<Sample>) -> Self {
        Self {
            id: id.into(),
            samples,
            label: None,
        }
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = Some(label.into());
        self
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Checks finiteness and strictly increasing time stamps.
    pub fn validate(&self) -> Result<()> {
        for s in &self.samples {
            if !(s.t.is_finite() && s.x.is_finite() && s.y.is_finite() && s.z.is_finite()) {
                return Err(Error::input(format!(
                    "tracklet {}: non-finite sample at t={}",
                    self.id, s.t
                )));
            }
        }
        for w in self.samples.windows(2) {
            if w[1].t <= w[0].t {
                return Err(Error::input(format!(
                    "tracklet {}: time stamps not strictly increasing ({} then {})",
                    self.id, w[0].t, w[1].t
                )));
            }
        }
        Ok(())
    }

    /// Contiguous sub-tracklet `[start, start + len)`, keeping id and label.
    pub fn slice(&self, start: usize, len: usize) -> Tracklet {
        Tracklet {
            id: self.id.clone(),
            samples: self.samples[start..start + len].to_vec(),
            label: self.label.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SignalKind {
    Speed,
    Acceleration,
    Turning,
}

impl SignalKind {
    pub const ALL: [SignalKind; 3] = [
        SignalKind::Speed,
        SignalKind::Acceleration,
        SignalKind::Turning,
    ];

    /// Fewest samples a tracklet needs before this signal has a value.
    pub fn min_samples(self) -> usize {
        match self {
            SignalKind::Speed => 2,
            SignalKind::Acceleration | SignalKind::Turning => 3,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SignalKind::Speed => "speed",
            SignalKind::Acceleration => "acceleration",
            SignalKind::Turning => "turning",
        }
    }
}

impl std::fmt::Display for SignalKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for SignalKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "speed" => Ok(SignalKind::Speed),
            "acceleration" | "accel" => Ok(SignalKind::Acceleration),
            "turning" | "turn" => Ok(SignalKind::Turning),
            other => Err(Error::config(format!("unknown signal kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BehaviorSignal {
    pub kind: SignalKind,
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

impl BehaviorSignal {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Backward-difference velocities; entry `k` is stamped at `t_{k+1}`.
pub fn velocity(tracklet: &Tracklet) -> Result<Vec<(f64, Vector3<f64>)>> {
    velocity_of(&tracklet.samples)
}

fn velocity_of(samples: &[Sample]) -> Result<Vec<(f64, Vector3<f64>)>> {
    if samples.len() < 2 {
        return Err(Error::insufficient(format!(
            "velocity needs at least 2 samples, got {}",
            samples.len()
        )));
    }
    samples
        .windows(2)
        .map(|w| {
            let dt = w[1].t - w[0].t;
            if !(dt > 0.0) || !dt.is_finite() {
                return Err(Error::input(format!(
                    "degenerate time step between t={} and t={}",
                    w[0].t, w[1].t
                )));
            }
            Ok((w[1].t, (w[1].position() - w[0].position()) / dt))
        })
        .collect()
}

/// Angle-sine between two vectors on [0, pi]; zero when either vector vanishes.
fn sin_between(a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    let na = a.norm();
    let nb = b.norm();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    let cos = (a.dot(b) / (na * nb)).clamp(-1.0, 1.0);
    cos.acos().sin()
}

pub fn behavior_signal(tracklet: &Tracklet, kind: SignalKind) -> Result<BehaviorSignal> {
    signal_from_samples(&tracklet.samples, kind)
}

/// Same as [`behavior_signal`] but over a bare sample slice.
pub fn signal_from_samples(samples: &[Sample], kind: SignalKind) -> Result<BehaviorSignal> {
    if samples.len() < kind.min_samples() {
        return Err(Error::insufficient(format!(
            "{kind} needs at least {} samples, got {}",
            kind.min_samples(),
            samples.len()
        )));
    }
    let vel = velocity_of(samples)?;
    let (times, values) = match kind {
        SignalKind::Speed => vel.iter().map(|(t, v)| (*t, v.norm())).unzip(),
        SignalKind::Acceleration => vel
            .windows(2)
            .map(|w| {
                let dt = w[1].0 - w[0].0;
                (w[1].0, ((w[1].1 - w[0].1) / dt).norm())
            })
            .unzip(),
        SignalKind::Turning => vel
            .windows(2)
            .map(|w| {
                let mean_speed = 0.5 * (w[0].1.norm() + w[1].1.norm());
                (w[0].0, mean_speed * sin_between(&w[0].1, &w[1].1))
            })
            .unzip(),
    };
    Ok(BehaviorSignal {
        kind,
        times,
        values,
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct SampleRow {
    id: String,
    t: f64,
    x: f64,
    y: f64,
    z: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct LabelRow {
    id: String,
    label: String,
}

/// Reads the `id,t,x,y,z` trajectory CSV. Tracklets come back in first-seen order.
pub fn read_tracklets<R: Read>(reader: R) -> Result<Vec<Tracklet>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut order: Vec<String> = Vec::new();
    let mut by_id: HashMap<String, Vec<Sample>> = HashMap::new();
    for row in rdr.deserialize::<SampleRow>() {
        let row = row?;
        let entry = by_id.entry(row.id.clone()).or_insert_with(|| {
            order.push(row.id.clone());
            Vec::new()
        });
        entry.push(Sample::new(row.t, row.x, row.y, row.z));
    }
    let tracklets: Vec<Tracklet> = order
        .into_iter()
        .map(|id| {
            let samples = by_id.remove(&id).unwrap_or_default();
            Tracklet::new(id, samples)
        })
        .collect();
    for t in &tracklets {
        t.validate()?;
    }
    Ok(tracklets)
}

pub fn write_tracklets<W: Write>(writer: W, tracklets: &[Tracklet]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    for tr in tracklets {
        for s in &tr.samples {
            wtr.serialize(SampleRow {
                id: tr.id.clone(),
                t: s.t,
                x: s.x,
                y: s.y,
                z: s.z,
            })?;
        }
    }
    wtr.flush()?;
    Ok(())
}

/// Reads the `id,label` sidecar.
pub fn read_labels<R: Read>(reader: R) -> Result<BTreeMap<String, String>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut labels = BTreeMap::new();
    for row in rdr.deserialize::<LabelRow>() {
        let row = row?;
        labels.insert(row.id, row.label);
    }
    Ok(labels)
}

pub fn write_labels<W: Write>(writer: W, tracklets: &[Tracklet]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    for tr in tracklets {
        if let Some(label) = &tr.label {
            wtr.serialize(LabelRow {
                id: tr.id.clone(),
                label: label.clone(),
            })?;
        }
    }
    wtr.flush()?;
    Ok(())
}

/// Attaches sidecar labels; every tracklet must have one.
pub fn attach_labels(tracklets: &mut [Tracklet], labels: &BTreeMap<String, String>) -> Result<()> {
    for tr in tracklets.iter_mut() {
        let label = labels
            .get(&tr.id)
            .ok_or_else(|| Error::input(format!("no label for tracklet {}", tr.id)))?;
        tr.label = Some(label.clone());
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn tr(points: &[(f64, f64, f64, f64)]) -> Tracklet {
        Tracklet::new(
            "t",
            points
                .iter()
                .map(|&(t, x, y, z)| Sample::new(t, x, y, z))
                .collect(),
        )
    }

    #[test]
    fn single_backward_difference() {
        let v = velocity(&tr(&[(0.0, 0.0, 0.0, 0.0), (1.0, 5.0, 0.0, 0.0)])).unwrap();
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].0, 1.0);
        assert_eq!(v[0].1, Vector3::new(5.0, 0.0, 0.0));
    }

    #[test]
    fn irregular_difference_quotients() {
        let v = velocity(&tr(&[
            (0.0, 0.0, 0.0, 0.0),
            (2.0, 4.0, 0.0, 0.0),
            (3.0, 4.0, 3.0, 0.0),
        ]))
        .unwrap();
        // (4-0)/(2-0) = 2 ; (3-0)/(3-2) = 3
        assert_eq!(v[0], (2.0, Vector3::new(2.0, 0.0, 0.0)));
        assert_eq!(v[1], (3.0, Vector3::new(0.0, 3.0, 0.0)));
    }

    #[test]
    fn stationary_target_has_zero_signals() {
        let t = tr(&[
            (0.0, 3.0, 4.0, 1.0),
            (0.5, 3.0, 4.0, 1.0),
            (2.0, 3.0, 4.0, 1.0),
            (2.1, 3.0, 4.0, 1.0),
        ]);
        for (_, v) in velocity(&t).unwrap() {
            assert_eq!(v, Vector3::zeros());
        }
        for kind in SignalKind::ALL {
            let s = behavior_signal(&t, kind).unwrap();
            assert!(s.values.iter().all(|&v| v == 0.0), "{kind}");
        }
    }

    #[test]
    fn straight_line_does_not_turn() {
        let t = tr(&(0..10)
            .map(|i| (i as f64, 3.0 * i as f64, 4.0 * i as f64, 0.0))
            .collect::<Vec<_>>());
        let speed = behavior_signal(&t, SignalKind::Speed).unwrap();
        assert!(speed.values.iter().all(|&v| (v - 5.0).abs() < 1e-12));
        let turning = behavior_signal(&t, SignalKind::Turning).unwrap();
        assert!(turning.values.iter().all(|&v| v.abs() < 1e-12));
    }

    #[test]
    fn right_angle_turn() {
        // v1 = (3,0,0) at t=1, v2 = (0,4,0) at t=2
        let t = tr(&[
            (0.0, 0.0, 0.0, 0.0),
            (1.0, 3.0, 0.0, 0.0),
            (2.0, 3.0, 4.0, 0.0),
        ]);
        let turning = behavior_signal(&t, SignalKind::Turning).unwrap();
        // Independent angle: atan2(|a x b|, a . b)
        let a: Vector3<f64> = Vector3::new(3.0, 0.0, 0.0);
        let b: Vector3<f64> = Vector3::new(0.0, 4.0, 0.0);
        let theta = a.cross(&b).norm().atan2(a.dot(&b));
        assert_relative_eq!(turning.values[0], 3.5 * theta.sin(), epsilon = 1e-12);
        assert_relative_eq!(turning.values[0], 3.5, epsilon = 1e-12);
        assert_eq!(turning.times, vec![1.0]);
    }

    #[test]
    fn errors() {
        let one = tr(&[(0.0, 0.0, 0.0, 0.0)]);
        assert!(matches!(velocity(&one), Err(Error::InsufficientData(_))));
        let two = tr(&[(0.0, 0.0, 0.0, 0.0), (1.0, 1.0, 0.0, 0.0)]);
        assert!(behavior_signal(&two, SignalKind::Speed).is_ok());
        assert!(matches!(
            behavior_signal(&two, SignalKind::Turning),
            Err(Error::InsufficientData(_))
        ));
        let dup = tr(&[(0.0, 0.0, 0.0, 0.0), (0.0, 1.0, 0.0, 0.0)]);
        assert!(matches!(velocity(&dup), Err(Error::RejectedInput(_))));
    }

    #[test]
    fn csv_round_trip_preserves_order_and_labels() {
        let a = tr(&[(0.0, 1.0, 2.0, 3.0), (1.0, 2.0, 2.0, 3.0)]).with_label("normal");
        let mut b = tr(&[(0.0, 0.0, 0.0, 0.0), (0.5, 1.0, 0.0, 0.0)]).with_label("aggressive");
        b.id = "b".into();
        let mut a = a;
        a.id = "a".into();
        let mut buf = Vec::new();
        write_tracklets(&mut buf, &[b.clone(), a.clone()]).unwrap();
        assert!(String::from_utf8_lossy(&buf).starts_with("id,t,x,y,z\n"));
        let mut back = read_tracklets(buf.as_slice()).unwrap();
        assert_eq!(back[0].id, "b");
        let mut lbuf = Vec::new();
        write_labels(&mut lbuf, &[b, a]).unwrap();
        let labels = read_labels(lbuf.as_slice()).unwrap();
        attach_labels(&mut back, &labels).unwrap();
        assert_eq!(back[1].label.as_deref(), Some("normal"));
    }

    fn arb_tracklet() -> impl Strategy<Value = Tracklet> {
        prop::collection::vec(
            (0.05f64..2.0, -50.0f64..50.0, -50.0f64..50.0, -5.0f64..5.0),
            3..30,
        )
        .prop_map(|rows| {
            let mut t = 0.0;
            let samples = rows
                .into_iter()
                .map(|(dt, x, y, z)| {
                    t += dt;
                    Sample::new(t, x, y, z)
                })
                .collect();
            Tracklet::new("p", samples)
        })
    }

    fn map_positions(t: &Tracklet, f: impl Fn(&Sample) -> Sample) -> Tracklet {
        Tracklet::new(t.id.clone(), t.samples.iter().map(f).collect())
    }

    proptest! {
        #[test]
        fn translation_invariance(t in arb_tracklet(), dx in -1e3f64..1e3, dy in -1e3f64..1e3, dz in -1e3f64..1e3) {
            let moved = map_positions(&t, |s| Sample::new(s.t, s.x + dx, s.y + dy, s.z + dz));
            for kind in SignalKind::ALL {
                let a = behavior_signal(&t, kind).unwrap();
                let b = behavior_signal(&moved, kind).unwrap();
                for (u, v) in a.values.iter().zip(&b.values) {
                    prop_assert!((u - v).abs() <= 1e-7 * (1.0 + u.abs()));
                }
            }
        }

        #[test]
        fn rotation_about_z_invariance(t in arb_tracklet(), angle in 0.0f64..std::f64::consts::TAU) {
            let (s, c) = angle.sin_cos();
            let rotated = map_positions(&t, |p| Sample::new(p.t, c * p.x - s * p.y, s * p.x + c * p.y, p.z));
            for kind in SignalKind::ALL {
                let a = behavior_signal(&t, kind).unwrap();
                let b = behavior_signal(&rotated, kind).unwrap();
                for (u, v) in a.values.iter().zip(&b.values) {
                    prop_assert!((u - v).abs() <= 1e-6 * (1.0 + u.abs()));
                }
            }
        }

        #[test]
        fn time_rescaling_scales_speed(t in arb_tracklet(), c in 0.1f64..10.0) {
            let scaled = map_positions(&t, |p| Sample::new(c * p.t, p.x, p.y, p.z));
            let a = behavior_signal(&t, SignalKind::Speed).unwrap();
            let b = behavior_signal(&scaled, SignalKind::Speed).unwrap();
            for (u, v) in a.values.iter().zip(&b.values) {
                prop_assert!((u / c - v).abs() <= 1e-9 * (1.0 + u.abs()));
            }
        }

        #[test]
        fn turning_bounded_by_speed(t in arb_tracklet()) {
            let speed = behavior_signal(&t, SignalKind::Speed).unwrap();
            let turning = behavior_signal(&t, SignalKind::Turning).unwrap();
            prop_assert!(speed.values.iter().all(|&v| v >= 0.0));
            for (i, &tv) in turning.values.iter().enumerate() {
                let bound = speed.values[i].max(speed.values[i + 1]);
                prop_assert!(tv >= 0.0 && tv <= bound + 1e-12);
            }
        }
    }
}
