//! Zero-dimensional sublevel-set persistence of sampled scalar signals and
//! matching distances between the resulting diagrams.
//!
//! The filtration sweeps the samples in ascending value order (ties broken by
//! index) and tracks components of the sublevel set with a union-find whose
//! roots remember when their component was born. When two components meet,
//! the younger one (later in the sweep) dies at the current value. The
//! surviving component is reported last as the essential pair
//! `(global min, global max)`.
//!
//! The augmented variant also records a zero-persistence point `(f, f)` for
//! every sample that does not start a new component, so an augmented diagram
//! has exactly one point per sample.

use serde::{Deserialize, Serialize};

use crate::assignment::{has_perfect_matching, min_cost_assignment};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersistenceDiagram {
    pub augmented: bool,
    pub pairs: Vec<(f64, f64)>,
}

impl PersistenceDiagram {
    /// Builds a diagram with its pairs in canonical (birth, death) order.
    pub fn new(mut pairs: Vec<(f64, f64)>, augmented: bool) -> Result<Self> {
        for &(b, d) in &pairs {
            if !(b.is_finite() && d.is_finite()) || d < b {
                return Err(Error::input(format!("malformed diagram point ({b}, {d})")));
            }
        }
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
        Ok(Self { augmented, pairs })
    }

    pub fn empty() -> Self {
        Self {
            augmented: false,
            pairs: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Points strictly above the diagonal.
    pub fn off_diagonal(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.pairs.iter().copied().filter(|&(b, d)| d > b)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let raw: PersistenceDiagram = serde_json::from_str(s)?;
        PersistenceDiagram::new(raw.pairs, raw.augmented)
    }
}

struct Components {
    parent: Vec<usize>,
    // (sweep rank, value) at which the component rooted here was born
    birth: Vec<(usize, f64)>,
}

impl Components {
    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }
}

const UNSEEN: usize = usize::MAX;

/// Persistence diagram of the sublevel-set filtration of `values`.
pub fn morse_filtration(values: &[f64], augmented: bool) -> Result<PersistenceDiagram> {
    if values.is_empty() {
        return Err(Error::insufficient("persistence of an empty signal"));
    }
    if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
        return Err(Error::input(format!("non-finite signal value {bad}")));
    }
    let n = values.len();
    // keys carry their value so the sort stays cache-friendly; equal values keep index order
    let mut order: Vec<(f64, usize)> = values.iter().copied().zip(0..n).collect();
    order.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

    let mut comps = Components {
        parent: vec![UNSEEN; n],
        birth: vec![(0, 0.0); n],
    };
    let mut pairs = Vec::with_capacity(if augmented { n } else { n / 2 + 1 });

    for (rank, &(f, i)) in order.iter().enumerate() {
        let left = (i > 0 && comps.parent[i - 1] != UNSEEN).then(|| i - 1);
        let right = (i + 1 < n && comps.parent[i + 1] != UNSEEN).then(|| i + 1);
        match (left, right) {
            (None, None) => {
                comps.parent[i] = i;
                comps.birth[i] = (rank, f);
            }
            (Some(j), None) | (None, Some(j)) => {
                comps.parent[i] = comps.find(j);
                if augmented {
                    pairs.push((f, f));
                }
            }
            (Some(l), Some(r)) => {
                let rl = comps.find(l);
                let rr = comps.find(r);
                let (older, younger) = if comps.birth[rl].0 < comps.birth[rr].0 {
                    (rl, rr)
                } else {
                    (rr, rl)
                };
                pairs.push((comps.birth[younger].1, f));
                comps.parent[younger] = older;
                comps.parent[i] = older;
                if augmented {
                    pairs.push((f, f));
                }
            }
        }
    }
    pairs.push((order[0].0, order[n - 1].0));
    PersistenceDiagram::new(pairs, augmented)
}

/// Order of a Wasserstein distance; `f64::INFINITY` selects the bottleneck distance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchingCost {
    pub p: f64,
    pub value: f64,
}

/// How per-point displacements are combined for finite `p`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CostForm {
    /// `(sum ||u - phi(u)||_p)^(1/p)`.
    #[default]
    Summed,
    /// `(sum ||u - phi(u)||_p^p)^(1/p)`, the form most TDA libraries report.
    Powered,
}

fn lp_norm(dx: f64, dy: f64, p: f64) -> f64 {
    let (ax, ay) = (dx.abs(), dy.abs());
    if p.is_infinite() {
        ax.max(ay)
    } else if p == 1.0 {
        ax + ay
    } else if p == 2.0 {
        ax.hypot(ay)
    } else {
        (ax.powf(p) + ay.powf(p)).powf(1.0 / p)
    }
}

/// L_p distance from `(b, d)` to the nearest diagonal point `(m, m)`, `m = (b + d) / 2`.
pub fn diagonal_distance(point: (f64, f64), p: f64) -> f64 {
    let half = 0.5 * (point.1 - point.0);
    lp_norm(half, half, p)
}

pub fn point_distance(a: (f64, f64), b: (f64, f64), p: f64) -> f64 {
    lp_norm(a.0 - b.0, a.1 - b.1, p)
}

pub fn wasserstein(
    d1: &PersistenceDiagram,
    d2: &PersistenceDiagram,
    p: f64,
) -> Result<MatchingCost> {
    wasserstein_with(d1, d2, p, CostForm::Summed)
}

/// Minimum matching cost between two diagrams, where any point may instead be
/// sent to its nearest diagonal point. Points on the diagonal are absorbed by
/// the diagonal and never matched explicitly.
pub fn wasserstein_with(
    d1: &PersistenceDiagram,
    d2: &PersistenceDiagram,
    p: f64,
    form: CostForm,
) -> Result<MatchingCost> {
    if p.is_nan() || p < 1.0 {
        return Err(Error::input(format!(
            "matching order p must be in [1, inf], got {p}"
        )));
    }
    let a: Vec<(f64, f64)> = d1.off_diagonal().collect();
    let b: Vec<(f64, f64)> = d2.off_diagonal().collect();
    let value = if p.is_infinite() {
        bottleneck(&a, &b)
    } else {
        let power = match form {
            CostForm::Summed => 1.0,
            CostForm::Powered => p,
        };
        let cost = extended_costs(&a, &b, |x| x.powf(power), p);
        let (_, total) = min_cost_assignment(&cost);
        total.max(0.0).powf(1.0 / p)
    };
    Ok(MatchingCost { p, value })
}

/// Square cost matrix over `a ∪ diag(b)` versus `b ∪ diag(a)`.
fn extended_costs(
    a: &[(f64, f64)],
    b: &[(f64, f64)],
    transform: impl Fn(f64) -> f64,
    p: f64,
) -> Vec<Vec<f64>> {
    let (n, m) = (a.len(), b.len());
    let size = n + m;
    let mut cost = vec![vec![0.0; size]; size];
    for (i, &u) in a.iter().enumerate() {
        let to_diag = transform(diagonal_distance(u, p));
        for (j, &v) in b.iter().enumerate() {
            cost[i][j] = transform(point_distance(u, v, p));
        }
        for j in m..size {
            cost[i][j] = to_diag;
        }
    }
    for (j, &v) in b.iter().enumerate() {
        let to_diag = transform(diagonal_distance(v, p));
        for row in cost.iter_mut().skip(n) {
            row[j] = to_diag;
        }
    }
    cost
}

fn bottleneck(a: &[(f64, f64)], b: &[(f64, f64)]) -> f64 {
    let cost = extended_costs(a, b, |x| x, f64::INFINITY);
    let mut candidates: Vec<f64> = cost.iter().flatten().copied().collect();
    candidates.sort_by(f64::total_cmp);
    candidates.dedup();
    if candidates.is_empty() {
        return 0.0;
    }
    // smallest threshold admitting a perfect matching
    let feasible = |threshold: f64| {
        let allowed: Vec<Vec<bool>> = cost
            .iter()
            .map(|row| row.iter().map(|&c| c <= threshold).collect())
            .collect();
        has_perfect_matching(&allowed)
    };
    let (mut lo, mut hi) = (0usize, candidates.len() - 1);
    while lo < hi {
        let mid = (lo + hi) / 2;
        if feasible(candidates[mid]) {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    candidates[lo]
}

/// Distance between the plain diagrams of `f` and `g` together with `||f - g||_inf`.
pub fn stability_check(f: &[f64], g: &[f64], p: f64) -> Result<(f64, f64)> {
    if f.len() != g.len() {
        return Err(Error::input(format!(
            "signals differ in length ({} vs {})",
            f.len(),
            g.len()
        )));
    }
    let df = morse_filtration(f, false)?;
    let dg = morse_filtration(g, false)?;
    let sup = f
        .iter()
        .zip(g)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    Ok((wasserstein(&df, &dg, p)?.value, sup))
}
