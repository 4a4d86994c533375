//! Tracklet -> behavior signals -> diagrams -> binned count vector, and the
//! serialized classifier that bundles a fitted model with its binning.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::classify::{BehaviorModel, Dataset, ModelKind, TrainConfig};
use crate::error::{Error, Result};
use crate::features::{bin_diagram_from, skew_transform, BinnedFeature, BinningParams};
use crate::persistence::{morse_filtration, PersistenceDiagram};
use crate::trajectory::{signal_from_samples, Sample, SignalKind, Tracklet};

/// One diagram per requested signal, in the given order.
pub fn signal_diagrams(
    samples: &[Sample],
    signals: &[SignalKind],
    augmented: bool,
) -> Result<Vec<PersistenceDiagram>> {
    signals
        .iter()
        .map(|&kind| {
            let signal = signal_from_samples(samples, kind)?;
            morse_filtration(&signal.values, augmented)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Featurizer {
    pub signals: Vec<SignalKind>,
    pub binning: Vec<BinningParams>,
    pub augmented: bool,
}

impl Featurizer {
    /// Quantile binning per signal from precomputed training diagrams.
    ///
    /// `diagrams[i][s]` is the diagram of signal `signals[s]` for example `i`.
    pub fn fit_from_diagrams(
        signals: &[SignalKind],
        augmented: bool,
        rows: usize,
        cols: usize,
        diagrams: &[Vec<PersistenceDiagram>],
    ) -> Result<Self> {
        if signals.is_empty() {
            return Err(Error::config("at least one behavior signal is required"));
        }
        let binning = (0..signals.len())
            .map(|s| BinningParams::from_quantiles(rows, cols, diagrams.iter().map(|d| &d[s])))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            signals: signals.to_vec(),
            binning,
            augmented,
        })
    }

    pub fn dim(&self) -> usize {
        self.binning.iter().map(|b| b.rows * b.cols).sum()
    }

    pub fn bin(&self, diagrams: &[PersistenceDiagram]) -> Result<Vec<BinnedFeature>> {
        if diagrams.len() != self.signals.len() {
            return Err(Error::config(format!(
                "expected {} diagrams, got {}",
                self.signals.len(),
                diagrams.len()
            )));
        }
        diagrams
            .iter()
            .zip(&self.binning)
            .zip(&self.signals)
            .map(|((d, p), &kind)| bin_diagram_from(&skew_transform(d), p, vec![kind]))
            .collect()
    }

    pub fn vector_from_diagrams(&self, diagrams: &[PersistenceDiagram]) -> Result<Vec<f64>> {
        Ok(self
            .bin(diagrams)?
            .iter()
            .flat_map(|f| f.counts.iter().map(|&c| f64::from(c)))
            .collect())
    }

    pub fn featurize(&self, samples: &[Sample]) -> Result<Vec<f64>> {
        let diagrams = signal_diagrams(samples, &self.signals, self.augmented)?;
        self.vector_from_diagrams(&diagrams)
    }
}

/// A fitted model together with everything needed to featurize new tracklets.
#[derive(Debug, Clone, PartialEq)]
pub struct BehaviorClassifier {
    pub model: BehaviorModel,
    pub featurizer: Featurizer,
    pub meta: Option<serde_json::Value>,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    #[serde(flatten)]
    model: BehaviorModel,
    binning: BTreeMap<SignalKind, BinningParams>,
    signals: Vec<SignalKind>,
    augmented: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    meta: Option<serde_json::Value>,
}

impl BehaviorClassifier {
    /// Fits binning and model on labeled tracklets.
    pub fn train(
        kind: ModelKind,
        tracklets: &[Tracklet],
        classes: &[String],
        signals: &[SignalKind],
        augmented: bool,
        resolution: (usize, usize),
        config: &TrainConfig,
    ) -> Result<Self> {
        let mut labels = Vec::with_capacity(tracklets.len());
        let mut diagrams = Vec::with_capacity(tracklets.len());
        for tr in tracklets {
            let label = tr
                .label
                .as_ref()
                .ok_or_else(|| Error::input(format!("tracklet {} has no label", tr.id)))?;
            let idx = classes
                .iter()
                .position(|c| c == label)
                .ok_or_else(|| Error::input(format!("unknown class label {label:?}")))?;
            labels.push(idx);
            diagrams.push(signal_diagrams(&tr.samples, signals, augmented)?);
        }
        let featurizer = Featurizer::fit_from_diagrams(
            signals,
            augmented,
            resolution.0,
            resolution.1,
            &diagrams,
        )?;
        let mut data = Dataset::new(classes.to_vec());
        for (label, d) in labels.into_iter().zip(&diagrams) {
            data.push(label, featurizer.vector_from_diagrams(d)?);
        }
        let model = BehaviorModel::fit(kind, &data, config)?;
        Ok(Self {
            model,
            featurizer,
            meta: None,
        })
    }

    pub fn classes(&self) -> &[String] {
        &self.model.classes
    }

    pub fn features(&self, samples: &[Sample]) -> Result<Vec<f64>> {
        let x = self.featurizer.featurize(samples)?;
        if x.len() != self.model.dim() {
            return Err(Error::config(format!(
                "featurizer produces {} features but model expects {}",
                x.len(),
                self.model.dim()
            )));
        }
        Ok(x)
    }

    pub fn classify(&self, samples: &[Sample]) -> Result<usize> {
        self.model.classify(&self.features(samples)?)
    }

    pub fn to_json(&self) -> Result<String> {
        let file = ModelFile {
            model: self.model.clone(),
            binning: self
                .featurizer
                .signals
                .iter()
                .copied()
                .zip(self.featurizer.binning.iter().copied())
                .collect(),
            signals: self.featurizer.signals.clone(),
            augmented: self.featurizer.augmented,
            meta: self.meta.clone(),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(s)?;
        let binning = file
            .signals
            .iter()
            .map(|k| {
                file.binning
                    .get(k)
                    .copied()
                    .ok_or_else(|| Error::config(format!("model file has no binning for {k}")))
            })
            .collect::<Result<Vec<_>>>()?;
        for b in &binning {
            b.validate()?;
        }
        let featurizer = Featurizer {
            signals: file.signals,
            binning,
            augmented: file.augmented,
        };
        if featurizer.dim() != file.model.dim() {
            return Err(Error::config(format!(
                "binning describes {} features but model has {}",
                featurizer.dim(),
                file.model.dim()
            )));
        }
        Ok(Self {
            model: file.model,
            featurizer,
            meta: file.meta,
        })
    }
}

impl BehaviorClassifier {
    /// Fraction of labeled tracklets assigned to the wrong class.
    pub fn error_rate(&self, tracklets: &[Tracklet]) -> Result<f64> {
        if tracklets.is_empty() {
            return Err(Error::InsufficientData("no tracklets to evaluate".into()));
        }
        let mut wrong = 0usize;
        for tr in tracklets {
            let label = tr
                .label
                .as_ref()
                .ok_or_else(|| Error::input(format!("tracklet {} has no label", tr.id)))?;
            if self.classes()[self.classify(&tr.samples)?] != *label {
                wrong += 1;
            }
        }
        Ok(wrong as f64 / tracklets.len() as f64)
    }
}

/// Test error for one (train window, test window) cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub train_window: usize,
    pub test_window: usize,
    pub error: f64,
}

/// Trains one classifier per train window and scores it on every test window.
pub fn window_grid_errors(
    kind: ModelKind,
    data: &crate::sim::WindowedDataset,
    classes: &[String],
    signals: &[SignalKind],
    augmented: bool,
    resolution: (usize, usize),
    config: &TrainConfig,
) -> Result<Vec<GridCell>> {
    let tests: Vec<(usize, Vec<Tracklet>)> = data
        .windows
        .iter()
        .map(|&w| (w, data.test_windows(w)))
        .collect();
    let mut cells = Vec::with_capacity(tests.len() * tests.len());
    for &train_window in &data.windows {
        let clf = BehaviorClassifier::train(
            kind,
            &data.train_windows(train_window),
            classes,
            signals,
            augmented,
            resolution,
            config,
        )?;
        for (test_window, test) in &tests {
            cells.push(GridCell {
                train_window,
                test_window: *test_window,
                error: clf.error_rate(test)?,
            });
        }
    }
    Ok(cells)
}

/// Mean error over all train windows for one test window.
pub fn test_window_mean(cells: &[GridCell], test_window: usize) -> Option<f64> {
    let errs: Vec<f64> = cells
        .iter()
        .filter(|c| c.test_window == test_window)
        .map(|c| c.error)
        .collect();
    (!errs.is_empty()).then(|| errs.iter().sum::<f64>() / errs.len() as f64)
}
