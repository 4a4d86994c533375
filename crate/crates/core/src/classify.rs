//! Statistical models over binned-diagram count vectors: multiclass logistic
//! regression trained by SGD, independent Poisson counts, and a multinomial.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

/// Additive smoothing applied to fitted rates and probabilities.
pub const DEFAULT_SMOOTHING: f64 = 1e-3;

/// Labeled feature vectors. Labels index into `classes`.
#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub classes: Vec<String>,
    pub examples: Vec<(usize, Vec<f64>)>,
}

impl Dataset {
    pub fn new(classes: Vec<String>) -> Self {
        Self {
            classes,
            examples: Vec::new(),
        }
    }

    pub fn push(&mut self, label: usize, x: Vec<f64>) {
        self.examples.push((label, x));
    }

    pub fn dim(&self) -> usize {
        self.examples.first().map_or(0, |(_, x)| x.len())
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes.len()];
        for (c, _) in &self.examples {
            counts[*c] += 1;
        }
        counts
    }

    /// Empirical class frequencies.
    pub fn class_frequencies(&self) -> Vec<f64> {
        let n = self.len().max(1) as f64;
        self.class_counts().iter().map(|&c| c as f64 / n).collect()
    }

    fn check(&self) -> Result<usize> {
        if self.classes.is_empty() {
            return Err(Error::insufficient("dataset has no classes"));
        }
        let dim = self.dim();
        for (c, x) in &self.examples {
            if *c >= self.classes.len() {
                return Err(Error::input(format!("label index {c} out of range")));
            }
            if x.len() != dim {
                return Err(Error::input(format!(
                    "inconsistent feature dimension {} (expected {dim})",
                    x.len()
                )));
            }
        }
        if let Some(empty) = self.class_counts().iter().position(|&n| n == 0) {
            return Err(Error::insufficient(format!(
                "class {:?} has no examples",
                self.classes[empty]
            )));
        }
        Ok(dim)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SgdConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub l2: f64,
    pub seed: u64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            epochs: 50,
            l2: 1e-4,
            seed: 0,
        }
    }
}

/// `p(c | x) ∝ exp(-<theta_c, x> - b_c)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
}

impl LogisticModel {
    pub fn zeros(classes: usize, dim: usize) -> Self {
        Self {
            weights: vec![vec![0.0; dim]; classes],
            bias: vec![0.0; classes],
        }
    }

    pub fn dim(&self) -> usize {
        self.weights.first().map_or(0, Vec::len)
    }

    fn scores(&self, x: &[f64]) -> Vec<f64> {
        self.weights
            .iter()
            .zip(&self.bias)
            .map(|(w, b)| -dot(w, x) - b)
            .collect()
    }

    pub fn posterior(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim() {
            return Err(Error::input(format!(
                "feature dimension {} does not match model dimension {}",
                x.len(),
                self.dim()
            )));
        }
        Ok(softmax(&self.scores(x)))
    }

    /// Mean negative log-likelihood over a dataset.
    pub fn loss(&self, data: &Dataset) -> f64 {
        let total: f64 = data
            .examples
            .iter()
            .map(|(c, x)| -log_softmax(&self.scores(x))[*c])
            .sum();
        total / data.len().max(1) as f64
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

pub fn log_softmax(scores: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(scores);
    scores.iter().map(|s| s - lse).collect()
}

pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Multiclass logistic regression by shuffled SGD with `lr / sqrt(t)` steps.
pub fn lr_train(data: &Dataset, config: &SgdConfig) -> Result<LogisticModel> {
    let dim = data.check()?;
    if config.epochs == 0 || !(config.learning_rate > 0.0) || config.l2 < 0.0 {
        return Err(Error::config(format!(
            "invalid SGD configuration {config:?}"
        )));
    }
    let k = data.classes.len();
    let mut model = LogisticModel::zeros(k, dim);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut step = 0usize;
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for &idx in &order {
            step += 1;
            let eta = config.learning_rate / (step as f64).sqrt();
            let (label, x) = &data.examples[idx];
            let p = softmax(&model.scores(x));
            for c in 0..k {
                // d(-log p_y)/d(score_c) = p_c - [c == y]; d(score_c)/d(theta_c) = -x
                let g = p[c] - if c == *label { 1.0 } else { 0.0 };
                let shrink = 1.0 - eta * config.l2;
                for (w, xi) in model.weights[c].iter_mut().zip(x) {
                    *w = shrink * *w + eta * g * xi;
                }
                model.bias[c] += eta * g;
            }
        }
    }
    Ok(model)
}

fn check_counts(x: &[f64]) -> Result<()> {
    match x
        .iter()
        .find(|v| !(v.is_finite() && **v >= 0.0 && v.fract() == 0.0))
    {
        Some(bad) => Err(Error::input(format!(
            "count features must be non-negative integers, got {bad}"
        ))),
        None => Ok(()),
    }
}

fn ln_factorial(k: f64) -> f64 {
    if k < 32.0 {
        // exact enough and exactly zero for 0! and 1!
        (2..=k as u32).map(|i| f64::from(i).ln()).sum()
    } else {
        ln_gamma(k + 1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoissonModel {
    pub rates: Vec<Vec<f64>>,
    pub smoothing: f64,
}

impl PoissonModel {
    pub fn dim(&self) -> usize {
        self.rates.first().map_or(0, Vec::len)
    }

    /// `sum_i x_i ln(lambda_ci) - lambda_ci - ln(x_i!)`.
    pub fn log_likelihood(&self, x: &[f64], class: usize) -> Result<f64> {
        check_counts(x)?;
        let rates = self
            .rates
            .get(class)
            .ok_or_else(|| Error::input(format!("class index {class} out of range")))?;
        if x.len() != rates.len() {
            return Err(Error::input(format!(
                "feature dimension {} does not match model dimension {}",
                x.len(),
                rates.len()
            )));
        }
        Ok(x.iter()
            .zip(rates)
            .map(|(&k, &lambda)| k * lambda.ln() - lambda - ln_factorial(k))
            .sum())
    }
}

/// Per-class mean counts, clamped below at `smoothing`.
pub fn poisson_fit(data: &Dataset, smoothing: f64) -> Result<PoissonModel> {
    let dim = data.check()?;
    if !(smoothing > 0.0) {
        return Err(Error::config("Poisson smoothing must be positive"));
    }
    for (_, x) in &data.examples {
        check_counts(x)?;
    }
    let counts = data.class_counts();
    let mut rates = vec![vec![0.0; dim]; data.classes.len()];
    for (c, x) in &data.examples {
        for (r, v) in rates[*c].iter_mut().zip(x) {
            *r += v;
        }
    }
    for (row, &n) in rates.iter_mut().zip(&counts) {
        for r in row.iter_mut() {
            *r = (*r / n as f64).max(smoothing);
        }
    }
    Ok(PoissonModel { rates, smoothing })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultinomialModel {
    pub probs: Vec<Vec<f64>>,
    pub smoothing: f64,
}

impl MultinomialModel {
    pub fn dim(&self) -> usize {
        self.probs.first().map_or(0, Vec::len)
    }

    /// `ln(|x|! / prod x_i!) + sum_i x_i ln(theta_ci)`.
    pub fn log_likelihood(&self, x: &[f64], class: usize) -> Result<f64> {
        check_counts(x)?;
        let probs = self
            .probs
            .get(class)
            .ok_or_else(|| Error::input(format!("class index {class} out of range")))?;
        if x.len() != probs.len() {
            return Err(Error::input(format!(
                "feature dimension {} does not match model dimension {}",
                x.len(),
                probs.len()
            )));
        }
        let total: f64 = x.iter().sum();
        let mut ll = ln_factorial(total);
        for (&k, &theta) in x.iter().zip(probs) {
            if k > 0.0 {
                ll += k * theta.ln() - ln_factorial(k);
            }
        }
        Ok(ll)
    }
}

/// Pooled count proportions per class, smoothed as `(theta + eps) / (1 + K eps)`.
pub fn multinomial_fit(data: &Dataset, smoothing: f64) -> Result<MultinomialModel> {
    let dim = data.check()?;
    if !(smoothing >= 0.0) {
        return Err(Error::config("multinomial smoothing must be non-negative"));
    }
    for (_, x) in &data.examples {
        check_counts(x)?;
    }
    let mut sums = vec![vec![0u64; dim]; data.classes.len()];
    for (c, x) in &data.examples {
        for (s, v) in sums[*c].iter_mut().zip(x) {
            *s += *v as u64;
        }
    }
    let norm = 1.0 + dim as f64 * smoothing;
    let mut probs = Vec::with_capacity(sums.len());
    for (c, row) in sums.iter().enumerate() {
        let total: u64 = row.iter().sum();
        if total == 0 {
            return Err(Error::insufficient(format!(
                "class {:?} has zero total count",
                data.classes[c]
            )));
        }
        probs.push(
            row.iter()
                .map(|&s| (s as f64 / total as f64 + smoothing) / norm)
                .collect(),
        );
    }
    Ok(MultinomialModel { probs, smoothing })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Logistic,
    Poisson,
    Multinomial,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [
        ModelKind::Logistic,
        ModelKind::Poisson,
        ModelKind::Multinomial,
    ];
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ModelKind::Logistic => "logistic",
            ModelKind::Poisson => "poisson",
            ModelKind::Multinomial => "multinomial",
        })
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "logistic" | "lr" => Ok(ModelKind::Logistic),
            "poisson" => Ok(ModelKind::Poisson),
            "multinomial" => Ok(ModelKind::Multinomial),
            other => Err(Error::config(format!("unknown model type {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "params", rename_all = "lowercase")]
pub enum ModelParams {
    Logistic(LogisticModel),
    Poisson(PoissonModel),
    Multinomial(MultinomialModel),
}

/// A fitted model with its class labels and class priors.
///
/// For the logistic model `priors` are the training class frequencies, used
/// to turn posteriors back into (scaled) likelihoods. For the generative
/// models they are the priors used at classification time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BehaviorModel {
    pub classes: Vec<String>,
    pub priors: Vec<f64>,
    #[serde(flatten)]
    pub params: ModelParams,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub sgd: SgdConfig,
    pub smoothing: f64,
    /// Uniform class priors for generative models; otherwise training frequencies.
    pub uniform_priors: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            sgd: SgdConfig::default(),
            smoothing: DEFAULT_SMOOTHING,
            uniform_priors: true,
        }
    }
}

impl BehaviorModel {
    pub fn fit(kind: ModelKind, data: &Dataset, config: &TrainConfig) -> Result<Self> {
        let freqs = data.class_frequencies();
        let k = data.classes.len();
        let generative_priors = if config.uniform_priors {
            vec![1.0 / k.max(1) as f64; k]
        } else {
            freqs.clone()
        };
        let (params, priors) = match kind {
            ModelKind::Logistic => (ModelParams::Logistic(lr_train(data, &config.sgd)?), freqs),
            ModelKind::Poisson => (
                ModelParams::Poisson(poisson_fit(data, config.smoothing)?),
                generative_priors,
            ),
            ModelKind::Multinomial => (
                ModelParams::Multinomial(multinomial_fit(data, config.smoothing)?),
                generative_priors,
            ),
        };
        Ok(Self {
            classes: data.classes.clone(),
            priors,
            params,
        })
    }

    pub fn kind(&self) -> ModelKind {
        match self.params {
            ModelParams::Logistic(_) => ModelKind::Logistic,
            ModelParams::Poisson(_) => ModelKind::Poisson,
            ModelParams::Multinomial(_) => ModelKind::Multinomial,
        }
    }

    pub fn dim(&self) -> usize {
        match &self.params {
            ModelParams::Logistic(m) => m.dim(),
            ModelParams::Poisson(m) => m.dim(),
            ModelParams::Multinomial(m) => m.dim(),
        }
    }

    fn check_fitted(&self) -> Result<()> {
        let k = self.classes.len();
        let params_k = match &self.params {
            ModelParams::Logistic(m) => m.weights.len(),
            ModelParams::Poisson(m) => m.rates.len(),
            ModelParams::Multinomial(m) => m.probs.len(),
        };
        if k == 0 || params_k != k || self.priors.len() != k {
            return Err(Error::State(
                "model has no fitted parameters for its classes".into(),
            ));
        }
        Ok(())
    }

    /// Per-class log-likelihoods up to an additive constant shared by all classes.
    ///
    /// Logistic posteriors are divided by the training priors, which gives
    /// `ln p(x | c) - ln p(x)`.
    pub fn class_log_likelihoods(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_fitted()?;
        match &self.params {
            ModelParams::Logistic(m) => {
                let post = m.posterior(x)?;
                Ok(post
                    .iter()
                    .zip(&self.priors)
                    .map(|(p, prior)| p.ln() - prior.ln())
                    .collect())
            }
            ModelParams::Poisson(m) => (0..self.classes.len())
                .map(|c| m.log_likelihood(x, c))
                .collect(),
            ModelParams::Multinomial(m) => (0..self.classes.len())
                .map(|c| m.log_likelihood(x, c))
                .collect(),
        }
    }

    /// Class posterior `p(c | x)`.
    pub fn posterior(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_fitted()?;
        if let ModelParams::Logistic(m) = &self.params {
            return m.posterior(x);
        }
        let ll = self.class_log_likelihoods(x)?;
        let joint: Vec<f64> = ll
            .iter()
            .zip(&self.priors)
            .map(|(l, p)| l + p.ln())
            .collect();
        Ok(softmax(&joint))
    }

    /// Most probable class index; ties go to the earlier class.
    pub fn classify(&self, x: &[f64]) -> Result<usize> {
        self.check_fitted()?;
        let scores: Vec<f64> = match &self.params {
            ModelParams::Logistic(m) => m.posterior(x)?,
            _ => self
                .class_log_likelihoods(x)?
                .iter()
                .zip(&self.priors)
                .map(|(l, p)| l + p.ln())
                .collect(),
        };
        Ok(argmax_first(&scores))
    }

    /// Fraction of misclassified examples.
    pub fn error_rate(&self, data: &Dataset) -> Result<f64> {
        if data.is_empty() {
            return Err(Error::insufficient("empty evaluation set"));
        }
        let mut wrong = 0usize;
        for (c, x) in &data.examples {
            if self.classify(x)? != *c {
                wrong += 1;
            }
        }
        Ok(wrong as f64 / data.len() as f64)
    }
}

fn argmax_first(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn two_classes() -> Vec<String> {
        vec!["normal".into(), "aggressive".into()]
    }

    fn separable() -> Dataset {
        let mut d = Dataset::new(two_classes());
        for k in 1..=10 {
            d.push(0, vec![k as f64, 0.0, 0.0]);
            d.push(1, vec![0.0, k as f64, 0.0]);
        }
        d
    }

    #[test]
    fn logistic_separates_disjoint_bins() {
        let d = separable();
        let model = BehaviorModel::fit(ModelKind::Logistic, &d, &TrainConfig::default()).unwrap();
        assert_eq!(model.error_rate(&d).unwrap(), 0.0);
    }

    #[test]
    fn sgd_reduces_loss() {
        let d = separable();
        let untrained = LogisticModel::zeros(2, 3);
        let short = lr_train(
            &d,
            &SgdConfig {
                epochs: 1,
                ..SgdConfig::default()
            },
        )
        .unwrap();
        let long = lr_train(
            &d,
            &SgdConfig {
                epochs: 50,
                ..SgdConfig::default()
            },
        )
        .unwrap();
        assert!(short.loss(&d) < untrained.loss(&d));
        assert!(long.loss(&d) <= short.loss(&d));
    }

    #[test]
    fn identical_features_give_prior_posterior() {
        let mut d = Dataset::new(two_classes());
        for i in 0..40 {
            d.push(usize::from(i % 4 == 0), vec![1.0, 2.0]);
        }
        let model = lr_train(
            &d,
            &SgdConfig {
                epochs: 200,
                ..SgdConfig::default()
            },
        )
        .unwrap();
        let p = model.posterior(&[1.0, 2.0]).unwrap();
        assert!((p[1] - 0.25).abs() < 0.05, "{p:?}");
    }

    #[test]
    fn softmax_closed_forms() {
        let zero = LogisticModel::zeros(3, 2);
        let p = zero.posterior(&[4.0, 1.0]).unwrap();
        assert!(p.iter().all(|v| (v - 1.0 / 3.0).abs() < 1e-15));
        let m = LogisticModel {
            weights: vec![vec![0.5, -1.0], vec![0.5, -1.0]],
            bias: vec![3f64.ln(), 0.0],
        };
        let p = m.posterior(&[2.0, 7.0]).unwrap();
        assert!((p[0] - 0.25).abs() < 1e-15);
        assert!(matches!(m.posterior(&[1.0]), Err(Error::RejectedInput(_))));
    }

    #[test]
    fn scaling_parameters_keeps_argmax() {
        let m = LogisticModel {
            weights: vec![vec![0.3, -0.2], vec![-0.1, 0.4]],
            bias: vec![0.1, -0.3],
        };
        let scaled = LogisticModel {
            weights: m
                .weights
                .iter()
                .map(|w| w.iter().map(|v| v * 7.5).collect())
                .collect(),
            bias: m.bias.iter().map(|b| b * 7.5).collect(),
        };
        for x in [[1.0, 0.0], [0.0, 1.0], [3.0, 2.0], [0.0, 0.0]] {
            let a = m.posterior(&x).unwrap();
            let b = scaled.posterior(&x).unwrap();
            assert_eq!(argmax_first(&a), argmax_first(&b));
        }
    }

    #[test]
    fn poisson_fit_and_likelihood() {
        let mut d = Dataset::new(vec!["a".into()]);
        for v in [0.0, 2.0, 4.0] {
            d.push(0, vec![v, 0.0]);
        }
        let m = poisson_fit(&d, DEFAULT_SMOOTHING).unwrap();
        assert_eq!(m.rates[0], vec![2.0, DEFAULT_SMOOTHING]);

        let one = PoissonModel {
            rates: vec![vec![1.0]],
            smoothing: 1e-3,
        };
        assert!((one.log_likelihood(&[0.0], 0).unwrap() + 1.0).abs() < 1e-15);
        let two = PoissonModel {
            rates: vec![vec![2.0, 3.0]],
            smoothing: 1e-3,
        };
        assert!((two.log_likelihood(&[0.0, 0.0], 0).unwrap() + 5.0).abs() < 1e-15);
        assert!(matches!(
            two.log_likelihood(&[-1.0, 0.0], 0),
            Err(Error::RejectedInput(_))
        ));
        assert!(two.log_likelihood(&[0.5, 0.0], 0).is_err());
    }

    #[test]
    fn poisson_mle_beats_grid_perturbations() {
        let samples = [3.0, 0.0, 7.0, 2.0, 2.0, 5.0, 1.0];
        let mut d = Dataset::new(vec!["a".into()]);
        for s in samples {
            d.push(0, vec![s]);
        }
        let fitted = poisson_fit(&d, DEFAULT_SMOOTHING).unwrap().rates[0][0];
        let total = |lambda: f64| -> f64 {
            samples
                .iter()
                .map(|&k| {
                    // direct pmf: lambda^k e^-lambda / k!
                    let fact: f64 = (1..=k as u32).map(f64::from).product();
                    (lambda.powf(k) * (-lambda).exp() / fact).ln()
                })
                .sum()
        };
        for step in 1..=50 {
            let delta = step as f64 * 0.02;
            assert!(total(fitted) >= total(fitted + delta));
            assert!(total(fitted) >= total(fitted - delta));
        }
    }

    #[test]
    fn multinomial_fit_examples() {
        let mut d = Dataset::new(vec!["a".into()]);
        d.push(0, vec![1.0, 0.0]);
        d.push(0, vec![1.0, 2.0]);
        let raw = multinomial_fit(&d, 0.0).unwrap();
        assert_eq!(raw.probs[0], vec![0.5, 0.5]);

        let mut single = Dataset::new(vec!["a".into()]);
        single.push(0, vec![0.0, 4.0]);
        let m = multinomial_fit(&single, DEFAULT_SMOOTHING).unwrap();
        let eps = DEFAULT_SMOOTHING / (1.0 + 2.0 * DEFAULT_SMOOTHING);
        assert!((m.probs[0][0] - eps).abs() < 1e-15);
        assert!((m.probs[0][1] - (1.0 - eps)).abs() < 1e-15);

        let mut zero = Dataset::new(vec!["a".into()]);
        zero.push(0, vec![0.0, 0.0]);
        assert!(matches!(
            multinomial_fit(&zero, 1e-3),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn multinomial_closed_forms() {
        let m = MultinomialModel {
            probs: vec![vec![0.5, 0.5]],
            smoothing: 0.0,
        };
        assert_eq!(m.log_likelihood(&[0.0, 0.0], 0).unwrap(), 0.0);
        assert!((m.log_likelihood(&[1.0, 1.0], 0).unwrap() - 0.5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn multinomial_mle_beats_simplex_grid() {
        let mut d = Dataset::new(vec!["a".into()]);
        d.push(0, vec![3.0, 1.0, 0.0]);
        d.push(0, vec![2.0, 2.0, 4.0]);
        let fitted = multinomial_fit(&d, 0.0).unwrap().probs[0].clone();
        let sums = [5.0, 3.0, 4.0];
        let loglik = |theta: &[f64]| -> f64 {
            sums.iter()
                .zip(theta)
                .map(|(s, t)| if *s > 0.0 { s * t.ln() } else { 0.0 })
                .sum()
        };
        let best = loglik(&fitted);
        let steps = 40;
        for i in 0..=steps {
            for j in 0..=(steps - i) {
                let theta = [
                    i as f64 / steps as f64,
                    j as f64 / steps as f64,
                    (steps - i - j) as f64 / steps as f64,
                ];
                assert!(best >= loglik(&theta) - 1e-12);
            }
        }
    }

    // All count vectors of length k with total <= n.
    fn compositions(k: usize, n: usize) -> Vec<Vec<usize>> {
        if k == 0 {
            return vec![vec![]];
        }
        let mut out = Vec::new();
        for first in 0..=n {
            for mut rest in compositions(k - 1, n - first) {
                rest.insert(0, first);
                out.push(rest);
            }
        }
        out
    }

    fn factorial(n: usize) -> f64 {
        (1..=n).map(|v| v as f64).product()
    }

    #[test]
    fn likelihoods_match_direct_pmf() {
        for k in 1..=3 {
            let rates: Vec<f64> = (0..k).map(|i| 0.4 + 1.3 * i as f64).collect();
            let theta_raw: Vec<f64> = (0..k).map(|i| 1.0 + i as f64).collect();
            let total: f64 = theta_raw.iter().sum();
            let theta: Vec<f64> = theta_raw.iter().map(|t| t / total).collect();
            let pois = PoissonModel {
                rates: vec![rates.clone()],
                smoothing: 1e-3,
            };
            let multi = MultinomialModel {
                probs: vec![theta.clone()],
                smoothing: 0.0,
            };
            for x in compositions(k, 6) {
                let xf: Vec<f64> = x.iter().map(|&v| v as f64).collect();
                let pmf_p: f64 = x
                    .iter()
                    .zip(&rates)
                    .map(|(&n, &l)| l.powi(n as i32) * (-l).exp() / factorial(n))
                    .product();
                assert!((pois.log_likelihood(&xf, 0).unwrap() - pmf_p.ln()).abs() < 1e-9);
                let n: usize = x.iter().sum();
                let coef = factorial(n) / x.iter().map(|&v| factorial(v)).product::<f64>();
                let pmf_m: f64 = coef
                    * x.iter()
                        .zip(&theta)
                        .map(|(&c, &t)| t.powi(c as i32))
                        .product::<f64>();
                assert!((multi.log_likelihood(&xf, 0).unwrap() - pmf_m.ln()).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn classify_tie_breaks_and_priors() {
        let uniform = BehaviorModel {
            classes: two_classes(),
            priors: vec![0.5, 0.5],
            params: ModelParams::Logistic(LogisticModel::zeros(2, 2)),
        };
        assert_eq!(uniform.classify(&[1.0, 1.0]).unwrap(), 0);
        let skewed = BehaviorModel {
            classes: two_classes(),
            priors: vec![0.01, 0.99],
            params: ModelParams::Poisson(PoissonModel {
                rates: vec![vec![1.0], vec![1.0]],
                smoothing: 1e-3,
            }),
        };
        assert_eq!(skewed.classify(&[3.0]).unwrap(), 1);
        let unfitted = BehaviorModel {
            classes: vec![],
            priors: vec![],
            params: ModelParams::Multinomial(MultinomialModel {
                probs: vec![],
                smoothing: 1e-3,
            }),
        };
        assert!(matches!(unfitted.classify(&[1.0]), Err(Error::State(_))));
    }

    #[test]
    fn empty_class_rejected() {
        let mut d = Dataset::new(two_classes());
        d.push(0, vec![1.0]);
        for kind in ModelKind::ALL {
            assert!(matches!(
                BehaviorModel::fit(kind, &d, &TrainConfig::default()),
                Err(Error::InsufficientData(_))
            ));
        }
    }

    #[test]
    fn model_json_layout() {
        let model =
            BehaviorModel::fit(ModelKind::Poisson, &separable(), &TrainConfig::default()).unwrap();
        let v = serde_json::to_value(&model).unwrap();
        assert_eq!(v["type"], "poisson");
        assert!(v["params"]["rates"].is_array());
        let back: BehaviorModel = serde_json::from_value(v).unwrap();
        assert_eq!(back, model);
    }

    proptest! {
        #[test]
        fn softmax_is_normalized_and_shift_invariant(scores in prop::collection::vec(-50.0f64..50.0, 1..8), shift in -100.0f64..100.0) {
            let p = softmax(&scores);
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let shifted: Vec<f64> = scores.iter().map(|s| s + shift).collect();
            for (a, b) in p.iter().zip(softmax(&shifted)) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }

        #[test]
        fn multinomial_fit_is_scale_invariant(rows in prop::collection::vec(prop::collection::vec(0u32..20, 4), 1..6), k in 2u32..9) {
            prop_assume!(rows.iter().flatten().any(|&v| v > 0));
            let mut d = Dataset::new(vec!["a".into()]);
            let mut scaled = Dataset::new(vec!["a".into()]);
            for r in &rows {
                d.push(0, r.iter().map(|&v| v as f64).collect());
                scaled.push(0, r.iter().map(|&v| (v * k) as f64).collect());
            }
            let a = multinomial_fit(&d, DEFAULT_SMOOTHING).unwrap();
            let b = multinomial_fit(&scaled, DEFAULT_SMOOTHING).unwrap();
            prop_assert_eq!(&a.probs, &b.probs);
            prop_assert!((a.probs[0].iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn multinomial_permutation_invariance(x in prop::collection::vec(0u32..6, 4), theta in prop::collection::vec(0.05f64..1.0, 4), rot in 0usize..4) {
            let total: f64 = theta.iter().sum();
            let theta: Vec<f64> = theta.iter().map(|t| t / total).collect();
            let xf: Vec<f64> = x.iter().map(|&v| v as f64).collect();
            let m = MultinomialModel { probs: vec![theta.clone()], smoothing: 0.0 };
            let mut xr = xf.clone();
            let mut tr = theta.clone();
            xr.rotate_left(rot);
            tr.rotate_left(rot);
            let mr = MultinomialModel { probs: vec![tr], smoothing: 0.0 };
            prop_assert!((m.log_likelihood(&xf, 0).unwrap() - mr.log_likelihood(&xr, 0).unwrap()).abs() < 1e-9);
        }
    }
}
