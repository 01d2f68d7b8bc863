//! Gradient boosting over regression trees with balanced source/target
//! instance weights. `alpha = 0` is plain gradient boosting on the source.

mod format;
mod tree;

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::matrix::FeatureMatrix;

pub use format::{read_model, write_model, FORMAT_HEADER};
pub use tree::{fit_tree, Node, RegressionTree, TreeConfig};

use tree::{check_inputs, fit_presorted, Presorted};

#[derive(Debug, Error, PartialEq)]
pub enum BoostingError {
    #[error("unknown loss '{0}'")]
    UnknownLoss(String),
    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("feature dimension mismatch: model has {expected}, input has {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("instance weights must be finite and >= 0")]
    NegativeWeight,
    #[error("all instance weights are zero")]
    ZeroWeights,
    #[error("non-finite value in input")]
    NonFinite,
    #[error("alpha must lie in [0, 1], got {0}")]
    InvalidAlpha(f64),
    #[error("alpha = 1 needs a nonempty pseudo-target set")]
    EmptyPseudoTarget,
    #[error("source set is empty")]
    EmptySource,
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error("model format: {0}")]
    Format(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Loss {
    /// L(y, F) = (y - F)^2 / 2
    #[default]
    SquaredError,
}

impl Loss {
    pub fn as_str(&self) -> &'static str {
        match self {
            Loss::SquaredError => "squared_error",
        }
    }

    pub fn value(&self, y: f64, f: f64) -> f64 {
        match self {
            Loss::SquaredError => 0.5 * (y - f) * (y - f),
        }
    }
}

impl fmt::Display for Loss {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Loss {
    type Err = BoostingError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "squared_error" | "squared" | "l2" => Ok(Loss::SquaredError),
            other => Err(BoostingError::UnknownLoss(other.to_string())),
        }
    }
}

/// Negative gradient of the loss with respect to the current outputs.
pub fn pseudo_residuals(loss: Loss, y: &[f64], f: &[f64]) -> Result<Vec<f64>, BoostingError> {
    if y.len() != f.len() {
        return Err(BoostingError::LengthMismatch {
            expected: y.len(),
            actual: f.len(),
        });
    }
    Ok(match loss {
        Loss::SquaredError => y.iter().zip(f).map(|(y, f)| y - f).collect(),
    })
}

/// Weighted line search for one stage under squared loss:
/// `sum w r h / sum w h^2` with `r = y - F_prev`, or 0 when `h` vanishes.
pub fn compute_gamma(f_prev: &[f64], h: &[f64], y: &[f64], w: &[f64]) -> Result<f64, BoostingError> {
    let n = y.len();
    for len in [f_prev.len(), h.len(), w.len()] {
        if len != n {
            return Err(BoostingError::LengthMismatch { expected: n, actual: len });
        }
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..n {
        num += w[i] * (y[i] - f_prev[i]) * h[i];
        den += w[i] * h[i] * h[i];
    }
    Ok(if den > 0.0 { num / den } else { 0.0 })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub n_stages: usize,
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    pub shrinkage: f64,
    pub alpha: f64,
    /// Recorded with the model; tree growth itself is deterministic.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            n_stages: 200,
            max_depth: 3,
            min_samples_leaf: 2,
            shrinkage: 0.1,
            alpha: 0.5,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), BoostingError> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(BoostingError::InvalidAlpha(self.alpha));
        }
        if !(self.shrinkage > 0.0 && self.shrinkage <= 1.0) {
            return Err(BoostingError::InvalidConfig(format!(
                "shrinkage must lie in (0, 1], got {}",
                self.shrinkage
            )));
        }
        if self.min_samples_leaf == 0 {
            return Err(BoostingError::InvalidConfig("min_samples_leaf must be >= 1".into()));
        }
        Ok(())
    }

    fn tree(&self) -> TreeConfig {
        TreeConfig {
            max_depth: self.max_depth,
            min_samples_leaf: self.min_samples_leaf,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stage {
    pub gamma: f64,
    pub tree: RegressionTree,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoostedModel {
    pub initial: f64,
    pub stages: Vec<Stage>,
    pub shrinkage: f64,
    pub alpha: f64,
    pub loss: Loss,
    pub n_features: usize,
    /// Weighted training loss after initialization and after each stage.
    pub loss_trace: Vec<f64>,
}

impl BoostedModel {
    pub fn n_stages(&self) -> usize {
        self.stages.len()
    }

    /// The model restricted to its first `m` stages.
    pub fn truncated(&self, m: usize) -> BoostedModel {
        let m = m.min(self.stages.len());
        BoostedModel {
            stages: self.stages[..m].to_vec(),
            loss_trace: self.loss_trace[..self.loss_trace.len().min(m + 1)].to_vec(),
            ..self.clone()
        }
    }

    pub fn predict_row(&self, row: &[f64]) -> f64 {
        let mut f = self.initial;
        for s in &self.stages {
            f += self.shrinkage * s.gamma * s.tree.predict_row(row);
        }
        f
    }

    /// Raw predictions, or predictions clamped at zero when `clamp` is set.
    pub fn predict(&self, x: &FeatureMatrix, clamp: bool) -> Result<Vec<f64>, BoostingError> {
        if x.n_cols() != self.n_features {
            return Err(BoostingError::DimensionMismatch {
                expected: self.n_features,
                actual: x.n_cols(),
            });
        }
        Ok(x.rows()
            .map(|r| {
                let v = self.predict_row(r);
                if clamp {
                    v.max(0.0)
                } else {
                    v
                }
            })
            .collect())
    }
}

pub fn predict(model: &BoostedModel, x: &FeatureMatrix, clamp: bool) -> Result<Vec<f64>, BoostingError> {
    model.predict(x, clamp)
}

/// Labeled rows passed to training.
#[derive(Debug, Clone, Copy)]
pub struct LabeledSet<'a> {
    pub features: &'a FeatureMatrix,
    pub labels: &'a [f64],
}

impl<'a> LabeledSet<'a> {
    pub fn new(features: &'a FeatureMatrix, labels: &'a [f64]) -> Result<Self, BoostingError> {
        if features.n_rows() != labels.len() {
            return Err(BoostingError::LengthMismatch {
                expected: features.n_rows(),
                actual: labels.len(),
            });
        }
        Ok(Self { features, labels })
    }
}

/// Boosting with weight `1 - alpha` on every source row and `alpha` on every
/// pseudo-target row. Rows with zero weight are dropped before training.
pub fn fit_gbbw(
    source: LabeledSet<'_>,
    pseudo_target: LabeledSet<'_>,
    config: &TrainConfig,
) -> Result<BoostedModel, BoostingError> {
    config.validate()?;
    if source.labels.is_empty() {
        return Err(BoostingError::EmptySource);
    }
    if config.alpha == 1.0 && pseudo_target.labels.is_empty() {
        return Err(BoostingError::EmptyPseudoTarget);
    }
    if !pseudo_target.labels.is_empty() && pseudo_target.features.n_cols() != source.features.n_cols() {
        return Err(BoostingError::DimensionMismatch {
            expected: source.features.n_cols(),
            actual: pseudo_target.features.n_cols(),
        });
    }
    let ws = 1.0 - config.alpha;
    let wt = config.alpha;
    let mut parts: Vec<(&FeatureMatrix, &[f64], f64)> = Vec::new();
    if ws > 0.0 {
        parts.push((source.features, source.labels, ws));
    }
    if wt > 0.0 && !pseudo_target.labels.is_empty() {
        parts.push((pseudo_target.features, pseudo_target.labels, wt));
    }
    let (x, y, w) = match parts.as_slice() {
        [(x, y, w)] => ((*x).clone(), y.to_vec(), vec![*w; y.len()]),
        [(xs, ys, a), (xt, yt, b)] => {
            let x = xs.vstack(xt).expect("widths checked");
            let mut y = ys.to_vec();
            y.extend_from_slice(yt);
            let mut w = vec![*a; ys.len()];
            w.extend(std::iter::repeat(*b).take(yt.len()));
            (x, y, w)
        }
        _ => unreachable!("alpha in [0, 1] keeps at least one set"),
    };
    boost(&x, &y, &w, config)
}

/// Standard gradient boosting on one labeled set with unit weights.
pub fn fit_gradient_boosting(data: LabeledSet<'_>, config: &TrainConfig) -> Result<BoostedModel, BoostingError> {
    config.validate()?;
    if data.labels.is_empty() {
        return Err(BoostingError::EmptySource);
    }
    let w = vec![1.0; data.labels.len()];
    let mut model = boost(data.features, data.labels, &w, config)?;
    model.alpha = 0.0;
    Ok(model)
}

fn boost(x: &FeatureMatrix, y: &[f64], w: &[f64], config: &TrainConfig) -> Result<BoostedModel, BoostingError> {
    check_inputs(x, y, w)?;
    if w.iter().any(|v| *v == 0.0) {
        let keep: Vec<usize> = (0..w.len()).filter(|&i| w[i] > 0.0).collect();
        let y: Vec<f64> = keep.iter().map(|&i| y[i]).collect();
        let w: Vec<f64> = keep.iter().map(|&i| w[i]).collect();
        return boost(&x.select_rows(&keep), &y, &w, config);
    }
    let loss = Loss::SquaredError;
    let mut wy = 0.0;
    let mut wsum = 0.0;
    for (yi, wi) in y.iter().zip(w) {
        wy += wi * yi;
        wsum += wi;
    }
    let initial = wy / wsum;
    let mut f = vec![initial; y.len()];
    let weighted_loss = |f: &[f64]| -> f64 { (0..y.len()).map(|i| w[i] * loss.value(y[i], f[i])).sum() };

    let presorted = Presorted::new(x);
    let tree_config = config.tree();
    let mut stages = Vec::with_capacity(config.n_stages);
    let mut loss_trace = vec![weighted_loss(&f)];
    for _ in 0..config.n_stages {
        let r = pseudo_residuals(loss, y, &f)?;
        let (tree, h) = fit_presorted(&presorted, &r, w, &tree_config);
        let gamma = compute_gamma(&f, &h, y, w)?;
        let step = config.shrinkage * gamma;
        for (fi, hi) in f.iter_mut().zip(&h) {
            *fi += step * hi;
        }
        loss_trace.push(weighted_loss(&f));
        stages.push(Stage { gamma, tree });
    }
    Ok(BoostedModel {
        initial,
        stages,
        shrinkage: config.shrinkage,
        alpha: config.alpha,
        loss,
        n_features: x.n_cols(),
        loss_trace,
    })
}
