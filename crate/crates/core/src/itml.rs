//! Information-theoretic metric learning: a Mahalanobis matrix learned by
//! cyclic Bregman projections under the LogDet divergence with slack, and
//! nearest-neighbour matching of target instances to labeled source instances
//! under the learned metric.

use std::collections::HashSet;

use log::warn;
use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::matrix::FeatureMatrix;
use crate::stats::percentile;

#[derive(Debug, Error, PartialEq)]
pub enum ItmlError {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("matrix is not symmetric positive-definite: {0}")]
    NotPositiveDefinite(String),
    #[error("need at least 2 labeled instances, got {0}")]
    TooFewInstances(usize),
    #[error("invalid constraint set: {0}")]
    InvalidConstraints(String),
    #[error("slack diverged at pass {pass}, constraint {constraint}: {state}")]
    SlackDiverged {
        pass: usize,
        constraint: usize,
        state: String,
    },
    #[error("source set is empty")]
    EmptySource,
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
}

/// Symmetric positive-definite matrix defining `d_A(x, y) = (x-y)^T A (x-y)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricMatrix {
    a: DMatrix<f64>,
}

impl MetricMatrix {
    pub fn new(a: DMatrix<f64>) -> Result<Self, ItmlError> {
        if !a.is_square() {
            return Err(ItmlError::NotPositiveDefinite(format!("{}x{} is not square", a.nrows(), a.ncols())));
        }
        if a.iter().any(|v| !v.is_finite()) {
            return Err(ItmlError::NonFinite("metric matrix"));
        }
        let asym = (&a - a.transpose()).amax();
        if asym > 1e-10 * a.amax().max(1.0) {
            return Err(ItmlError::NotPositiveDefinite(format!("asymmetry {asym:e}")));
        }
        if a.clone().cholesky().is_none() {
            return Err(ItmlError::NotPositiveDefinite("Cholesky factorization failed".into()));
        }
        Ok(Self { a })
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            a: DMatrix::identity(dim, dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn scaled(&self, c: f64) -> Result<Self, ItmlError> {
        Self::new(&self.a * c)
    }

    fn distance_unchecked(&self, xi: &[f64], xj: &[f64]) -> f64 {
        let v = DVector::from_iterator(xi.len(), xi.iter().zip(xj).map(|(a, b)| a - b));
        (&self.a * &v).dot(&v).max(0.0)
    }
}

/// Squared Mahalanobis distance `(x_i - x_j)^T A (x_i - x_j)`.
pub fn mahalanobis_distance(a: &MetricMatrix, xi: &[f64], xj: &[f64]) -> Result<f64, ItmlError> {
    for x in [xi, xj] {
        if x.len() != a.dim() {
            return Err(ItmlError::DimensionMismatch {
                expected: a.dim(),
                actual: x.len(),
            });
        }
    }
    Ok(a.distance_unchecked(xi, xj))
}

/// LogDet divergence `tr(A A0^-1) - log det(A A0^-1) - n`.
pub fn logdet_divergence(a: &MetricMatrix, a0: &MetricMatrix) -> Result<f64, ItmlError> {
    logdet_divergence_raw(a.matrix(), a0.matrix())
}

fn logdet_divergence_raw(a: &DMatrix<f64>, a0: &DMatrix<f64>) -> Result<f64, ItmlError> {
    if a.shape() != a0.shape() {
        return Err(ItmlError::DimensionMismatch {
            expected: a0.nrows(),
            actual: a.nrows(),
        });
    }
    let n = a.nrows();
    let l0 = a0
        .clone()
        .cholesky()
        .ok_or_else(|| ItmlError::NotPositiveDefinite("prior metric".into()))?
        .l();
    // M = L0^-1 A L0^-T has the same trace and determinant as A A0^-1
    let left = l0
        .solve_lower_triangular(a)
        .ok_or_else(|| ItmlError::NotPositiveDefinite("prior metric".into()))?;
    let m = l0
        .solve_lower_triangular(&left.transpose())
        .ok_or_else(|| ItmlError::NotPositiveDefinite("prior metric".into()))?;
    let m = (&m + m.transpose()) * 0.5;
    let lm = m
        .clone()
        .cholesky()
        .ok_or_else(|| ItmlError::NotPositiveDefinite("metric".into()))?
        .l();
    let logdet: f64 = 2.0 * lm.diagonal().iter().map(|d| d.ln()).sum::<f64>();
    Ok((m.trace() - logdet - n as f64).max(0.0))
}

/// Scalar LogDet divergence of diagonal slack vectors.
pub fn slack_divergence(xi: &[f64], xi0: &[f64]) -> f64 {
    xi.iter()
        .zip(xi0)
        .map(|(x, x0)| {
            let r = x / x0;
            r - r.ln() - 1.0
        })
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairKind {
    Similar,
    Dissimilar,
}

/// Similar and dissimilar index pairs with their distance thresholds.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintSet {
    pub similar: Vec<(usize, usize)>,
    pub dissimilar: Vec<(usize, usize)>,
    pub upper: f64,
    pub lower: f64,
}

impl ConstraintSet {
    pub fn empty(upper: f64, lower: f64) -> Self {
        Self {
            similar: Vec::new(),
            dissimilar: Vec::new(),
            upper,
            lower,
        }
    }

    pub fn len(&self) -> usize {
        self.similar.len() + self.dissimilar.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Constraints in projection order: all similar pairs, then all dissimilar.
    pub fn iter(&self) -> impl Iterator<Item = ((usize, usize), PairKind)> + '_ {
        self.similar
            .iter()
            .map(|&p| (p, PairKind::Similar))
            .chain(self.dissimilar.iter().map(|&p| (p, PairKind::Dissimilar)))
    }

    pub fn validate(&self, n_points: usize) -> Result<(), ItmlError> {
        if !(self.upper.is_finite() && self.lower.is_finite() && self.upper > 0.0 && self.upper < self.lower) {
            return Err(ItmlError::InvalidConstraints(format!(
                "need 0 < u < l, got u={} l={}",
                self.upper, self.lower
            )));
        }
        let norm = |(i, j): (usize, usize)| (i.min(j), i.max(j));
        let similar: HashSet<_> = self.similar.iter().copied().map(norm).collect();
        for ((i, j), _) in self.iter() {
            if i >= n_points || j >= n_points {
                return Err(ItmlError::InvalidConstraints(format!(
                    "pair ({i}, {j}) out of range for {n_points} points"
                )));
            }
        }
        if let Some(p) = self.dissimilar.iter().copied().map(norm).find(|p| similar.contains(p)) {
            return Err(ItmlError::InvalidConstraints(format!("pair {p:?} is both similar and dissimilar")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstraintConfig {
    /// Number of candidate pairs drawn; all pairs are used when fewer exist.
    pub candidate_pairs: usize,
    /// Label-difference percentile `s`: pairs at or below the `s`-th are
    /// similar, pairs at or above the `(100-s)`-th are dissimilar.
    pub label_percentile: f64,
    pub upper_distance_percentile: f64,
    pub lower_distance_percentile: f64,
    pub max_per_set: usize,
}

impl Default for ConstraintConfig {
    fn default() -> Self {
        Self {
            candidate_pairs: 4000,
            label_percentile: 10.0,
            upper_distance_percentile: 5.0,
            lower_distance_percentile: 95.0,
            max_per_set: 200,
        }
    }
}

fn candidate_pairs(n: usize, budget: usize, rng: &mut ChaCha8Rng) -> Vec<(usize, usize)> {
    let total = n * (n - 1) / 2;
    let mut pairs: Vec<(usize, usize)> = if total <= budget {
        (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect()
    } else {
        let mut seen = HashSet::with_capacity(budget);
        let mut out = Vec::with_capacity(budget);
        while out.len() < budget {
            let i = rng.gen_range(0..n);
            let j = rng.gen_range(0..n);
            if i == j {
                continue;
            }
            let p = (i.min(j), i.max(j));
            if seen.insert(p) {
                out.push(p);
            }
        }
        out
    };
    pairs.shuffle(rng);
    pairs
}

/// Builds similarity constraints from label differences and distance
/// thresholds from distances under `a0`.
pub fn build_constraints(
    x: &FeatureMatrix,
    y: &[f64],
    a0: &MetricMatrix,
    config: &ConstraintConfig,
    seed: u64,
) -> Result<ConstraintSet, ItmlError> {
    let n = x.n_rows();
    if n < 2 || y.len() < 2 {
        return Err(ItmlError::TooFewInstances(n.min(y.len())));
    }
    if y.len() != n {
        return Err(ItmlError::DimensionMismatch {
            expected: n,
            actual: y.len(),
        });
    }
    if x.n_cols() != a0.dim() {
        return Err(ItmlError::DimensionMismatch {
            expected: a0.dim(),
            actual: x.n_cols(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pairs = candidate_pairs(n, config.candidate_pairs.max(1), &mut rng);

    let label_diffs: Vec<f64> = pairs.iter().map(|&(i, j)| (y[i] - y[j]).abs()).collect();
    let low = percentile(&label_diffs, config.label_percentile).expect("nonempty");
    let high = percentile(&label_diffs, 100.0 - config.label_percentile).expect("nonempty");

    let mut similar = Vec::new();
    let mut dissimilar = Vec::new();
    for (&pair, &diff) in pairs.iter().zip(&label_diffs) {
        let is_similar = if low < high { diff <= low } else { diff == 0.0 };
        let is_dissimilar = if low < high { diff >= high } else { diff > 0.0 };
        if is_similar {
            if similar.len() < config.max_per_set {
                similar.push(pair);
            }
        } else if is_dissimilar && dissimilar.len() < config.max_per_set {
            dissimilar.push(pair);
        }
    }
    if dissimilar.is_empty() {
        warn!("all sampled label differences are equal; no dissimilar constraints");
    }

    let distances: Vec<f64> = pairs
        .iter()
        .map(|&(i, j)| a0.distance_unchecked(x.row(i), x.row(j)))
        .collect();
    let mut upper = percentile(&distances, config.upper_distance_percentile).expect("nonempty");
    let mut lower = percentile(&distances, config.lower_distance_percentile).expect("nonempty");
    if !(upper < lower) {
        // no spread in sampled distances: open a band around the common value
        let d = upper.max(lower);
        if d <= 0.0 {
            return Err(ItmlError::InvalidConstraints("all sampled pairs coincide under the prior metric".into()));
        }
        upper = 0.5 * d;
        lower = 2.0 * d;
    }
    if upper <= 0.0 {
        upper = distances.iter().copied().filter(|d| *d > 0.0).fold(f64::INFINITY, f64::min).min(lower * 0.5);
    }
    Ok(ConstraintSet {
        similar,
        dissimilar,
        upper,
        lower,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ItmlConfig {
    pub gamma_slack: f64,
    pub max_passes: usize,
    /// Convergence threshold on the largest dual change within a pass.
    pub tol: f64,
    /// Verify symmetric positive-definiteness after every projection.
    pub check_every_update: bool,
}

impl Default for ItmlConfig {
    fn default() -> Self {
        Self {
            gamma_slack: 1.0,
            max_passes: 100,
            tol: 1e-3,
            check_every_update: false,
        }
    }
}

/// Per-pass diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct PassRecord {
    pub pass: usize,
    /// Constraints violating the original `u`/`l` thresholds after the pass.
    pub violations: usize,
    pub divergence: f64,
    /// `D_ld(A, A0) + gamma * D_ld(diag(xi), diag(xi0))`.
    pub objective: f64,
    pub max_dual_change: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ItmlFit {
    pub metric: MetricMatrix,
    pub slacks: Vec<f64>,
    pub duals: Vec<f64>,
    pub passes: usize,
    pub converged: bool,
    pub skipped_constraints: usize,
    pub trace: Vec<PassRecord>,
}

impl ItmlFit {
    pub fn trace_csv(&self) -> String {
        let mut out = String::from("pass,violations,divergence,objective,max_dual_change\n");
        for r in &self.trace {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.pass, r.violations, r.divergence, r.objective, r.max_dual_change
            ));
        }
        out
    }
}

/// One Bregman projection of the slack-relaxed LogDet problem.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub alpha: f64,
    pub beta: f64,
    pub slack: f64,
    pub dual: f64,
}

/// Projection step for a constraint with current distance `p`, slack `xi`
/// and dual `lambda`; `delta` is +1 for similar and -1 for dissimilar pairs.
pub fn projection_step(p: f64, delta: f64, xi: f64, lambda: f64, gamma: f64) -> Projection {
    let alpha = lambda.min(delta / 2.0 * (1.0 / p - gamma / xi));
    let beta = delta * alpha / (1.0 - delta * alpha * p);
    let slack = gamma * xi / (gamma + delta * alpha * xi);
    Projection {
        alpha,
        beta,
        slack,
        dual: lambda - alpha,
    }
}

fn min_eigenvalue(a: &DMatrix<f64>) -> f64 {
    a.clone().symmetric_eigen().eigenvalues.iter().copied().fold(f64::INFINITY, f64::min)
}

/// Learns a metric from `constraints` over the rows of `x`, starting at `a0`.
pub fn fit_itml(
    x: &FeatureMatrix,
    constraints: &ConstraintSet,
    a0: &MetricMatrix,
    config: &ItmlConfig,
) -> Result<ItmlFit, ItmlError> {
    if x.n_cols() != a0.dim() {
        return Err(ItmlError::DimensionMismatch {
            expected: a0.dim(),
            actual: x.n_cols(),
        });
    }
    if !x.all_finite() {
        return Err(ItmlError::NonFinite("X"));
    }
    if constraints.is_empty() {
        return Ok(ItmlFit {
            metric: a0.clone(),
            slacks: Vec::new(),
            duals: Vec::new(),
            passes: 0,
            converged: true,
            skipped_constraints: 0,
            trace: Vec::new(),
        });
    }
    constraints.validate(x.n_rows())?;
    let gamma = config.gamma_slack;
    if !(gamma.is_finite() && gamma > 0.0) {
        return Err(ItmlError::InvalidConstraints(format!("gamma_slack must be > 0, got {gamma}")));
    }

    let list: Vec<((usize, usize), PairKind)> = constraints.iter().collect();
    let diffs: Vec<DVector<f64>> = list
        .iter()
        .map(|&((i, j), _)| DVector::from_iterator(x.n_cols(), x.row(i).iter().zip(x.row(j)).map(|(a, b)| a - b)))
        .collect();
    let xi0: Vec<f64> = list
        .iter()
        .map(|(_, kind)| match kind {
            PairKind::Similar => constraints.upper,
            PairKind::Dissimilar => constraints.lower,
        })
        .collect();
    let mut xi = xi0.clone();
    let mut duals = vec![0.0; list.len()];
    let mut a = a0.matrix().clone();
    let mut trace = Vec::new();
    let mut converged = false;
    let mut skipped = HashSet::new();

    for pass in 1..=config.max_passes {
        let mut max_change: f64 = 0.0;
        for (c, ((_, kind), v)) in list.iter().zip(&diffs).enumerate() {
            let av = &a * v;
            let p = av.dot(v);
            if p <= 0.0 {
                if skipped.insert(c) {
                    warn!("constraint {c} joins identical points; skipped");
                }
                continue;
            }
            let delta = match kind {
                PairKind::Similar => 1.0,
                PairKind::Dissimilar => -1.0,
            };
            let step = projection_step(p, delta, xi[c], duals[c], gamma);
            if !(step.slack.is_finite() && step.slack > 0.0) {
                return Err(ItmlError::SlackDiverged {
                    pass,
                    constraint: c,
                    state: format!(
                        "p={p:e} xi={:e} lambda={:e} alpha={:e} new_xi={:e}",
                        xi[c], duals[c], step.alpha, step.slack
                    ),
                });
            }
            xi[c] = step.slack;
            duals[c] = step.dual;
            max_change = max_change.max(step.alpha.abs());
            if step.beta != 0.0 {
                a.ger(step.beta, &av, &av, 1.0);
                a = (&a + a.transpose()) * 0.5;
            }
            if config.check_every_update {
                let floor = min_eigenvalue(&a);
                if floor <= -1e-9 {
                    return Err(ItmlError::NotPositiveDefinite(format!(
                        "eigenvalue {floor:e} after projection on constraint {c} in pass {pass}"
                    )));
                }
            }
        }
        let divergence = logdet_divergence_raw(&a, a0.matrix())?;
        let violations = list
            .iter()
            .zip(&diffs)
            .filter(|((_, kind), v)| {
                let d = (&a * *v).dot(v);
                match kind {
                    PairKind::Similar => d > constraints.upper,
                    PairKind::Dissimilar => d < constraints.lower,
                }
            })
            .count();
        trace.push(PassRecord {
            pass,
            violations,
            divergence,
            objective: divergence + gamma * slack_divergence(&xi, &xi0),
            max_dual_change: max_change,
        });
        if max_change < config.tol {
            converged = true;
            break;
        }
    }

    let passes = trace.len();
    Ok(ItmlFit {
        metric: MetricMatrix::new(a)?,
        slacks: xi,
        duals,
        passes,
        converged,
        skipped_constraints: skipped.len(),
        trace,
    })
}

/// Source instances matched to target instances, one row per target row.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchedSet {
    pub features: FeatureMatrix,
    pub labels: Vec<f64>,
    pub source_indices: Vec<usize>,
    pub distances: Vec<f64>,
}

/// For every target row, the source row minimizing `d_A` (lowest index on ties).
pub fn match_source_to_target(
    a: &MetricMatrix,
    target_x: &FeatureMatrix,
    source_x: &FeatureMatrix,
    source_y: &[f64],
) -> Result<MatchedSet, ItmlError> {
    if source_x.is_empty() {
        return Err(ItmlError::EmptySource);
    }
    if source_y.len() != source_x.n_rows() {
        return Err(ItmlError::DimensionMismatch {
            expected: source_x.n_rows(),
            actual: source_y.len(),
        });
    }
    for m in [target_x, source_x] {
        if m.n_cols() != a.dim() {
            return Err(ItmlError::DimensionMismatch {
                expected: a.dim(),
                actual: m.n_cols(),
            });
        }
    }
    // d_A(x, y) = |L^T (x - y)|^2 with A = L L^T
    let chol = a
        .matrix()
        .clone()
        .cholesky()
        .ok_or_else(|| ItmlError::NotPositiveDefinite("metric".into()))?;
    let lt = chol.l().transpose();
    let project = |m: &FeatureMatrix| -> Vec<DVector<f64>> {
        m.rows()
            .map(|r| &lt * DVector::from_column_slice(r))
            .collect()
    };
    let src = project(source_x);
    let tgt = project(target_x);
    let best: Vec<(usize, f64)> = tgt
        .par_iter()
        .map(|t| {
            let mut best = (0, f64::INFINITY);
            for (k, s) in src.iter().enumerate() {
                let d = (t - s).norm_squared();
                if d < best.1 {
                    best = (k, d);
                }
            }
            best
        })
        .collect();
    let source_indices: Vec<usize> = best.iter().map(|b| b.0).collect();
    Ok(MatchedSet {
        features: source_x.select_rows(&source_indices),
        labels: source_indices.iter().map(|&k| source_y[k]).collect(),
        distances: best.iter().map(|b| b.1).collect(),
        source_indices,
    })
}
