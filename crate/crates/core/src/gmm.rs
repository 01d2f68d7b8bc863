//! Full-covariance Gaussian mixtures fitted by EM, and mixture sampling used
//! to augment a matched labeled set in joint (features, label) space.

use std::f64::consts::PI;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use thiserror::Error;

use crate::matrix::FeatureMatrix;
use crate::seed;

#[derive(Debug, Error, PartialEq)]
pub enum GmmError {
    #[error("need at least as many points as components: N={points}, K={components}")]
    TooFewPoints { points: usize, components: usize },
    #[error("component count must be >= 1")]
    NoComponents,
    #[error("data must have at least one column")]
    ZeroDimension,
    #[error("covariance is singular or not positive-definite")]
    SingularCovariance,
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("component {component} lost all responsibility mass after reinitialization")]
    ComponentCollapsed { component: usize },
    #[error("invalid EM configuration: {0}")]
    InvalidConfig(String),
    #[error("non-finite value in input")]
    NonFinite,
    #[error("augmentation input is empty")]
    EmptyInput,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmConfig {
    /// Stop when the relative log-likelihood improvement falls below this.
    pub tol: f64,
    pub max_iter: usize,
    /// Covariance ridge as a multiple of the data's mean per-dimension variance.
    pub ridge: f64,
    pub n_init: usize,
    pub seed: u64,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            max_iter: 200,
            ridge: 1e-6,
            n_init: 5,
            seed: 0,
        }
    }
}

impl EmConfig {
    fn validate(&self) -> Result<(), GmmError> {
        if !(self.tol > 0.0) {
            return Err(GmmError::InvalidConfig(format!("tol must be > 0, got {}", self.tol)));
        }
        if !(self.ridge >= 0.0) {
            return Err(GmmError::InvalidConfig(format!("ridge must be >= 0, got {}", self.ridge)));
        }
        if self.n_init == 0 {
            return Err(GmmError::InvalidConfig("n_init must be >= 1".into()));
        }
        Ok(())
    }
}

/// Mixture weights, means and covariances with cached Cholesky factors.
#[derive(Debug, Clone)]
pub struct GaussianMixture {
    weights: Vec<f64>,
    means: Vec<DVector<f64>>,
    covariances: Vec<DMatrix<f64>>,
    factors: Vec<Cholesky<f64, Dyn>>,
}

impl PartialEq for GaussianMixture {
    fn eq(&self, other: &Self) -> bool {
        self.weights == other.weights && self.means == other.means && self.covariances == other.covariances
    }
}

impl GaussianMixture {
    pub fn new(
        weights: Vec<f64>,
        means: Vec<DVector<f64>>,
        covariances: Vec<DMatrix<f64>>,
    ) -> Result<Self, GmmError> {
        let k = weights.len();
        if k == 0 {
            return Err(GmmError::NoComponents);
        }
        if means.len() != k || covariances.len() != k {
            return Err(GmmError::DimensionMismatch {
                expected: k,
                actual: means.len().min(covariances.len()),
            });
        }
        let d = means[0].len();
        if d == 0 {
            return Err(GmmError::ZeroDimension);
        }
        let factors = covariances
            .iter()
            .map(|c| {
                if c.nrows() != d || c.ncols() != d {
                    return Err(GmmError::DimensionMismatch {
                        expected: d,
                        actual: c.nrows(),
                    });
                }
                c.clone().cholesky().ok_or(GmmError::SingularCovariance)
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            weights,
            means,
            covariances,
            factors,
        })
    }

    pub fn n_components(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> &[DVector<f64>] {
        &self.means
    }

    pub fn covariances(&self) -> &[DMatrix<f64>] {
        &self.covariances
    }

    fn component_log_pdf(&self, k: usize, x: &DVector<f64>) -> f64 {
        log_density(&self.factors[k], &self.means[k], x)
    }

    /// Log of the mixture density at `x`.
    pub fn log_pdf(&self, x: &[f64]) -> Result<f64, GmmError> {
        if x.len() != self.dim() {
            return Err(GmmError::DimensionMismatch {
                expected: self.dim(),
                actual: x.len(),
            });
        }
        let x = DVector::from_column_slice(x);
        let terms: Vec<f64> = (0..self.n_components())
            .map(|k| self.weights[k].ln() + self.component_log_pdf(k, &x))
            .collect();
        Ok(log_sum_exp(&terms))
    }

    /// Total log-likelihood of the rows of `x`.
    pub fn log_likelihood(&self, x: &FeatureMatrix) -> Result<f64, GmmError> {
        x.rows().map(|r| self.log_pdf(r)).sum()
    }
}

fn log_density(factor: &Cholesky<f64, Dyn>, mean: &DVector<f64>, x: &DVector<f64>) -> f64 {
    let d = mean.len() as f64;
    let diff = x - mean;
    let l = factor.l_dirty();
    let z = l
        .solve_lower_triangular(&diff)
        .expect("Cholesky factor has a positive diagonal");
    let log_det: f64 = 2.0 * (0..mean.len()).map(|i| l[(i, i)].ln()).sum::<f64>();
    -0.5 * (d * (2.0 * PI).ln() + log_det + z.norm_squared())
}

fn log_sum_exp(terms: &[f64]) -> f64 {
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln()
}

/// Multivariate normal density, evaluated through a Cholesky log-density.
pub fn gaussian_pdf(mean: &[f64], covariance: &DMatrix<f64>, x: &[f64]) -> Result<f64, GmmError> {
    if x.len() != mean.len() {
        return Err(GmmError::DimensionMismatch {
            expected: mean.len(),
            actual: x.len(),
        });
    }
    if covariance.nrows() != mean.len() || covariance.ncols() != mean.len() {
        return Err(GmmError::DimensionMismatch {
            expected: mean.len(),
            actual: covariance.nrows(),
        });
    }
    let factor = covariance.clone().cholesky().ok_or(GmmError::SingularCovariance)?;
    Ok(log_density(&factor, &DVector::from_column_slice(mean), &DVector::from_column_slice(x)).exp())
}

/// Posterior component memberships, one row per point.
#[derive(Debug, Clone, PartialEq)]
pub struct Responsibilities {
    pub values: FeatureMatrix,
}

/// E-step: responsibilities and total log-likelihood under `model`.
pub fn responsibilities(model: &GaussianMixture, points: &[DVector<f64>]) -> (Responsibilities, f64) {
    let k = model.n_components();
    let mut values = FeatureMatrix::zeros(points.len(), k);
    let mut total = 0.0;
    let log_weights: Vec<f64> = model.weights.iter().map(|w| w.ln()).collect();
    let mut terms = vec![0.0; k];
    for (i, x) in points.iter().enumerate() {
        for (c, t) in terms.iter_mut().enumerate() {
            *t = log_weights[c] + model.component_log_pdf(c, x);
        }
        let lse = log_sum_exp(&terms);
        total += lse;
        let row = values.row_mut(i);
        for (r, t) in row.iter_mut().zip(&terms) {
            *r = (t - lse).exp();
        }
        let s: f64 = row.iter().sum();
        row.iter_mut().for_each(|r| *r /= s);
    }
    (Responsibilities { values }, total)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GmmFit {
    pub model: GaussianMixture,
    pub log_likelihood: f64,
    /// Log-likelihood after each E-step of the selected restart.
    pub trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub restart: usize,
    /// Absolute ridge added to every covariance diagonal.
    pub ridge: f64,
}

impl GmmFit {
    pub fn trace_csv(&self) -> String {
        let mut out = String::from("iteration,log_likelihood\n");
        for (i, ll) in self.trace.iter().enumerate() {
            out.push_str(&format!("{i},{ll}\n"));
        }
        out
    }
}

fn to_points(x: &FeatureMatrix) -> Vec<DVector<f64>> {
    x.rows().map(DVector::from_column_slice).collect()
}

fn sample_covariance(points: &[DVector<f64>], weights: Option<&[f64]>, mean: &DVector<f64>) -> DMatrix<f64> {
    let d = mean.len();
    let mut cov = DMatrix::zeros(d, d);
    let mut total = 0.0;
    for (i, x) in points.iter().enumerate() {
        let w = weights.map_or(1.0, |w| w[i]);
        if w == 0.0 {
            continue;
        }
        let diff = x - mean;
        cov.ger(w, &diff, &diff, 1.0);
        total += w;
    }
    cov / total
}

fn mean_of(points: &[DVector<f64>]) -> DVector<f64> {
    let mut m = DVector::zeros(points[0].len());
    for p in points {
        m += p;
    }
    m / points.len() as f64
}

/// Absolute ridge: `ridge` times the mean diagonal variance (or 1 if the data are constant).
fn absolute_ridge(points: &[DVector<f64>], ridge: f64) -> f64 {
    let mean = mean_of(points);
    let cov = sample_covariance(points, None, &mean);
    let scale = cov.diagonal().mean();
    ridge * if scale > 0.0 { scale } else { 1.0 }
}

fn kmeans_pp_means(points: &[DVector<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<DVector<f64>> {
    let mut means = vec![points[rng.gen_range(0..points.len())].clone()];
    let mut closest: Vec<f64> = points.iter().map(|p| (p - &means[0]).norm_squared()).collect();
    while means.len() < k {
        let total: f64 = closest.iter().sum();
        let next = if total > 0.0 {
            let mut u = rng.gen::<f64>() * total;
            let mut pick = points.len() - 1;
            for (i, d) in closest.iter().enumerate() {
                if u < *d {
                    pick = i;
                    break;
                }
                u -= d;
            }
            pick
        } else {
            rng.gen_range(0..points.len())
        };
        let m = points[next].clone();
        for (c, p) in closest.iter_mut().zip(points) {
            *c = c.min((p - &m).norm_squared());
        }
        means.push(m);
    }
    means
}

/// `log det(cov) + tr(cov^-1 scatter)`, the covariance part of the negated EM surrogate.
fn covariance_cost(cov: &DMatrix<f64>, scatter: &DMatrix<f64>) -> f64 {
    match cov.clone().cholesky() {
        Some(chol) => {
            let logdet = 2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
            logdet + chol.solve(scatter).trace()
        }
        None => f64::INFINITY,
    }
}

fn m_step(
    points: &[DVector<f64>],
    resp: &Responsibilities,
    ridge: f64,
    previous: &[DMatrix<f64>],
) -> Result<(Vec<f64>, Vec<DVector<f64>>, Vec<DMatrix<f64>>), usize> {
    let n = points.len();
    let k = resp.values.n_cols();
    let d = points[0].len();
    let mut weights = Vec::with_capacity(k);
    let mut means = Vec::with_capacity(k);
    let mut covs = Vec::with_capacity(k);
    for c in 0..k {
        let r = resp.values.column(c);
        let mass: f64 = r.iter().sum();
        if !(mass > 1e-12) {
            return Err(c);
        }
        let mut mean = DVector::zeros(d);
        for (x, w) in points.iter().zip(&r) {
            mean.axpy(*w, x, 1.0);
        }
        mean /= mass;
        let scatter = sample_covariance(points, Some(&r), &mean);
        let mut cov = scatter.clone();
        for i in 0..d {
            cov[(i, i)] += ridge;
        }
        // The ridge makes this update inexact, so keep the previous covariance
        // whenever it scores better; the log-likelihood then cannot decrease.
        if covariance_cost(&previous[c], &scatter) < covariance_cost(&cov, &scatter) {
            cov = previous[c].clone();
        }
        weights.push(mass / n as f64);
        means.push(mean);
        covs.push(cov);
    }
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    Ok((weights, means, covs))
}

fn run_em(
    points: &[DVector<f64>],
    k: usize,
    config: &EmConfig,
    ridge: f64,
    restart: usize,
) -> Result<GmmFit, GmmError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed::derive_indexed(config.seed, "gmm-restart", restart as u64));
    let pooled_mean = mean_of(points);
    let mut pooled = sample_covariance(points, None, &pooled_mean);
    for i in 0..pooled.nrows() {
        pooled[(i, i)] += ridge;
    }
    let means = kmeans_pp_means(points, k, &mut rng);
    let mut model = GaussianMixture::new(vec![1.0 / k as f64; k], means, vec![pooled.clone(); k])?;
    let (mut resp, mut ll) = responsibilities(&model, points);
    let mut trace = vec![ll];
    let mut reinitialized = vec![false; k];
    let mut converged = false;
    let mut iterations = 0;

    while iterations < config.max_iter {
        iterations += 1;
        let (weights, means, covs) = match m_step(points, &resp, ridge, &model.covariances) {
            Ok(step) => step,
            Err(c) => {
                if reinitialized[c] {
                    return Err(GmmError::ComponentCollapsed { component: c });
                }
                reinitialized[c] = true;
                // restart the empty component at the worst-explained point
                let worst = points
                    .iter()
                    .enumerate()
                    .map(|(i, p)| (i, model.log_pdf(p.as_slice()).unwrap_or(f64::NEG_INFINITY)))
                    .fold((0, f64::INFINITY), |a, b| if b.1 < a.1 { b } else { a })
                    .0;
                let mut weights = model.weights.clone();
                let mut means = model.means.clone();
                let mut covs = model.covariances.clone();
                weights[c] = 1.0 / k as f64;
                let total: f64 = weights.iter().sum();
                weights.iter_mut().for_each(|w| *w /= total);
                means[c] = points[worst].clone();
                covs[c] = pooled.clone();
                model = GaussianMixture::new(weights, means, covs)?;
                let (r, l) = responsibilities(&model, points);
                resp = r;
                ll = l;
                trace.push(ll);
                continue;
            }
        };
        model = GaussianMixture::new(weights, means, covs)?;
        let (r, new_ll) = responsibilities(&model, points);
        resp = r;
        trace.push(new_ll);
        let improvement = new_ll - ll;
        ll = new_ll;
        if improvement.abs() <= config.tol * ll.abs().max(f64::MIN_POSITIVE) {
            converged = true;
            break;
        }
    }
    Ok(GmmFit {
        model,
        log_likelihood: ll,
        trace,
        iterations,
        converged,
        restart,
        ridge,
    })
}

/// Fits a `k`-component full-covariance mixture, keeping the restart with
/// the highest final log-likelihood (lowest restart index on ties).
pub fn fit_gmm(x: &FeatureMatrix, k: usize, config: &EmConfig) -> Result<GmmFit, GmmError> {
    config.validate()?;
    if k == 0 {
        return Err(GmmError::NoComponents);
    }
    if x.n_cols() == 0 {
        return Err(GmmError::ZeroDimension);
    }
    if x.n_rows() < k {
        return Err(GmmError::TooFewPoints {
            points: x.n_rows(),
            components: k,
        });
    }
    if !x.all_finite() {
        return Err(GmmError::NonFinite);
    }
    let points = to_points(x);
    let ridge = absolute_ridge(&points, config.ridge);
    let fits: Vec<Result<GmmFit, GmmError>> = (0..config.n_init)
        .into_par_iter()
        .map(|r| run_em(&points, k, config, ridge, r))
        .collect();
    let mut best: Option<GmmFit> = None;
    let mut first_err = None;
    for fit in fits {
        match fit {
            Ok(f) => {
                if best.as_ref().map_or(true, |b| f.log_likelihood > b.log_likelihood) {
                    best = Some(f);
                }
            }
            Err(e) => {
                first_err.get_or_insert(e);
            }
        }
    }
    best.ok_or_else(|| first_err.expect("at least one restart"))
}

/// Draws `m` points: a component by its weight, then a normal draw from it.
pub fn sample_gmm(model: &GaussianMixture, m: usize, seed: u64) -> FeatureMatrix {
    let d = model.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = FeatureMatrix::zeros(m, d);
    for i in 0..m {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let mut comp = model.n_components() - 1;
        for (c, w) in model.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                comp = c;
                break;
            }
        }
        let z = DVector::from_iterator(d, (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)));
        let draw = &model.means[comp] + model.factors[comp].l_dirty().lower_triangle() * z;
        out.row_mut(i).copy_from_slice(draw.as_slice());
    }
    out
}

/// Matched set extended with mixture samples drawn in joint (features, label) space.
#[derive(Debug, Clone, PartialEq)]
pub struct Augmented {
    pub features: FeatureMatrix,
    pub labels: Vec<f64>,
    /// Number of leading rows that are original (not synthetic).
    pub n_original: usize,
    pub fit: Option<GmmFit>,
}

/// Fits a `k`-component mixture to `[x | y]` and appends `m` synthetic rows.
/// Synthetic labels are clamped at zero.
pub fn augment(
    matched_x: &FeatureMatrix,
    matched_y: &[f64],
    k: usize,
    m: usize,
    config: &EmConfig,
) -> Result<Augmented, GmmError> {
    if matched_x.is_empty() {
        return Err(GmmError::EmptyInput);
    }
    if matched_y.len() != matched_x.n_rows() {
        return Err(GmmError::DimensionMismatch {
            expected: matched_x.n_rows(),
            actual: matched_y.len(),
        });
    }
    if m == 0 {
        return Ok(Augmented {
            features: matched_x.clone(),
            labels: matched_y.to_vec(),
            n_original: matched_x.n_rows(),
            fit: None,
        });
    }
    let q = matched_x.n_cols();
    let mut joint = Vec::with_capacity(matched_x.n_rows() * (q + 1));
    for (row, y) in matched_x.rows().zip(matched_y) {
        joint.extend_from_slice(row);
        joint.push(*y);
    }
    let joint = FeatureMatrix::new(matched_x.n_rows(), q + 1, joint).expect("joint width");
    let fit = fit_gmm(&joint, k, config)?;
    let synthetic = sample_gmm(&fit.model, m, seed::derive(config.seed, "gmm-sample"));

    let synthetic_x = synthetic.select_columns(&(0..q).collect::<Vec<_>>());
    let features = matched_x.vstack(&synthetic_x).expect("same width");
    let mut labels = matched_y.to_vec();
    labels.extend(synthetic.rows().map(|r| r[q].max(0.0)));
    Ok(Augmented {
        features,
        labels,
        n_original: matched_x.n_rows(),
        fit: Some(fit),
    })
}
