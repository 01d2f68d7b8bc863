//! L1-penalized least squares by cyclic coordinate descent, with k-fold
//! cross-validated penalty selection and a per-movement coefficient report.
//!
//! Predictors are standardized to zero mean and unit (population) variance and
//! the response is centred before fitting. The minimized objective, in the
//! standardized coordinates `b`, is
//!
//! ```text
//! (1 / 2n) * ||y - mean(y) - Z b||^2 + lambda * ||b||_1
//! ```
//!
//! which has the same minimizers as the unscaled residual-sum-of-squares form
//! with penalty `2 n lambda`. Coefficients are reported back on the original
//! predictor scale, with the intercept left unpenalized.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::dataset::{FeatureSchema, Movement};
use crate::matrix::FeatureMatrix;
use crate::stats::Standardizer;

#[derive(Debug, Error, PartialEq)]
pub enum LassoError {
    #[error("need at least 2 instances, got {0}")]
    TooFewRows(usize),
    #[error("response has {actual} entries but X has {expected} rows")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("lambda must be finite and >= 0, got {0}")]
    InvalidLambda(f64),
    #[error("cross-validation needs at least 2 folds and as many rows, got {folds} folds for {rows} rows")]
    InvalidFolds { folds: usize, rows: usize },
}

/// How the penalty is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LambdaMode {
    Fixed(f64),
    /// K-fold CV over a log grid from `lambda_max` down to `lambda_max * min_ratio`.
    CrossValidated { folds: usize, grid_size: usize, min_ratio: f64 },
}

impl Default for LambdaMode {
    fn default() -> Self {
        LambdaMode::CrossValidated {
            folds: 5,
            grid_size: 50,
            min_ratio: 1e-3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LassoConfig {
    pub lambda: LambdaMode,
    pub tol: f64,
    pub max_sweeps: usize,
}

impl Default for LassoConfig {
    fn default() -> Self {
        Self {
            lambda: LambdaMode::default(),
            tol: 1e-7,
            max_sweeps: 10_000,
        }
    }
}

/// Column centring and scaling applied before penalization.
#[derive(Debug, Clone, PartialEq)]
pub struct StandardizationParams {
    pub predictors: Standardizer,
    pub response_mean: f64,
}

impl StandardizationParams {
    /// Columns with zero variance; they are never penalized or selected.
    pub fn constant_columns(&self) -> Vec<usize> {
        (0..self.predictors.stds.len())
            .filter(|&j| self.predictors.is_constant(j))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LassoModel {
    pub intercept: f64,
    /// Original-scale coefficients, one per input column.
    pub coefficients: Vec<f64>,
    /// Coefficients on the standardized predictors.
    pub standardized_coefficients: Vec<f64>,
    pub lambda: f64,
    pub selected_indices: Vec<usize>,
    pub objective_value: f64,
    pub standardization: StandardizationParams,
    pub converged: bool,
    pub sweeps: usize,
    /// Objective after each sweep.
    pub objective_trace: Vec<f64>,
}

impl LassoModel {
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        self.intercept + self.coefficients.iter().zip(row).map(|(b, x)| b * x).sum::<f64>()
    }

    pub fn predict(&self, x: &FeatureMatrix) -> Vec<f64> {
        x.rows().map(|r| self.predict_row(r)).collect()
    }
}

/// Gram-form least-squares problem over the non-constant standardized columns.
struct GramProblem {
    /// Indices (into the full column list) of the active columns.
    active: Vec<usize>,
    /// `Z^T Z / n` over active columns, row-major.
    gram: Vec<f64>,
    /// `Z^T y_c / n` over active columns.
    corr: Vec<f64>,
    /// `y_c^T y_c / n`.
    yy: f64,
}

impl GramProblem {
    fn new(z: &FeatureMatrix, yc: &[f64], params: &StandardizationParams) -> Self {
        let n = z.n_rows() as f64;
        let active: Vec<usize> = (0..z.n_cols()).filter(|&j| !params.predictors.is_constant(j)).collect();
        let q = active.len();
        let mut gram = vec![0.0; q * q];
        let mut corr = vec![0.0; q];
        let mut buf = vec![0.0; q];
        for (row, &y) in z.rows().zip(yc) {
            for (b, &j) in buf.iter_mut().zip(&active) {
                *b = row[j];
            }
            for a in 0..q {
                corr[a] += buf[a] * y;
                let za = buf[a];
                for b in a..q {
                    gram[a * q + b] += za * buf[b];
                }
            }
        }
        for a in 0..q {
            for b in a..q {
                gram[a * q + b] /= n;
                gram[b * q + a] = gram[a * q + b];
            }
            corr[a] /= n;
        }
        let yy = yc.iter().map(|v| v * v).sum::<f64>() / n;
        Self { active, gram, corr, yy }
    }

    fn lambda_max(&self) -> f64 {
        self.corr.iter().fold(0.0, |m, c| m.max(c.abs()))
    }

    fn objective(&self, b: &[f64], lambda: f64) -> f64 {
        let q = b.len();
        let mut quad = 0.0;
        for i in 0..q {
            if b[i] == 0.0 {
                continue;
            }
            let row = &self.gram[i * q..(i + 1) * q];
            quad += b[i] * row.iter().zip(b).map(|(g, v)| g * v).sum::<f64>();
        }
        let lin: f64 = self.corr.iter().zip(b).map(|(c, v)| c * v).sum();
        0.5 * self.yy - lin + 0.5 * quad + lambda * b.iter().map(|v| v.abs()).sum::<f64>()
    }

    /// Cyclic coordinate descent from `b` (warm start). Returns
    /// `(converged, sweeps, per-sweep objective)`; the trace is only kept
    /// when `record` is set.
    fn solve(&self, b: &mut [f64], lambda: f64, tol: f64, max_sweeps: usize, record: bool) -> (bool, usize, Vec<f64>) {
        let q = b.len();
        // partial residual correlations z_j^T r / n
        let mut grad: Vec<f64> = (0..q)
            .map(|j| {
                let row = &self.gram[j * q..(j + 1) * q];
                self.corr[j] - row.iter().zip(b.iter()).map(|(g, v)| g * v).sum::<f64>()
            })
            .collect();
        let mut trace = Vec::new();
        for sweep in 1..=max_sweeps {
            let mut max_change: f64 = 0.0;
            for j in 0..q {
                let gjj = self.gram[j * q + j];
                let rho = grad[j] + gjj * b[j];
                let new = soft_threshold(rho, lambda) / gjj;
                let delta = new - b[j];
                if delta != 0.0 {
                    b[j] = new;
                    let col = &self.gram[j * q..(j + 1) * q];
                    for (g, c) in grad.iter_mut().zip(col) {
                        *g -= delta * c;
                    }
                    max_change = max_change.max(delta.abs());
                }
            }
            if record {
                trace.push(self.objective(b, lambda));
            }
            if max_change < tol {
                return (true, sweep, trace);
            }
        }
        (false, max_sweeps, trace)
    }
}

pub fn soft_threshold(x: f64, threshold: f64) -> f64 {
    if x > threshold {
        x - threshold
    } else if x < -threshold {
        x + threshold
    } else {
        0.0
    }
}

fn validate(x: &FeatureMatrix, y: &[f64]) -> Result<(), LassoError> {
    if x.n_rows() < 2 {
        return Err(LassoError::TooFewRows(x.n_rows()));
    }
    if y.len() != x.n_rows() {
        return Err(LassoError::LengthMismatch {
            expected: x.n_rows(),
            actual: y.len(),
        });
    }
    if !x.all_finite() {
        return Err(LassoError::NonFinite("X"));
    }
    if !y.iter().all(|v| v.is_finite()) {
        return Err(LassoError::NonFinite("y"));
    }
    Ok(())
}

fn standardize(x: &FeatureMatrix, y: &[f64]) -> (StandardizationParams, FeatureMatrix, Vec<f64>) {
    let predictors = Standardizer::fit(x);
    let z = predictors.transform(x);
    let response_mean = y.iter().sum::<f64>() / y.len() as f64;
    let yc = y.iter().map(|v| v - response_mean).collect();
    (
        StandardizationParams {
            predictors,
            response_mean,
        },
        z,
        yc,
    )
}

fn assemble(
    problem: &GramProblem,
    params: StandardizationParams,
    z: &FeatureMatrix,
    yc: &[f64],
    b_active: &[f64],
    lambda: f64,
    solve: (bool, usize, Vec<f64>),
) -> LassoModel {
    let p = params.predictors.stds.len();
    let mut standardized = vec![0.0; p];
    for (&j, &v) in problem.active.iter().zip(b_active) {
        standardized[j] = v;
    }
    let coefficients: Vec<f64> = standardized
        .iter()
        .zip(&params.predictors.stds)
        .map(|(&b, &sd)| if sd == 0.0 { 0.0 } else { b / sd })
        .collect();
    let intercept = params.response_mean
        - coefficients
            .iter()
            .zip(&params.predictors.means)
            .map(|(b, m)| b * m)
            .sum::<f64>();
    let selected_indices = (0..p).filter(|&j| coefficients[j] != 0.0).collect();
    let objective_value = standardized_objective(z, yc, &standardized, lambda);
    let (converged, sweeps, objective_trace) = solve;
    LassoModel {
        intercept,
        coefficients,
        standardized_coefficients: standardized,
        lambda,
        selected_indices,
        objective_value,
        standardization: params,
        converged,
        sweeps,
        objective_trace,
    }
}

/// `(1/2n)||y_c - Z b||^2 + lambda ||b||_1`, evaluated from explicit residuals.
pub fn standardized_objective(z: &FeatureMatrix, yc: &[f64], b: &[f64], lambda: f64) -> f64 {
    let n = z.n_rows() as f64;
    let rss: f64 = z
        .rows()
        .zip(yc)
        .map(|(row, y)| {
            let fit: f64 = row.iter().zip(b).map(|(x, c)| x * c).sum();
            (y - fit) * (y - fit)
        })
        .sum();
    rss / (2.0 * n) + lambda * b.iter().map(|v| v.abs()).sum::<f64>()
}

/// Fits the Lasso at a fixed penalty. A run that exhausts `max_sweeps` is
/// returned with `converged == false`.
pub fn fit_lasso(
    x: &FeatureMatrix,
    y: &[f64],
    lambda: f64,
    tol: f64,
    max_sweeps: usize,
) -> Result<LassoModel, LassoError> {
    validate(x, y)?;
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(LassoError::InvalidLambda(lambda));
    }
    let (params, z, yc) = standardize(x, y);
    let problem = GramProblem::new(&z, &yc, &params);
    let mut b = vec![0.0; problem.active.len()];
    let solve = problem.solve(&mut b, lambda, tol, max_sweeps, true);
    Ok(assemble(&problem, params, &z, &yc, &b, lambda, solve))
}

/// Smallest penalty at which the all-zero solution is optimal.
pub fn lambda_max(x: &FeatureMatrix, y: &[f64]) -> Result<f64, LassoError> {
    validate(x, y)?;
    let (params, z, yc) = standardize(x, y);
    Ok(GramProblem::new(&z, &yc, &params).lambda_max())
}

/// Log-spaced grid from `max` down to `max * min_ratio`, descending.
pub fn lambda_grid(max: f64, grid_size: usize, min_ratio: f64) -> Vec<f64> {
    if grid_size <= 1 || max <= 0.0 {
        return vec![max.max(0.0)];
    }
    let (hi, lo) = (max.ln(), (max * min_ratio).ln());
    (0..grid_size)
        .map(|k| (hi + (lo - hi) * k as f64 / (grid_size - 1) as f64).exp())
        .collect()
}

/// Result of penalty selection by cross-validation.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossValidation {
    pub grid: Vec<f64>,
    pub mean_errors: Vec<f64>,
    pub best_lambda: f64,
}

/// K-fold cross-validation of the penalty, choosing the grid value with the
/// smallest mean validation squared error (ties go to the larger penalty).
pub fn cross_validate_lambda(
    x: &FeatureMatrix,
    y: &[f64],
    folds: usize,
    grid_size: usize,
    min_ratio: f64,
    tol: f64,
    max_sweeps: usize,
    seed: u64,
) -> Result<CrossValidation, LassoError> {
    validate(x, y)?;
    let n = x.n_rows();
    if folds < 2 || folds > n {
        return Err(LassoError::InvalidFolds { folds, rows: n });
    }
    let grid = lambda_grid(lambda_max(x, y)?, grid_size, min_ratio);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let mut sum_errors = vec![0.0; grid.len()];
    for fold in 0..folds {
        let (valid, train): (Vec<usize>, Vec<usize>) = (0..n).partition(|&k| k % folds == fold);
        let valid: Vec<usize> = valid.into_iter().map(|k| order[k]).collect();
        let train: Vec<usize> = train.into_iter().map(|k| order[k]).collect();
        let x_train = x.select_rows(&train);
        let y_train: Vec<f64> = train.iter().map(|&i| y[i]).collect();
        let x_valid = x.select_rows(&valid);
        let y_valid: Vec<f64> = valid.iter().map(|&i| y[i]).collect();

        let (params, z, yc) = standardize(&x_train, &y_train);
        let problem = GramProblem::new(&z, &yc, &params);
        let mut b = vec![0.0; problem.active.len()];
        for (g, &lambda) in grid.iter().enumerate() {
            problem.solve(&mut b, lambda, tol, max_sweeps, false);
            let mut coef = vec![0.0; x.n_cols()];
            for (&j, &v) in problem.active.iter().zip(&b) {
                coef[j] = v / params.predictors.stds[j];
            }
            let intercept = params.response_mean
                - coef
                    .iter()
                    .zip(&params.predictors.means)
                    .map(|(c, m)| c * m)
                    .sum::<f64>();
            let mse = x_valid
                .rows()
                .zip(&y_valid)
                .map(|(row, yv)| {
                    let pred = intercept + row.iter().zip(&coef).map(|(a, c)| a * c).sum::<f64>();
                    (yv - pred) * (yv - pred)
                })
                .sum::<f64>()
                / y_valid.len() as f64;
            sum_errors[g] += mse;
        }
    }
    let mean_errors: Vec<f64> = sum_errors.iter().map(|s| s / folds as f64).collect();
    let best = mean_errors
        .iter()
        .enumerate()
        .fold(0, |best, (g, e)| if *e < mean_errors[best] { g } else { best });
    Ok(CrossValidation {
        best_lambda: grid[best],
        grid,
        mean_errors,
    })
}

/// Fits with the penalty chosen by `config.lambda`.
pub fn fit_lasso_with(
    x: &FeatureMatrix,
    y: &[f64],
    config: &LassoConfig,
    seed: u64,
) -> Result<LassoModel, LassoError> {
    let lambda = match config.lambda {
        LambdaMode::Fixed(l) => l,
        LambdaMode::CrossValidated {
            folds,
            grid_size,
            min_ratio,
        } => {
            let folds = folds.min(x.n_rows());
            cross_validate_lambda(x, y, folds, grid_size, min_ratio, config.tol, config.max_sweeps, seed)?.best_lambda
        }
    };
    fit_lasso(x, y, lambda, config.tol, config.max_sweeps)
}

/// Indices of the nonzero coefficients, ascending.
pub fn select_features(model: &LassoModel) -> Vec<usize> {
    model.selected_indices.clone()
}

/// Schema-ordered coefficient table with one column per fitted movement.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientReport {
    pub movements: Vec<Movement>,
    /// `(variable, description, coefficient per movement)`.
    pub rows: Vec<(String, String, Vec<f64>)>,
}

impl CoefficientReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("variable,description");
        for m in &self.movements {
            out.push(',');
            out.push_str(m.as_str());
        }
        out.push('\n');
        for (name, description, values) in &self.rows {
            out.push_str(name);
            out.push(',');
            out.push_str(description);
            for v in values {
                out.push(',');
                out.push_str(&v.to_string());
            }
            out.push('\n');
        }
        out
    }
}

/// Builds the coefficient table. Models must span the full schema.
pub fn coefficient_report(models: &[(Movement, &LassoModel)]) -> CoefficientReport {
    let schema = FeatureSchema::standard();
    let mut sorted: Vec<(Movement, &LassoModel)> = models.to_vec();
    sorted.sort_by_key(|(m, _)| *m);
    let rows = schema
        .columns()
        .iter()
        .enumerate()
        .map(|(j, col)| {
            (
                col.name.to_string(),
                col.description.to_string(),
                sorted.iter().map(|(_, m)| m.coefficients[j]).collect(),
            )
        })
        .collect();
    CoefficientReport {
        movements: sorted.iter().map(|(m, _)| *m).collect(),
        rows,
    }
}
