use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use tmc_adapt::itml::{build_constraints, ConstraintConfig, ConstraintSet, MetricMatrix};
use tmc_adapt::FeatureMatrix;

pub fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> FeatureMatrix {
    let data: Vec<f64> = (0..rows * cols).map(|_| rng.sample(StandardNormal)).collect();
    FeatureMatrix::new(rows, cols, data).unwrap()
}

pub fn random_spd(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let b = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    &b * b.transpose() + DMatrix::identity(n, n) * 0.5
}

/// `tr(A A0^-1) - ln det(A A0^-1) - n` by explicit inversion.
pub fn divergence_oracle(a: &DMatrix<f64>, a0: &DMatrix<f64>) -> f64 {
    let m = a * a0.clone().try_inverse().unwrap();
    m.trace() - m.determinant().ln() - a.nrows() as f64
}

/// Labeled sample whose label depends on the first two coordinates only.
pub fn labeled(seed: u64, n: usize, q: usize) -> (FeatureMatrix, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = gaussian_matrix(&mut rng, n, q);
    let y = x
        .rows()
        .map(|r| 10.0 * r[0] - 4.0 * r[1] + 0.3 * rng.sample::<f64, _>(StandardNormal))
        .collect();
    (x, y)
}

pub fn diff(x: &FeatureMatrix, i: usize, j: usize) -> DVector<f64> {
    DVector::from_iterator(x.n_cols(), x.row(i).iter().zip(x.row(j)).map(|(a, b)| a - b))
}

pub fn random_instance(seed: u64) -> (FeatureMatrix, ConstraintSet) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(15..40);
    let q = rng.gen_range(2..5);
    let (x, y) = labeled(seed * 31 + 7, n, q);
    let config = ConstraintConfig {
        max_per_set: 20,
        ..ConstraintConfig::default()
    };
    let c = build_constraints(&x, &y, &MetricMatrix::identity(q), &config, seed).unwrap();
    (x, c)
}
