use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use tmc_adapt::gmm::GaussianMixture;
use tmc_adapt::FeatureMatrix;

/// Density from the explicit inverse and determinant.
pub fn density(mean: &DVector<f64>, cov: &DMatrix<f64>, x: &[f64]) -> f64 {
    let d = mean.len();
    let diff = DVector::from_column_slice(x) - mean;
    let quad = (diff.transpose() * cov.clone().try_inverse().unwrap() * &diff)[(0, 0)];
    (-0.5 * quad).exp() / ((2.0 * std::f64::consts::PI).powi(d as i32) * cov.determinant()).sqrt()
}

pub fn log_likelihood(model: &GaussianMixture, x: &FeatureMatrix) -> f64 {
    x.rows()
        .map(|r| {
            (0..model.n_components())
                .map(|k| model.weights()[k] * density(&model.means()[k], &model.covariances()[k], r))
                .sum::<f64>()
                .ln()
        })
        .sum()
}

pub fn two_clusters(seed: u64, n: usize, share: f64) -> FeatureMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows: Vec<[f64; 1]> = (0..n)
        .map(|_| {
            let centre = if rng.gen::<f64>() < share { -10.0 } else { 10.0 };
            [centre + rng.sample::<f64, _>(StandardNormal)]
        })
        .collect();
    FeatureMatrix::from_rows(1, &rows).unwrap()
}

pub fn blobs(seed: u64, n: usize, d: usize, k: usize) -> FeatureMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centres: Vec<Vec<f64>> = (0..k).map(|_| (0..d).map(|_| rng.gen_range(-4.0..4.0)).collect()).collect();
    let data: Vec<f64> = (0..n)
        .flat_map(|_| {
            let c = &centres[rng.gen_range(0..k)];
            c.iter().map(|m| m + rng.sample::<f64, _>(StandardNormal)).collect::<Vec<_>>()
        })
        .collect();
    FeatureMatrix::new(n, d, data).unwrap()
}
