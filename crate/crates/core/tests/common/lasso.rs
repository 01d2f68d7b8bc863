use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use tmc_adapt::FeatureMatrix;

pub fn random_problem(seed: u64, n: usize, p: usize) -> (FeatureMatrix, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scales: Vec<f64> = (0..p).map(|_| rng.gen_range(0.2..20.0)).collect();
    let shifts: Vec<f64> = (0..p).map(|_| rng.gen_range(-5.0..5.0)).collect();
    let beta: Vec<f64> = (0..p).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let mut rows = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let row: Vec<f64> = (0..p)
            .map(|j| shifts[j] + scales[j] * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let signal: f64 = row.iter().zip(&beta).zip(&scales).map(|((x, b), s)| x * b / s).sum();
        y.push(1.5 + signal + 0.5 * rng.sample::<f64, _>(StandardNormal));
        rows.push(row);
    }
    (FeatureMatrix::from_rows(p, &rows).unwrap(), y)
}

/// Standardized design and centred response, computed without the library.
pub fn standardize(x: &FeatureMatrix, y: &[f64]) -> (Vec<Vec<f64>>, Vec<f64>, Vec<f64>) {
    let n = x.n_rows() as f64;
    let p = x.n_cols();
    let mut z = vec![vec![0.0; x.n_rows()]; p];
    let mut sds = vec![0.0; p];
    for j in 0..p {
        let col = x.column(j);
        let m = col.iter().sum::<f64>() / n;
        let sd = (col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n).sqrt();
        sds[j] = sd;
        for (i, v) in col.iter().enumerate() {
            z[j][i] = (v - m) / sd;
        }
    }
    let ybar = y.iter().sum::<f64>() / n;
    (z, y.iter().map(|v| v - ybar).collect(), sds)
}

pub fn objective(z: &[Vec<f64>], yc: &[f64], b: &[f64], lambda: f64) -> f64 {
    let n = yc.len();
    let rss: f64 = (0..n)
        .map(|i| {
            let fit: f64 = (0..b.len()).map(|j| z[j][i] * b[j]).sum();
            (yc[i] - fit).powi(2)
        })
        .sum();
    rss / (2.0 * n as f64) + lambda * b.iter().map(|v| v.abs()).sum::<f64>()
}

/// Accelerated proximal gradient on the standardized problem.
pub fn fista(z: &[Vec<f64>], yc: &[f64], lambda: f64) -> Vec<f64> {
    let n = yc.len();
    let p = z.len();
    let gram = DMatrix::from_fn(p, p, |a, b| (0..n).map(|i| z[a][i] * z[b][i]).sum::<f64>() / n as f64);
    let corr = DVector::from_fn(p, |a, _| (0..n).map(|i| z[a][i] * yc[i]).sum::<f64>() / n as f64);
    let step = 1.0 / gram.clone().symmetric_eigen().eigenvalues.max();
    let mut b = DVector::zeros(p);
    let mut v = b.clone();
    let mut t: f64 = 1.0;
    for _ in 0..200_000 {
        let grad = &gram * &v - &corr;
        let next = (&v - grad * step).map(|u| u.signum() * (u.abs() - step * lambda).max(0.0));
        let t_next = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
        v = &next + (&next - &b) * ((t - 1.0) / t_next);
        let moved = (&next - &b).amax();
        b = next;
        t = t_next;
        if moved < 1e-15 {
            break;
        }
    }
    b.iter().copied().collect()
}

/// Standardized-scale coefficients recovered from the original-scale fit.
pub fn standardized(coefficients: &[f64], sds: &[f64]) -> Vec<f64> {
    coefficients.iter().zip(sds).map(|(c, s)| c * s).collect()
}

pub fn partial_gradients(z: &[Vec<f64>], yc: &[f64], b: &[f64]) -> Vec<f64> {
    let n = yc.len();
    let resid: Vec<f64> = (0..n)
        .map(|i| yc[i] - (0..b.len()).map(|j| z[j][i] * b[j]).sum::<f64>())
        .collect();
    z.iter()
        .map(|col| -col.iter().zip(&resid).map(|(a, r)| a * r).sum::<f64>() / n as f64)
        .collect()
}

/// Largest violation of the subgradient optimality conditions.
pub fn kkt_violation(z: &[Vec<f64>], yc: &[f64], b: &[f64], lambda: f64) -> f64 {
    partial_gradients(z, yc, b)
        .iter()
        .zip(b)
        .map(|(g, bj)| {
            if *bj != 0.0 {
                (g + lambda * bj.signum()).abs()
            } else {
                (g.abs() - lambda).max(0.0)
            }
        })
        .fold(0.0, f64::max)
}

pub fn ols(x: &FeatureMatrix, y: &[f64]) -> Vec<f64> {
    let n = x.n_rows();
    let p = x.n_cols();
    let design = DMatrix::from_fn(n, p + 1, |i, j| if j == 0 { 1.0 } else { x.get(i, j - 1) });
    let qr = design.qr();
    let rhs = qr.q().transpose() * DVector::from_column_slice(y);
    let sol = qr.r().solve_upper_triangular(&rhs).unwrap();
    sol.iter().copied().collect()
}
