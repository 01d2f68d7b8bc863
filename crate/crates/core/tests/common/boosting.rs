use rand::Rng;
use rand_chacha::ChaCha8Rng;
use tmc_adapt::boosting::TreeConfig;
use tmc_adapt::FeatureMatrix;

pub fn random_set(rng: &mut ChaCha8Rng, n: usize, p: usize) -> (FeatureMatrix, Vec<f64>) {
    let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..p).map(|_| rng.gen_range(0.0..10.0)).collect()).collect();
    let y = rows
        .iter()
        .map(|r| 3.0 * r[0] + if r[1] > 5.0 { 20.0 } else { 0.0 } + rng.gen_range(-2.0..2.0))
        .collect();
    (FeatureMatrix::from_rows(p, &rows).unwrap(), y)
}

// ---- straight-line oracle ----

pub enum OracleTree {
    Leaf(f64),
    Split(usize, f64, Box<OracleTree>, Box<OracleTree>),
}

impl OracleTree {
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            OracleTree::Leaf(v) => *v,
            OracleTree::Split(f, t, l, r) => {
                if x[*f] <= *t {
                    l.eval(x)
                } else {
                    r.eval(x)
                }
            }
        }
    }
}

pub fn weighted_sse(rows: &[usize], r: &[f64], w: &[f64]) -> f64 {
    let sw: f64 = rows.iter().map(|&i| w[i]).sum();
    let mean = rows.iter().map(|&i| w[i] * r[i]).sum::<f64>() / sw;
    rows.iter().map(|&i| w[i] * (r[i] - mean).powi(2)).sum()
}

/// Exhaustive recursive split search: every feature, every midpoint.
pub fn grow(x: &[Vec<f64>], r: &[f64], w: &[f64], rows: Vec<usize>, depth: usize, min_leaf: usize) -> OracleTree {
    let sw: f64 = rows.iter().map(|&i| w[i]).sum();
    let leaf = rows.iter().map(|&i| w[i] * r[i]).sum::<f64>() / sw;
    if depth == 0 {
        return OracleTree::Leaf(leaf);
    }
    let parent = weighted_sse(&rows, r, w);
    let mut best: Option<(f64, usize, f64)> = None;
    for f in 0..x[0].len() {
        let mut values: Vec<f64> = rows.iter().map(|&i| x[i][f]).collect();
        values.sort_by(|a, b| a.partial_cmp(b).unwrap());
        values.dedup();
        for pair in values.windows(2) {
            let t = (pair[0] + pair[1]) / 2.0;
            let (left, right): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&i| x[i][f] <= t);
            if left.len() < min_leaf || right.len() < min_leaf {
                continue;
            }
            let gain = parent - weighted_sse(&left, r, w) - weighted_sse(&right, r, w);
            if gain > 1e-12 * parent.max(1e-300) && best.map_or(true, |b| gain > b.0 * (1.0 + 1e-12)) {
                best = Some((gain, f, t));
            }
        }
    }
    match best {
        None => OracleTree::Leaf(leaf),
        Some((_, f, t)) => {
            let (left, right): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&i| x[i][f] <= t);
            OracleTree::Split(
                f,
                t,
                Box::new(grow(x, r, w, left, depth - 1, min_leaf)),
                Box::new(grow(x, r, w, right, depth - 1, min_leaf)),
            )
        }
    }
}

/// Balanced-weight boosting written out step by step. Returns predictions on
/// `eval` and the weighted training loss after each stage.
pub fn oracle_gbbw(
    source: (&[Vec<f64>], &[f64]),
    target: (&[Vec<f64>], &[f64]),
    alpha: f64,
    stages: usize,
    nu: f64,
    tree: TreeConfig,
    eval: &[Vec<f64>],
) -> (Vec<f64>, Vec<f64>) {
    let mut x: Vec<Vec<f64>> = source.0.to_vec();
    x.extend_from_slice(target.0);
    let mut y: Vec<f64> = source.1.to_vec();
    y.extend_from_slice(target.1);
    let mut w = vec![1.0 - alpha; source.1.len()];
    w.extend(vec![alpha; target.1.len()]);

    let f0 = ((1.0 - alpha) * source.1.iter().sum::<f64>() + alpha * target.1.iter().sum::<f64>())
        / ((1.0 - alpha) * source.1.len() as f64 + alpha * target.1.len() as f64);
    let mut f = vec![f0; y.len()];
    let mut out = vec![f0; eval.len()];
    let mut losses = vec![];
    for _ in 0..stages {
        let r: Vec<f64> = y.iter().zip(&f).map(|(a, b)| a - b).collect();
        let h_tree = grow(&x, &r, &w, (0..y.len()).collect(), tree.max_depth, tree.min_samples_leaf);
        let h: Vec<f64> = x.iter().map(|row| h_tree.eval(row)).collect();
        let num: f64 = (0..y.len()).map(|i| w[i] * r[i] * h[i]).sum();
        let den: f64 = (0..y.len()).map(|i| w[i] * h[i] * h[i]).sum();
        let gamma = if den > 0.0 { num / den } else { 0.0 };
        for i in 0..y.len() {
            f[i] += nu * gamma * h[i];
        }
        for (o, row) in out.iter_mut().zip(eval) {
            *o += nu * gamma * h_tree.eval(row);
        }
        losses.push((0..y.len()).map(|i| w[i] * 0.5 * (y[i] - f[i]).powi(2)).sum());
    }
    (out, losses)
}

pub fn rows_of(x: &FeatureMatrix) -> Vec<Vec<f64>> {
    x.rows().map(|r| r.to_vec()).collect()
}
