//! Weighted least-squares regression trees grown level by level over
//! presorted feature columns.

use crate::matrix::FeatureMatrix;

use super::BoostingError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TreeConfig {
    pub max_depth: usize,
    pub min_samples_leaf: usize,
}

impl Default for TreeConfig {
    fn default() -> Self {
        Self {
            max_depth: 3,
            min_samples_leaf: 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Node {
    /// Rows with `x[feature] <= threshold` go left.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf { value: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegressionTree {
    nodes: Vec<Node>,
    n_features: usize,
}

impl RegressionTree {
    pub fn from_nodes(nodes: Vec<Node>, n_features: usize) -> Result<Self, BoostingError> {
        if nodes.is_empty() {
            return Err(BoostingError::Format("tree has no nodes".into()));
        }
        for (i, node) in nodes.iter().enumerate() {
            match *node {
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    if feature >= n_features || !threshold.is_finite() {
                        return Err(BoostingError::Format(format!("node {i}: bad split")));
                    }
                    // children strictly after parents rules out cycles
                    if left <= i || right <= i || left >= nodes.len() || right >= nodes.len() {
                        return Err(BoostingError::Format(format!("node {i}: bad child index")));
                    }
                }
                Node::Leaf { value } => {
                    if !value.is_finite() {
                        return Err(BoostingError::Format(format!("node {i}: non-finite leaf")));
                    }
                }
            }
        }
        Ok(Self { nodes, n_features })
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf { .. })).count()
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], i: usize) -> usize {
            match nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, left).max(walk(nodes, right)),
            }
        }
        walk(&self.nodes, 0)
    }

    /// Index of the leaf reached by `row`.
    pub fn leaf_index(&self, row: &[f64]) -> usize {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf { .. } => return i,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if row[feature] <= threshold { left } else { right },
            }
        }
    }

    pub fn predict_row(&self, row: &[f64]) -> f64 {
        match self.nodes[self.leaf_index(row)] {
            Node::Leaf { value } => value,
            Node::Split { .. } => unreachable!(),
        }
    }

    pub fn predict(&self, x: &FeatureMatrix) -> Vec<f64> {
        x.rows().map(|r| self.predict_row(r)).collect()
    }
}

/// Column-major copy of a training matrix with per-feature row orderings.
/// Built once and reused by every stage of a boosted model.
#[derive(Debug, Clone)]
pub(crate) struct Presorted {
    columns: Vec<Vec<f64>>,
    order: Vec<Vec<u32>>,
    /// `sorted[f][k] == columns[f][order[f][k]]`
    sorted: Vec<Vec<f64>>,
    n_rows: usize,
}

impl Presorted {
    pub(crate) fn new(x: &FeatureMatrix) -> Self {
        let columns: Vec<Vec<f64>> = (0..x.n_cols()).map(|j| x.column(j)).collect();
        let order: Vec<Vec<u32>> = columns
            .iter()
            .map(|col| {
                let mut idx: Vec<u32> = (0..x.n_rows() as u32).collect();
                idx.sort_by(|&a, &b| col[a as usize].total_cmp(&col[b as usize]).then(a.cmp(&b)));
                idx
            })
            .collect();
        let sorted = order
            .iter()
            .zip(&columns)
            .map(|(idx, col)| idx.iter().map(|&i| col[i as usize]).collect())
            .collect();
        Self {
            columns,
            order,
            sorted,
            n_rows: x.n_rows(),
        }
    }
}

#[derive(Clone, Copy, Default)]
struct Stats {
    count: usize,
    w: f64,
    wr: f64,
}

#[derive(Clone, Copy)]
struct Candidate {
    feature: usize,
    threshold: f64,
}

/// Running state of one open node during a scan over a sorted feature.
#[derive(Clone, Copy)]
struct Scan {
    left: Stats,
    last: f64,
    total: Stats,
    parent: f64,
    best_gain: f64,
    best_feature: usize,
    best_threshold: f64,
}

#[derive(Clone, Copy)]
struct RowState {
    /// Position of the row's node among the open nodes, or `u32::MAX`.
    slot: u32,
    w: f64,
    wr: f64,
}

/// Fits one tree to residuals `r` under instance weights `w`.
pub fn fit_tree(
    x: &FeatureMatrix,
    r: &[f64],
    w: &[f64],
    config: &TreeConfig,
) -> Result<RegressionTree, BoostingError> {
    check_inputs(x, r, w)?;
    let keep: Vec<usize> = (0..w.len()).filter(|&i| w[i] > 0.0).collect();
    if keep.is_empty() {
        return Err(BoostingError::ZeroWeights);
    }
    let xs = x.select_rows(&keep);
    let rs: Vec<f64> = keep.iter().map(|&i| r[i]).collect();
    let ws: Vec<f64> = keep.iter().map(|&i| w[i]).collect();
    Ok(fit_presorted(&Presorted::new(&xs), &rs, &ws, config).0)
}

pub(crate) fn check_inputs(x: &FeatureMatrix, r: &[f64], w: &[f64]) -> Result<(), BoostingError> {
    if r.len() != x.n_rows() || w.len() != x.n_rows() {
        return Err(BoostingError::LengthMismatch {
            expected: x.n_rows(),
            actual: if r.len() != x.n_rows() { r.len() } else { w.len() },
        });
    }
    if w.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
        return Err(BoostingError::NegativeWeight);
    }
    if r.iter().any(|v| !v.is_finite()) || !x.all_finite() {
        return Err(BoostingError::NonFinite);
    }
    if !w.iter().any(|v| *v > 0.0) {
        return Err(BoostingError::ZeroWeights);
    }
    Ok(())
}

/// Grows a tree on rows that all carry positive weight. Also returns the
/// tree's output on every training row.
pub(crate) fn fit_presorted(data: &Presorted, r: &[f64], w: &[f64], config: &TreeConfig) -> (RegressionTree, Vec<f64>) {
    let n = data.n_rows;
    let p = data.columns.len();
    let min_leaf = config.min_samples_leaf.max(1);

    // node_of[i]: node currently holding row i
    let mut node_of = vec![0usize; n];
    let mut nodes: Vec<Option<Node>> = vec![None];
    let mut totals = vec![Stats::default()];
    let mut rows: Vec<RowState> = w
        .iter()
        .zip(r)
        .map(|(w, r)| RowState {
            slot: 0,
            w: *w,
            wr: w * r,
        })
        .collect();
    for rs in &rows {
        let t = &mut totals[0];
        t.count += 1;
        t.w += rs.w;
        t.wr += rs.wr;
    }
    let mut open: Vec<usize> = vec![0];

    for _depth in 0..config.max_depth {
        if open.is_empty() {
            break;
        }
        let mut slot = vec![u32::MAX; nodes.len()];
        for (k, &node) in open.iter().enumerate() {
            slot[node] = k as u32;
        }
        for (rs, nd) in rows.iter_mut().zip(&node_of) {
            rs.slot = slot[*nd];
        }
        let mut scans: Vec<Scan> = open
            .iter()
            .map(|&nd| {
                let t = totals[nd];
                Scan {
                    left: Stats::default(),
                    last: f64::NAN,
                    total: t,
                    parent: t.wr * t.wr / t.w,
                    best_gain: 0.0,
                    best_feature: usize::MAX,
                    best_threshold: 0.0,
                }
            })
            .collect();

        for f in 0..p {
            for sc in scans.iter_mut() {
                sc.left = Stats::default();
                sc.last = f64::NAN;
            }
            for (&row, &v) in data.order[f].iter().zip(&data.sorted[f]) {
                let rs = rows[row as usize];
                if rs.slot == u32::MAX {
                    continue;
                }
                let sc = &mut scans[rs.slot as usize];
                let l = sc.left;
                if v > sc.last && l.count >= min_leaf && sc.total.count - l.count >= min_leaf {
                    let rw = sc.total.w - l.w;
                    let rwr = sc.total.wr - l.wr;
                    if l.w > 0.0 && rw > 0.0 {
                        let gain = l.wr * l.wr / l.w + rwr * rwr / rw - sc.parent;
                        if gain > sc.best_gain {
                            let mut threshold = 0.5 * (sc.last + v);
                            if !(threshold < v) {
                                threshold = sc.last;
                            }
                            sc.best_gain = gain;
                            sc.best_feature = f;
                            sc.best_threshold = threshold;
                        }
                    }
                }
                sc.left.count += 1;
                sc.left.w += rs.w;
                sc.left.wr += rs.wr;
                sc.last = v;
            }
        }
        let best: Vec<Option<Candidate>> = scans
            .iter()
            .map(|sc| {
                (sc.best_feature != usize::MAX).then_some(Candidate {
                    feature: sc.best_feature,
                    threshold: sc.best_threshold,
                })
            })
            .collect();

        let mut next_open = Vec::new();
        let mut child_of = vec![(0usize, 0usize); open.len()];
        for (k, &nd) in open.iter().enumerate() {
            if let Some(c) = best[k] {
                let left = nodes.len();
                let right = left + 1;
                nodes.push(None);
                nodes.push(None);
                totals.push(Stats::default());
                totals.push(Stats::default());
                nodes[nd] = Some(Node::Split {
                    feature: c.feature,
                    threshold: c.threshold,
                    left,
                    right,
                });
                child_of[k] = (left, right);
                next_open.push(left);
                next_open.push(right);
            }
        }
        for i in 0..n {
            let k = rows[i].slot;
            if k == u32::MAX {
                continue;
            }
            if let Some(c) = best[k as usize] {
                let k = k as usize;
                let child = if data.columns[c.feature][i] <= c.threshold {
                    child_of[k].0
                } else {
                    child_of[k].1
                };
                node_of[i] = child;
                let t = &mut totals[child];
                t.count += 1;
                t.w += rows[i].w;
                t.wr += rows[i].wr;
            }
        }
        open = next_open;
    }

    let nodes: Vec<Node> = nodes
        .into_iter()
        .zip(&totals)
        .map(|(node, t)| node.unwrap_or(Node::Leaf { value: t.wr / t.w }))
        .collect();
    let outputs = node_of
        .iter()
        .map(|&nd| match nodes[nd] {
            Node::Leaf { value } => value,
            Node::Split { .. } => unreachable!("rows end in leaves"),
        })
        .collect();
    (
        RegressionTree {
            nodes,
            n_features: p,
        },
        outputs,
    )
}
