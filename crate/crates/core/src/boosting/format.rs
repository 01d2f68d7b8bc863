//! Line-oriented text format for boosted models.
//!
//! ```text
//! tmc-adapt-gbbw 1
//! loss squared_error
//! features <p>
//! shrinkage <nu>
//! alpha <alpha>
//! initial <F0>
//! stages <M>
//! stage <gamma> <node count>
//! split <feature> <threshold> <left> <right>
//! leaf <value>
//! ...
//! ```
//!
//! Node lines follow each `stage` line in node-index order. Floats use the
//! shortest representation that parses back to the same value.

use std::str::FromStr;

use super::{BoostedModel, BoostingError, Loss, Node, RegressionTree, Stage};

pub const FORMAT_HEADER: &str = "tmc-adapt-gbbw 1";

pub fn write_model(model: &BoostedModel) -> String {
    let mut out = String::new();
    out.push_str(FORMAT_HEADER);
    out.push('\n');
    out.push_str(&format!("loss {}\n", model.loss));
    out.push_str(&format!("features {}\n", model.n_features));
    out.push_str(&format!("shrinkage {:?}\n", model.shrinkage));
    out.push_str(&format!("alpha {:?}\n", model.alpha));
    out.push_str(&format!("initial {:?}\n", model.initial));
    out.push_str(&format!("stages {}\n", model.stages.len()));
    for stage in &model.stages {
        out.push_str(&format!("stage {:?} {}\n", stage.gamma, stage.tree.nodes().len()));
        for node in stage.tree.nodes() {
            match node {
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => out.push_str(&format!("split {feature} {threshold:?} {left} {right}\n")),
                Node::Leaf { value } => out.push_str(&format!("leaf {value:?}\n")),
            }
        }
    }
    out
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
}

impl<'a> Lines<'a> {
    fn next(&mut self) -> Result<(usize, Vec<&'a str>), BoostingError> {
        loop {
            match self.inner.next() {
                None => return Err(BoostingError::Format("unexpected end of model".into())),
                Some((_, l)) if l.trim().is_empty() => continue,
                Some((i, l)) => return Ok((i + 1, l.split_whitespace().collect())),
            }
        }
    }

    fn field(&mut self, key: &str) -> Result<(usize, &'a str), BoostingError> {
        let (line, parts) = self.next()?;
        match parts.as_slice() {
            [k, v] if *k == key => Ok((line, v)),
            _ => Err(BoostingError::Format(format!("line {line}: expected '{key} <value>'"))),
        }
    }
}

fn parse<T: FromStr>(line: usize, s: &str) -> Result<T, BoostingError> {
    s.parse()
        .map_err(|_| BoostingError::Format(format!("line {line}: cannot parse '{s}'")))
}

pub fn read_model(text: &str) -> Result<BoostedModel, BoostingError> {
    let mut lines = Lines {
        inner: text.lines().enumerate(),
    };
    let (_, header) = lines.next()?;
    if header.join(" ") != FORMAT_HEADER {
        return Err(BoostingError::Format(format!(
            "unsupported header '{}', expected '{FORMAT_HEADER}'",
            header.join(" ")
        )));
    }
    let (_, loss) = lines.field("loss")?;
    let loss: Loss = loss.parse()?;
    let (l, v) = lines.field("features")?;
    let n_features: usize = parse(l, v)?;
    let (l, v) = lines.field("shrinkage")?;
    let shrinkage: f64 = parse(l, v)?;
    let (l, v) = lines.field("alpha")?;
    let alpha: f64 = parse(l, v)?;
    let (l, v) = lines.field("initial")?;
    let initial: f64 = parse(l, v)?;
    let (l, v) = lines.field("stages")?;
    let n_stages: usize = parse(l, v)?;

    let mut stages = Vec::with_capacity(n_stages);
    for _ in 0..n_stages {
        let (line, parts) = lines.next()?;
        let (gamma, n_nodes) = match parts.as_slice() {
            ["stage", g, n] => (parse::<f64>(line, g)?, parse::<usize>(line, n)?),
            _ => return Err(BoostingError::Format(format!("line {line}: expected 'stage <gamma> <nodes>'"))),
        };
        let mut nodes = Vec::with_capacity(n_nodes);
        for _ in 0..n_nodes {
            let (line, parts) = lines.next()?;
            nodes.push(match parts.as_slice() {
                ["split", f, t, l, r] => Node::Split {
                    feature: parse(line, f)?,
                    threshold: parse(line, t)?,
                    left: parse(line, l)?,
                    right: parse(line, r)?,
                },
                ["leaf", v] => Node::Leaf { value: parse(line, v)? },
                _ => return Err(BoostingError::Format(format!("line {line}: expected a split or leaf node"))),
            });
        }
        stages.push(Stage {
            gamma,
            tree: RegressionTree::from_nodes(nodes, n_features)?,
        });
    }
    Ok(BoostedModel {
        initial,
        stages,
        shrinkage,
        alpha,
        loss,
        n_features,
        loss_trace: Vec::new(),
    })
}
