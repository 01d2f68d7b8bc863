//! Flat `key = value` settings files with dotted section keys, e.g.
//! `gmm.n_components = 3`. Blank lines and lines starting with `#` are
//! ignored. Unknown or repeated keys are errors, and every problem in a file
//! is reported at once.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use tmc_adapt::dataset::Movement;
use tmc_adapt::lasso::LambdaMode;
use tmc_adapt::pipeline::{PipelineConfig, PipelineError, SweepGrid, Variant};

/// Keys accepted in a config file. `gmm.<movement>.*` override `gmm.*` for
/// one movement.
pub const CONFIG_KEYS: &[&str] = &[
    "seed",
    "variant",
    "lasso.lambda",
    "lasso.cv_folds",
    "lasso.grid_size",
    "lasso.min_ratio",
    "lasso.tol",
    "lasso.max_sweeps",
    "itml.gamma",
    "itml.max_passes",
    "itml.tol",
    "itml.check_every_update",
    "itml.candidate_pairs",
    "itml.label_percentile",
    "itml.upper_percentile",
    "itml.lower_percentile",
    "itml.max_per_set",
    "gmm.n_components",
    "gmm.n_samples",
    "gmm.left.n_components",
    "gmm.left.n_samples",
    "gmm.through.n_components",
    "gmm.through.n_samples",
    "gmm.right.n_components",
    "gmm.right.n_samples",
    "gmm.tol",
    "gmm.max_iter",
    "gmm.ridge",
    "gmm.n_init",
    "boosting.n_stages",
    "boosting.max_depth",
    "boosting.min_samples_leaf",
    "boosting.shrinkage",
    "boosting.alpha",
    "pipeline.exclude_matched",
    "pipeline.round_predictions",
];

/// Keys accepted in a grid file; each takes a comma-separated list.
pub const GRID_KEYS: &[&str] = &["n_components", "n_samples", "alpha"];

#[derive(Debug, Clone, PartialEq)]
struct Entry {
    key: String,
    value: String,
    line: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Settings {
    entries: Vec<Entry>,
}

impl Settings {
    pub fn parse(text: &str, allowed: &[&str]) -> Result<Self, Vec<String>> {
        let mut problems = Vec::new();
        let mut entries: Vec<Entry> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.trim();
            if content.is_empty() || content.starts_with('#') {
                continue;
            }
            let Some((key, value)) = content.split_once('=') else {
                problems.push(format!("line {line}: expected `key = value`, got {content:?}"));
                continue;
            };
            let (key, value) = (key.trim(), value.trim());
            if !allowed.contains(&key) {
                problems.push(format!("line {line}: unknown key {key:?}"));
                continue;
            }
            if let Some(first) = entries.iter().find(|e| e.key == key) {
                problems.push(format!("line {line}: duplicate key {key:?} (first set on line {})", first.line));
                continue;
            }
            if value.is_empty() {
                problems.push(format!("line {line}: {key} has no value"));
                continue;
            }
            entries.push(Entry {
                key: key.to_string(),
                value: value.to_string(),
                line,
            });
        }
        if problems.is_empty() {
            Ok(Self { entries })
        } else {
            Err(problems)
        }
    }

    pub fn load(path: &Path, allowed: &[&str]) -> Result<Self, Vec<String>> {
        let text = std::fs::read_to_string(path).map_err(|e| vec![format!("{}: {e}", path.display())])?;
        Self::parse(&text, allowed).map_err(|p| p.into_iter().map(|m| format!("{}: {m}", path.display())).collect())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|e| e.key == key).map(|e| e.value.as_str())
    }

    /// Defaults for `movement` with every setting applied, then validated.
    pub fn pipeline_config(&self, movement: Movement, seed: Option<u64>) -> Result<PipelineConfig, Vec<String>> {
        let mut config = PipelineConfig::for_movement(movement);
        let mut problems = Vec::new();
        // the lambda mode decides which other lasso keys make sense
        let mut ordered: Vec<&Entry> = self.entries.iter().collect();
        ordered.sort_by_key(|e| e.key != "lasso.lambda");
        for e in ordered {
            if let Err(msg) = apply(&mut config, &e.key, &e.value) {
                problems.push(format!("line {}: {}: {msg}", e.line, e.key));
            }
        }
        if let Some(s) = seed {
            config.seed = s;
        }
        if problems.is_empty() {
            if let Err(PipelineError::InvalidConfig(p)) = config.validate() {
                problems.extend(p);
            }
        }
        if problems.is_empty() {
            Ok(config)
        } else {
            Err(problems)
        }
    }

    /// Sweep axes from a grid file; a missing axis keeps the value in `base`.
    pub fn grid(&self, base: &PipelineConfig) -> Result<SweepGrid, Vec<String>> {
        let mut problems = Vec::new();
        let mut axis = |key: &str| -> Option<Vec<String>> {
            let e = self.entries.iter().find(|e| e.key == key)?;
            let items: Vec<String> = e.value.split(',').map(|s| s.trim().to_string()).collect();
            if items.iter().any(String::is_empty) {
                problems.push(format!("line {}: {key}: empty list item", e.line));
                return None;
            }
            Some(items)
        };
        let (k, m, a) = (axis("n_components"), axis("n_samples"), axis("alpha"));
        let mut parse_all = |key: &str, items: Vec<String>| -> Vec<f64> {
            items
                .iter()
                .filter_map(|s| match s.parse::<f64>() {
                    Ok(v) if v.is_finite() => Some(v),
                    _ => {
                        problems.push(format!("{key}: expected a number, got {s:?}"));
                        None
                    }
                })
                .collect()
        };
        let alpha = match a {
            None => vec![base.boosting.alpha],
            Some(items) => parse_all("alpha", items),
        };
        let mut counts = |key: &str, items: Option<Vec<String>>, default: usize| -> Vec<usize> {
            match items {
                None => vec![default],
                Some(items) => items
                    .iter()
                    .filter_map(|s| {
                        s.parse::<usize>()
                            .map_err(|_| problems.push(format!("{key}: expected a whole number, got {s:?}")))
                            .ok()
                    })
                    .collect(),
            }
        };
        let n_components = counts("n_components", k, base.gmm.n_components);
        let n_samples = counts("n_samples", m, base.gmm.n_samples);
        let grid = SweepGrid {
            n_components,
            n_samples,
            alpha,
        };
        if problems.is_empty() {
            if let Err(PipelineError::InvalidConfig(p)) = grid.validate() {
                problems.extend(p);
            }
        }
        if problems.is_empty() {
            Ok(grid)
        } else {
            Err(problems)
        }
    }
}

fn num<T: FromStr>(value: &str) -> Result<T, String> {
    value.parse().map_err(|_| format!("cannot parse {value:?}"))
}

fn flag(value: &str) -> Result<bool, String> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(format!("expected true or false, got {value:?}")),
    }
}

fn cv_field(config: &mut PipelineConfig, f: impl FnOnce(&mut usize, &mut usize, &mut f64)) -> Result<(), String> {
    match &mut config.lasso.lambda {
        LambdaMode::CrossValidated {
            folds,
            grid_size,
            min_ratio,
        } => {
            f(folds, grid_size, min_ratio);
            Ok(())
        }
        LambdaMode::Fixed(_) => Err("only applies when lasso.lambda = cv".into()),
    }
}

/// Sets one config key; the key is assumed to be known.
fn apply(c: &mut PipelineConfig, key: &str, value: &str) -> Result<(), String> {
    match key {
        "seed" => c.seed = num(value)?,
        "variant" => c.variant = value.parse::<Variant>()?,
        "lasso.lambda" => {
            c.lasso.lambda = if value == "cv" {
                LambdaMode::default()
            } else {
                LambdaMode::Fixed(num(value)?)
            }
        }
        "lasso.cv_folds" => {
            let v = num(value)?;
            cv_field(c, |f, _, _| *f = v)?
        }
        "lasso.grid_size" => {
            let v = num(value)?;
            cv_field(c, |_, g, _| *g = v)?
        }
        "lasso.min_ratio" => {
            let v = num(value)?;
            cv_field(c, |_, _, r| *r = v)?
        }
        "lasso.tol" => c.lasso.tol = num(value)?,
        "lasso.max_sweeps" => c.lasso.max_sweeps = num(value)?,
        "itml.gamma" => c.itml.gamma_slack = num(value)?,
        "itml.max_passes" => c.itml.max_passes = num(value)?,
        "itml.tol" => c.itml.tol = num(value)?,
        "itml.check_every_update" => c.itml.check_every_update = flag(value)?,
        "itml.candidate_pairs" => c.constraints.candidate_pairs = num(value)?,
        "itml.label_percentile" => c.constraints.label_percentile = num(value)?,
        "itml.upper_percentile" => c.constraints.upper_distance_percentile = num(value)?,
        "itml.lower_percentile" => c.constraints.lower_distance_percentile = num(value)?,
        "itml.max_per_set" => c.constraints.max_per_set = num(value)?,
        "gmm.n_components" => c.gmm.n_components = num(value)?,
        "gmm.n_samples" => c.gmm.n_samples = num(value)?,
        "gmm.tol" => c.em.tol = num(value)?,
        "gmm.max_iter" => c.em.max_iter = num(value)?,
        "gmm.ridge" => c.em.ridge = num(value)?,
        "gmm.n_init" => c.em.n_init = num(value)?,
        "boosting.n_stages" => c.boosting.n_stages = num(value)?,
        "boosting.max_depth" => c.boosting.max_depth = num(value)?,
        "boosting.min_samples_leaf" => c.boosting.min_samples_leaf = num(value)?,
        "boosting.shrinkage" => c.boosting.shrinkage = num(value)?,
        "boosting.alpha" => c.boosting.alpha = num(value)?,
        "pipeline.exclude_matched" => c.exclude_matched = flag(value)?,
        "pipeline.round_predictions" => c.round_predictions = flag(value)?,
        other => {
            // gmm.<movement>.<field>
            let parts: Vec<&str> = other.split('.').collect();
            let [_, movement, field] = parts[..] else {
                unreachable!("key list and apply are out of step: {other}")
            };
            if movement.parse::<Movement>()? == c.movement {
                match field {
                    "n_components" => c.gmm.n_components = num(value)?,
                    _ => c.gmm.n_samples = num(value)?,
                }
            } else {
                // still reject malformed values for other movements
                num::<usize>(value)?;
            }
        }
    }
    Ok(())
}

fn show<T: Display>(v: T) -> String {
    v.to_string()
}

/// Every effective setting as config-file keys, for manifests.
pub fn snapshot(c: &PipelineConfig) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    let mut put = |k: &str, v: String| {
        out.insert(k.to_string(), v);
    };
    put("seed", show(c.seed));
    put("variant", show(c.variant));
    match c.lasso.lambda {
        LambdaMode::Fixed(l) => put("lasso.lambda", format!("{l:?}")),
        LambdaMode::CrossValidated {
            folds,
            grid_size,
            min_ratio,
        } => {
            put("lasso.lambda", "cv".into());
            put("lasso.cv_folds", show(folds));
            put("lasso.grid_size", show(grid_size));
            put("lasso.min_ratio", format!("{min_ratio:?}"));
        }
    }
    put("lasso.tol", format!("{:?}", c.lasso.tol));
    put("lasso.max_sweeps", show(c.lasso.max_sweeps));
    put("itml.gamma", format!("{:?}", c.itml.gamma_slack));
    put("itml.max_passes", show(c.itml.max_passes));
    put("itml.tol", format!("{:?}", c.itml.tol));
    put("itml.check_every_update", show(c.itml.check_every_update));
    put("itml.candidate_pairs", show(c.constraints.candidate_pairs));
    put("itml.label_percentile", format!("{:?}", c.constraints.label_percentile));
    put("itml.upper_percentile", format!("{:?}", c.constraints.upper_distance_percentile));
    put("itml.lower_percentile", format!("{:?}", c.constraints.lower_distance_percentile));
    put("itml.max_per_set", show(c.constraints.max_per_set));
    put("gmm.n_components", show(c.gmm.n_components));
    put("gmm.n_samples", show(c.gmm.n_samples));
    put("gmm.tol", format!("{:?}", c.em.tol));
    put("gmm.max_iter", show(c.em.max_iter));
    put("gmm.ridge", format!("{:?}", c.em.ridge));
    put("gmm.n_init", show(c.em.n_init));
    put("boosting.n_stages", show(c.boosting.n_stages));
    put("boosting.max_depth", show(c.boosting.max_depth));
    put("boosting.min_samples_leaf", show(c.boosting.min_samples_leaf));
    put("boosting.shrinkage", format!("{:?}", c.boosting.shrinkage));
    put("boosting.alpha", format!("{:?}", c.boosting.alpha));
    put("pipeline.exclude_matched", show(c.exclude_matched));
    put("pipeline.round_predictions", show(c.round_predictions));
    out
}
