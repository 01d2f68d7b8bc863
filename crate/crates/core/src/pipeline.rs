//! End-to-end estimation for one movement: feature selection, metric
//! learning, matching, augmentation, target substitution, balanced boosting
//! and prediction. Also the leave-one-intersection-out and ablation protocols.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use log::warn;
use rayon::prelude::*;
use thiserror::Error;

use crate::boosting::{fit_gbbw, BoostedModel, LabeledSet, TrainConfig};
use crate::dataset::{split_domains, Dataset, DatasetError, DomainSplit, FeatureSchema, HeldOutLabels, Movement};
use crate::gmm::{augment, Augmented, EmConfig, GmmFit};
use crate::itml::{
    build_constraints, fit_itml, match_source_to_target, ConstraintConfig, ConstraintSet, ItmlConfig, ItmlFit,
    MatchedSet, MetricMatrix,
};
use crate::lasso::{fit_lasso_with, select_features, LassoConfig, LassoModel};
use crate::matrix::FeatureMatrix;
use crate::seed;
use crate::stats::Standardizer;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PipelineError {
    #[error("{stage}: {message}")]
    Stage { stage: &'static str, message: String },
    #[error("invalid configuration: {}", .0.join("; "))]
    InvalidConfig(Vec<String>),
    #[error("evaluation: {0}")]
    Evaluation(String),
}

fn stage_err<E: fmt::Display>(stage: &'static str) -> impl Fn(E) -> PipelineError {
    move |e| PipelineError::Stage {
        stage,
        message: e.to_string(),
    }
}

/// Named pipeline variants compared in the evaluation tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Variant {
    /// Matching, mixture augmentation and balanced boosting.
    Full,
    /// Matching and balanced boosting without augmentation.
    ItmlGbbw,
    /// Boosting on the source only (`alpha = 0`).
    SourceOnly,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Full, Variant::ItmlGbbw, Variant::SourceOnly];

    pub fn as_str(&self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::ItmlGbbw => "itml-gbbw",
            Variant::SourceOnly => "source-only",
        }
    }

    /// Row label used in the summary tables.
    pub fn label(&self) -> &'static str {
        match self {
            Variant::Full => "ITMLGMM-GBBW",
            Variant::ItmlGbbw => "ITML-GBBW",
            Variant::SourceOnly => "GB",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "full" => Ok(Variant::Full),
            "itml-gbbw" => Ok(Variant::ItmlGbbw),
            "source-only" => Ok(Variant::SourceOnly),
            other => Err(format!("unknown variant '{other}' (expected full, itml-gbbw or source-only)")),
        }
    }
}

/// Mixture size and number of synthetic samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GmmSettings {
    pub n_components: usize,
    pub n_samples: usize,
}

impl GmmSettings {
    pub fn default_for(movement: Movement) -> Self {
        let (n_components, n_samples) = match movement {
            Movement::Left => (2, 40),
            Movement::Through => (4, 100),
            Movement::Right => (5, 180),
        };
        Self {
            n_components,
            n_samples,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub movement: Movement,
    pub variant: Variant,
    pub lasso: LassoConfig,
    pub constraints: ConstraintConfig,
    pub itml: ItmlConfig,
    pub gmm: GmmSettings,
    /// Seed field is ignored; the mixture seed derives from `seed`.
    pub em: EmConfig,
    pub boosting: TrainConfig,
    /// Drop matched source rows from the source side of boosting.
    pub exclude_matched: bool,
    /// Round predictions to whole counts.
    pub round_predictions: bool,
    pub seed: u64,
}

impl PipelineConfig {
    pub fn for_movement(movement: Movement) -> Self {
        Self {
            movement,
            variant: Variant::Full,
            lasso: LassoConfig::default(),
            constraints: ConstraintConfig::default(),
            itml: ItmlConfig::default(),
            gmm: GmmSettings::default_for(movement),
            em: EmConfig::default(),
            boosting: TrainConfig::default(),
            exclude_matched: false,
            round_predictions: false,
            seed: 0,
        }
    }

    pub fn with_variant(&self, variant: Variant) -> Self {
        Self {
            variant,
            ..self.clone()
        }
    }

    /// Mixture settings after applying the variant.
    pub fn effective_gmm(&self) -> GmmSettings {
        match self.variant {
            Variant::ItmlGbbw | Variant::SourceOnly => GmmSettings {
                n_samples: 0,
                ..self.gmm
            },
            Variant::Full => self.gmm,
        }
    }

    /// Boosting settings after applying the variant.
    pub fn effective_boosting(&self) -> TrainConfig {
        let mut t = self.boosting;
        if self.variant == Variant::SourceOnly {
            t.alpha = 0.0;
        }
        t.seed = seed::derive(self.seed, &format!("boosting/{}", self.movement.as_str()));
        t
    }

    /// Every problem with the configuration, not just the first.
    pub fn validate(&self) -> Result<(), PipelineError> {
        let mut problems = Vec::new();
        if let Err(e) = self.boosting.validate() {
            problems.push(format!("boosting: {e}"));
        }
        if let crate::lasso::LambdaMode::Fixed(l) = self.lasso.lambda {
            if !(l >= 0.0) || !l.is_finite() {
                problems.push(format!("lasso.lambda must be >= 0, got {l}"));
            }
        }
        if let crate::lasso::LambdaMode::CrossValidated {
            folds,
            grid_size,
            min_ratio,
        } = self.lasso.lambda
        {
            if folds < 2 {
                problems.push(format!("lasso.cv_folds must be >= 2, got {folds}"));
            }
            if grid_size == 0 {
                problems.push("lasso.grid_size must be >= 1".into());
            }
            if !(min_ratio > 0.0 && min_ratio < 1.0) {
                problems.push(format!("lasso.min_ratio must lie in (0, 1), got {min_ratio}"));
            }
        }
        if !(self.lasso.tol > 0.0) {
            problems.push(format!("lasso.tol must be > 0, got {}", self.lasso.tol));
        }
        if !(self.itml.gamma_slack > 0.0) {
            problems.push(format!("itml.gamma must be > 0, got {}", self.itml.gamma_slack));
        }
        if !(self.itml.tol > 0.0) {
            problems.push(format!("itml.tol must be > 0, got {}", self.itml.tol));
        }
        let c = &self.constraints;
        if !(0.0..50.0).contains(&c.label_percentile) {
            problems.push(format!("itml.label_percentile must lie in [0, 50), got {}", c.label_percentile));
        }
        if !(0.0..=100.0).contains(&c.upper_distance_percentile)
            || !(0.0..=100.0).contains(&c.lower_distance_percentile)
        {
            problems.push("itml distance percentiles must lie in [0, 100]".into());
        }
        if c.candidate_pairs == 0 {
            problems.push("itml.candidate_pairs must be >= 1".into());
        }
        if self.gmm.n_components == 0 {
            problems.push("gmm.n_components must be >= 1".into());
        }
        if !(self.em.tol > 0.0) {
            problems.push(format!("gmm.tol must be > 0, got {}", self.em.tol));
        }
        if !(self.em.ridge >= 0.0) {
            problems.push(format!("gmm.ridge must be >= 0, got {}", self.em.ridge));
        }
        if self.em.n_init == 0 {
            problems.push("gmm.n_init must be >= 1".into());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(PipelineError::InvalidConfig(problems))
        }
    }

    /// Short stable digest of every setting, for report metadata.
    pub fn config_hash(&self) -> String {
        // FNV-1a over the debug rendering, which lists every field
        let text = format!("{self:?}");
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in text.bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        format!("{h:016x}")
    }

    fn stage_seed(&self, stage: &str, target_id: &str) -> u64 {
        seed::derive(self.seed, &format!("{stage}/{}/{target_id}", self.movement.as_str()))
    }
}

/// Mean absolute error and root mean squared error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub mae: f64,
    pub rmse: f64,
}

pub fn evaluate(y_true: &[f64], y_pred: &[f64]) -> Result<Metrics, PipelineError> {
    if y_true.len() != y_pred.len() {
        return Err(PipelineError::Evaluation(format!(
            "length mismatch: {} labels, {} predictions",
            y_true.len(),
            y_pred.len()
        )));
    }
    if y_true.is_empty() {
        return Err(PipelineError::Evaluation("no instances to score".into()));
    }
    let n = y_true.len() as f64;
    let (abs, sq) = y_true
        .iter()
        .zip(y_pred)
        .fold((0.0, 0.0), |(a, s), (y, p)| (a + (y - p).abs(), s + (y - p) * (y - p)));
    Ok(Metrics {
        mae: abs / n,
        rmse: (sq / n).sqrt(),
    })
}

/// Scores predictions against held-out target labels.
pub fn score(held_out: &HeldOutLabels, movement: Movement, predictions: &[f64]) -> Result<Metrics, PipelineError> {
    evaluate(&held_out.values(movement), predictions)
}

/// Labeled set standing in for the unavailable target labels.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoTarget {
    pub features: FeatureMatrix,
    pub labels: Vec<f64>,
    pub n_matched: usize,
    pub gmm: Option<GmmFit>,
}

/// Designates the augmented matched set as the pseudo-target.
pub fn substitute_target(matched: &MatchedSet, augmented: Augmented) -> Result<PseudoTarget, PipelineError> {
    if augmented.labels.is_empty() {
        return Err(PipelineError::Stage {
            stage: "substitute",
            message: "augmented set is empty".into(),
        });
    }
    if augmented.features.n_cols() != matched.features.n_cols() {
        return Err(PipelineError::Stage {
            stage: "substitute",
            message: "augmented set does not share the matched feature columns".into(),
        });
    }
    Ok(PseudoTarget {
        features: augmented.features,
        labels: augmented.labels,
        n_matched: matched.labels.len(),
        gmm: augmented.fit,
    })
}

/// Selection and standardization fitted on the source.
#[derive(Debug, Clone)]
pub struct Selection {
    pub lasso: LassoModel,
    /// Schema column indices used downstream.
    pub selected: Vec<usize>,
    pub selected_names: Vec<String>,
    /// Lasso kept nothing, so every column was used instead.
    pub fell_back: bool,
    pub standardizer: Standardizer,
    source_z: FeatureMatrix,
    source_y: Vec<f64>,
    target_z: FeatureMatrix,
}

impl Selection {
    pub fn source_features(&self) -> &FeatureMatrix {
        &self.source_z
    }

    pub fn target_features(&self) -> &FeatureMatrix {
        &self.target_z
    }
}

/// Learned metric and the matched source set.
#[derive(Debug, Clone)]
pub struct MetricStage {
    pub constraints: ConstraintSet,
    pub itml: ItmlFit,
    pub matched: MatchedSet,
}

pub fn select_stage(split: &DomainSplit, config: &PipelineConfig) -> Result<Selection, PipelineError> {
    let schema = FeatureSchema::standard();
    let source_x = split.source.feature_matrix();
    let source_y = split.source.labels(config.movement);
    let lasso = fit_lasso_with(
        &source_x,
        &source_y,
        &config.lasso,
        config.stage_seed("lasso", &split.target_id),
    )
    .map_err(stage_err("lasso"))?;
    let mut selected = select_features(&lasso);
    let fell_back = selected.is_empty();
    if fell_back {
        warn!(
            "lasso selected no features for {} (target {}); using all columns",
            config.movement.as_str(),
            split.target_id
        );
        selected = (0..source_x.n_cols()).collect();
    }
    let names: Vec<&str> = schema.names().collect();
    let selected_names = selected.iter().map(|&j| names[j].to_string()).collect();
    let source_sel = source_x.select_columns(&selected);
    let standardizer = Standardizer::fit(&source_sel);
    let source_z = standardizer.transform(&source_sel);
    let target_z = standardizer.transform(&split.target_features.feature_matrix().select_columns(&selected));
    Ok(Selection {
        lasso,
        selected,
        selected_names,
        fell_back,
        standardizer,
        source_z,
        source_y,
        target_z,
    })
}

pub fn metric_stage(
    selection: &Selection,
    target_id: &str,
    config: &PipelineConfig,
) -> Result<MetricStage, PipelineError> {
    let a0 = MetricMatrix::identity(selection.source_z.n_cols());
    let constraints = build_constraints(
        &selection.source_z,
        &selection.source_y,
        &a0,
        &config.constraints,
        config.stage_seed("constraints", target_id),
    )
    .map_err(stage_err("itml"))?;
    let itml = fit_itml(&selection.source_z, &constraints, &a0, &config.itml).map_err(stage_err("itml"))?;
    let matched = match_source_to_target(&itml.metric, &selection.target_z, &selection.source_z, &selection.source_y)
        .map_err(stage_err("matching"))?;
    Ok(MetricStage {
        constraints,
        itml,
        matched,
    })
}

pub fn pseudo_target_stage(
    matched: &MatchedSet,
    gmm: GmmSettings,
    target_id: &str,
    config: &PipelineConfig,
) -> Result<PseudoTarget, PipelineError> {
    let em = EmConfig {
        seed: config.stage_seed("gmm", target_id),
        ..config.em
    };
    let augmented = augment(&matched.features, &matched.labels, gmm.n_components, gmm.n_samples, &em)
        .map_err(stage_err("gmm"))?;
    substitute_target(matched, augmented)
}

pub fn boosting_stage(
    selection: &Selection,
    matched: Option<&MatchedSet>,
    pseudo: Option<&PseudoTarget>,
    train: &TrainConfig,
    config: &PipelineConfig,
) -> Result<(BoostedModel, Vec<f64>), PipelineError> {
    let (source_x, source_y) = match (config.exclude_matched, matched) {
        (true, Some(m)) => {
            let mut used = vec![false; selection.source_y.len()];
            m.source_indices.iter().for_each(|&i| used[i] = true);
            let keep: Vec<usize> = (0..used.len()).filter(|&i| !used[i]).collect();
            (
                selection.source_z.select_rows(&keep),
                keep.iter().map(|&i| selection.source_y[i]).collect(),
            )
        }
        _ => (selection.source_z.clone(), selection.source_y.clone()),
    };
    let empty = FeatureMatrix::zeros(0, selection.source_z.n_cols());
    let (px, py): (&FeatureMatrix, &[f64]) = match pseudo {
        Some(p) => (&p.features, &p.labels),
        None => (&empty, &[]),
    };
    let model = fit_gbbw(
        LabeledSet::new(&source_x, &source_y).map_err(stage_err("boosting"))?,
        LabeledSet::new(px, py).map_err(stage_err("boosting"))?,
        train,
    )
    .map_err(stage_err("boosting"))?;
    let mut predictions = model.predict(&selection.target_z, true).map_err(stage_err("predict"))?;
    if config.round_predictions {
        predictions.iter_mut().for_each(|p| *p = p.round());
    }
    Ok((model, predictions))
}

/// Predictions for the target intersection plus every fitted artifact.
#[derive(Debug, Clone)]
pub struct Estimation {
    pub predictions: Vec<f64>,
    pub selection: Selection,
    pub metric: Option<MetricStage>,
    pub pseudo_target: Option<PseudoTarget>,
    pub model: BoostedModel,
}

fn needs_metric(variant: Variant, alpha: f64) -> bool {
    variant != Variant::SourceOnly && alpha > 0.0
}

/// Runs every stage for `config.movement`. Only the source and the target
/// features of `split` are read.
pub fn run_estimation(split: &DomainSplit, config: &PipelineConfig) -> Result<Estimation, PipelineError> {
    config.validate()?;
    let selection = select_stage(split, config)?;
    let train = config.effective_boosting();
    let (metric, pseudo) = if needs_metric(config.variant, train.alpha) {
        let metric = metric_stage(&selection, &split.target_id, config)?;
        let pseudo = pseudo_target_stage(&metric.matched, config.effective_gmm(), &split.target_id, config)?;
        (Some(metric), Some(pseudo))
    } else {
        (None, None)
    };
    let (model, predictions) = boosting_stage(
        &selection,
        metric.as_ref().map(|m| &m.matched),
        pseudo.as_ref(),
        &train,
        config,
    )?;
    Ok(Estimation {
        predictions,
        selection,
        metric,
        pseudo_target: pseudo,
        model,
    })
}

/// One scored fold.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldRow {
    pub target_id: String,
    pub movement: Movement,
    pub variant: Variant,
    pub outcome: Result<Metrics, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationReport {
    pub rows: Vec<FoldRow>,
    pub seed: u64,
    pub config_hash: String,
}

fn movement_rank(m: Movement) -> usize {
    Movement::ALL.iter().position(|x| *x == m).unwrap_or(0)
}

impl EvaluationReport {
    fn sort(&mut self) {
        self.rows.sort_by(|a, b| {
            (a.variant, movement_rank(a.movement), &a.target_id).cmp(&(
                b.variant,
                movement_rank(b.movement),
                &b.target_id,
            ))
        });
    }

    /// Merges reports for different movements or variants.
    pub fn merge(reports: Vec<EvaluationReport>) -> EvaluationReport {
        let seed = reports.first().map_or(0, |r| r.seed);
        let hashes: Vec<String> = reports.iter().map(|r| r.config_hash.clone()).collect();
        let mut merged = EvaluationReport {
            rows: reports.into_iter().flat_map(|r| r.rows).collect(),
            seed,
            config_hash: hashes.join("+"),
        };
        merged.sort();
        merged
    }

    pub fn failed(&self) -> usize {
        self.rows.iter().filter(|r| r.outcome.is_err()).count()
    }

    /// Across-intersection mean over successful folds.
    pub fn mean(&self, variant: Variant, movement: Movement) -> Option<Metrics> {
        let ok: Vec<Metrics> = self
            .rows
            .iter()
            .filter(|r| r.variant == variant && r.movement == movement)
            .filter_map(|r| r.outcome.as_ref().ok().copied())
            .collect();
        if ok.is_empty() {
            return None;
        }
        let n = ok.len() as f64;
        Some(Metrics {
            mae: ok.iter().map(|m| m.mae).sum::<f64>() / n,
            rmse: ok.iter().map(|m| m.rmse).sum::<f64>() / n,
        })
    }

    pub fn variants(&self) -> Vec<Variant> {
        let mut v: Vec<Variant> = self.rows.iter().map(|r| r.variant).collect();
        v.sort();
        v.dedup();
        v
    }

    pub fn movements(&self) -> Vec<Movement> {
        Movement::ALL
            .into_iter()
            .filter(|m| self.rows.iter().any(|r| r.movement == *m))
            .collect()
    }

    /// One row per variant, one column per movement, for `"mae"` or `"rmse"`.
    pub fn to_table_csv(&self, metric: &str) -> String {
        let movements = self.movements();
        let mut out = String::from("model");
        for m in &movements {
            out.push(',');
            out.push_str(m.as_str());
        }
        out.push('\n');
        for v in self.variants() {
            out.push_str(v.label());
            for m in &movements {
                out.push(',');
                if let Some(x) = self.mean(v, *m) {
                    let value = if metric == "rmse" { x.rmse } else { x.mae };
                    out.push_str(&format!("{value:.4}"));
                }
            }
            out.push('\n');
        }
        out
    }

    /// Per-fold rows followed by the means.
    pub fn to_long_csv(&self) -> String {
        let mut out = String::from("target_id,movement,variant,mae,rmse,status\n");
        for r in &self.rows {
            match &r.outcome {
                Ok(m) => out.push_str(&format!(
                    "{},{},{},{:?},{:?},ok\n",
                    r.target_id,
                    r.movement.as_str(),
                    r.variant,
                    m.mae,
                    m.rmse
                )),
                Err(e) => out.push_str(&format!(
                    "{},{},{},,,\"failed: {}\"\n",
                    r.target_id,
                    r.movement.as_str(),
                    r.variant,
                    e.replace('"', "'")
                )),
            }
        }
        for v in self.variants() {
            for m in self.movements() {
                if let Some(x) = self.mean(v, m) {
                    out.push_str(&format!("mean,{},{},{:?},{:?},ok\n", m.as_str(), v, x.mae, x.rmse));
                }
            }
        }
        out
    }
}

/// Predictions from several variants sharing one fold's upstream stages.
fn run_fold_variants(
    split: &DomainSplit,
    config: &PipelineConfig,
    variants: &[Variant],
) -> Vec<(Variant, Result<Vec<f64>, PipelineError>)> {
    let selection = match select_stage(split, config) {
        Ok(s) => s,
        Err(e) => return variants.iter().map(|v| (*v, Err(e.clone()))).collect(),
    };
    let wants_metric = variants
        .iter()
        .any(|v| needs_metric(*v, config.with_variant(*v).effective_boosting().alpha));
    let metric = if wants_metric {
        Some(metric_stage(&selection, &split.target_id, config))
    } else {
        None
    };
    variants
        .iter()
        .map(|&v| {
            let cfg = config.with_variant(v);
            let train = cfg.effective_boosting();
            let result = if needs_metric(v, train.alpha) {
                match metric.as_ref().expect("computed when any variant needs it") {
                    Err(e) => Err(e.clone()),
                    Ok(m) => pseudo_target_stage(&m.matched, cfg.effective_gmm(), &split.target_id, &cfg)
                        .and_then(|p| boosting_stage(&selection, Some(&m.matched), Some(&p), &train, &cfg))
                        .map(|(_, pred)| pred),
                }
            } else {
                boosting_stage(&selection, None, None, &train, &cfg).map(|(_, pred)| pred)
            };
            (v, result)
        })
        .collect()
}

fn folds(data: &Dataset) -> Result<Vec<String>, PipelineError> {
    let ids = data.intersection_ids();
    if ids.len() < 2 {
        return Err(PipelineError::Stage {
            stage: "split",
            message: DatasetError::TooFewIntersections(ids.len()).to_string(),
        });
    }
    Ok(ids)
}

/// Leave-one-intersection-out evaluation of several variants for
/// `config.movement`; upstream stages are shared between variants.
pub fn leave_one_out_variants(
    data: &Dataset,
    config: &PipelineConfig,
    variants: &[Variant],
) -> Result<EvaluationReport, PipelineError> {
    config.validate()?;
    let ids = folds(data)?;
    let rows: Vec<FoldRow> = ids
        .par_iter()
        .flat_map_iter(|id| {
            let fold: Vec<(Variant, Result<Metrics, String>)> = match split_domains(data, id) {
                Err(e) => variants.iter().map(|v| (*v, Err(format!("split: {e}")))).collect(),
                Ok(split) => run_fold_variants(&split, config, variants)
                    .into_iter()
                    .map(|(v, r)| {
                        (
                            v,
                            r.and_then(|p| score(&split.held_out_labels, config.movement, &p))
                                .map_err(|e| e.to_string()),
                        )
                    })
                    .collect(),
            };
            fold.into_iter().map(move |(variant, outcome)| {
                if let Err(e) = &outcome {
                    warn!("fold {id} ({variant}) failed: {e}");
                }
                FoldRow {
                    target_id: id.clone(),
                    movement: config.movement,
                    variant,
                    outcome,
                }
            })
        })
        .collect();
    let mut report = EvaluationReport {
        rows,
        seed: config.seed,
        config_hash: config.config_hash(),
    };
    report.sort();
    Ok(report)
}

/// Leave-one-intersection-out evaluation of `config` for `config.movement`.
pub fn leave_one_out(data: &Dataset, config: &PipelineConfig) -> Result<EvaluationReport, PipelineError> {
    leave_one_out_variants(data, config, &[config.variant])
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepGrid {
    pub n_components: Vec<usize>,
    pub n_samples: Vec<usize>,
    pub alpha: Vec<f64>,
}

impl SweepGrid {
    pub fn validate(&self) -> Result<(), PipelineError> {
        let mut problems = Vec::new();
        if self.n_components.is_empty() || self.n_samples.is_empty() || self.alpha.is_empty() {
            problems.push("every grid axis needs at least one value".to_string());
        }
        if self.n_components.contains(&0) {
            problems.push("grid n_components must be >= 1".into());
        }
        for a in &self.alpha {
            if !(0.0..=1.0).contains(a) {
                problems.push(format!("grid alpha {a} outside [0, 1]"));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(PipelineError::InvalidConfig(problems))
        }
    }

    pub fn len(&self) -> usize {
        self.n_components.len() * self.n_samples.len() * self.alpha.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepCell {
    pub movement: Movement,
    pub n_components: usize,
    pub n_samples: usize,
    pub alpha: f64,
    /// Mean metrics over folds, or the reason the cell was skipped.
    pub outcome: Result<Metrics, String>,
    /// Per-fold metrics keyed by target id.
    pub folds: BTreeMap<String, Result<Metrics, String>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResults {
    pub cells: Vec<SweepCell>,
    pub seed: u64,
}

impl SweepResults {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("movement,n_components,n_samples,alpha,mae,rmse,status\n");
        for c in &self.cells {
            match &c.outcome {
                Ok(m) => out.push_str(&format!(
                    "{},{},{},{:?},{:?},{:?},ok\n",
                    c.movement.as_str(),
                    c.n_components,
                    c.n_samples,
                    c.alpha,
                    m.mae,
                    m.rmse
                )),
                Err(e) => out.push_str(&format!(
                    "{},{},{},{:?},,,\"skipped: {}\"\n",
                    c.movement.as_str(),
                    c.n_components,
                    c.n_samples,
                    c.alpha,
                    e.replace('"', "'")
                )),
            }
        }
        out
    }
}

/// Leave-one-out over every (K, M, alpha) cell for `config.movement`.
/// Cells with K above the matched-set size are skipped, not fatal.
pub fn ablation_sweep(data: &Dataset, grid: &SweepGrid, config: &PipelineConfig) -> Result<SweepResults, PipelineError> {
    config.validate()?;
    grid.validate()?;
    let ids = folds(data)?;
    let base = config.with_variant(Variant::Full);

    // per fold: cell index -> outcome
    let per_fold: Vec<(String, Vec<Result<Metrics, String>>)> = ids
        .par_iter()
        .map(|id| (id.clone(), sweep_fold(data, id, grid, &base)))
        .collect();

    let mut cells = Vec::with_capacity(grid.len());
    let mut index = 0;
    for &k in &grid.n_components {
        for &m in &grid.n_samples {
            for &alpha in &grid.alpha {
                let folds: BTreeMap<String, Result<Metrics, String>> =
                    per_fold.iter().map(|(id, r)| (id.clone(), r[index].clone())).collect();
                let outcome = cell_outcome(&folds);
                cells.push(SweepCell {
                    movement: config.movement,
                    n_components: k,
                    n_samples: m,
                    alpha,
                    outcome,
                    folds,
                });
                index += 1;
            }
        }
    }
    Ok(SweepResults {
        cells,
        seed: config.seed,
    })
}

fn cell_outcome(folds: &BTreeMap<String, Result<Metrics, String>>) -> Result<Metrics, String> {
    if let Some((id, Err(e))) = folds.iter().find(|(_, r)| r.is_err()) {
        return Err(format!("fold {id}: {e}"));
    }
    let n = folds.len() as f64;
    let (mae, rmse) = folds
        .values()
        .filter_map(|r| r.as_ref().ok())
        .fold((0.0, 0.0), |(a, b), m| (a + m.mae, b + m.rmse));
    Ok(Metrics {
        mae: mae / n,
        rmse: rmse / n,
    })
}

fn sweep_fold(data: &Dataset, id: &str, grid: &SweepGrid, config: &PipelineConfig) -> Vec<Result<Metrics, String>> {
    let all_err = |e: String| vec![Err(e); grid.len()];
    let split = match split_domains(data, id) {
        Ok(s) => s,
        Err(e) => return all_err(format!("split: {e}")),
    };
    let selection = match select_stage(&split, config) {
        Ok(s) => s,
        Err(e) => return all_err(e.to_string()),
    };
    let needs = grid.alpha.iter().any(|a| *a > 0.0);
    let metric = if needs {
        match metric_stage(&selection, id, config) {
            Ok(m) => Some(m),
            Err(e) => return all_err(e.to_string()),
        }
    } else {
        None
    };
    let scored = |cfg: &PipelineConfig, matched: Option<&MatchedSet>, pseudo: Option<&PseudoTarget>| {
        let train = cfg.effective_boosting();
        boosting_stage(&selection, matched, pseudo, &train, cfg)
            .and_then(|(_, p)| score(&split.held_out_labels, cfg.movement, &p))
            .map_err(|e| e.to_string())
    };

    let mut out = Vec::with_capacity(grid.len());
    for &k in &grid.n_components {
        for &m in &grid.n_samples {
            let gmm = GmmSettings {
                n_components: k,
                n_samples: m,
            };
            let cfg = PipelineConfig {
                gmm,
                ..config.clone()
            };
            let pseudo = metric.as_ref().map(|ms| {
                if m > 0 && k > ms.matched.labels.len() {
                    Err(format!("K={k} exceeds matched-set size {}", ms.matched.labels.len()))
                } else {
                    pseudo_target_stage(&ms.matched, gmm, id, &cfg).map_err(|e| e.to_string())
                }
            });
            for &alpha in &grid.alpha {
                let cell_cfg = PipelineConfig {
                    boosting: TrainConfig { alpha, ..cfg.boosting },
                    ..cfg.clone()
                };
                out.push(if alpha == 0.0 {
                    scored(&cell_cfg.with_variant(Variant::SourceOnly), None, None)
                } else {
                    match (&metric, &pseudo) {
                        (Some(ms), Some(Ok(p))) => scored(&cell_cfg, Some(&ms.matched), Some(p)),
                        (_, Some(Err(e))) => Err(e.clone()),
                        _ => unreachable!("metric stage runs whenever alpha > 0"),
                    }
                });
            }
        }
    }
    out
}
