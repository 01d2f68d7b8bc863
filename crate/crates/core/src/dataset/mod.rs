//! Feature schema, ingestion, leave-one-intersection-out splitting and a
//! synthetic intersection-network generator.

mod encoding;
mod io;
mod schema;
mod synthetic;

use std::collections::BTreeSet;

use thiserror::Error;

pub use encoding::{encode_categoricals, EncodedCategoricals, IntervalCode, LeftTurnType, RoadType};
pub use io::{load_table, read_table, write_table};
pub use schema::{Approach, Column, ColumnKind, FeatureSchema, Movement};
pub use synthetic::{
    generate_synthetic_network, generate_synthetic_network_with_truth, IntersectionTruth, SyntheticNetwork,
    LABEL_FEATURES,
};

use crate::matrix::FeatureMatrix;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("encoding error in field {field}: {reason}")]
    Encoding { field: String, reason: String },
    #[error("schema error: missing column {column}")]
    MissingColumn { column: String },
    #[error("row {row}, column {column}: {reason}")]
    Cell { row: usize, column: String, reason: String },
    #[error("invalid instance: {0}")]
    InvalidInstance(String),
    #[error("dataset is empty")]
    Empty,
    #[error("unknown target intersection {0:?}")]
    UnknownTarget(String),
    #[error("need at least two intersections, found {0}")]
    TooFewIntersections(usize),
    #[error("invalid generator parameters: {0}")]
    InvalidParameters(String),
    #[error("instance {row} has no label for {movement}")]
    MissingLabel { row: usize, movement: Movement },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Observed counts for one approach and interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct TurningCounts {
    pub left: u32,
    pub through: u32,
    pub right: u32,
}

impl TurningCounts {
    pub fn get(&self, movement: Movement) -> f64 {
        f64::from(match movement {
            Movement::Left => self.left,
            Movement::Through => self.through,
            Movement::Right => self.right,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub intersection_id: String,
    pub approach: Approach,
    pub interval_index: u32,
    pub features: Vec<f64>,
    pub labels: Option<TurningCounts>,
}

/// Immutable collection of instances over a shared schema.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    schema: FeatureSchema,
    instances: Vec<Instance>,
    provenance: String,
}

impl Dataset {
    pub fn new(
        schema: FeatureSchema,
        instances: Vec<Instance>,
        provenance: impl Into<String>,
    ) -> Result<Self, DatasetError> {
        if instances.is_empty() {
            return Err(DatasetError::Empty);
        }
        for (row, inst) in instances.iter().enumerate() {
            if inst.features.len() != schema.len() {
                return Err(DatasetError::InvalidInstance(format!(
                    "instance {row} has {} features, schema has {}",
                    inst.features.len(),
                    schema.len()
                )));
            }
            for (j, &v) in inst.features.iter().enumerate() {
                schema.check_value(j, v).map_err(|reason| DatasetError::Cell {
                    row,
                    column: schema.columns()[j].name.to_string(),
                    reason,
                })?;
            }
        }
        Ok(Self {
            schema,
            instances,
            provenance: provenance.into(),
        })
    }

    pub fn schema(&self) -> FeatureSchema {
        self.schema
    }

    pub fn instances(&self) -> &[Instance] {
        &self.instances
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn provenance(&self) -> &str {
        &self.provenance
    }

    /// Distinct intersection ids in sorted order.
    pub fn intersection_ids(&self) -> Vec<String> {
        let ids: BTreeSet<&str> = self.instances.iter().map(|i| i.intersection_id.as_str()).collect();
        ids.into_iter().map(str::to_string).collect()
    }

    pub fn feature_matrix(&self) -> FeatureMatrix {
        let mut data = Vec::with_capacity(self.len() * self.schema.len());
        for inst in &self.instances {
            data.extend_from_slice(&inst.features);
        }
        FeatureMatrix::new(self.len(), self.schema.len(), data).expect("validated widths")
    }

    /// Labels for one movement; errors if any instance is unlabeled.
    pub fn labels(&self, movement: Movement) -> Result<Vec<f64>, DatasetError> {
        self.instances
            .iter()
            .enumerate()
            .map(|(row, inst)| {
                inst.labels
                    .map(|l| l.get(movement))
                    .ok_or(DatasetError::MissingLabel { row, movement })
            })
            .collect()
    }

    pub fn is_labeled(&self) -> bool {
        self.instances.iter().all(|i| i.labels.is_some())
    }
}

/// Labeled source-domain instances; the only dataset type training accepts.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceData {
    data: Dataset,
}

impl SourceData {
    pub fn new(data: Dataset) -> Result<Self, DatasetError> {
        if let Some(row) = data.instances.iter().position(|i| i.labels.is_none()) {
            return Err(DatasetError::InvalidInstance(format!("source instance {row} is unlabeled")));
        }
        Ok(Self { data })
    }

    pub fn dataset(&self) -> &Dataset {
        &self.data
    }

    pub fn feature_matrix(&self) -> FeatureMatrix {
        self.data.feature_matrix()
    }

    pub fn labels(&self, movement: Movement) -> Vec<f64> {
        self.data.labels(movement).expect("source data is fully labeled")
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// Target-domain instances with labels stripped.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetFeatures {
    data: Dataset,
}

impl TargetFeatures {
    pub fn dataset(&self) -> &Dataset {
        &self.data
    }

    pub fn feature_matrix(&self) -> FeatureMatrix {
        self.data.feature_matrix()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// Ground-truth target labels, readable only by the scoring code in
/// [`crate::pipeline`].
///
/// There is no accessor that yields the raw counts, so they cannot be fed to
/// a training routine:
///
/// ```compile_fail
/// use tmc_adapt::dataset::{generate_synthetic_network, split_domains, Movement};
/// let data = generate_synthetic_network(1, 2, 0.0, 4).unwrap();
/// let split = split_domains(&data, "I00").unwrap();
/// let leaked: &Vec<tmc_adapt::dataset::TurningCounts> = &split.held_out_labels.counts;
/// ```
///
/// ```compile_fail
/// use tmc_adapt::dataset::{generate_synthetic_network, split_domains, Movement};
/// let data = generate_synthetic_network(1, 2, 0.0, 4).unwrap();
/// let split = split_domains(&data, "I00").unwrap();
/// let y: Vec<f64> = split.held_out_labels.values(Movement::Left);
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct HeldOutLabels {
    counts: Vec<TurningCounts>,
}

impl HeldOutLabels {
    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub(crate) fn values(&self, movement: Movement) -> Vec<f64> {
        self.counts.iter().map(|c| c.get(movement)).collect()
    }

    /// Applies `f` to every held-out count. Exists so tests can check that
    /// predictions do not depend on the held-out labels.
    pub fn perturbed(&self, mut f: impl FnMut(TurningCounts) -> TurningCounts) -> Self {
        Self {
            counts: self.counts.iter().copied().map(&mut f).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DomainSplit {
    pub target_id: String,
    pub source: SourceData,
    pub target_features: TargetFeatures,
    pub held_out_labels: HeldOutLabels,
}

/// Designates `target_id` as the target intersection and everything else as
/// the labeled source domain.
pub fn split_domains(data: &Dataset, target_id: &str) -> Result<DomainSplit, DatasetError> {
    let ids = data.intersection_ids();
    if !ids.iter().any(|id| id == target_id) {
        return Err(DatasetError::UnknownTarget(target_id.to_string()));
    }
    if ids.len() < 2 {
        return Err(DatasetError::TooFewIntersections(ids.len()));
    }
    let (target, source): (Vec<Instance>, Vec<Instance>) = data
        .instances
        .iter()
        .cloned()
        .partition(|inst| inst.intersection_id == target_id);

    let mut counts = Vec::with_capacity(target.len());
    let mut stripped = Vec::with_capacity(target.len());
    for (row, mut inst) in target.into_iter().enumerate() {
        let labels = inst.labels.take().ok_or_else(|| {
            DatasetError::InvalidInstance(format!("target instance {row} carries no held-out labels"))
        })?;
        counts.push(labels);
        stripped.push(inst);
    }
    let provenance = data.provenance();
    Ok(DomainSplit {
        target_id: target_id.to_string(),
        source: SourceData::new(Dataset::new(
            data.schema,
            source,
            format!("{provenance} [source, target={target_id} excluded]"),
        )?)?,
        target_features: TargetFeatures {
            data: Dataset::new(data.schema, stripped, format!("{provenance} [target={target_id}, unlabeled]"))?,
        },
        held_out_labels: HeldOutLabels { counts },
    })
}
