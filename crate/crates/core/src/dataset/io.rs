//! Comma-separated table format: `intersection_id,approach,interval_index`,
//! the 25 schema columns in schema order, then optionally `v_LM,v_TM,v_RM`.
//! Rows with any missing predictor are rejected.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use super::schema::{Approach, FeatureSchema, Movement};
use super::{Dataset, DatasetError, Instance, TurningCounts};

const KEY_COLUMNS: [&str; 3] = ["intersection_id", "approach", "interval_index"];

pub fn load_table(path: impl AsRef<Path>, schema: FeatureSchema) -> Result<Dataset, DatasetError> {
    let path = path.as_ref();
    let file = File::open(path)?;
    read_table(file, schema, path.display().to_string())
}

fn cell_err(row: usize, column: &str, reason: impl Into<String>) -> DatasetError {
    DatasetError::Cell {
        row,
        column: column.to_string(),
        reason: reason.into(),
    }
}

fn parse_count(raw: &str, row: usize, column: &str) -> Result<u32, DatasetError> {
    let v: f64 = raw
        .trim()
        .parse()
        .map_err(|_| cell_err(row, column, format!("non-numeric value {raw:?}")))?;
    if !v.is_finite() || v < 0.0 {
        return Err(cell_err(row, column, format!("count must be >= 0, got {raw}")));
    }
    if v.fract() != 0.0 || v > f64::from(u32::MAX) {
        return Err(cell_err(row, column, format!("count must be an integer, got {raw}")));
    }
    Ok(v as u32)
}

/// Parses a table from any reader. Row numbers in errors are 1-based data rows.
pub fn read_table<R: Read>(
    reader: R,
    schema: FeatureSchema,
    provenance: impl Into<String>,
) -> Result<Dataset, DatasetError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let position = |name: &str| headers.iter().position(|h| h == name);

    let mut key_idx = [0usize; 3];
    for (slot, name) in key_idx.iter_mut().zip(KEY_COLUMNS) {
        *slot = position(name).ok_or_else(|| DatasetError::MissingColumn { column: name.into() })?;
    }
    let feature_idx: Vec<usize> = schema
        .names()
        .map(|name| position(name).ok_or_else(|| DatasetError::MissingColumn { column: name.into() }))
        .collect::<Result<_, _>>()?;
    let label_idx: Vec<Option<usize>> = Movement::ALL.iter().map(|m| position(m.label_column())).collect();
    let has_labels = label_idx.iter().any(Option::is_some);
    if has_labels {
        if let Some(k) = label_idx.iter().position(Option::is_none) {
            return Err(DatasetError::MissingColumn {
                column: Movement::ALL[k].label_column().into(),
            });
        }
    }

    let mut instances = Vec::new();
    for (k, record) in rdr.records().enumerate() {
        let row = k + 1;
        let record = record?;
        let get = |idx: usize| record.get(idx).unwrap_or("");

        let intersection_id = get(key_idx[0]).to_string();
        if intersection_id.is_empty() {
            return Err(cell_err(row, "intersection_id", "empty identifier"));
        }
        let approach: Approach = get(key_idx[1]).parse().map_err(|e: String| cell_err(row, "approach", e))?;
        let interval_index = parse_count(get(key_idx[2]), row, "interval_index")?;

        let mut features = Vec::with_capacity(schema.len());
        for (j, &idx) in feature_idx.iter().enumerate() {
            let name = schema.columns()[j].name;
            let raw = get(idx);
            if raw.is_empty() {
                return Err(cell_err(row, name, "missing value"));
            }
            let v: f64 = raw
                .parse()
                .map_err(|_| cell_err(row, name, format!("non-numeric value {raw:?}")))?;
            schema.check_value(j, v).map_err(|reason| cell_err(row, name, reason))?;
            features.push(v);
        }

        let labels = if has_labels {
            let raw: Vec<&str> = label_idx.iter().map(|idx| get(idx.expect("checked"))).collect();
            if raw.iter().all(|s| s.is_empty()) {
                None
            } else {
                let mut vals = [0u32; 3];
                for ((slot, s), m) in vals.iter_mut().zip(&raw).zip(Movement::ALL) {
                    if s.is_empty() {
                        return Err(cell_err(row, m.label_column(), "missing label"));
                    }
                    *slot = parse_count(s, row, m.label_column())?;
                }
                Some(TurningCounts {
                    left: vals[0],
                    through: vals[1],
                    right: vals[2],
                })
            }
        } else {
            None
        };

        instances.push(Instance {
            intersection_id,
            approach,
            interval_index,
            features,
            labels,
        });
    }
    Dataset::new(schema, instances, provenance)
}

/// Writes a dataset in the same format `read_table` accepts. Label columns
/// are emitted when any instance carries labels.
pub fn write_table<W: Write>(writer: W, data: &Dataset) -> Result<(), DatasetError> {
    let mut wtr = csv::WriterBuilder::new().from_writer(writer);
    let labeled = data.instances().iter().any(|i| i.labels.is_some());
    let mut header: Vec<&str> = KEY_COLUMNS.to_vec();
    header.extend(data.schema().names());
    if labeled {
        header.extend(Movement::ALL.iter().map(|m| m.label_column()));
    }
    wtr.write_record(&header)?;

    let mut fields = Vec::with_capacity(header.len());
    for inst in data.instances() {
        fields.clear();
        fields.push(inst.intersection_id.clone());
        fields.push(inst.approach.abbreviation().to_string());
        fields.push(inst.interval_index.to_string());
        fields.extend(inst.features.iter().map(|v| v.to_string()));
        if labeled {
            match inst.labels {
                Some(l) => {
                    fields.push(l.left.to_string());
                    fields.push(l.through.to_string());
                    fields.push(l.right.to_string());
                }
                None => fields.extend(std::iter::repeat(String::new()).take(3)),
            }
        }
        wtr.write_record(&fields)?;
    }
    wtr.flush()?;
    Ok(())
}
