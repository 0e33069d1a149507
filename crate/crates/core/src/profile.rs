//! Per-column schema facts for the description half of the prompt.

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::ingest::{Cell, ColumnData, TableFrame};

/// Object columns with fewer distinct values than this are enumerated.
pub const DEFAULT_CATEGORICAL_THRESHOLD: usize = 20;

/// The closed set of dtype names a prompt may mention.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DTypeName {
    #[serde(rename = "int64")]
    Int64,
    #[serde(rename = "float64")]
    Float64,
    #[serde(rename = "object")]
    Object,
}

impl DTypeName {
    pub fn as_str(self) -> &'static str {
        match self {
            DTypeName::Int64 => "int64",
            DTypeName::Float64 => "float64",
            DTypeName::Object => "object",
        }
    }
}

impl fmt::Display for DTypeName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnProfile {
    pub name: String,
    pub dtype: DTypeName,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub categorical_values: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemaProfile {
    pub frame_name: String,
    pub columns: Vec<ColumnProfile>,
    pub row_count: usize,
}

/// Nulls are ignored. Integers only gives `int64`; integers and reals with at
/// least one real gives `float64`; anything else, including an all-null
/// column, is `object`.
pub fn infer_dtype(column: &ColumnData) -> DTypeName {
    let mut saw_integer = false;
    let mut saw_real = false;
    for cell in &column.cells {
        match cell {
            Cell::Null => {}
            Cell::Integer(_) => saw_integer = true,
            Cell::Real(_) => saw_real = true,
            Cell::Text(_) | Cell::Boolean(_) => return DTypeName::Object,
        }
    }
    match (saw_integer, saw_real) {
        (_, true) => DTypeName::Float64,
        (true, false) => DTypeName::Int64,
        (false, false) => DTypeName::Object,
    }
}

/// Distinct non-null values as text, in order of first appearance.
pub fn distinct_values(column: &ColumnData) -> Vec<String> {
    let mut seen = HashSet::new();
    column
        .cells
        .iter()
        .filter(|c| !c.is_null())
        .map(Cell::to_string)
        .filter(|v| seen.insert(v.clone()))
        .collect()
}

pub fn profile_column(column: &ColumnData, threshold: usize) -> ColumnProfile {
    let dtype = infer_dtype(column);
    let categorical_values = (dtype == DTypeName::Object)
        .then(|| distinct_values(column))
        // An empty listing carries nothing for the model.
        .filter(|values| !values.is_empty() && values.len() < threshold);
    ColumnProfile {
        name: column.name.clone(),
        dtype,
        categorical_values,
    }
}

pub fn profile_table(frame: &TableFrame, threshold: usize) -> SchemaProfile {
    SchemaProfile {
        frame_name: frame.name().to_string(),
        columns: frame
            .columns()
            .iter()
            .map(|c| profile_column(c, threshold))
            .collect(),
        row_count: frame.row_count(),
    }
}
