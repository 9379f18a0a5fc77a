//! Schema-typed tables plus CSV ingestion, splitting, binning and encoding.
//!
//! Categorical cells are stored as indices into their column vocabulary and
//! numerical cells as `f64`. Feature "fields" are the non-label columns in
//! schema order; field `k` is the `k`-th such column.

mod bins;
mod csv_io;
mod encode;
mod split;

pub use bins::fit_bins;
pub(crate) use bins::quantile_sorted;
pub(crate) use csv_io::parse_numeric;
pub use csv_io::{load_csv, load_csv_with_schema, parse_table, CsvOptions, SchemaHint};
pub use encode::{EncodedSegment, Encoder, SegmentKind};
pub use split::{split, SplitSpec};

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Vocabulary token standing in for an empty categorical cell.
pub const MISSING_TOKEN: &str = "⟨missing⟩";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ColumnKind {
    Categorical {
        vocabulary: Vec<String>,
    },
    Numerical {
        min: f64,
        max: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        bin_edges: Option<Vec<f64>>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub name: String,
    #[serde(flatten)]
    pub kind: ColumnKind,
}

impl ColumnSpec {
    pub fn categorical(name: impl Into<String>, vocabulary: Vec<String>) -> Self {
        ColumnSpec {
            name: name.into(),
            kind: ColumnKind::Categorical { vocabulary },
        }
    }

    pub fn numerical(name: impl Into<String>, min: f64, max: f64) -> Self {
        ColumnSpec {
            name: name.into(),
            kind: ColumnKind::Numerical {
                min,
                max,
                bin_edges: None,
            },
        }
    }

    pub fn is_categorical(&self) -> bool {
        matches!(self.kind, ColumnKind::Categorical { .. })
    }

    pub fn vocabulary(&self) -> Option<&[String]> {
        match &self.kind {
            ColumnKind::Categorical { vocabulary } => Some(vocabulary),
            ColumnKind::Numerical { .. } => None,
        }
    }

    pub fn bin_edges(&self) -> Option<&[f64]> {
        match &self.kind {
            ColumnKind::Numerical { bin_edges, .. } => bin_edges.as_deref(),
            ColumnKind::Categorical { .. } => None,
        }
    }

    /// Discrete code of a value: the vocabulary index for categoricals, the
    /// bin index for numericals. Numerical columns without edges map to bin 0.
    pub fn code(&self, value: Value) -> u32 {
        match (value, &self.kind) {
            (Value::Cat(index), _) => index,
            (Value::Num(x), ColumnKind::Numerical { bin_edges, .. }) => match bin_edges {
                Some(edges) => edges.partition_point(|&edge| edge <= x) as u32,
                None => 0,
            },
            (Value::Num(_), ColumnKind::Categorical { .. }) => 0,
        }
    }

    /// Number of distinct codes [`ColumnSpec::code`] can produce.
    pub fn cardinality(&self) -> usize {
        match &self.kind {
            ColumnKind::Categorical { vocabulary } => vocabulary.len(),
            ColumnKind::Numerical { bin_edges, .. } => {
                bin_edges.as_ref().map_or(1, |edges| edges.len() + 1)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableSchema {
    pub columns: Vec<ColumnSpec>,
    pub label_index: usize,
}

impl TableSchema {
    pub fn new(columns: Vec<ColumnSpec>, label_index: usize) -> Result<Self> {
        let schema = TableSchema {
            columns,
            label_index,
        };
        schema.validate()?;
        Ok(schema)
    }

    pub fn validate(&self) -> Result<()> {
        let label = self
            .columns
            .get(self.label_index)
            .ok_or_else(|| Error::Schema(format!("label index {} out of range", self.label_index)))?;
        match label.vocabulary() {
            Some(vocab) if vocab.len() >= 2 => {}
            Some(_) => {
                return Err(Error::Schema(format!(
                    "label column `{}` needs at least two classes",
                    label.name
                )))
            }
            None => {
                return Err(Error::Schema(format!(
                    "label column `{}` must be categorical",
                    label.name
                )))
            }
        }
        let mut names = HashSet::new();
        for column in &self.columns {
            if !names.insert(column.name.as_str()) {
                return Err(Error::Schema(format!("duplicate column name `{}`", column.name)));
            }
            match &column.kind {
                ColumnKind::Categorical { vocabulary } => {
                    let mut seen = HashSet::new();
                    if let Some(dup) = vocabulary.iter().find(|v| !seen.insert(v.as_str())) {
                        return Err(Error::Schema(format!(
                            "duplicate vocabulary entry `{dup}` in column `{}`",
                            column.name
                        )));
                    }
                }
                ColumnKind::Numerical { bin_edges, .. } => {
                    if let Some(edges) = bin_edges {
                        if edges.windows(2).any(|w| w[0] >= w[1]) {
                            return Err(Error::Schema(format!(
                                "bin edges of `{}` are not strictly increasing",
                                column.name
                            )));
                        }
                    }
                }
            }
        }
        Ok(())
    }

    pub fn arity(&self) -> usize {
        self.columns.len()
    }

    pub fn label(&self) -> &ColumnSpec {
        &self.columns[self.label_index]
    }

    pub fn num_classes(&self) -> usize {
        self.label().vocabulary().map_or(0, <[String]>::len)
    }

    /// Number of feature fields `K`.
    pub fn num_fields(&self) -> usize {
        self.columns.len() - 1
    }

    /// Column index of feature field `k`.
    pub fn field_column(&self, field: usize) -> usize {
        if field < self.label_index {
            field
        } else {
            field + 1
        }
    }

    pub fn field_columns(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.columns.len()).filter(move |&c| c != self.label_index)
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    pub fn header(&self) -> Vec<&str> {
        self.columns.iter().map(|c| c.name.as_str()).collect()
    }

    /// Renders a cell the way it is written to CSV.
    pub fn format_value(&self, column: usize, value: Value) -> String {
        match (value, &self.columns[column].kind) {
            (Value::Cat(index), ColumnKind::Categorical { vocabulary }) => {
                let token = vocabulary
                    .get(index as usize)
                    .map(String::as_str)
                    .unwrap_or("");
                if token == MISSING_TOKEN {
                    String::new()
                } else {
                    token.to_string()
                }
            }
            (Value::Num(x), _) => format_number(x),
            (Value::Cat(index), ColumnKind::Numerical { .. }) => index.to_string(),
        }
    }

    /// Checks arity and per-column value kinds of a row.
    pub fn check_row(&self, row: &[Value]) -> Result<()> {
        if row.len() != self.arity() {
            return Err(Error::InvalidArgument(format!(
                "row has {} values, schema has {} columns",
                row.len(),
                self.arity()
            )));
        }
        for (column, value) in self.columns.iter().zip(row) {
            match (value, &column.kind) {
                (Value::Cat(index), ColumnKind::Categorical { vocabulary }) => {
                    if *index as usize >= vocabulary.len() {
                        return Err(Error::InvalidArgument(format!(
                            "out-of-vocabulary value in column `{}`",
                            column.name
                        )));
                    }
                }
                (Value::Num(x), ColumnKind::Numerical { .. }) if x.is_finite() => {}
                _ => {
                    return Err(Error::InvalidArgument(format!(
                        "value kind does not match column `{}`",
                        column.name
                    )))
                }
            }
        }
        Ok(())
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let schema: TableSchema = serde_json::from_str(&text)?;
        schema.validate()?;
        Ok(schema)
    }
}

/// Shortest representation that parses back to the same `f64`.
pub fn format_number(x: f64) -> String {
    format!("{x}")
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Value {
    Cat(u32),
    Num(f64),
}

impl Value {
    pub fn as_f64(self) -> f64 {
        match self {
            Value::Cat(index) => f64::from(index),
            Value::Num(x) => x,
        }
    }

    pub fn as_cat(self) -> Option<u32> {
        match self {
            Value::Cat(index) => Some(index),
            Value::Num(_) => None,
        }
    }

    /// Bit-exact hashable key, used for duplicate detection.
    pub fn key(self) -> u64 {
        match self {
            Value::Cat(index) => u64::from(index),
            Value::Num(x) => x.to_bits(),
        }
    }
}

pub type Row = Vec<Value>;

pub fn row_key(row: &[Value]) -> Vec<u64> {
    row.iter().map(|v| v.key()).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub schema: TableSchema,
    pub rows: Vec<Row>,
}

impl Table {
    pub fn new(schema: TableSchema, rows: Vec<Row>) -> Result<Self> {
        for (index, row) in rows.iter().enumerate() {
            schema.check_row(row).map_err(|e| Error::Parse {
                row: index,
                message: e.to_string(),
            })?;
        }
        Ok(Table { schema, rows })
    }

    pub fn empty(schema: TableSchema) -> Self {
        Table {
            schema,
            rows: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn label_of(&self, row: usize) -> usize {
        self.rows[row][self.schema.label_index]
            .as_cat()
            .expect("label column is categorical") as usize
    }

    pub fn labels(&self) -> Vec<usize> {
        (0..self.len()).map(|i| self.label_of(i)).collect()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.schema.num_classes()];
        for i in 0..self.len() {
            counts[self.label_of(i)] += 1;
        }
        counts
    }

    pub fn select(&self, indices: &[usize]) -> Table {
        Table {
            schema: self.schema.clone(),
            rows: indices.iter().map(|&i| self.rows[i].clone()).collect(),
        }
    }

    pub fn with_schema(&self, schema: TableSchema) -> Table {
        Table {
            schema,
            rows: self.rows.clone(),
        }
    }

    /// Rows of `self` followed by rows of `other`; schemas must agree on
    /// column names, kinds and vocabularies.
    pub fn concat(&self, other: &Table) -> Result<Table> {
        ensure_compatible(&self.schema, &other.schema)?;
        let mut rows = self.rows.clone();
        rows.extend(other.rows.iter().cloned());
        Ok(Table {
            schema: self.schema.clone(),
            rows,
        })
    }

    pub fn column(&self, column: usize) -> impl Iterator<Item = Value> + '_ {
        self.rows.iter().map(move |row| row[column])
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut writer = csv::Writer::from_writer(Vec::new());
        self.write_records(&mut writer, None)?;
        let bytes = writer
            .into_inner()
            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        self.write_csv_with_weights(path, None)
    }

    /// Writes the table, optionally with a trailing `__weight` column.
    pub fn write_csv_with_weights(&self, path: &Path, weights: Option<&[f64]>) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut writer = csv::Writer::from_writer(std::io::BufWriter::new(file));
        self.write_records(&mut writer, weights)?;
        writer.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    fn write_records<W: std::io::Write>(
        &self,
        writer: &mut csv::Writer<W>,
        weights: Option<&[f64]>,
    ) -> Result<()> {
        let mut header: Vec<String> = self.schema.header().iter().map(|s| s.to_string()).collect();
        if weights.is_some() {
            header.push("__weight".to_string());
        }
        writer.write_record(&header)?;
        for (i, row) in self.rows.iter().enumerate() {
            let mut record: Vec<String> = row
                .iter()
                .enumerate()
                .map(|(c, &v)| self.schema.format_value(c, v))
                .collect();
            if let Some(weights) = weights {
                record.push(format_number(weights[i]));
            }
            writer.write_record(&record)?;
        }
        Ok(())
    }
}

/// Column names, kinds and vocabularies must agree; numeric ranges and bins may differ.
pub fn ensure_compatible(a: &TableSchema, b: &TableSchema) -> Result<()> {
    if a.label_index != b.label_index || a.columns.len() != b.columns.len() {
        return Err(Error::Schema("tables have different layouts".into()));
    }
    for (x, y) in a.columns.iter().zip(&b.columns) {
        let same = x.name == y.name
            && match (&x.kind, &y.kind) {
                (
                    ColumnKind::Categorical { vocabulary: vx },
                    ColumnKind::Categorical { vocabulary: vy },
                ) => vx == vy,
                (ColumnKind::Numerical { .. }, ColumnKind::Numerical { .. }) => true,
                _ => false,
            };
        if !same {
            return Err(Error::Schema(format!("column `{}` differs between tables", x.name)));
        }
    }
    Ok(())
}
