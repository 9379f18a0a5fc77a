use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ColumnKind, ColumnSpec, Row, Table, TableSchema, Value, MISSING_TOKEN};
use crate::error::{Error, Result};

/// Lightweight schema hint file: declared column kinds and the label name.
///
/// ```json
/// {"label": "y", "columns": [{"name": "age", "kind": "numerical"}]}
/// ```
/// Columns not listed are inferred.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SchemaHint {
    #[serde(default)]
    pub label: Option<String>,
    #[serde(default)]
    pub columns: Vec<ColumnHint>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColumnHint {
    pub name: String,
    pub kind: HintKind,
    #[serde(default)]
    pub vocabulary: Option<Vec<String>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HintKind {
    Categorical,
    Numerical,
}

impl SchemaHint {
    pub fn read_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    fn column(&self, name: &str) -> Option<&ColumnHint> {
        self.columns.iter().find(|c| c.name == name)
    }
}

#[derive(Clone, Debug, Default)]
pub struct CsvOptions {
    /// Label column name; the last column when unset (and not set by the hint).
    pub label: Option<String>,
    pub hint: Option<SchemaHint>,
}

/// Loads a CSV file, inferring the schema.
pub fn load_csv(path: &Path, options: &CsvOptions) -> Result<Table> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_table(&text, options)
}

/// Loads a CSV file against a known schema (for example a persisted one).
/// Every cell must conform to it.
pub fn load_csv_with_schema(path: &Path, schema: &TableSchema) -> Result<Table> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let (header, records) = read_records(&text)?;
    let expected = schema.header();
    if header.iter().map(String::as_str).ne(expected.iter().copied()) {
        return Err(Error::Schema(format!(
            "header {:?} does not match schema {:?}",
            header, expected
        )));
    }
    let rows = records
        .iter()
        .enumerate()
        .map(|(i, record)| convert_record(schema, record).map_err(|message| Error::Parse { row: i, message }))
        .collect::<Result<Vec<_>>>()?;
    Ok(Table {
        schema: schema.clone(),
        rows,
    })
}

/// Parses CSV text with schema inference: a column is numerical iff every
/// non-empty cell is a decimal literal; the label is always categorical.
pub fn parse_table(text: &str, options: &CsvOptions) -> Result<Table> {
    let (header, records) = read_records(text)?;
    if records.is_empty() {
        return Err(Error::Empty("csv has a header but no data rows".into()));
    }
    let hint = options.hint.clone().unwrap_or_default();
    let label_name = options.label.clone().or_else(|| hint.label.clone());
    let label_index = match &label_name {
        Some(name) => header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Schema(format!("label column `{name}` not found in header")))?,
        None => header.len() - 1,
    };

    let mut columns = Vec::with_capacity(header.len());
    for (c, name) in header.iter().enumerate() {
        let cells = records.iter().map(|r| r[c].as_str());
        let declared = hint.column(name);
        let numerical = match declared.map(|h| h.kind) {
            _ if c == label_index => false,
            Some(HintKind::Numerical) => true,
            Some(HintKind::Categorical) => false,
            None => infer_numerical(cells.clone()),
        };
        let kind = if numerical {
            let mut min = f64::INFINITY;
            let mut max = f64::NEG_INFINITY;
            for (r, cell) in cells.enumerate() {
                let x = parse_numeric(cell).map_err(|message| Error::Parse {
                    row: r,
                    message: format!("column `{name}`: {message}"),
                })?;
                min = min.min(x);
                max = max.max(x);
            }
            ColumnKind::Numerical {
                min,
                max,
                bin_edges: None,
            }
        } else {
            let vocabulary = match declared.and_then(|h| h.vocabulary.clone()) {
                Some(vocab) => vocab,
                None => cells
                    .map(|cell| if cell.is_empty() { MISSING_TOKEN } else { cell })
                    .collect::<BTreeSet<_>>()
                    .into_iter()
                    .map(str::to_string)
                    .collect(),
            };
            ColumnKind::Categorical { vocabulary }
        };
        columns.push(ColumnSpec {
            name: name.clone(),
            kind,
        });
    }
    let schema = TableSchema::new(columns, label_index)?;
    let rows = records
        .iter()
        .enumerate()
        .map(|(i, record)| convert_record(&schema, record).map_err(|message| Error::Parse { row: i, message }))
        .collect::<Result<Vec<_>>>()?;
    Ok(Table { schema, rows })
}

fn read_records(text: &str) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    if text.trim().is_empty() {
        return Err(Error::Empty("csv file is empty".into()));
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(text.as_bytes());
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    let mut records = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        if record.len() != header.len() {
            return Err(Error::Parse {
                row: i,
                message: format!("expected {} fields, found {}", header.len(), record.len()),
            });
        }
        records.push(record.iter().map(str::to_string).collect());
    }
    Ok((header, records))
}

fn infer_numerical<'a>(cells: impl Iterator<Item = &'a str>) -> bool {
    let mut any = false;
    for cell in cells {
        if cell.is_empty() {
            continue;
        }
        if !is_decimal_literal(cell) {
            return false;
        }
        any = true;
    }
    any
}

/// Decimal literal syntax: optional sign, digits with an optional fraction,
/// optional exponent. `inf` and `NaN` are not literals.
pub(crate) fn is_decimal_literal(cell: &str) -> bool {
    let bytes = cell.trim().as_bytes();
    let mut i = 0;
    if matches!(bytes.first(), Some(b'+' | b'-')) {
        i += 1;
    }
    let int_start = i;
    while i < bytes.len() && bytes[i].is_ascii_digit() {
        i += 1;
    }
    let mut digits = i - int_start;
    if i < bytes.len() && bytes[i] == b'.' {
        i += 1;
        let frac_start = i;
        while i < bytes.len() && bytes[i].is_ascii_digit() {
            i += 1;
        }
        digits += i - frac_start;
    }
    if digits == 0 {
        return false;
    }
    if i < bytes.len() && matches!(bytes[i], b'e' | b'E') {
        i += 1;
        if matches!(bytes.get(i), Some(b'+' | b'-')) {
            i += 1;
        }
        let exp_start = i;
        while i < bytes.len() && bytes[i].is_ascii_digit() {
            i += 1;
        }
        if i == exp_start {
            return false;
        }
    }
    i == bytes.len()
}

pub(crate) fn parse_numeric(cell: &str) -> std::result::Result<f64, String> {
    if cell.trim().is_empty() {
        return Err("empty numerical cell".into());
    }
    if !is_decimal_literal(cell) {
        return Err(format!("`{cell}` is not a number"));
    }
    let x: f64 = cell
        .trim()
        .parse()
        .map_err(|_| format!("`{cell}` is not a number"))?;
    if !x.is_finite() {
        return Err(format!("`{cell}` is not finite"));
    }
    Ok(x)
}

fn convert_record(schema: &TableSchema, record: &[String]) -> std::result::Result<Row, String> {
    if record.len() != schema.arity() {
        return Err(format!(
            "expected {} fields, found {}",
            schema.arity(),
            record.len()
        ));
    }
    schema
        .columns
        .iter()
        .zip(record)
        .map(|(column, cell)| match &column.kind {
            ColumnKind::Numerical { .. } => parse_numeric(cell)
                .map(Value::Num)
                .map_err(|m| format!("column `{}`: {m}", column.name)),
            ColumnKind::Categorical { vocabulary } => {
                let token = if cell.is_empty() { MISSING_TOKEN } else { cell.as_str() };
                vocabulary
                    .iter()
                    .position(|v| v == token)
                    .map(|i| Value::Cat(i as u32))
                    .ok_or_else(|| format!("column `{}`: `{cell}` not in vocabulary", column.name))
            }
        })
        .collect()
}
