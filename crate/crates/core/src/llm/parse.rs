use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::data::{row_key, ColumnKind, Row, Table, TableSchema, Value, MISSING_TOKEN};

/// Per-response parse counts. Every candidate line lands in exactly one
/// bucket.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseCounts {
    pub candidate_lines: usize,
    pub parsed_ok: usize,
    pub rejected_malformed: usize,
    pub rejected_oov: usize,
    pub rejected_duplicate_of_original: usize,
}

impl ParseCounts {
    pub fn add(&mut self, other: &ParseCounts) {
        self.candidate_lines += other.candidate_lines;
        self.parsed_ok += other.parsed_ok;
        self.rejected_malformed += other.rejected_malformed;
        self.rejected_oov += other.rejected_oov;
        self.rejected_duplicate_of_original += other.rejected_duplicate_of_original;
    }
}

/// Validates LLM output against the schema of the original (training) table.
pub struct RowParser<'a> {
    schema: &'a TableSchema,
    ranges: Vec<(f64, f64)>,
    originals: HashSet<Vec<u64>>,
}

enum LineError {
    Malformed,
    OutOfVocabulary,
}

impl<'a> RowParser<'a> {
    /// Numerical values are clamped to the range observed in `original`.
    pub fn new(original: &'a Table) -> Self {
        let schema = &original.schema;
        let ranges = (0..schema.arity())
            .map(|c| {
                let mut range = (f64::INFINITY, f64::NEG_INFINITY);
                if !schema.columns[c].is_categorical() {
                    for v in original.column(c) {
                        range.0 = range.0.min(v.as_f64());
                        range.1 = range.1.max(v.as_f64());
                    }
                }
                range
            })
            .collect();
        RowParser {
            schema,
            ranges,
            originals: original.rows.iter().map(|r| row_key(r)).collect(),
        }
    }

    pub fn parse(&self, raw: &str) -> (Vec<Row>, ParseCounts) {
        let mut rows = Vec::new();
        let mut counts = ParseCounts::default();
        let header = self.schema.header();
        for line in candidate_lines(raw) {
            let Some(fields) = split_record(line) else {
                counts.candidate_lines += 1;
                counts.rejected_malformed += 1;
                continue;
            };
            if fields.len() == header.len() && fields.iter().zip(&header).all(|(f, h)| f.trim() == *h) {
                continue;
            }
            counts.candidate_lines += 1;
            match self.parse_fields(&fields) {
                Ok(row) if self.originals.contains(&row_key(&row)) => {
                    counts.rejected_duplicate_of_original += 1;
                }
                Ok(row) => {
                    counts.parsed_ok += 1;
                    rows.push(row);
                }
                Err(LineError::Malformed) => counts.rejected_malformed += 1,
                Err(LineError::OutOfVocabulary) => counts.rejected_oov += 1,
            }
        }
        (rows, counts)
    }

    fn parse_fields(&self, fields: &[String]) -> Result<Row, LineError> {
        if fields.len() != self.schema.arity() {
            return Err(LineError::Malformed);
        }
        // Type errors take precedence over vocabulary errors.
        let mut oov = false;
        let mut row = Vec::with_capacity(fields.len());
        for (c, cell) in fields.iter().enumerate() {
            let cell = cell.trim();
            match &self.schema.columns[c].kind {
                ColumnKind::Numerical { .. } => {
                    let x = crate::data::parse_numeric(cell).map_err(|_| LineError::Malformed)?;
                    let (lo, hi) = self.ranges[c];
                    row.push(Value::Num(if lo <= hi { x.clamp(lo, hi) } else { x }));
                }
                ColumnKind::Categorical { vocabulary } => {
                    let token = if cell.is_empty() { MISSING_TOKEN } else { cell };
                    match vocabulary.iter().position(|v| v == token) {
                        Some(i) => row.push(Value::Cat(i as u32)),
                        None => {
                            oov = true;
                            row.push(Value::Cat(0));
                        }
                    }
                }
            }
        }
        if oov {
            Err(LineError::OutOfVocabulary)
        } else {
            Ok(row)
        }
    }
}

/// Parses one response against `original`'s schema and rows.
pub fn parse_rows(raw: &str, original: &Table) -> (Vec<Row>, ParseCounts) {
    RowParser::new(original).parse(raw)
}

/// Lines inside code fences when the response has any, otherwise every
/// line containing a comma.
fn candidate_lines(raw: &str) -> Vec<&str> {
    let fenced = raw.lines().any(|l| l.trim_start().starts_with("```"));
    let mut inside = false;
    let mut out = Vec::new();
    for line in raw.lines() {
        let trimmed = line.trim();
        if fenced {
            if trimmed.starts_with("```") {
                inside = !inside;
                continue;
            }
            if inside && !trimmed.is_empty() {
                out.push(trimmed);
            }
        } else if trimmed.contains(',') {
            out.push(trimmed);
        }
    }
    out
}

fn split_record(line: &str) -> Option<Vec<String>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(line.as_bytes());
    let record = reader.records().next()?.ok()?;
    Some(record.iter().map(str::to_string).collect())
}
