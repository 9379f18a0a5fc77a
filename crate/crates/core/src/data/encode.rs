use serde::{Deserialize, Serialize};

use super::{ColumnKind, Table, TableSchema, Value};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum SegmentKind {
    /// z-scored numeric value.
    Numeric { mean: f64, std: f64 },
    /// One-hot block over the column vocabulary.
    OneHot { size: usize },
}

/// Where one field lives in the encoded vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncodedSegment {
    pub column: usize,
    pub offset: usize,
    pub width: usize,
    pub kind: SegmentKind,
}

/// Dense numeric encoding of rows: z-score for numerical columns, one-hot for
/// categorical ones. Segment `k` encodes feature field `k`; with
/// `include_label` an extra final segment encodes the label.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Encoder {
    segments: Vec<EncodedSegment>,
    dim: usize,
}

impl Encoder {
    /// Uses `table` statistics (population mean and standard deviation) for
    /// numerical columns. Constant columns get unit scale.
    pub fn fit(table: &Table, include_label: bool) -> Result<Self> {
        if table.is_empty() {
            return Err(Error::Empty("cannot fit an encoder on an empty table".into()));
        }
        let n = table.len() as f64;
        Self::build(&table.schema, include_label, |c| {
            let mean = table.column(c).map(Value::as_f64).sum::<f64>() / n;
            let var = table
                .column(c)
                .map(|v| (v.as_f64() - mean).powi(2))
                .sum::<f64>()
                / n;
            (mean, var.sqrt())
        })
    }

    /// Encoder with fixed statistics for every numerical column.
    pub fn with_stats(schema: &TableSchema, include_label: bool, mean: f64, std: f64) -> Result<Self> {
        Self::build(schema, include_label, |_| (mean, std))
    }

    fn build(
        schema: &TableSchema,
        include_label: bool,
        mut stats: impl FnMut(usize) -> (f64, f64),
    ) -> Result<Self> {
        let mut columns: Vec<usize> = schema.field_columns().collect();
        if include_label {
            columns.push(schema.label_index);
        }
        let mut segments = Vec::with_capacity(columns.len());
        let mut offset = 0;
        for c in columns {
            let (width, kind) = match &schema.columns[c].kind {
                ColumnKind::Categorical { vocabulary } => {
                    (vocabulary.len(), SegmentKind::OneHot { size: vocabulary.len() })
                }
                ColumnKind::Numerical { .. } => {
                    let (mean, std) = stats(c);
                    let std = if std > 1e-12 && std.is_finite() { std } else { 1.0 };
                    (1, SegmentKind::Numeric { mean, std })
                }
            };
            segments.push(EncodedSegment {
                column: c,
                offset,
                width,
                kind,
            });
            offset += width;
        }
        Ok(Encoder {
            segments,
            dim: offset,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_fields(&self) -> usize {
        self.segments.len()
    }

    pub fn segments(&self) -> &[EncodedSegment] {
        &self.segments
    }

    /// Field owning encoded position `position`.
    pub fn field_of(&self, position: usize) -> usize {
        self.segments
            .partition_point(|s| s.offset + s.width <= position)
    }

    /// Field index for every encoded position.
    pub fn position_fields(&self) -> Vec<usize> {
        self.segments
            .iter()
            .enumerate()
            .flat_map(|(field, s)| std::iter::repeat_n(field, s.width))
            .collect()
    }

    pub fn encode(&self, row: &[Value]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.dim];
        self.encode_into(row, &mut out)?;
        Ok(out)
    }

    pub fn encode_into(&self, row: &[Value], out: &mut [f64]) -> Result<()> {
        debug_assert_eq!(out.len(), self.dim);
        out.fill(0.0);
        for segment in &self.segments {
            let value = *row.get(segment.column).ok_or_else(|| {
                Error::InvalidArgument(format!("row is missing column {}", segment.column))
            })?;
            match (&segment.kind, value) {
                (SegmentKind::Numeric { mean, std }, Value::Num(x)) => {
                    out[segment.offset] = (x - mean) / std;
                }
                (SegmentKind::OneHot { size }, Value::Cat(index)) => {
                    let index = index as usize;
                    if index >= *size {
                        return Err(Error::InvalidArgument(format!(
                            "out-of-vocabulary value {index} in column {}",
                            segment.column
                        )));
                    }
                    out[segment.offset + index] = 1.0;
                }
                _ => {
                    return Err(Error::InvalidArgument(format!(
                        "value kind does not match column {}",
                        segment.column
                    )))
                }
            }
        }
        Ok(())
    }

    pub fn encode_table(&self, table: &Table) -> Result<Vec<Vec<f64>>> {
        table.rows.iter().map(|row| self.encode(row)).collect()
    }

    /// Sums consecutive encoded entries of a vector into per-field totals.
    pub fn sum_by_field(&self, encoded: &[f64]) -> Vec<f64> {
        self.segments
            .iter()
            .map(|s| encoded[s.offset..s.offset + s.width].iter().sum())
            .collect()
    }
}
