use super::{ColumnKind, Table, TableSchema, Value};
use crate::error::{Error, Result};

/// Fits `bins` quantile bins per numerical column of `table` and records the
/// observed range. Edges are the interior `q/bins` quantiles (linear
/// interpolation); duplicates and edges at or below the column minimum are
/// dropped, so a column may end up with fewer than `bins` bins.
pub fn fit_bins(table: &Table, bins: usize) -> Result<TableSchema> {
    if bins < 2 {
        return Err(Error::InvalidArgument(format!("bin count must be >= 2, got {bins}")));
    }
    if table.is_empty() {
        return Err(Error::Empty("cannot fit bins on an empty table".into()));
    }
    let mut schema = table.schema.clone();
    for (c, column) in schema.columns.iter_mut().enumerate() {
        if column.is_categorical() {
            continue;
        }
        let mut values: Vec<f64> = table
            .column(c)
            .map(|v| match v {
                Value::Num(x) => x,
                Value::Cat(_) => unreachable!("numerical column holds numbers"),
            })
            .collect();
        values.sort_by(f64::total_cmp);
        let min = values[0];
        let max = values[values.len() - 1];
        let mut edges: Vec<f64> = Vec::with_capacity(bins - 1);
        for q in 1..bins {
            let edge = quantile_sorted(&values, q as f64 / bins as f64);
            if edge > min && edges.last().is_none_or(|&last| edge > last) {
                edges.push(edge);
            }
        }
        if edges.is_empty() {
            log::warn!("column `{}` is constant; using a single bin", column.name);
        }
        column.kind = ColumnKind::Numerical {
            min,
            max,
            bin_edges: Some(edges),
        };
    }
    Ok(schema)
}

/// Linear-interpolation quantile of sorted data.
pub(crate) fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let position = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lower = position.floor() as usize;
    let upper = position.ceil() as usize;
    let frac = position - lower as f64;
    sorted[lower] + (sorted[upper] - sorted[lower]) * frac
}
