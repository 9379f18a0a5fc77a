//! Expected-gradients importances, second-order interaction maps and
//! feature-group extraction.
//!
//! Everything is computed on encoded vectors and then reduced to feature
//! fields by summing the signed entries of each field's encoded block.

use std::path::Path;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::data::{Encoder, Row, Table};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::predictor::LogitModel;
use crate::seed;

/// Default cap on the number of rows summed into the dataset-level map.
pub const DEFAULT_MAP_SAMPLE: usize = 2_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    AllZeros,
    Sampled,
}

/// Reference inputs `x^b`, already encoded.
#[derive(Clone, Debug, PartialEq)]
pub struct BaselineSet {
    pub kind: BaselineKind,
    pub rows: Vec<Vec<f64>>,
    pub source: String,
}

impl BaselineSet {
    /// The single all-zero encoded vector (every numeric field at its mean,
    /// no category active).
    pub fn all_zeros(dim: usize) -> Self {
        BaselineSet {
            kind: BaselineKind::AllZeros,
            rows: vec![vec![0.0; dim]],
            source: "all-zero encoded vector".into(),
        }
    }

    /// `count` distinct rows of `table`, drawn under `seed` and encoded.
    pub fn sampled(encoder: &Encoder, table: &Table, count: usize, seed: u64) -> Result<Self> {
        if count == 0 || table.is_empty() {
            return Err(Error::InvalidArgument("baseline set must be nonempty".into()));
        }
        let count = count.min(table.len());
        let picks = index::sample(&mut seed::rng(seed), table.len(), count).into_vec();
        let rows = picks
            .iter()
            .map(|&i| encoder.encode(&table.rows[i]))
            .collect::<Result<Vec<_>>>()?;
        Ok(BaselineSet {
            kind: BaselineKind::Sampled,
            rows,
            source: format!("{count} rows sampled with seed {seed}"),
        })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// Attribution engine for one model, encoder and baseline set. Hessians are
/// evaluated at the baselines, so they are computed once per (class,
/// baseline) and reused for every sample.
pub struct Attributor<'a, M: LogitModel + ?Sized> {
    model: &'a M,
    encoder: &'a Encoder,
    baselines: &'a BaselineSet,
    position_fields: Vec<usize>,
    hessians: Vec<std::cell::OnceCell<Vec<Matrix>>>,
}

impl<'a, M: LogitModel + ?Sized> Attributor<'a, M> {
    pub fn new(model: &'a M, encoder: &'a Encoder, baselines: &'a BaselineSet) -> Result<Self> {
        if baselines.is_empty() {
            return Err(Error::InvalidArgument("baseline set must be nonempty".into()));
        }
        if model.input_dim() != encoder.dim()
            || baselines.rows.iter().any(|b| b.len() != encoder.dim())
        {
            return Err(Error::InvalidArgument(
                "model, encoder and baselines disagree on input width".into(),
            ));
        }
        Ok(Attributor {
            model,
            encoder,
            baselines,
            position_fields: encoder.position_fields(),
            hessians: (0..model.num_classes()).map(|_| Default::default()).collect(),
        })
    }

    pub fn num_fields(&self) -> usize {
        self.encoder.num_fields()
    }

    fn baseline_hessians(&self, class: usize) -> &[Matrix] {
        self.hessians[class].get_or_init(|| {
            self.baselines
                .rows
                .iter()
                .map(|b| self.model.input_hessian(b, class))
                .collect()
        })
    }

    /// `EG_i = mean_b (v_i - b_i) ∂f/∂v_i (v)`, summed per field.
    pub fn expected_gradients(&self, input: &[f64], class: usize) -> Vec<f64> {
        let gradient = self.model.input_gradient(input, class);
        let mut encoded = vec![0.0; input.len()];
        for baseline in &self.baselines.rows {
            for p in 0..input.len() {
                encoded[p] += (input[p] - baseline[p]) * gradient[p];
            }
        }
        let n = self.baselines.len() as f64;
        self.encoder
            .sum_by_field(&encoded)
            .into_iter()
            .map(|x| x / n)
            .collect()
    }

    /// `Γ_ij = mean_b (v_i - b_i)(v_j - b_j) ∂²f(b)/∂v_i∂v_j`, reduced to
    /// fields and symmetrized.
    pub fn interaction_map(&self, input: &[f64], class: usize) -> Matrix {
        let k = self.num_fields();
        let dim = input.len();
        let mut fields = Matrix::zeros(k, k);
        for (baseline, hessian) in self.baselines.rows.iter().zip(self.baseline_hessians(class)) {
            let delta: Vec<f64> = input.iter().zip(baseline).map(|(v, b)| v - b).collect();
            for p in 0..dim {
                if delta[p] == 0.0 {
                    continue;
                }
                let fp = self.position_fields[p];
                let h_row = hessian.row(p);
                for q in 0..dim {
                    if delta[q] == 0.0 || h_row[q] == 0.0 {
                        continue;
                    }
                    fields.add_at(fp, self.position_fields[q], delta[p] * delta[q] * h_row[q]);
                }
            }
        }
        fields.scale(1.0 / self.baselines.len() as f64).symmetrized()
    }

    /// `Σ |Γ(x)|` over the given encoded samples.
    pub fn aggregate<'r>(
        &self,
        samples: impl IntoIterator<Item = (&'r [f64], usize)>,
    ) -> InteractionMap {
        let k = self.num_fields();
        let mut total = Matrix::zeros(k, k);
        let mut count = 0;
        for (input, class) in samples {
            let gamma = self.interaction_map(input, class);
            total = total.add(&gamma.map(f64::abs));
            count += 1;
        }
        InteractionMap {
            gamma: total,
            sample_count: count,
            threshold: None,
        }
    }

    /// Aggregates over table rows, using each row's own label as the class.
    pub fn aggregate_rows(&self, rows: &[Row], label_index: usize) -> Result<InteractionMap> {
        if rows.is_empty() {
            return Err(Error::Empty("interaction map needs at least one sample".into()));
        }
        let encoded = rows
            .iter()
            .map(|r| self.encoder.encode(r))
            .collect::<Result<Vec<_>>>()?;
        let classes = rows.iter().map(|r| label_of(r, label_index));
        Ok(self.aggregate(encoded.iter().map(Vec::as_slice).zip(classes)))
    }
}

fn label_of(row: &[crate::data::Value], label_index: usize) -> usize {
    row[label_index].as_cat().expect("label is categorical") as usize
}

/// Field-level expected gradients of one row, attributed to its own label.
pub fn expected_gradients<M: LogitModel + ?Sized>(
    model: &M,
    encoder: &Encoder,
    row: &[crate::data::Value],
    label_index: usize,
    baselines: &BaselineSet,
) -> Result<Vec<f64>> {
    let attributor = Attributor::new(model, encoder, baselines)?;
    Ok(attributor.expected_gradients(&encoder.encode(row)?, label_of(row, label_index)))
}

/// Per-sample field interaction map of one row.
pub fn interaction_map<M: LogitModel + ?Sized>(
    model: &M,
    encoder: &Encoder,
    row: &[crate::data::Value],
    label_index: usize,
    baselines: &BaselineSet,
) -> Result<Matrix> {
    let attributor = Attributor::new(model, encoder, baselines)?;
    Ok(attributor.interaction_map(&encoder.encode(row)?, label_of(row, label_index)))
}

/// Dataset-level map over `rows`.
pub fn aggregate_map<M: LogitModel + ?Sized>(
    model: &M,
    encoder: &Encoder,
    rows: &[Row],
    label_index: usize,
    baselines: &BaselineSet,
) -> Result<InteractionMap> {
    Attributor::new(model, encoder, baselines)?.aggregate_rows(rows, label_index)
}

/// Row indices used for the dataset-level map: all rows when the table has
/// at most `cap` of them, otherwise `cap` rows drawn under `seed` (in
/// ascending order).
pub fn map_sample(table: &Table, cap: usize, seed: u64) -> Vec<usize> {
    if table.len() <= cap {
        return (0..table.len()).collect();
    }
    let mut picks = index::sample(&mut seed::rng(seed), table.len(), cap).into_vec();
    picks.sort_unstable();
    picks
}

/// Aggregated field-by-field interaction strengths.
#[derive(Clone, Debug, PartialEq)]
pub struct InteractionMap {
    pub gamma: Matrix,
    pub sample_count: usize,
    /// Threshold applied by the last [`extract_groups`] call, if any.
    pub threshold: Option<f64>,
}

impl InteractionMap {
    pub fn num_fields(&self) -> usize {
        self.gamma.rows()
    }

    /// Largest off-diagonal entry and its `(i, j)` with `i < j`.
    pub fn max_off_diagonal(&self) -> Option<(usize, usize, f64)> {
        let k = self.num_fields();
        let mut best: Option<(usize, usize, f64)> = None;
        for i in 0..k {
            for j in i + 1..k {
                let v = self.gamma.get(i, j);
                if best.is_none_or(|(_, _, b)| v > b) {
                    best = Some((i, j, v));
                }
            }
        }
        best
    }

    /// K×K CSV with a header of field names and one row per field.
    pub fn write_csv(&self, path: &Path, field_names: &[String]) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut writer = csv::Writer::from_writer(std::io::BufWriter::new(file));
        writer.write_record(field_names)?;
        for i in 0..self.num_fields() {
            writer.write_record(self.gamma.row(i).iter().map(|x| crate::data::format_number(*x)))?;
        }
        writer.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: &Path, sample_count: usize) -> Result<Self> {
        let mut reader = csv::Reader::from_path(path)?;
        let k = reader.headers()?.len();
        let mut rows = Vec::with_capacity(k);
        for (r, record) in reader.records().enumerate() {
            let record = record?;
            let row = record
                .iter()
                .map(|cell| {
                    cell.parse::<f64>().map_err(|_| Error::Parse {
                        row: r,
                        message: format!("`{cell}` is not a number"),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            rows.push(row);
        }
        if rows.len() != k || rows.iter().any(|r| r.len() != k) {
            return Err(Error::Parse {
                row: rows.len(),
                message: format!("interaction map must be {k}x{k}"),
            });
        }
        Ok(InteractionMap {
            gamma: Matrix::from_rows(&rows),
            sample_count,
            threshold: None,
        })
    }
}

/// Non-independent feature groups (size ≥ 2), each sorted, ordered by their
/// smallest field. Fields outside every group are independent singletons.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureGroups {
    pub num_fields: usize,
    pub groups: Vec<Vec<usize>>,
    pub gamma: f64,
    pub threshold: f64,
}

impl FeatureGroups {
    /// Every field on its own.
    pub fn independent(num_fields: usize) -> Self {
        FeatureGroups {
            num_fields,
            groups: Vec::new(),
            gamma: 1.0,
            threshold: 0.0,
        }
    }

    pub fn singletons(&self) -> Vec<usize> {
        (0..self.num_fields)
            .filter(|f| !self.groups.iter().any(|g| g.contains(f)))
            .collect()
    }

    /// Factorization covering every field exactly once: each group, then each
    /// singleton.
    pub fn factors(&self) -> Vec<Vec<usize>> {
        let mut factors = self.groups.clone();
        factors.extend(self.singletons().into_iter().map(|f| vec![f]));
        factors
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = vec![false; self.num_fields];
        for group in &self.groups {
            if group.len() < 2 {
                return Err(Error::InvalidArgument(format!("group {group:?} has fewer than two fields")));
            }
            for &f in group {
                if f >= self.num_fields || std::mem::replace(&mut seen[f], true) {
                    return Err(Error::InvalidArgument(format!(
                        "field {f} is out of range or appears in two groups"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn write_json(&self, path: &Path, field_names: &[String]) -> Result<()> {
        #[derive(Serialize)]
        struct Out<'a> {
            #[serde(flatten)]
            groups: &'a FeatureGroups,
            singletons: Vec<usize>,
            group_names: Vec<Vec<&'a str>>,
        }
        let out = Out {
            groups: self,
            singletons: self.singletons(),
            group_names: self
                .groups
                .iter()
                .map(|g| g.iter().map(|&f| field_names[f].as_str()).collect())
                .collect(),
        };
        let text = serde_json::to_string_pretty(&out)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let groups: FeatureGroups = serde_json::from_str(&text)?;
        groups.validate()?;
        Ok(groups)
    }
}

/// Thresholds the map at `gamma × max off-diagonal` and merges the surviving
/// pairs into connected components. The comparison is strict, except at
/// `gamma = 1` where `≥` keeps the argmax pair.
pub fn extract_groups(map: &mut InteractionMap, gamma: f64) -> Result<FeatureGroups> {
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(Error::InvalidArgument(format!("gamma must lie in (0, 1], got {gamma}")));
    }
    let k = map.num_fields();
    let max = map.max_off_diagonal().map_or(0.0, |(_, _, v)| v);
    let threshold = gamma * max;
    map.threshold = Some(threshold);
    if max <= 0.0 {
        return Ok(FeatureGroups {
            num_fields: k,
            groups: Vec::new(),
            gamma,
            threshold,
        });
    }
    let mut pairs = Vec::new();
    for i in 0..k {
        for j in i + 1..k {
            let v = map.gamma.get(i, j);
            let keep = if gamma >= 1.0 { v >= threshold } else { v > threshold };
            if keep {
                pairs.push((i, j));
            }
        }
    }
    Ok(FeatureGroups {
        num_fields: k,
        groups: merge_pairs(k, &pairs),
        gamma,
        threshold,
    })
}

/// Connected components (size ≥ 2) of the graph whose edges are `pairs`.
pub fn merge_pairs(num_fields: usize, pairs: &[(usize, usize)]) -> Vec<Vec<usize>> {
    let mut parent: Vec<usize> = (0..num_fields).collect();
    fn find(parent: &mut [usize], x: usize) -> usize {
        let mut root = x;
        while parent[root] != root {
            root = parent[root];
        }
        let mut node = x;
        while parent[node] != root {
            let next = parent[node];
            parent[node] = root;
            node = next;
        }
        root
    }
    for &(a, b) in pairs {
        let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
        if ra != rb {
            parent[ra.max(rb)] = ra.min(rb);
        }
    }
    let mut components: Vec<Vec<usize>> = vec![Vec::new(); num_fields];
    for f in 0..num_fields {
        let root = find(&mut parent, f);
        components[root].push(f);
    }
    let mut groups: Vec<Vec<usize>> = components.into_iter().filter(|c| c.len() >= 2).collect();
    groups.sort_by_key(|g| g[0]);
    groups
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{ColumnSpec, TableSchema, Value};
    use crate::predictor::{Activation, Dense, Mlp};
    use rand::Rng;

    /// Logit of class 1 is `v[a]·v[b]`, class 0 is its negation.
    struct Bilinear {
        dim: usize,
        a: usize,
        b: usize,
        scale: f64,
    }

    impl LogitModel for Bilinear {
        fn input_dim(&self) -> usize {
            self.dim
        }
        fn num_classes(&self) -> usize {
            2
        }
        fn logits(&self, v: &[f64]) -> Vec<f64> {
            let f = self.scale * v[self.a] * v[self.b];
            vec![-f, f]
        }
        fn input_gradient(&self, v: &[f64], class: usize) -> Vec<f64> {
            let sign = if class == 1 { self.scale } else { -self.scale };
            let mut g = vec![0.0; self.dim];
            g[self.a] = sign * v[self.b];
            g[self.b] = sign * v[self.a];
            g
        }
        fn input_hessian(&self, _v: &[f64], class: usize) -> Matrix {
            let sign = if class == 1 { self.scale } else { -self.scale };
            let mut h = Matrix::zeros(self.dim, self.dim);
            h.set(self.a, self.b, sign);
            h.set(self.b, self.a, sign);
            h
        }
    }

    fn numeric_schema(k: usize) -> TableSchema {
        let mut columns: Vec<ColumnSpec> = (0..k)
            .map(|i| ColumnSpec::numerical(format!("f{i}"), -5.0, 5.0))
            .collect();
        columns.push(ColumnSpec::categorical("y", vec!["0".into(), "1".into()]));
        TableSchema::new(columns, k).unwrap()
    }

    #[test]
    fn bilinear_sample_map() {
        let schema = numeric_schema(10);
        let encoder = Encoder::with_stats(&schema, false, 0.0, 1.0).unwrap();
        let model = Bilinear { dim: 10, a: 1, b: 8, scale: 1.0 };
        let baselines = BaselineSet::all_zeros(10);
        let mut row: Row = vec![Value::Num(0.5); 10];
        row[1] = Value::Num(2.0);
        row[8] = Value::Num(3.0);
        row.push(Value::Cat(1));
        let gamma = interaction_map(&model, &encoder, &row, 10, &baselines).unwrap();
        for i in 0..10 {
            for j in 0..10 {
                let expected = if (i, j) == (1, 8) || (i, j) == (8, 1) { 6.0 } else { 0.0 };
                assert_eq!(gamma.get(i, j), expected, "({i},{j})");
            }
        }
    }

    #[test]
    fn linear_closed_forms() {
        let w = vec![1.0, -2.0, 0.5];
        let net = Mlp::from_layers(
            vec![Dense::new(Matrix::from_rows(&[vec![0.0; 3], w.clone()]), vec![0.0, 0.1])],
            Activation::Softplus,
        );
        let schema = numeric_schema(3);
        let encoder = Encoder::with_stats(&schema, false, 0.0, 1.0).unwrap();
        let baselines = BaselineSet::all_zeros(3);
        let row = vec![Value::Num(3.0), Value::Num(1.0), Value::Num(-4.0), Value::Cat(1)];
        let eg = expected_gradients(&net, &encoder, &row, 3, &baselines).unwrap();
        assert_eq!(eg, vec![3.0, -2.0, -2.0]);
        let gamma = interaction_map(&net, &encoder, &row, 3, &baselines).unwrap();
        assert_eq!(gamma, Matrix::zeros(3, 3));

        // Row equal to the baseline attributes nothing.
        let at_baseline = vec![Value::Num(0.0), Value::Num(0.0), Value::Num(0.0), Value::Cat(1)];
        let eg = expected_gradients(&net, &encoder, &at_baseline, 3, &baselines).unwrap();
        assert!(eg.iter().all(|&x| x == 0.0));
    }

    fn random_net(dim: usize, s: u64) -> Mlp {
        let mut rng = seed::rng(s);
        let mut net = Mlp::new(&[dim, 6, 4, 2], Activation::Softplus, &mut rng);
        for layer in net.layers_mut() {
            for w in layer.weights.iter_mut() {
                *w = rng.random_range(-1.0..1.0);
            }
            for b in layer.bias.iter_mut() {
                *b = rng.random_range(-0.5..0.5);
            }
        }
        net
    }

    fn mixed_setup() -> (TableSchema, Encoder) {
        let schema = TableSchema::new(
            vec![
                ColumnSpec::numerical("n1", -3.0, 3.0),
                ColumnSpec::categorical("c", vec!["a".into(), "b".into(), "c".into()]),
                ColumnSpec::numerical("n2", -3.0, 3.0),
                ColumnSpec::categorical("y", vec!["0".into(), "1".into()]),
            ],
            3,
        )
        .unwrap();
        let encoder = Encoder::with_stats(&schema, false, 0.5, 2.0).unwrap();
        (schema, encoder)
    }

    #[test]
    fn expected_gradients_match_direct_formula() {
        let (_, encoder) = mixed_setup();
        let net = random_net(encoder.dim(), 17);
        let mut rng = seed::rng(3);
        let baselines = BaselineSet {
            kind: BaselineKind::Sampled,
            rows: (0..4)
                .map(|_| (0..encoder.dim()).map(|_| rng.random_range(-1.0..1.0)).collect())
                .collect(),
            source: "test".into(),
        };
        let row = vec![Value::Num(1.7), Value::Cat(2), Value::Num(-0.4), Value::Cat(0)];
        let eg = expected_gradients(&net, &encoder, &row, 3, &baselines).unwrap();

        // Independent route: finite-difference gradient, explicit field blocks.
        let v = encoder.encode(&row).unwrap();
        let h = 1e-6;
        let grad: Vec<f64> = (0..v.len())
            .map(|p| {
                let mut plus = v.clone();
                let mut minus = v.clone();
                plus[p] += h;
                minus[p] -= h;
                (net.logits(&plus)[0] - net.logits(&minus)[0]) / (2.0 * h)
            })
            .collect();
        let blocks = [0..1, 1..4, 4..5];
        for (field, block) in blocks.iter().enumerate() {
            let mut total = 0.0;
            for b in &baselines.rows {
                for p in block.clone() {
                    total += (v[p] - b[p]) * grad[p];
                }
            }
            total /= baselines.len() as f64;
            assert!((eg[field] - total).abs() < 1e-7, "field {field}: {} vs {total}", eg[field]);
        }
    }

    #[test]
    fn interaction_map_matches_finite_differences() {
        let (_, encoder) = mixed_setup();
        let mut rng = seed::rng(8);
        for s in 0..5 {
            let net = random_net(encoder.dim(), 40 + s);
            let baselines = BaselineSet {
                kind: BaselineKind::Sampled,
                rows: (0..3)
                    .map(|_| (0..encoder.dim()).map(|_| rng.random_range(-1.0..1.0)).collect())
                    .collect(),
                source: "test".into(),
            };
            let row = vec![Value::Num(2.0), Value::Cat(1), Value::Num(-1.0), Value::Cat(1)];
            let gamma = interaction_map(&net, &encoder, &row, 3, &baselines).unwrap();
            let v = encoder.encode(&row).unwrap();
            let fields = encoder.position_fields();
            let h = 1e-3;
            let f = |x: &[f64]| net.logits(x)[1];
            let mut oracle = Matrix::zeros(3, 3);
            for b in &baselines.rows {
                for p in 0..v.len() {
                    for q in 0..v.len() {
                        let mut pp = b.clone();
                        let mut pm = b.clone();
                        let mut mp = b.clone();
                        let mut mm = b.clone();
                        pp[p] += h;
                        pp[q] += h;
                        pm[p] += h;
                        pm[q] -= h;
                        mp[p] -= h;
                        mp[q] += h;
                        mm[p] -= h;
                        mm[q] -= h;
                        let second = (f(&pp) - f(&pm) - f(&mp) + f(&mm)) / (4.0 * h * h);
                        oracle.add_at(
                            fields[p],
                            fields[q],
                            (v[p] - b[p]) * (v[q] - b[q]) * second / baselines.len() as f64,
                        );
                    }
                }
            }
            let oracle = oracle.symmetrized();
            assert!(gamma.max_abs_diff(&oracle) <= 1e-3, "{gamma:?} vs {oracle:?}");
            assert_eq!(gamma, gamma.transpose());
        }
    }

    fn bilinear_rows(n: usize, s: u64) -> Vec<Row> {
        let mut rng = seed::rng(s);
        (0..n)
            .map(|_| {
                let mut row: Row = (0..10).map(|_| Value::Num(rng.random_range(-2.0..2.0))).collect();
                row.push(Value::Cat(rng.random_range(0..2)));
                row
            })
            .collect()
    }

    #[test]
    fn aggregate_properties() {
        let schema = numeric_schema(10);
        let encoder = Encoder::with_stats(&schema, false, 0.0, 1.0).unwrap();
        let model = Bilinear { dim: 10, a: 1, b: 8, scale: 1.0 };
        let baselines = BaselineSet::all_zeros(10);
        let rows = bilinear_rows(100, 1);

        let single = aggregate_map(&model, &encoder, &rows[..1], 10, &baselines).unwrap();
        let direct = interaction_map(&model, &encoder, &rows[0], 10, &baselines).unwrap();
        assert_eq!(single.gamma, direct.map(f64::abs));

        let map = aggregate_map(&model, &encoder, &rows, 10, &baselines).unwrap();
        assert_eq!(map.sample_count, 100);
        let (i, j, top) = map.max_off_diagonal().unwrap();
        assert_eq!((i, j), (1, 8));
        for a in 0..10 {
            for b in a + 1..10 {
                if (a, b) != (1, 8) {
                    assert!(map.gamma.get(a, b) < top);
                }
            }
        }

        let doubled: Vec<Row> = rows.iter().chain(&rows).cloned().collect();
        let twice = aggregate_map(&model, &encoder, &doubled, 10, &baselines).unwrap();
        assert!(twice.gamma.max_abs_diff(&map.gamma.scale(2.0)) < 1e-9);
        assert!(aggregate_map(&model, &encoder, &[], 10, &baselines).is_err());
    }

    #[test]
    fn scaling_logits_scales_map_and_keeps_groups() {
        let (_, encoder) = mixed_setup();
        let net = random_net(encoder.dim(), 5);
        let mut scaled = net.clone();
        let last = scaled.layers().len() - 1;
        for w in scaled.layers_mut()[last].weights.iter_mut() {
            *w *= 4.0;
        }
        for b in scaled.layers_mut()[last].bias.iter_mut() {
            *b *= 4.0;
        }
        let baselines = BaselineSet::all_zeros(encoder.dim());
        let rows = vec![
            vec![Value::Num(2.0), Value::Cat(1), Value::Num(-1.0), Value::Cat(1)],
            vec![Value::Num(-1.0), Value::Cat(0), Value::Num(3.0), Value::Cat(0)],
        ];
        let mut base = aggregate_map(&net, &encoder, &rows, 3, &baselines).unwrap();
        let mut big = aggregate_map(&scaled, &encoder, &rows, 3, &baselines).unwrap();
        assert!(big.gamma.max_abs_diff(&base.gamma.scale(4.0)) < 1e-9);
        assert_eq!(
            extract_groups(&mut base, 0.5).unwrap().groups,
            extract_groups(&mut big, 0.5).unwrap().groups
        );
    }

    fn map_with_pairs(k: usize, pairs: &[(usize, usize, f64)]) -> InteractionMap {
        let mut gamma = Matrix::zeros(k, k);
        for i in 0..k {
            gamma.set(i, i, 100.0);
        }
        for &(i, j, v) in pairs {
            gamma.set(i, j, v);
            gamma.set(j, i, v);
        }
        InteractionMap {
            gamma,
            sample_count: 1,
            threshold: None,
        }
    }

    #[test]
    fn merges_overlapping_pairs() {
        let mut map = map_with_pairs(10, &[(1, 3, 9.0), (3, 8, 8.0), (2, 5, 10.0), (0, 4, 1.0)]);
        let groups = extract_groups(&mut map, 0.5).unwrap();
        assert_eq!(groups.groups, vec![vec![1, 3, 8], vec![2, 5]]);
        assert_eq!(groups.threshold, 5.0);
        assert_eq!(map.threshold, Some(5.0));
        assert!(groups.groups.len() <= groups.num_fields);
        let factors = groups.factors();
        let mut covered: Vec<usize> = factors.concat();
        covered.sort_unstable();
        assert_eq!(covered, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn gamma_one_keeps_the_argmax_pair() {
        let mut map = map_with_pairs(5, &[(0, 2, 3.0), (1, 4, 2.0)]);
        assert_eq!(extract_groups(&mut map, 1.0).unwrap().groups, vec![vec![0, 2]]);
    }

    #[test]
    fn zero_map_has_no_groups_and_bad_gamma_errors() {
        let mut map = InteractionMap {
            gamma: Matrix::zeros(4, 4),
            sample_count: 0,
            threshold: None,
        };
        let groups = extract_groups(&mut map, 0.5).unwrap();
        assert!(groups.groups.is_empty());
        assert_eq!(groups.singletons(), vec![0, 1, 2, 3]);
        assert!(extract_groups(&mut map, 0.0).is_err());
        assert!(extract_groups(&mut map, 1.5).is_err());
    }

    #[test]
    fn map_csv_round_trip() {
        let map = map_with_pairs(3, &[(0, 2, 0.125)]);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("map.csv");
        let names: Vec<String> = vec!["a".into(), "b".into(), "c".into()];
        map.write_csv(&path, &names).unwrap();
        let back = InteractionMap::read_csv(&path, 1).unwrap();
        assert_eq!(back, map);
    }
}
