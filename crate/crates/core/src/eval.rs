//! Downstream utility and distribution similarity of synthetic tables.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{ensure_compatible, Encoder, Table, TableSchema, Value};
use crate::error::{Error, Result};
use crate::predictor::{self, PredictorSpec};

pub const LOGLOSS_CLAMP: f64 = 1e-7;

/// ROC AUC of `scores` for the positive label `1`, with tied scores sharing
/// their midrank.
pub fn auc(scores: &[f64], labels: &[usize]) -> Result<f64> {
    check_lengths(scores.len(), labels.len())?;
    let positives = labels.iter().filter(|&&y| y == 1).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::InvalidArgument("AUC needs both classes among the labels".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start;
        while end + 1 < order.len() && scores[order[end + 1]] == scores[order[start]] {
            end += 1;
        }
        let midrank = (start + end) as f64 / 2.0 + 1.0;
        for &i in &order[start..=end] {
            if labels[i] == 1 {
                rank_sum += midrank;
            }
        }
        start = end + 1;
    }
    let (p, n) = (positives as f64, negatives as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// Mean binary cross-entropy of `scores = P(y = 1)`, clamped to
/// `[1e-7, 1 - 1e-7]`.
pub fn logloss(scores: &[f64], labels: &[usize]) -> Result<f64> {
    check_lengths(scores.len(), labels.len())?;
    let total: f64 = scores
        .iter()
        .zip(labels)
        .map(|(&s, &y)| {
            let p = s.clamp(LOGLOSS_CLAMP, 1.0 - LOGLOSS_CLAMP);
            if y == 1 { -p.ln() } else { -(1.0 - p).ln() }
        })
        .sum();
    Ok(total / scores.len() as f64)
}

fn check_lengths(scores: usize, labels: usize) -> Result<()> {
    if scores == 0 {
        return Err(Error::Empty("metrics need at least one prediction".into()));
    }
    if scores != labels {
        return Err(Error::InvalidArgument(format!("{scores} scores for {labels} labels")));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinaryMetrics {
    pub auc: f64,
    pub logloss: f64,
}

pub fn binary_metrics(scores: &[f64], labels: &[usize]) -> Result<BinaryMetrics> {
    Ok(BinaryMetrics {
        auc: auc(scores, labels)?,
        logloss: logloss(scores, labels)?,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MulticlassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Support-weighted precision, recall and F1 of argmax predictions.
/// Classes that are never predicted have precision 0.
pub fn multiclass_metrics(probs: &[Vec<f64>], labels: &[usize]) -> Result<MulticlassMetrics> {
    check_lengths(probs.len(), labels.len())?;
    let classes = probs[0].len();
    let mut confusion = vec![vec![0usize; classes]; classes];
    for (p, &y) in probs.iter().zip(labels) {
        let predicted = argmax(p);
        confusion[y][predicted] += 1;
    }
    let n = labels.len() as f64;
    let mut out = MulticlassMetrics { precision: 0.0, recall: 0.0, f1: 0.0 };
    for c in 0..classes {
        let support: usize = confusion[c].iter().sum();
        if support == 0 {
            continue;
        }
        let tp = confusion[c][c] as f64;
        let predicted: usize = confusion.iter().map(|row| row[c]).sum();
        let precision = if predicted == 0 { 0.0 } else { tp / predicted as f64 };
        let recall = tp / support as f64;
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        let weight = support as f64 / n;
        out.precision += weight * precision;
        out.recall += weight * recall;
        out.f1 += weight * f1;
    }
    Ok(out)
}

fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = i;
        }
    }
    best
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Metrics {
    Binary(BinaryMetrics),
    Multiclass(MulticlassMetrics),
}

impl Metrics {
    fn mean(all: &[Metrics]) -> Metrics {
        let n = all.len() as f64;
        match all[0] {
            Metrics::Binary(_) => {
                let (mut auc, mut logloss) = (0.0, 0.0);
                for m in all {
                    if let Metrics::Binary(b) = m {
                        auc += b.auc;
                        logloss += b.logloss;
                    }
                }
                Metrics::Binary(BinaryMetrics { auc: auc / n, logloss: logloss / n })
            }
            Metrics::Multiclass(_) => {
                let mut total = MulticlassMetrics { precision: 0.0, recall: 0.0, f1: 0.0 };
                for m in all {
                    if let Metrics::Multiclass(x) = m {
                        total.precision += x.precision;
                        total.recall += x.recall;
                        total.f1 += x.f1;
                    }
                }
                Metrics::Multiclass(MulticlassMetrics {
                    precision: total.precision / n,
                    recall: total.recall / n,
                    f1: total.f1 / n,
                })
            }
        }
    }

    pub fn auc(&self) -> Option<f64> {
        match self {
            Metrics::Binary(b) => Some(b.auc),
            Metrics::Multiclass(_) => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UtilityMode {
    Original,
    Augmentation,
    Mle,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UtilityReport {
    pub mode: UtilityMode,
    pub runs: usize,
    pub training_rows: usize,
    pub per_run: Vec<Metrics>,
    pub mean: Metrics,
}

/// Binary metrics for two-class labels, weighted P/R/F1 otherwise.
pub fn evaluate_probabilities(probs: &[Vec<f64>], labels: &[usize]) -> Result<Metrics> {
    if probs.first().is_some_and(|p| p.len() == 2) {
        let scores: Vec<f64> = probs.iter().map(|p| p[1]).collect();
        binary_metrics(&scores, labels).map(Metrics::Binary)
    } else {
        multiclass_metrics(probs, labels).map(Metrics::Multiclass)
    }
}

fn utility(
    mode: UtilityMode,
    training: &Table,
    test: &Table,
    spec: &PredictorSpec,
    runs: usize,
) -> Result<UtilityReport> {
    ensure_compatible(&training.schema, &test.schema)?;
    if runs == 0 {
        return Err(Error::InvalidArgument("at least one run is required".into()));
    }
    let encoder = Encoder::fit(training, false)?;
    let labels = test.labels();
    let per_run = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..runs)
            .map(|r| {
                let encoder = &encoder;
                let labels = &labels;
                scope.spawn(move || -> Result<Metrics> {
                    let spec = spec.with_seed(spec.seed.wrapping_add(r as u64));
                    let model = predictor::train(training, encoder, &spec)?;
                    evaluate_probabilities(&model.predict_table(test)?, labels)
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("utility run panicked"))
            .collect::<Result<Vec<_>>>()
    })?;
    Ok(UtilityReport {
        mode,
        runs,
        training_rows: training.len(),
        mean: Metrics::mean(&per_run),
        per_run,
    })
}

/// Trains on the original training set alone.
pub fn original_utility(train: &Table, test: &Table, spec: &PredictorSpec, runs: usize) -> Result<UtilityReport> {
    utility(UtilityMode::Original, train, test, spec, runs)
}

/// Trains on `train ∪ synth` and scores on `test`, averaging `runs` repeats
/// with seeds `spec.seed, spec.seed + 1, ...`.
pub fn augmentation_utility(
    train: &Table,
    test: &Table,
    synth: &Table,
    spec: &PredictorSpec,
    runs: usize,
) -> Result<UtilityReport> {
    utility(UtilityMode::Augmentation, &train.concat(synth)?, test, spec, runs)
}

/// Trains on the synthetic table alone.
pub fn mle_utility(synth: &Table, test: &Table, spec: &PredictorSpec, runs: usize) -> Result<UtilityReport> {
    utility(UtilityMode::Mle, synth, test, spec, runs)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColumnShape {
    pub column: String,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairTrend {
    pub columns: (String, String),
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimilarityReport {
    pub column_shapes: Vec<ColumnShape>,
    pub pair_trends: Vec<PairTrend>,
    /// Percentage in `[0, 100]`.
    pub overall: f64,
}

impl SimilarityReport {
    pub fn shape_mean(&self) -> f64 {
        mean(self.column_shapes.iter().map(|c| c.score))
    }

    pub fn trend_mean(&self) -> f64 {
        mean(self.pair_trends.iter().map(|p| p.score))
    }
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        1.0
    } else {
        sum / n as f64
    }
}

fn frequencies(codes: impl Iterator<Item = u32>) -> (HashMap<u32, f64>, usize) {
    let mut counts: HashMap<u32, f64> = HashMap::new();
    let mut n = 0;
    for c in codes {
        *counts.entry(c).or_insert(0.0) += 1.0;
        n += 1;
    }
    for v in counts.values_mut() {
        *v /= n as f64;
    }
    (counts, n)
}

/// Total variation distance between two empirical categorical distributions.
pub fn tv_distance(a: impl Iterator<Item = u32>, b: impl Iterator<Item = u32>) -> f64 {
    let (fa, _) = frequencies(a);
    let (fb, _) = frequencies(b);
    let mut keys: Vec<u32> = fa.keys().chain(fb.keys()).copied().collect();
    keys.sort_unstable();
    keys.dedup();
    keys.iter()
        .map(|k| (fa.get(k).unwrap_or(&0.0) - fb.get(k).unwrap_or(&0.0)).abs())
        .sum::<f64>()
        / 2.0
}

/// Two-sample Kolmogorov–Smirnov statistic.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> f64 {
    if a.is_empty() || b.is_empty() {
        return if a.is_empty() && b.is_empty() { 0.0 } else { 1.0 };
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

/// Pearson correlation, or `None` when either side is constant.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        None
    } else {
        Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
    }
}

/// Cramér's V, or `None` when either side takes a single value.
pub fn cramers_v(x: &[u32], y: &[u32]) -> Option<f64> {
    let index = |v: &[u32]| {
        let mut levels: Vec<u32> = v.to_vec();
        levels.sort_unstable();
        levels.dedup();
        levels
    };
    let (lx, ly) = (index(x), index(y));
    if lx.len() < 2 || ly.len() < 2 {
        return None;
    }
    let mut table = vec![vec![0.0; ly.len()]; lx.len()];
    for (a, b) in x.iter().zip(y) {
        let i = lx.binary_search(a).unwrap();
        let j = ly.binary_search(b).unwrap();
        table[i][j] += 1.0;
    }
    let n = x.len() as f64;
    let rows: Vec<f64> = table.iter().map(|r| r.iter().sum()).collect();
    let cols: Vec<f64> = (0..ly.len()).map(|j| table.iter().map(|r| r[j]).sum()).collect();
    let mut chi2 = 0.0;
    for i in 0..lx.len() {
        for j in 0..ly.len() {
            let expected = rows[i] * cols[j] / n;
            chi2 += (table[i][j] - expected).powi(2) / expected;
        }
    }
    let k = lx.len().min(ly.len()) as f64 - 1.0;
    Some((chi2 / (n * k)).sqrt().clamp(0.0, 1.0))
}

enum ColumnData {
    Categorical(Vec<u32>),
    Numerical { values: Vec<f64>, codes: Vec<u32> },
}

impl ColumnData {
    fn extract(table: &Table, binned: &TableSchema, column: usize) -> Self {
        let spec = &binned.columns[column];
        if spec.is_categorical() {
            ColumnData::Categorical(table.column(column).map(|v| v.as_cat().unwrap()).collect())
        } else {
            ColumnData::Numerical {
                values: table.column(column).map(Value::as_f64).collect(),
                codes: table.column(column).map(|v| spec.code(v)).collect(),
            }
        }
    }

    fn codes(&self) -> &[u32] {
        match self {
            ColumnData::Categorical(c) => c,
            ColumnData::Numerical { codes, .. } => codes,
        }
    }
}

fn association(x: &ColumnData, y: &ColumnData) -> Option<f64> {
    match (x, y) {
        (ColumnData::Numerical { values: a, .. }, ColumnData::Numerical { values: b, .. }) => pearson(a, b),
        _ => cramers_v(x.codes(), y.codes()),
    }
}

/// Column shapes (1 − TV for categoricals, 1 − KS for numericals) and pair
/// trends (1 − |Δ association| / 2, Pearson for numeric pairs and Cramér's V
/// otherwise, numeric sides binned with `binned`). The overall score is the
/// mean of both family means, as a percentage.
pub fn sdv_similarity(a: &Table, b: &Table, binned: &TableSchema) -> Result<SimilarityReport> {
    ensure_compatible(&a.schema, &b.schema)?;
    ensure_compatible(&a.schema, binned)?;
    if a.is_empty() || b.is_empty() {
        return Err(Error::Empty("similarity needs two nonempty tables".into()));
    }
    for spec in &binned.columns {
        if !spec.is_categorical() && spec.bin_edges().is_none() {
            return Err(Error::Schema(format!("numerical column `{}` has no bin edges", spec.name)));
        }
    }
    let arity = binned.arity();
    let da: Vec<ColumnData> = (0..arity).map(|c| ColumnData::extract(a, binned, c)).collect();
    let db: Vec<ColumnData> = (0..arity).map(|c| ColumnData::extract(b, binned, c)).collect();

    let column_shapes = (0..arity)
        .map(|c| {
            let distance = match (&da[c], &db[c]) {
                (ColumnData::Numerical { values: x, .. }, ColumnData::Numerical { values: y, .. }) => {
                    ks_statistic(x, y)
                }
                (x, y) => tv_distance(x.codes().iter().copied(), y.codes().iter().copied()),
            };
            ColumnShape { column: binned.columns[c].name.clone(), score: 1.0 - distance }
        })
        .collect();

    let mut pair_trends = Vec::new();
    for i in 0..arity {
        for j in i + 1..arity {
            let (sa, sb) = (association(&da[i], &da[j]), association(&db[i], &db[j]));
            let score = match (sa, sb) {
                (None, None) => 1.0,
                (x, y) => 1.0 - (x.unwrap_or(0.0) - y.unwrap_or(0.0)).abs() / 2.0,
            };
            pair_trends.push(PairTrend {
                columns: (binned.columns[i].name.clone(), binned.columns[j].name.clone()),
                score,
            });
        }
    }
    let mut report = SimilarityReport { column_shapes, pair_trends, overall: 0.0 };
    report.overall = 100.0 * (report.shape_mean() + report.trend_mean()) / 2.0;
    Ok(report)
}

/// Writes encoded rows of several tables, tagged by source, for external
/// 2-D embedding tools.
pub fn write_embedding_inputs(tables: &[(&str, &Table)], encoder: &Encoder, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut writer = csv::Writer::from_writer(std::io::BufWriter::new(file));
    let mut header = vec!["source".to_string(), "label".to_string()];
    header.extend((0..encoder.dim()).map(|i| format!("e{i}")));
    writer.write_record(&header)?;
    for (source, table) in tables {
        for (r, row) in table.rows.iter().enumerate() {
            let mut record = vec![source.to_string(), table.label_of(r).to_string()];
            record.extend(encoder.encode(row)?.iter().map(|x| crate::data::format_number(*x)));
            writer.write_record(&record)?;
        }
    }
    writer.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{fit_bins, ColumnSpec};
    use crate::fixtures::xor_blobs as blobs;
    use crate::seed;
    use proptest::prelude::*;
    use rand::seq::SliceRandom;
    use rand::Rng;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn auc_examples() {
        assert_eq!(auc(&[0.9, 0.1], &[1, 0]).unwrap(), 1.0);
        assert_eq!(auc(&[0.1, 0.9], &[1, 0]).unwrap(), 0.0);
        assert_eq!(auc(&[0.5, 0.5], &[1, 0]).unwrap(), 0.5);
        assert!(auc(&[0.3, 0.4], &[1, 1]).is_err());
        assert!(logloss(&[0.3, 0.4], &[1, 1]).is_ok());
        assert!(auc(&[], &[]).is_err());
        assert!(auc(&[0.1], &[1, 0]).is_err());
    }

    #[test]
    fn logloss_examples() {
        let l = logloss(&[0.8, 0.4], &[1, 0]).unwrap();
        assert!((l - (-(0.8f64.ln()) - 0.6f64.ln()) / 2.0).abs() < 1e-12);
        let clamped = logloss(&[0.0], &[1]).unwrap();
        assert!((clamped - (-(1e-7f64).ln())).abs() < 1e-9);
        assert!(logloss(&[0.9, 0.2], &[1, 0]).unwrap() < logloss(&[0.7, 0.4], &[1, 0]).unwrap());
    }

    #[test]
    fn three_class_hand_case() {
        let one_hot = |c: usize| {
            let mut p = vec![0.1; 3];
            p[c] = 0.8;
            p
        };
        // (true, predicted): (0,0) (0,1) (1,1) (1,1) (2,0) (2,2)
        let pairs = [(0, 0), (0, 1), (1, 1), (1, 1), (2, 0), (2, 2)];
        let probs: Vec<Vec<f64>> = pairs.iter().map(|&(_, p)| one_hot(p)).collect();
        let labels: Vec<usize> = pairs.iter().map(|&(t, _)| t).collect();
        let m = multiclass_metrics(&probs, &labels).unwrap();
        // precision: c0 1/2, c1 2/3, c2 1/1; recall: 1/2, 1, 1/2; support 2 each.
        let precision = (0.5 + 2.0 / 3.0 + 1.0) / 3.0;
        let recall = (0.5 + 1.0 + 0.5) / 3.0;
        let f1 = (0.5 + 0.8 + 2.0 / 3.0) / 3.0;
        assert!((m.precision - precision).abs() < 1e-12);
        assert!((m.recall - recall).abs() < 1e-12);
        assert!((m.f1 - f1).abs() < 1e-12);
    }

    fn brute_force_auc(scores: &[f64], labels: &[usize]) -> f64 {
        let mut wins = 0.0;
        let mut pairs = 0.0;
        for i in 0..scores.len() {
            for j in 0..scores.len() {
                if labels[i] == 1 && labels[j] == 0 {
                    pairs += 1.0;
                    if scores[i] > scores[j] {
                        wins += 1.0;
                    } else if scores[i] == scores[j] {
                        wins += 0.5;
                    }
                }
            }
        }
        wins / pairs
    }

    proptest! {
        #[test]
        fn auc_matches_pair_counting_and_ignores_monotone_maps(
            data in proptest::collection::vec((0u8..10, any::<bool>()), 2..60),
        ) {
            let scores: Vec<f64> = data.iter().map(|&(s, _)| s as f64 / 10.0).collect();
            let mut labels: Vec<usize> = data.iter().map(|&(_, y)| y as usize).collect();
            labels[0] = 0;
            labels[1] = 1;
            let value = auc(&scores, &labels).unwrap();
            prop_assert!((value - brute_force_auc(&scores, &labels)).abs() < 1e-12);
            let mapped: Vec<f64> = scores.iter().map(|s| (3.0 * s).exp() - 7.0).collect();
            prop_assert!((auc(&mapped, &labels).unwrap() - value).abs() < 1e-12);
        }
    }

    fn mixed(n: usize, p_a: f64, shift: f64, s: u64) -> Table {
        let schema = TableSchema::new(
            vec![
                ColumnSpec::numerical("x", -10.0, 10.0),
                ColumnSpec::categorical("c", vec!["a".into(), "b".into(), "c".into()]),
                ColumnSpec::numerical("z", -10.0, 10.0),
                ColumnSpec::categorical("y", vec!["0".into(), "1".into()]),
            ],
            3,
        )
        .unwrap();
        let mut rng = seed::rng(s);
        let noise = Normal::new(0.0, 1.0).unwrap();
        let rows = (0..n)
            .map(|_| {
                let x = noise.sample(&mut rng) + shift;
                let c = if rng.random::<f64>() < p_a { 0 } else { rng.random_range(1..3) };
                let z = x + 0.5 * noise.sample(&mut rng);
                vec![Value::Num(x), Value::Cat(c), Value::Num(z), Value::Cat(u32::from(z > 0.0))]
            })
            .collect();
        Table::new(schema, rows).unwrap()
    }

    #[test]
    fn self_similarity_is_full() {
        let t = mixed(300, 0.4, 0.0, 1);
        let binned = fit_bins(&t, 5).unwrap();
        let report = sdv_similarity(&t, &t, &binned).unwrap();
        assert_eq!(report.overall, 100.0);
        assert_eq!(report.column_shapes.len(), 4);
        assert_eq!(report.pair_trends.len(), 6);
    }

    #[test]
    fn disjoint_categories_score_zero() {
        let a = mixed(100, 1.0, 0.0, 2);
        let mut b = mixed(100, 1.0, 0.0, 3);
        for r in &mut b.rows {
            r[1] = Value::Cat(2);
        }
        let binned = fit_bins(&a, 5).unwrap();
        let report = sdv_similarity(&a, &b, &binned).unwrap();
        assert_eq!(report.column_shapes[1].score, 0.0);
    }

    #[test]
    fn gaussian_shift_ks() {
        // sup |Φ(x) − Φ(x − 0.1)| = 2Φ(0.05) − 1.
        let exact = 2.0 * statrs::function::erf::erfc(-0.05 / 2f64.sqrt()) / 2.0 - 1.0;
        assert!((exact - 0.0399).abs() < 1e-4);
        let replicates = 5;
        let mut score = 0.0;
        for r in 0..replicates {
            let a = mixed(10_000, 0.4, 0.0, 100 + 2 * r);
            let b = mixed(10_000, 0.4, 0.1, 101 + 2 * r);
            let binned = fit_bins(&a, 5).unwrap();
            score += sdv_similarity(&a, &b, &binned).unwrap().column_shapes[0].score / replicates as f64;
        }
        assert!((score - (1.0 - exact)).abs() <= 0.01, "{score}");
    }

    #[test]
    fn similarity_is_symmetric_and_monotone() {
        let base = mixed(800, 0.34, 0.0, 6);
        let binned = fit_bins(&base, 5).unwrap();
        let mut previous = f64::INFINITY;
        for (k, skew) in [0.34, 0.5, 0.7, 0.9].iter().enumerate() {
            let other = mixed(800, *skew, 0.3, 7 + k as u64);
            let ab = sdv_similarity(&base, &other, &binned).unwrap();
            let ba = sdv_similarity(&other, &base, &binned).unwrap();
            assert!((ab.overall - ba.overall).abs() < 1e-9);
            let shape = ab.column_shapes[1].score;
            assert!(shape < previous, "{skew}: {shape} vs {previous}");
            previous = shape;
            assert!(ab.pair_trends.iter().all(|p| (0.0..=1.0).contains(&p.score)));
        }
    }

    #[test]
    fn constant_columns_trend_convention() {
        let mut a = mixed(50, 0.4, 0.0, 8);
        let mut b = mixed(50, 0.4, 0.0, 9);
        for r in a.rows.iter_mut().chain(b.rows.iter_mut()) {
            r[0] = Value::Num(1.0);
            r[2] = Value::Num(2.0);
        }
        let binned = fit_bins(&a, 5).unwrap();
        let report = sdv_similarity(&a, &b, &binned).unwrap();
        assert_eq!(report.pair_trends[1].score, 1.0, "{:?}", report.pair_trends);
    }

    #[test]
    fn cramers_v_and_pearson_extremes() {
        assert!((cramers_v(&[0, 1, 0, 1], &[1, 0, 1, 0]).unwrap() - 1.0).abs() < 1e-12);
        assert!(cramers_v(&[0, 0, 1, 1], &[0, 1, 0, 1]).unwrap().abs() < 1e-12);
        assert_eq!(cramers_v(&[0, 0], &[0, 1]), None);
        assert!((pearson(&[1.0, 2.0, 3.0], &[6.0, 4.0, 2.0]).unwrap() + 1.0).abs() < 1e-12);
        assert_eq!(pearson(&[1.0, 1.0], &[0.0, 1.0]), None);
        assert_eq!(ks_statistic(&[1.0, 2.0], &[1.0, 2.0]), 0.0);
        assert_eq!(ks_statistic(&[1.0, 2.0], &[3.0, 4.0]), 1.0);
    }

    #[test]
    fn empty_synth_reduces_to_original() {
        let train = blobs(300, 1);
        let test = blobs(200, 2);
        let empty = train.select(&[]);
        let original = original_utility(&train, &test, &PredictorSpec::default(), 3).unwrap();
        let augmented = augmentation_utility(&train, &test, &empty, &PredictorSpec::default(), 3).unwrap();
        assert_eq!(original.per_run, augmented.per_run);
        assert_eq!(original.mean, augmented.mean);
        let again = augmentation_utility(&train, &test, &empty, &PredictorSpec::default(), 3).unwrap();
        assert_eq!(
            serde_json::to_string(&augmented).unwrap(),
            serde_json::to_string(&again).unwrap()
        );
    }

    #[test]
    fn matched_synth_and_shuffled_labels() {
        let train = blobs(1000, 3);
        let test = blobs(1000, 4);
        let synth = blobs(1000, 5);
        let original = original_utility(&train, &test, &PredictorSpec::default(), 2).unwrap().mean.auc().unwrap();
        let augmented = augmentation_utility(&train, &test, &synth, &PredictorSpec::default(), 2)
            .unwrap()
            .mean
            .auc()
            .unwrap();
        assert!((augmented - original).abs() <= 0.02);
        let mle = mle_utility(&synth, &test, &PredictorSpec::default(), 2).unwrap().mean.auc().unwrap();
        assert!((mle - original).abs() <= 0.05);

        let mut shuffled = synth.clone();
        let mut labels: Vec<Value> = shuffled.rows.iter().map(|r| r[2]).collect();
        labels.shuffle(&mut seed::rng(6));
        for (r, y) in shuffled.rows.iter_mut().zip(labels) {
            r[2] = y;
        }
        let random = mle_utility(&shuffled, &test, &PredictorSpec::default(), 2).unwrap().mean.auc().unwrap();
        assert!((random - 0.5).abs() <= 0.05, "{random}");
    }

    #[test]
    fn schema_mismatch_is_an_error() {
        let train = blobs(50, 1);
        let other = mixed(50, 0.5, 0.0, 1);
        assert!(augmentation_utility(&train, &train, &other, &PredictorSpec::default(), 1).is_err());
    }

    #[test]
    fn embedding_export_shape() {
        let t = blobs(10, 1);
        let encoder = Encoder::fit(&t, false).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("emb.csv");
        write_embedding_inputs(&[("o", &t), ("s", &t)], &encoder, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 21);
        assert!(text.starts_with("source,label,e0,e1"));
    }
}
