//! Frequency-based joint probabilities, importance weights and resampling.

use std::collections::HashMap;
use std::path::Path;

use rand::distr::{weighted::WeightedIndex, Distribution};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::attribution::FeatureGroups;
use crate::data::{Encoder, Table, TableSchema, Value};
use crate::error::{Error, Result};
use crate::predictor::{self, ClassPrior, ClassProbability, PredictorSpec, TrainedPredictor};
use crate::seed;

pub const DEFAULT_ALPHA: f64 = 1.0;
pub const DEFAULT_CLIP: (f64, f64) = (0.5, 99.5);
pub const DEFAULT_TARGET_FRACTION: f64 = 0.8;

/// Smoothed value-tuple frequencies for one factor (a group or a singleton).
#[derive(Clone, Debug, PartialEq)]
pub struct FactorTable {
    pub fields: Vec<usize>,
    pub counts: HashMap<Vec<u32>, usize>,
}

impl FactorTable {
    pub fn support(&self) -> usize {
        self.counts.len()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceTag {
    Original,
    Synthetic,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrequencyModel {
    pub factors: Vec<FactorTable>,
    pub total: usize,
    pub alpha: f64,
    pub schema: TableSchema,
    pub source: SourceTag,
}

fn field_code(schema: &TableSchema, row: &[Value], field: usize) -> u32 {
    let column = schema.field_column(field);
    schema.columns[column].code(row[column])
}

fn tuple(schema: &TableSchema, row: &[Value], fields: &[usize]) -> Vec<u32> {
    fields.iter().map(|&f| field_code(schema, row, f)).collect()
}

fn ensure_binned(schema: &TableSchema) -> Result<()> {
    for column in schema.field_columns() {
        let spec = &schema.columns[column];
        if !spec.is_categorical() && spec.bin_edges().is_none() {
            return Err(Error::Schema(format!(
                "numerical column `{}` has no bin edges",
                spec.name
            )));
        }
    }
    Ok(())
}

/// Counts every factor of `groups` over `table`, coding fields with the bins
/// of `schema` (which must share `table`'s columns).
pub fn fit_frequencies(
    table: &Table,
    groups: &FeatureGroups,
    schema: &TableSchema,
    alpha: f64,
    source: SourceTag,
) -> Result<FrequencyModel> {
    if table.is_empty() {
        return Err(Error::Empty("cannot fit frequencies on an empty table".into()));
    }
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(Error::InvalidArgument(format!("smoothing must be nonnegative, got {alpha}")));
    }
    crate::data::ensure_compatible(schema, &table.schema)?;
    ensure_binned(schema)?;
    if groups.num_fields != schema.num_fields() {
        return Err(Error::InvalidArgument(format!(
            "groups cover {} fields but the schema has {}",
            groups.num_fields,
            schema.num_fields()
        )));
    }
    let factors = groups
        .factors()
        .into_iter()
        .map(|fields| {
            let mut counts = HashMap::new();
            for row in &table.rows {
                *counts.entry(tuple(schema, row, &fields)).or_insert(0) += 1;
            }
            FactorTable { fields, counts }
        })
        .collect();
    Ok(FrequencyModel {
        factors,
        total: table.len(),
        alpha,
        schema: schema.clone(),
        source,
    })
}

impl FrequencyModel {
    fn denominator(&self, factor: &FactorTable) -> f64 {
        self.total as f64 + self.alpha * (factor.support() + 1) as f64
    }

    /// `(count + α) / (N + α(S + 1))`; unseen tuples get the extra slot.
    pub fn probability(&self, factor: usize, codes: &[u32]) -> f64 {
        let table = &self.factors[factor];
        let count = table.counts.get(codes).copied().unwrap_or(0) as f64;
        (count + self.alpha) / self.denominator(table)
    }

    pub fn unseen_probability(&self, factor: usize) -> f64 {
        self.alpha / self.denominator(&self.factors[factor])
    }

    /// Sum of `ln P` over all factors of `row`.
    pub fn log_probability(&self, row: &[Value]) -> f64 {
        self.factors
            .iter()
            .enumerate()
            .map(|(i, f)| self.probability(i, &tuple(&self.schema, row, &f.fields)).ln())
            .sum()
    }
}

fn log_class_probability(model: &dyn ClassProbability, row: &[Value], label: usize) -> Result<f64> {
    let probs = model.class_probabilities(row)?;
    Ok(probs[label].max(f64::MIN_POSITIVE).ln())
}

/// `ln` of the semi-independent joint: every factor probability times the
/// model's probability of the row's own label.
pub fn log_joint_probability(
    fm: &FrequencyModel,
    model: &dyn ClassProbability,
    row: &[Value],
) -> Result<f64> {
    let label = row[fm.schema.label_index].as_cat().expect("label is categorical") as usize;
    Ok(fm.log_probability(row) + log_class_probability(model, row, label)?)
}

pub fn joint_probability(
    fm: &FrequencyModel,
    model: &dyn ClassProbability,
    row: &[Value],
) -> Result<f64> {
    log_joint_probability(fm, model, row).map(f64::exp)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AlignSpec {
    pub alpha: f64,
    /// Lower and upper percentile (0–100) used to clip raw weights.
    pub clip_percentiles: (f64, f64),
    pub predictor: PredictorSpec,
}

impl Default for AlignSpec {
    fn default() -> Self {
        AlignSpec {
            alpha: DEFAULT_ALPHA,
            clip_percentiles: DEFAULT_CLIP,
            predictor: PredictorSpec::default(),
        }
    }
}

impl AlignSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config(format!(
                "smoothing alpha must be positive for importance weights, got {}",
                self.alpha
            )));
        }
        let (lo, hi) = self.clip_percentiles;
        if !(0.0..=100.0).contains(&lo) || !(0.0..=100.0).contains(&hi) || lo > hi {
            return Err(Error::Config(format!("invalid clip percentiles ({lo}, {hi})")));
        }
        self.predictor.validate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightDiagnostics {
    pub effective_sample_size: f64,
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    pub clip_bounds: (f64, f64),
    pub clipped: usize,
    /// True when D_s' held one class and M_s' fell back to the label prior.
    pub prior_fallback: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct WeightedTable {
    pub table: Table,
    pub raw_weights: Vec<f64>,
    pub weights: Vec<f64>,
    pub diagnostics: WeightDiagnostics,
}

pub fn effective_sample_size(weights: &[f64]) -> f64 {
    let sum: f64 = weights.iter().sum();
    let sq: f64 = weights.iter().map(|w| w * w).sum();
    if sq == 0.0 {
        0.0
    } else {
        sum * sum / sq
    }
}

/// Trains `M_o` on `original` (encoder fitted there) and delegates to
/// [`importance_weights_with`].
pub fn importance_weights(
    original: &Table,
    synthetic: &Table,
    groups: &FeatureGroups,
    binned: &TableSchema,
    spec: &AlignSpec,
) -> Result<WeightedTable> {
    let encoder = Encoder::fit(original, false)?;
    let m_o = predictor::train(original, &encoder, &spec.predictor)?;
    importance_weights_with(original, synthetic, groups, binned, spec, &m_o)
}

/// `w = P_o(x, y) / P_s'(x, y)` for every synthetic row, clipped at the
/// configured percentiles. `M_s'` is trained with the same spec and the
/// encoder of `m_o`. Groups must come from the original data.
pub fn importance_weights_with(
    original: &Table,
    synthetic: &Table,
    groups: &FeatureGroups,
    binned: &TableSchema,
    spec: &AlignSpec,
    m_o: &TrainedPredictor,
) -> Result<WeightedTable> {
    spec.validate()?;
    crate::data::ensure_compatible(&original.schema, &synthetic.schema)?;
    if synthetic.is_empty() {
        return Err(Error::Empty("no synthetic rows to weight".into()));
    }
    let fm_o = fit_frequencies(original, groups, binned, spec.alpha, SourceTag::Original)?;
    let fm_s = fit_frequencies(synthetic, groups, binned, spec.alpha, SourceTag::Synthetic)?;

    let present = synthetic.class_counts().iter().filter(|&&c| c > 0).count();
    let trained;
    let prior;
    let m_s: &dyn ClassProbability = if present < 2 {
        log::warn!("synthetic data holds a single class; using its label prior as M_s'");
        prior = ClassPrior::from_table(synthetic);
        &prior
    } else {
        trained = predictor::train(synthetic, &m_o.encoder, &spec.predictor)?;
        &trained
    };

    let raw_weights = synthetic
        .rows
        .iter()
        .map(|row| {
            let log_o = log_joint_probability(&fm_o, m_o, row)?;
            let log_s = log_joint_probability(&fm_s, m_s, row)?;
            Ok((log_o - log_s).exp())
        })
        .collect::<Result<Vec<f64>>>()?;

    let mut sorted = raw_weights.clone();
    sorted.sort_by(f64::total_cmp);
    let (lo_q, hi_q) = spec.clip_percentiles;
    let lo = crate::data::quantile_sorted(&sorted, lo_q / 100.0).max(f64::MIN_POSITIVE);
    let hi = crate::data::quantile_sorted(&sorted, hi_q / 100.0).max(lo);
    let mut clipped = 0;
    let weights: Vec<f64> = raw_weights
        .iter()
        .map(|&w| {
            let c = w.clamp(lo, hi);
            if c != w {
                clipped += 1;
            }
            c
        })
        .collect();

    let diagnostics = WeightDiagnostics {
        effective_sample_size: effective_sample_size(&weights),
        min: weights.iter().copied().fold(f64::INFINITY, f64::min),
        max: weights.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        mean: weights.iter().sum::<f64>() / weights.len() as f64,
        clip_bounds: (lo, hi),
        clipped,
        prior_fallback: present < 2,
    };
    Ok(WeightedTable {
        table: synthetic.clone(),
        raw_weights,
        weights,
        diagnostics,
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResampleMode {
    #[default]
    WithoutReplacement,
    WithReplacement,
}

/// `round(fraction · pool)`.
pub fn target_size(pool: usize, fraction: f64) -> usize {
    (fraction * pool as f64).round() as usize
}

/// Indices of the resampled rows, ascending.
pub fn resample_indices(
    weights: &[f64],
    target: usize,
    mode: ResampleMode,
    seed: u64,
) -> Result<Vec<usize>> {
    if weights.iter().any(|&w| !(w > 0.0 && w.is_finite())) {
        return Err(Error::InvalidArgument("weights must be positive and finite".into()));
    }
    if target == 0 {
        return Ok(Vec::new());
    }
    let mut rng = seed::rng(seed);
    let mut picks = match mode {
        ResampleMode::WithoutReplacement => {
            if target > weights.len() {
                return Err(Error::InvalidArgument(format!(
                    "cannot draw {target} rows without replacement from {}; use with-replacement mode",
                    weights.len()
                )));
            }
            let mut keys: Vec<(f64, usize)> = weights
                .iter()
                .enumerate()
                .map(|(i, &w)| (-(1.0 - rng.random::<f64>()).ln() / w, i))
                .collect();
            keys.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            keys.truncate(target);
            keys.into_iter().map(|(_, i)| i).collect::<Vec<_>>()
        }
        ResampleMode::WithReplacement => {
            let dist = WeightedIndex::new(weights)
                .map_err(|e| Error::InvalidArgument(format!("bad weights: {e}")))?;
            (0..target).map(|_| dist.sample(&mut rng)).collect()
        }
    };
    picks.sort_unstable();
    Ok(picks)
}

pub fn resample(wt: &WeightedTable, target: usize, mode: ResampleMode, seed: u64) -> Result<Table> {
    let picks = resample_indices(&wt.weights, target, mode, seed)?;
    Ok(wt.table.select(&picks))
}

/// Total variation distance between the empirical distributions of one
/// factor (value tuples coded with `binned`) in two tables.
pub fn factor_tv(a: &Table, b: &Table, fields: &[usize], binned: &TableSchema) -> f64 {
    let histogram = |t: &Table| {
        let mut counts: HashMap<Vec<u32>, f64> = HashMap::new();
        for row in &t.rows {
            *counts.entry(tuple(binned, row, fields)).or_insert(0.0) += 1.0 / t.len() as f64;
        }
        counts
    };
    let (ha, hb) = (histogram(a), histogram(b));
    let mut total = 0.0;
    for (key, pa) in &ha {
        total += (pa - hb.get(key).copied().unwrap_or(0.0)).abs();
    }
    for (key, pb) in &hb {
        if !ha.contains_key(key) {
            total += pb;
        }
    }
    total / 2.0
}

/// Summary written alongside the aligned table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlignReport {
    pub input_rows: usize,
    pub output_rows: usize,
    pub mode: ResampleMode,
    pub alpha: f64,
    pub groups: Vec<Vec<usize>>,
    pub diagnostics: WeightDiagnostics,
    /// Mean TV distance to the original data over all factors, before and
    /// after resampling.
    pub factor_tv_before: f64,
    pub factor_tv_after: f64,
}

impl AlignReport {
    pub fn write_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

pub fn mean_factor_tv(a: &Table, b: &Table, groups: &FeatureGroups, binned: &TableSchema) -> f64 {
    let factors = groups.factors();
    if factors.is_empty() || a.is_empty() || b.is_empty() {
        return 0.0;
    }
    factors.iter().map(|f| factor_tv(a, b, f, binned)).sum::<f64>() / factors.len() as f64
}
