//! End-to-end orchestration. Every stage reads its inputs from and writes its
//! outputs to one artifact directory, so the stages can be run one at a time
//! or all together with identical results.
//!
//! Randomness is derived from the single root seed with [`seed::derive`] and
//! the stage labels `split`, `predictor`, `select`, `refine`, `generate`,
//! `attribution`, `resample` and `evaluate`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::align::{self, AlignReport, AlignSpec, ResampleMode};
use crate::attribution::{self, BaselineKind, BaselineSet, FeatureGroups, InteractionMap};
use crate::data::{self, CsvOptions, Encoder, SchemaHint, SplitSpec, Table, TableSchema};
use crate::error::{Error, Result};
use crate::eval::{self, SimilarityReport, UtilityReport};
use crate::llm::{self, GenerationConfig, GenerationReport, Instruction, LlmClient, Selection};
use crate::predictor::{self, PredictorSpec, TrainedPredictor};
use crate::seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Input CSV with the original data.
    pub input: Option<PathBuf>,
    pub out_dir: PathBuf,
    /// Optional JSON schema hint (column kinds, label).
    pub schema_hint: Option<PathBuf>,
    /// Label column; the hint's label or the last column when unset.
    pub label: Option<String>,
    pub seed: u64,
    /// Train, validation and test fractions.
    pub split: [f64; 3],
    /// Quantile bins per numerical column for the frequency models.
    pub bins: usize,
    /// Relative interaction threshold for feature groups.
    pub gamma: f64,
    /// Add-α smoothing of the frequency models.
    pub alpha: f64,
    pub clip_percentiles: (f64, f64),
    pub resample_mode: ResampleMode,
    /// Size of the aligned table as a fraction of the raw synthetic table.
    pub resample_fraction: f64,
    pub attribution: AttributionConfig,
    pub instructions: InstructionConfig,
    pub evaluation: EvaluationConfig,
    pub predictor: PredictorSpec,
    pub generation: GenerationConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            input: None,
            out_dir: PathBuf::from("out"),
            schema_hint: None,
            label: None,
            seed: 0,
            split: [0.8, 0.1, 0.1],
            bins: 20,
            gamma: 0.5,
            alpha: align::DEFAULT_ALPHA,
            clip_percentiles: align::DEFAULT_CLIP,
            resample_mode: ResampleMode::WithoutReplacement,
            resample_fraction: align::DEFAULT_TARGET_FRACTION,
            attribution: AttributionConfig::default(),
            instructions: InstructionConfig::default(),
            evaluation: EvaluationConfig::default(),
            predictor: PredictorSpec::default(),
            generation: GenerationConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttributionConfig {
    pub baseline: BaselineKind,
    /// Rows drawn from the training data for sampled baselines.
    pub baseline_count: usize,
    /// Maximum number of training rows summed into the interaction map.
    pub map_sample: usize,
}

impl Default for AttributionConfig {
    fn default() -> Self {
        AttributionConfig {
            baseline: BaselineKind::AllZeros,
            baseline_count: 16,
            map_sample: attribution::DEFAULT_MAP_SAMPLE,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InstructionConfig {
    /// Plain-text files, one candidate instruction each. The five built-in
    /// templates are used when empty.
    pub candidates: Vec<PathBuf>,
    /// Background documentation passed to refinement.
    pub docs: Option<PathBuf>,
    pub select: bool,
    pub refine: bool,
    /// Training rows shown to the refinement prompt.
    pub refine_samples: usize,
    /// Rows generated per candidate during selection, as a fraction of the
    /// training rows.
    pub selection_fraction: f64,
}

impl Default for InstructionConfig {
    fn default() -> Self {
        InstructionConfig {
            candidates: Vec::new(),
            docs: None,
            select: true,
            refine: true,
            refine_samples: 5,
            selection_fraction: 0.01,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationConfig {
    pub runs: usize,
    /// Also write encoded rows of the original, raw and aligned tables for
    /// external embedding plots.
    pub embeddings: bool,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        EvaluationConfig { runs: 10, embeddings: false }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: PipelineConfig =
            toml::from_str(text).map_err(|e| Error::Config(format!("invalid config: {e}")))?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("cannot serialize config: {e}")))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text)?;
        cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        Ok(cfg)
    }

    /// Makes relative paths relative to `base` (the config file's directory).
    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(p) = self.input.as_mut() {
            fix(p);
        }
        if let Some(p) = self.schema_hint.as_mut() {
            fix(p);
        }
        if let Some(p) = self.instructions.docs.as_mut() {
            fix(p);
        }
        self.instructions.candidates.iter_mut().for_each(fix);
        fix(&mut self.out_dir);
    }

    pub fn validate(&self) -> Result<()> {
        let config = |e: Error| match e {
            Error::InvalidArgument(m) => Error::Config(m),
            other => other,
        };
        SplitSpec::new(self.split, 0).map_err(config)?;
        if self.bins < 2 {
            return Err(Error::Config(format!("bins must be at least 2, got {}", self.bins)));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::Config(format!("gamma must lie in (0, 1], got {}", self.gamma)));
        }
        let fraction_ok = match self.resample_mode {
            ResampleMode::WithoutReplacement => self.resample_fraction > 0.0 && self.resample_fraction <= 1.0,
            ResampleMode::WithReplacement => self.resample_fraction > 0.0 && self.resample_fraction.is_finite(),
        };
        if !fraction_ok {
            return Err(Error::Config(format!(
                "resample_fraction {} is out of range for {:?}",
                self.resample_fraction, self.resample_mode
            )));
        }
        if self.attribution.baseline_count == 0 || self.attribution.map_sample == 0 {
            return Err(Error::Config("baseline_count and map_sample must be positive".into()));
        }
        let sel = self.instructions.selection_fraction;
        if !(sel > 0.0 && sel <= 1.0) {
            return Err(Error::Config(format!("selection_fraction must lie in (0, 1], got {sel}")));
        }
        if self.evaluation.runs == 0 {
            return Err(Error::Config("evaluation runs must be at least 1".into()));
        }
        self.align_spec().validate()?;
        self.generation.validate()
    }

    pub fn stage_seed(&self, stage: &str) -> u64 {
        seed::derive(self.seed, stage)
    }

    fn predictor_spec(&self) -> PredictorSpec {
        self.predictor.with_seed(self.stage_seed("predictor"))
    }

    fn align_spec(&self) -> AlignSpec {
        AlignSpec {
            alpha: self.alpha,
            clip_percentiles: self.clip_percentiles,
            predictor: self.predictor_spec(),
        }
    }

    pub fn artifacts(&self) -> Artifacts {
        Artifacts::new(&self.out_dir)
    }
}

/// File names inside the output directory.
#[derive(Clone, Debug)]
pub struct Artifacts {
    pub dir: PathBuf,
}

macro_rules! artifact {
    ($($name:ident => $file:literal),* $(,)?) => {
        impl Artifacts {
            $(pub fn $name(&self) -> PathBuf { self.dir.join($file) })*
        }
    };
}

artifact! {
    config => "config.toml",
    schema => "schema.json",
    train => "train.csv",
    valid => "valid.csv",
    test => "test.csv",
    instruction => "instruction.json",
    instruction_history => "instruction_history.json",
    instruction_selection => "instruction_selection.json",
    synthetic_raw => "synthetic_raw.csv",
    generation_report => "generation_report.json",
    transcripts => "transcripts.jsonl",
    predictor => "predictor_o.ckpt",
    interaction_map => "interaction_map.csv",
    groups => "groups.json",
    weights => "weights.csv",
    synthetic => "synthetic.csv",
    align_report => "align_report.json",
    evaluation => "evaluation.json",
    embeddings => "embeddings.csv",
}

impl Artifacts {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Artifacts { dir: dir.into() }
    }

    fn create(&self) -> Result<()> {
        std::fs::create_dir_all(&self.dir).map_err(|e| Error::io(&self.dir, e))
    }
}

/// The train, validation and test splits with the binned schema.
#[derive(Clone, Debug)]
pub struct Splits {
    pub schema: TableSchema,
    pub train: Table,
    pub valid: Table,
    pub test: Table,
}

fn load_splits(a: &Artifacts) -> Result<Splits> {
    let schema = TableSchema::read_json(&a.schema())?;
    Ok(Splits {
        train: data::load_csv_with_schema(&a.train(), &schema)?,
        valid: data::load_csv_with_schema(&a.valid(), &schema)?,
        test: data::load_csv_with_schema(&a.test(), &schema)?,
        schema,
    })
}

/// Loads the input, splits it and fits bins on the training split.
pub fn prepare(cfg: &PipelineConfig) -> Result<Splits> {
    let run = || -> Result<Splits> {
        let input = cfg
            .input
            .as_ref()
            .ok_or_else(|| Error::Config("no input CSV configured".into()))?;
        let hint = cfg.schema_hint.as_deref().map(SchemaHint::read_json).transpose()?;
        let table = data::load_csv(input, &CsvOptions { label: cfg.label.clone(), hint })?;
        let (train, valid, test) = data::split(&table, &SplitSpec::new(cfg.split, cfg.stage_seed("split"))?)?;
        let schema = data::fit_bins(&train, cfg.bins)?;
        let a = cfg.artifacts();
        a.create()?;
        schema.write_json(&a.schema())?;
        let splits = Splits {
            train: train.with_schema(schema.clone()),
            valid: valid.with_schema(schema.clone()),
            test: test.with_schema(schema.clone()),
            schema,
        };
        splits.train.write_csv(&a.train())?;
        splits.valid.write_csv(&a.valid())?;
        splits.test.write_csv(&a.test())?;
        log::info!(
            "split {} rows into {}/{}/{}",
            table.len(),
            splits.train.len(),
            splits.valid.len(),
            splits.test.len()
        );
        Ok(splits)
    };
    run().map_err(|e| e.in_stage("prepare"))
}

/// Splits from the artifact directory, running [`prepare`] if they are missing.
pub fn splits(cfg: &PipelineConfig) -> Result<Splits> {
    let a = cfg.artifacts();
    if a.schema().exists() && a.train().exists() && a.valid().exists() && a.test().exists() {
        load_splits(&a).map_err(|e| e.in_stage("prepare"))
    } else {
        prepare(cfg)
    }
}

/// Higher-is-better summary of a utility report: AUC for binary labels,
/// weighted F1 otherwise.
fn utility_score(report: &UtilityReport) -> f64 {
    match &report.mean {
        eval::Metrics::Binary(b) => b.auc,
        eval::Metrics::Multiclass(m) => m.f1,
    }
}

fn candidates(cfg: &PipelineConfig, schema: &TableSchema) -> Result<Vec<Instruction>> {
    if cfg.instructions.candidates.is_empty() {
        return Ok(llm::builtin_instructions(schema));
    }
    cfg.instructions
        .candidates
        .iter()
        .map(|p| {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            let instruction = Instruction::manual(text.trim());
            instruction.validate().map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
            Ok(instruction)
        })
        .collect()
}

/// Chooses the instruction by augmentation utility on the validation split,
/// then refines it. Writes `instruction.json`, its revision history and the
/// selection scores.
pub fn run_select_instruction(cfg: &PipelineConfig, client: &dyn LlmClient) -> Result<Instruction> {
    let s = splits(cfg)?;
    let run = || -> Result<Instruction> {
        let a = cfg.artifacts();
        let candidates = candidates(cfg, &s.schema)?;
        let selection = if cfg.instructions.select && candidates.len() >= 2 {
            if s.valid.is_empty() {
                return Err(Error::Config("instruction selection needs a nonempty validation split".into()));
            }
            let small = GenerationConfig {
                q: None,
                target_fraction: cfg.instructions.selection_fraction,
                ..cfg.generation.clone()
            };
            let select_seed = cfg.stage_seed("select");
            let spec = cfg.predictor_spec();
            let selection = llm::select_instruction(
                &candidates,
                |i, candidate| {
                    let seed = seed::derive_indexed(select_seed, i as u64);
                    llm::generate_stage1(&s.train, &small, candidate, client, seed).map(|(t, _)| t)
                },
                |synth| eval::augmentation_utility(&s.train, &s.valid, synth, &spec, 1).map(|r| utility_score(&r)),
            )?;
            log::info!("selected instruction {} with scores {:?}", selection.index, selection.scores);
            Some(selection)
        } else {
            None
        };
        let chosen = selection
            .as_ref()
            .map_or_else(|| candidates[0].clone(), |s: &Selection| s.instruction.clone());
        write_json(&a.instruction_selection(), &selection)?;

        let (instruction, history) = if cfg.instructions.refine {
            let docs = match &cfg.instructions.docs {
                Some(p) => std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?,
                None => String::new(),
            };
            let picks =
                attribution::map_sample(&s.train, cfg.instructions.refine_samples, cfg.stage_seed("refine"));
            let samples = s.train.select(&picks);
            llm::refine_instruction(&chosen, &docs, &samples, client, &cfg.generation, cfg.stage_seed("refine"))?
        } else {
            (chosen.clone(), vec![chosen])
        };
        llm::write_instructions(&a.instruction_history(), &history)?;
        instruction.write_json(&a.instruction())?;
        Ok(instruction)
    };
    run().map_err(|e| e.in_stage("select-instruction"))
}

/// Stage 1. Writes the raw synthetic table, the generation report and the
/// transcripts.
pub fn run_generate(cfg: &PipelineConfig, client: &dyn LlmClient) -> Result<(Table, GenerationReport)> {
    let s = splits(cfg)?;
    let a = cfg.artifacts();
    let instruction = if a.instruction().exists() {
        Instruction::read_json(&a.instruction()).map_err(|e| e.in_stage("generate"))?
    } else {
        run_select_instruction(cfg, client)?
    };
    let run = || -> Result<(Table, GenerationReport)> {
        let (table, report) =
            llm::generate_stage1(&s.train, &cfg.generation, &instruction, client, cfg.stage_seed("generate"))?;
        table.write_csv(&a.synthetic_raw())?;
        report.write_json(&a.generation_report())?;
        report.write_transcripts(&a.transcripts())?;
        log::info!("generated {} of {} requested rows", report.rows, report.requested);
        Ok((table, report))
    };
    run().map_err(|e| e.in_stage("generate"))
}

fn field_names(schema: &TableSchema) -> Vec<String> {
    schema.field_columns().map(|c| schema.columns[c].name.clone()).collect()
}

/// Trains `M_o`, aggregates the interaction map over the training split and
/// extracts feature groups.
pub fn run_attribute(cfg: &PipelineConfig) -> Result<(InteractionMap, FeatureGroups)> {
    let s = splits(cfg)?;
    let run = || -> Result<(InteractionMap, FeatureGroups)> {
        let a = cfg.artifacts();
        let encoder = Encoder::fit(&s.train, false)?;
        let model = predictor::train(&s.train, &encoder, &cfg.predictor_spec())?;
        model.save(&a.predictor())?;
        let attribution_seed = cfg.stage_seed("attribution");
        let baselines = match cfg.attribution.baseline {
            BaselineKind::AllZeros => BaselineSet::all_zeros(encoder.dim()),
            BaselineKind::Sampled => BaselineSet::sampled(
                &encoder,
                &s.train,
                cfg.attribution.baseline_count,
                seed::derive(attribution_seed, "baselines"),
            )?,
        };
        let picks = attribution::map_sample(&s.train, cfg.attribution.map_sample, seed::derive(attribution_seed, "rows"));
        let rows: Vec<_> = picks.iter().map(|&i| s.train.rows[i].clone()).collect();
        let mut map = attribution::aggregate_map(&model, &encoder, &rows, s.schema.label_index, &baselines)?;
        let groups = attribution::extract_groups(&mut map, cfg.gamma)?;
        let names = field_names(&s.schema);
        map.write_csv(&a.interaction_map(), &names)?;
        groups.write_json(&a.groups(), &names)?;
        log::info!("feature groups: {:?}", groups.groups);
        Ok((map, groups))
    };
    run().map_err(|e| e.in_stage("attribute"))
}

fn require_client<'c>(client: Option<&'c dyn LlmClient>, missing: &Path) -> Result<&'c dyn LlmClient> {
    client.ok_or_else(|| {
        Error::Config(format!(
            "{} is missing and no LLM client is available to produce it",
            missing.display()
        ))
    })
}

/// Stage 2. Weights the raw synthetic rows and resamples them. The client is
/// only used when the raw synthetic table has not been generated yet.
pub fn run_align(cfg: &PipelineConfig, client: Option<&dyn LlmClient>) -> Result<(Table, AlignReport)> {
    let s = splits(cfg)?;
    let a = cfg.artifacts();
    if !a.synthetic_raw().exists() {
        run_generate(cfg, require_client(client, &a.synthetic_raw())?)?;
    }
    if !a.groups().exists() || !a.predictor().exists() {
        run_attribute(cfg)?;
    }
    let run = || -> Result<(Table, AlignReport)> {
        let raw = data::load_csv_with_schema(&a.synthetic_raw(), &s.schema)?;
        let groups = FeatureGroups::read_json(&a.groups())?;
        let m_o = TrainedPredictor::load(&a.predictor())?;
        let weighted = align::importance_weights_with(&s.train, &raw, &groups, &s.schema, &cfg.align_spec(), &m_o)?;
        let target = align::target_size(raw.len(), cfg.resample_fraction);
        let aligned = align::resample(&weighted, target, cfg.resample_mode, cfg.stage_seed("resample"))?;
        raw.write_csv_with_weights(&a.weights(), Some(&weighted.weights))?;
        aligned.write_csv(&a.synthetic())?;
        let report = AlignReport {
            input_rows: raw.len(),
            output_rows: aligned.len(),
            mode: cfg.resample_mode,
            alpha: cfg.alpha,
            groups: groups.groups.clone(),
            diagnostics: weighted.diagnostics.clone(),
            factor_tv_before: align::mean_factor_tv(&raw, &s.train, &groups, &s.schema),
            factor_tv_after: align::mean_factor_tv(&aligned, &s.train, &groups, &s.schema),
        };
        report.write_json(&a.align_report())?;
        log::info!(
            "resampled {} of {} rows; mean factor TV {:.4} -> {:.4}",
            report.output_rows,
            report.input_rows,
            report.factor_tv_before,
            report.factor_tv_after
        );
        Ok((aligned, report))
    };
    run().map_err(|e| e.in_stage("align"))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub original: UtilityReport,
    /// Training split plus the aligned synthetic table.
    pub augmentation: UtilityReport,
    /// Aligned synthetic table alone.
    pub mle: UtilityReport,
    /// Similarity of the raw synthetic table to the training split.
    pub similarity_raw: SimilarityReport,
    /// Similarity of the aligned synthetic table to the training split.
    pub similarity_aligned: SimilarityReport,
}

impl EvaluationReport {
    pub fn read_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Utility of the aligned table on the test split and similarity of the raw
/// and aligned tables to the training split.
pub fn run_evaluate(cfg: &PipelineConfig, client: Option<&dyn LlmClient>) -> Result<EvaluationReport> {
    let s = splits(cfg)?;
    let a = cfg.artifacts();
    if !a.synthetic().exists() {
        run_align(cfg, client)?;
    }
    let run = || -> Result<EvaluationReport> {
        let raw = data::load_csv_with_schema(&a.synthetic_raw(), &s.schema)?;
        let aligned = data::load_csv_with_schema(&a.synthetic(), &s.schema)?;
        let spec = cfg.predictor.with_seed(cfg.stage_seed("evaluate"));
        let runs = cfg.evaluation.runs;
        let report = EvaluationReport {
            original: eval::original_utility(&s.train, &s.test, &spec, runs)?,
            augmentation: eval::augmentation_utility(&s.train, &s.test, &aligned, &spec, runs)?,
            mle: eval::mle_utility(&aligned, &s.test, &spec, runs)?,
            similarity_raw: eval::sdv_similarity(&raw, &s.train, &s.schema)?,
            similarity_aligned: eval::sdv_similarity(&aligned, &s.train, &s.schema)?,
        };
        write_json(&a.evaluation(), &report)?;
        if cfg.evaluation.embeddings {
            let encoder = Encoder::fit(&s.train, true)?;
            eval::write_embedding_inputs(
                &[("original", &s.train), ("raw", &raw), ("aligned", &aligned)],
                &encoder,
                &a.embeddings(),
            )?;
        }
        log::info!(
            "utility original {:.4}, augmented {:.4}; similarity raw {:.2}%, aligned {:.2}%",
            utility_score(&report.original),
            utility_score(&report.augmentation),
            report.similarity_raw.overall,
            report.similarity_aligned.overall
        );
        Ok(report)
    };
    run().map_err(|e| e.in_stage("evaluate"))
}

/// All stages from a fresh split. The client is built first, so a missing
/// API key fails before any file is written.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<EvaluationReport> {
    cfg.validate()?;
    let client = cfg.generation.client()?;
    let a = cfg.artifacts();
    a.create()?;
    std::fs::write(a.config(), cfg.to_toml()?).map_err(|e| Error::io(a.config(), e))?;
    prepare(cfg)?;
    run_select_instruction(cfg, client.as_ref())?;
    run_generate(cfg, client.as_ref())?;
    run_attribute(cfg)?;
    run_align(cfg, Some(client.as_ref()))?;
    run_evaluate(cfg, Some(client.as_ref()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}
