//! Stage 1: instruction handling, few-shot prompting, LLM calls and parsing
//! of generated rows.

mod client;
mod parse;
mod prompt;

use std::io::Write;
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};

pub use client::{
    completion_content, ChatMessage, ChatRequest, HttpClient, LlmClient, MockBias, MockClient,
    MockSettings,
};
pub use parse::{parse_rows, ParseCounts, RowParser};
pub use prompt::{
    build_prompt, builtin_instructions, describe_schema, directive, extract_instruction,
    refinement_prompt, render_csv, requested_rows, Instruction, Prompt, Provenance, MAX_REVISIONS,
    NO_DOCUMENTS, NO_SAMPLES, REFINE_MARKER, VOCABULARY_PREVIEW,
};

use crate::data::{Row, Table};
use crate::error::{Error, Result};
use crate::exemplar::{self, ExemplarSet};
use crate::seed;

pub const DEFAULT_API_KEY_ENV: &str = "SAMPLELLM_API_KEY";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExemplarStrategy {
    /// One random row from each of `a` K-means clusters.
    #[default]
    Cluster,
    /// `a` rows drawn uniformly without replacement.
    Random,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerationConfig {
    /// Exemplars per prompt.
    pub a: usize,
    /// Rows requested per call.
    pub b: usize,
    /// Rounds. When unset, `ceil(target / b)` with the target taken from
    /// `target_fraction`; when set, the target is `b · q`.
    pub q: Option<usize>,
    pub target_fraction: f64,
    pub exemplar_strategy: ExemplarStrategy,
    pub model_name: String,
    pub endpoint: String,
    pub api_key_env: String,
    pub temperature: f64,
    pub max_output_tokens: usize,
    pub timeout_secs: u64,
    pub retry_attempts: u32,
    pub retry_backoff_ms: u64,
    pub max_in_flight: usize,
    pub mock_mode: bool,
    pub mock: MockSettings,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        GenerationConfig {
            a: 20,
            b: 20,
            q: None,
            target_fraction: 0.10,
            exemplar_strategy: ExemplarStrategy::Cluster,
            model_name: "llama-3-70b-instruct".into(),
            endpoint: "http://localhost:8000/v1/chat/completions".into(),
            api_key_env: DEFAULT_API_KEY_ENV.into(),
            temperature: 0.7,
            max_output_tokens: 4096,
            timeout_secs: 120,
            retry_attempts: 3,
            retry_backoff_ms: 1000,
            max_in_flight: 4,
            mock_mode: false,
            mock: MockSettings::default(),
        }
    }
}

impl GenerationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.a == 0 || self.b == 0 || self.q == Some(0) {
            return Err(Error::Config("a, b and q must all be at least 1".into()));
        }
        if !(self.target_fraction > 0.0 && self.target_fraction.is_finite()) {
            return Err(Error::Config(format!(
                "target_fraction must be positive, got {}",
                self.target_fraction
            )));
        }
        if self.max_in_flight == 0 || self.retry_attempts == 0 {
            return Err(Error::Config("max_in_flight and retry_attempts must be at least 1".into()));
        }
        if let Some(bias) = &self.mock.bias {
            if !(0.0..=1.0).contains(&bias.probability) {
                return Err(Error::Config(format!(
                    "mock bias probability must lie in [0, 1], got {}",
                    bias.probability
                )));
            }
        }
        Ok(())
    }

    /// `(target rows, planned rounds)` for a training table of `train_rows`.
    pub fn plan(&self, train_rows: usize) -> (usize, usize) {
        match self.q {
            Some(q) => (self.b * q, q),
            None => {
                let target = ((self.target_fraction * train_rows as f64) - 1e-9).ceil().max(1.0) as usize;
                (target, target.div_ceil(self.b))
            }
        }
    }

    /// The mock client when `mock_mode` is set, otherwise an HTTP client
    /// whose key is read from `api_key_env`. A missing key is a config error.
    pub fn client(&self) -> Result<Box<dyn LlmClient>> {
        if self.mock_mode {
            return Ok(Box::new(MockClient::new(self.mock.clone())));
        }
        let key = std::env::var(&self.api_key_env).map_err(|_| {
            Error::Config(format!(
                "environment variable {} is not set; export an API key or use mock mode",
                self.api_key_env
            ))
        })?;
        Ok(Box::new(
            HttpClient::new(
                &self.endpoint,
                &self.model_name,
                Some(key),
                Duration::from_secs(self.timeout_secs),
            )
            .with_retries(self.retry_attempts, Duration::from_millis(self.retry_backoff_ms)),
        ))
    }
}

/// One request/response pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub round: usize,
    pub makeup: bool,
    pub exemplar_rows: Vec<usize>,
    pub system: String,
    pub user: String,
    pub response: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundReport {
    pub round: usize,
    pub makeup: bool,
    pub requested: usize,
    #[serde(flatten)]
    pub counts: ParseCounts,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GenerationReport {
    pub requested: usize,
    pub planned_rounds: usize,
    pub makeup_rounds: usize,
    /// Rows accepted by the end of the planned rounds.
    pub parsed_before_makeup: usize,
    #[serde(flatten)]
    pub counts: ParseCounts,
    /// Rows kept after truncation to `requested`.
    pub rows: usize,
    pub shortfall: usize,
    pub rounds: Vec<RoundReport>,
    #[serde(skip)]
    pub transcripts: Vec<Transcript>,
}

impl GenerationReport {
    pub fn write_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Transcripts as JSON lines, one per call.
    pub fn write_transcripts(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = std::io::BufWriter::new(file);
        for t in &self.transcripts {
            serde_json::to_writer(&mut out, t)?;
            out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        }
        out.flush().map_err(|e| Error::io(path, e))
    }
}

enum Sampler {
    Cluster(exemplar::Clustering),
    Random { rows: usize, a: usize },
}

impl Sampler {
    fn draw(&self, seed: u64, round: usize) -> Result<ExemplarSet> {
        match self {
            Sampler::Cluster(c) => Ok(exemplar::draw_exemplars(c, seed, round as u64)),
            Sampler::Random { rows, a } => exemplar::random_exemplars(*rows, *a, seed, round as u64),
        }
    }
}

/// Runs the planned rounds (concurrently, at most `max_in_flight` calls at a
/// time), then up to as many make-up rounds while fewer than the target rows
/// were accepted. The result is truncated to the target.
pub fn generate_stage1(
    train: &Table,
    cfg: &GenerationConfig,
    instruction: &Instruction,
    client: &dyn LlmClient,
    seed: u64,
) -> Result<(Table, GenerationReport)> {
    cfg.validate()?;
    instruction.validate()?;
    if train.is_empty() {
        return Err(Error::Empty("no training rows to draw exemplars from".into()));
    }
    let (target, planned) = cfg.plan(train.len());
    let a = cfg.a.min(train.len());
    let sampler = match cfg.exemplar_strategy {
        ExemplarStrategy::Cluster => {
            Sampler::Cluster(exemplar::cluster(train, a, seed::derive(seed, "kmeans"))?)
        }
        ExemplarStrategy::Random => Sampler::Random { rows: train.len(), a },
    };
    let exemplar_seed = seed::derive(seed, "exemplars");
    let llm_seed = seed::derive(seed, "llm");
    let parser = RowParser::new(train);

    let mut report = GenerationReport {
        requested: target,
        planned_rounds: planned,
        ..GenerationReport::default()
    };
    let mut rows: Vec<Row> = Vec::new();
    let mut round = 0;
    while round < 2 * planned {
        let makeup = round >= planned;
        if makeup && rows.len() >= target {
            break;
        }
        // Planned rounds go out in batches of `max_in_flight`; make-up rounds
        // likewise, but only as many as the shortfall could need.
        let phase_end = if makeup { 2 * planned } else { planned };
        let needed = if makeup {
            (target - rows.len()).div_ceil(cfg.b)
        } else {
            usize::MAX
        };
        let batch_end = phase_end.min(round + cfg.max_in_flight.min(needed));
        let jobs = (round..batch_end)
            .map(|r| {
                let set = sampler.draw(exemplar_seed, r)?;
                let prompt = build_prompt(instruction, &set.rows(train), &train.schema, cfg.b);
                Ok((r, set, prompt))
            })
            .collect::<Result<Vec<_>>>()?;
        let responses = std::thread::scope(|scope| {
            let handles: Vec<_> = jobs
                .iter()
                .map(|(r, _, prompt)| {
                    let request = ChatRequest::from_prompt(
                        prompt,
                        cfg.temperature,
                        cfg.max_output_tokens,
                        seed::derive_indexed(llm_seed, *r as u64),
                    );
                    scope.spawn(move || client.complete(&request))
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("llm call panicked"))
                .collect::<Vec<_>>()
        });
        for ((r, set, prompt), response) in jobs.into_iter().zip(responses) {
            let response = response.map_err(|e| {
                log::error!("round {r} failed: {e}");
                e
            })?;
            let (parsed, counts) = parser.parse(&response);
            report.counts.add(&counts);
            report.rounds.push(RoundReport { round: r, makeup, requested: cfg.b, counts });
            report.transcripts.push(Transcript {
                round: r,
                makeup,
                exemplar_rows: set.row_indices.clone(),
                system: prompt.system,
                user: prompt.user,
                response,
            });
            rows.extend(parsed);
        }
        if !makeup {
            report.parsed_before_makeup = rows.len();
        } else {
            report.makeup_rounds += batch_end - round;
        }
        round = batch_end;
    }
    if rows.is_empty() {
        return Err(Error::Generation(format!(
            "no valid rows after {} rounds ({} malformed, {} out of vocabulary, {} copies of training rows)",
            report.rounds.len(),
            report.counts.rejected_malformed,
            report.counts.rejected_oov,
            report.counts.rejected_duplicate_of_original
        )));
    }
    rows.truncate(target);
    report.rows = rows.len();
    report.shortfall = target - rows.len();
    if report.shortfall > 0 {
        log::warn!("generation fell {} rows short of {target}", report.shortfall);
    }
    Ok((Table::new(train.schema.clone(), rows)?, report))
}

/// Refines a manual instruction with up to five LLM calls, stopping early
/// when a call returns its input unchanged. Returns the final instruction and
/// every intermediate one (the seed first).
pub fn refine_instruction(
    initial: &Instruction,
    docs: &str,
    samples: &Table,
    client: &dyn LlmClient,
    cfg: &GenerationConfig,
    seed: u64,
) -> Result<(Instruction, Vec<Instruction>)> {
    if initial.provenance != Provenance::Manual {
        return Err(Error::InvalidArgument("only manual instructions can be refined".into()));
    }
    initial.validate()?;
    let sample_rows: Vec<&Row> = samples.rows.iter().collect();
    let mut current = initial.clone();
    let mut history = vec![initial.clone()];
    for t in 0..MAX_REVISIONS {
        let prompt = refinement_prompt(&current, docs, &samples.schema, &sample_rows);
        let request = ChatRequest::from_prompt(
            &prompt,
            cfg.temperature,
            cfg.max_output_tokens,
            seed::derive_indexed(seed::derive(seed, "refine"), t as u64),
        );
        let text = extract_instruction(&client.complete(&request)?);
        if text.is_empty() {
            return Err(Error::EmptyResponse);
        }
        let unchanged = text == current.text;
        current = Instruction {
            text,
            revision: t + 1,
            provenance: Provenance::Refined,
        };
        log::info!("instruction revision {}: {}", current.revision, current.text);
        history.push(current.clone());
        if unchanged {
            break;
        }
    }
    Ok((current, history))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub index: usize,
    pub instruction: Instruction,
    /// One score per candidate; failed candidates score `-inf` (serialized as
    /// null).
    pub scores: Vec<Option<f64>>,
}

/// Scores every candidate by `evaluate(generate(candidate))` and returns the
/// best, breaking ties by the lowest index. A candidate whose generation
/// fails or yields no rows scores `-inf`.
pub fn select_instruction(
    candidates: &[Instruction],
    mut generate: impl FnMut(usize, &Instruction) -> Result<Table>,
    mut evaluate: impl FnMut(&Table) -> Result<f64>,
) -> Result<Selection> {
    if candidates.len() < 2 {
        return Err(Error::InvalidArgument("instruction selection needs at least two candidates".into()));
    }
    let mut scores = Vec::with_capacity(candidates.len());
    let mut failures = Vec::new();
    for (i, candidate) in candidates.iter().enumerate() {
        let score = generate(i, candidate).and_then(|table| {
            if table.is_empty() {
                Err(Error::Generation("no rows parsed".into()))
            } else {
                evaluate(&table)
            }
        });
        match score {
            Ok(s) if s.is_finite() => scores.push(s),
            Ok(s) => {
                failures.push(format!("candidate {i}: non-finite score {s}"));
                scores.push(f64::NEG_INFINITY);
            }
            Err(e) => {
                failures.push(format!("candidate {i}: {e}"));
                scores.push(f64::NEG_INFINITY);
            }
        }
    }
    if scores.iter().all(|s| *s == f64::NEG_INFINITY) {
        return Err(Error::Generation(format!(
            "every instruction candidate failed: {}",
            failures.join("; ")
        )));
    }
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    Ok(Selection {
        index: best,
        instruction: candidates[best].clone(),
        scores: scores.into_iter().map(|s| s.is_finite().then_some(s)).collect(),
    })
}

pub fn write_instructions(path: &Path, instructions: &[Instruction]) -> Result<()> {
    let text = serde_json::to_string_pretty(instructions)?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn read_instructions(path: &Path) -> Result<Vec<Instruction>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let list: Vec<Instruction> = serde_json::from_str(&text)?;
    for i in &list {
        i.validate()?;
    }
    Ok(list)
}
