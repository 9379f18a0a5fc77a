use std::time::Duration;

use rand::distr::{Distribution, weighted::WeightedIndex};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::prompt::{self, REFINE_MARKER};
use crate::error::{Error, Result};
use crate::seed;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        ChatMessage { role: "system".into(), content: content.into() }
    }

    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage { role: "user".into(), content: content.into() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_tokens: usize,
    pub seed: u64,
}

impl ChatRequest {
    pub fn from_prompt(prompt: &prompt::Prompt, temperature: f64, max_tokens: usize, seed: u64) -> Self {
        ChatRequest {
            messages: vec![ChatMessage::system(&prompt.system), ChatMessage::user(&prompt.user)],
            temperature,
            max_tokens,
            seed,
        }
    }

    fn content(&self, role: &str) -> &str {
        self.messages
            .iter()
            .find(|m| m.role == role)
            .map_or("", |m| m.content.as_str())
    }
}

/// A chat-completion backend. Implementations must be usable from several
/// threads at once.
pub trait LlmClient: Sync {
    fn complete(&self, request: &ChatRequest) -> Result<String>;
}

/// OpenAI-compatible `POST /chat/completions` client with retries on
/// transport failures, 429 and 5xx responses.
pub struct HttpClient {
    pub endpoint: String,
    pub model: String,
    pub api_key: Option<String>,
    pub attempts: u32,
    pub backoff_base: Duration,
    agent: ureq::Agent,
}

impl HttpClient {
    pub fn new(
        endpoint: impl Into<String>,
        model: impl Into<String>,
        api_key: Option<String>,
        timeout: Duration,
    ) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        HttpClient {
            endpoint: endpoint.into(),
            model: model.into(),
            api_key,
            attempts: 3,
            backoff_base: Duration::from_secs(1),
            agent,
        }
    }

    pub fn with_retries(mut self, attempts: u32, backoff_base: Duration) -> Self {
        self.attempts = attempts.max(1);
        self.backoff_base = backoff_base;
        self
    }

    fn attempt(&self, body: &serde_json::Value) -> std::result::Result<String, Failure> {
        let mut request = self.agent.post(&self.endpoint);
        if let Some(key) = &self.api_key {
            request = request.header("Authorization", &format!("Bearer {key}"));
        }
        let mut response = request
            .send_json(body)
            .map_err(|e| Failure::Retry(format!("request to {} failed: {e}", self.endpoint)))?;
        let status = response.status().as_u16();
        let text = response
            .body_mut()
            .read_to_string()
            .map_err(|e| Failure::Retry(format!("reading response failed: {e}")))?;
        match status {
            200..=299 => Ok(text),
            429 | 500..=599 => Err(Failure::Retry(format!("server returned {status}"))),
            _ => Err(Failure::Fatal(Error::Config(format!(
                "endpoint rejected the request with {status}: {}",
                text.chars().take(200).collect::<String>()
            )))),
        }
    }
}

enum Failure {
    Retry(String),
    Fatal(Error),
}

impl LlmClient for HttpClient {
    fn complete(&self, request: &ChatRequest) -> Result<String> {
        let body = serde_json::json!({
            "model": self.model,
            "messages": request.messages,
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
            "seed": request.seed,
        });
        let mut last = String::new();
        for attempt in 0..self.attempts {
            if attempt > 0 {
                std::thread::sleep(self.backoff_base * 2u32.pow(attempt - 1));
            }
            match self.attempt(&body) {
                Ok(text) => return completion_content(&text),
                Err(Failure::Fatal(e)) => return Err(e),
                Err(Failure::Retry(message)) => {
                    log::warn!("llm attempt {} of {} failed: {message}", attempt + 1, self.attempts);
                    last = message;
                }
            }
        }
        Err(Error::Transport(format!("{} attempts failed; last: {last}", self.attempts)))
    }
}

/// `choices[0].message.content` of a chat-completion response.
pub fn completion_content(body: &str) -> Result<String> {
    let value: serde_json::Value = serde_json::from_str(body)?;
    let content = value
        .pointer("/choices/0/message/content")
        .and_then(serde_json::Value::as_str)
        .unwrap_or("");
    if content.trim().is_empty() {
        return Err(Error::EmptyResponse);
    }
    Ok(content.to_string())
}

/// Forces `column` to `value` with probability `probability` in mock rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MockBias {
    pub column: String,
    pub value: String,
    pub probability: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MockSettings {
    pub bias: Option<MockBias>,
    /// Number of requested rows replaced by a truncated line in every reply.
    pub malformed_per_call: usize,
    /// Probability that a cell is copied from the row's base exemplar instead
    /// of being drawn from its column. 0 draws every cell independently.
    pub coherence: f64,
}

/// Offline stand-in for an LLM. For generation prompts it reads the example
/// CSV and the requested row count back out of the prompt and answers with
/// rows whose cells are drawn independently per column from the examples.
///
/// Sampling temperature `T` acts like it does on a real model: categorical
/// draws use example frequencies raised to `1/T`, and numerical draws are
/// pulled towards the example mean by the factor `min(T, 1)`. At `T = 1`
/// this is plain resampling of the example cells.
///
/// Refinement prompts are answered with the current instruction unchanged.
/// Output depends only on the request, including its seed.
#[derive(Clone, Debug, Default)]
pub struct MockClient {
    pub settings: MockSettings,
}

impl MockClient {
    pub fn new(settings: MockSettings) -> Self {
        MockClient { settings }
    }

    fn generate(&self, user: &str, temperature: f64, seed: u64) -> Result<String> {
        let (header, examples) = example_block(user)?;
        let b = prompt::requested_rows(user)
            .ok_or_else(|| Error::Generation("mock could not find the requested row count".into()))?;
        let bias = match &self.settings.bias {
            Some(bias) => {
                let column = header.iter().position(|h| *h == bias.column).ok_or_else(|| {
                    Error::Config(format!("mock bias column `{}` is not in the prompt", bias.column))
                })?;
                Some((column, bias))
            }
            None => None,
        };
        let temperature = temperature.max(0.05);
        let columns: Vec<ColumnDraw> = (0..header.len())
            .map(|c| ColumnDraw::new(examples.iter().map(|e| e[c].as_str()), temperature))
            .collect();
        let mut rng = seed::rng(seed);
        let mut writer = csv::WriterBuilder::new().flexible(true).from_writer(Vec::new());
        writer.write_record(&header)?;
        let malformed = self.settings.malformed_per_call.min(b);
        for i in 0..b {
            let base = rng.random_range(0..examples.len());
            let record: Vec<String> = columns
                .iter()
                .enumerate()
                .map(|(c, column)| match bias {
                    Some((col, bias)) if col == c && rng.random::<f64>() < bias.probability => {
                        bias.value.clone()
                    }
                    _ if rng.random::<f64>() < self.settings.coherence => column.keep(base),
                    _ => column.draw(&mut rng),
                })
                .collect();
            if i >= b - malformed {
                writer.write_record(&record[..1])?;
            } else {
                writer.write_record(&record)?;
            }
        }
        let body = String::from_utf8(writer.into_inner().map_err(|e| Error::Generation(e.to_string()))?)
            .expect("utf-8 csv");
        Ok(format!("```csv\n{body}```\n"))
    }
}

/// Per-column sampler built from the example cells.
enum ColumnDraw {
    Numerical {
        values: Vec<f64>,
        mean: f64,
        shrink: f64,
        integral: bool,
    },
    Categorical {
        cells: Vec<String>,
        values: Vec<String>,
        index: WeightedIndex<f64>,
    },
}

impl ColumnDraw {
    fn new<'a>(cells: impl Iterator<Item = &'a str>, temperature: f64) -> Self {
        let cells: Vec<&str> = cells.collect();
        let numbers: Option<Vec<f64>> = cells.iter().map(|c| c.trim().parse::<f64>().ok()).collect();
        match numbers {
            Some(values) if values.iter().all(|v| v.is_finite()) => ColumnDraw::Numerical {
                mean: values.iter().sum::<f64>() / values.len() as f64,
                shrink: temperature.min(1.0),
                integral: values.iter().all(|v| v.fract() == 0.0),
                values,
            },
            _ => {
                let mut counts: Vec<(String, usize)> = Vec::new();
                for cell in &cells {
                    match counts.iter_mut().find(|(v, _)| v == cell) {
                        Some((_, n)) => *n += 1,
                        None => counts.push((cell.to_string(), 1)),
                    }
                }
                let weights: Vec<f64> = counts.iter().map(|(_, n)| (*n as f64).powf(1.0 / temperature)).collect();
                ColumnDraw::Categorical {
                    cells: cells.iter().map(|c| c.to_string()).collect(),
                    values: counts.into_iter().map(|(v, _)| v).collect(),
                    index: WeightedIndex::new(&weights).expect("positive counts"),
                }
            }
        }
    }

    fn draw(&self, rng: &mut impl Rng) -> String {
        match self {
            ColumnDraw::Numerical { values, .. } => self.format(values[rng.random_range(0..values.len())]),
            ColumnDraw::Categorical { values, index, .. } => values[index.sample(rng)].clone(),
        }
    }

    fn keep(&self, row: usize) -> String {
        match self {
            ColumnDraw::Numerical { values, .. } => self.format(values[row]),
            ColumnDraw::Categorical { cells, .. } => cells[row].clone(),
        }
    }

    fn format(&self, x: f64) -> String {
        let ColumnDraw::Numerical { mean, shrink, integral, .. } = self else {
            unreachable!("format is only called on numerical columns")
        };
        let y = mean + shrink * (x - mean);
        if *integral {
            format!("{}", y.round())
        } else {
            format!("{}", (y * 1e4).round() / 1e4)
        }
    }
}

type CsvBlock = (Vec<String>, Vec<Vec<String>>);

fn example_block(user: &str) -> Result<CsvBlock> {
    let start = user
        .find("```csv\n")
        .ok_or_else(|| Error::Generation("mock found no example block".into()))?
        + "```csv\n".len();
    let end = user[start..].find("```").map_or(user.len(), |e| start + e);
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .from_reader(&user.as_bytes()[start..end]);
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    let examples: Vec<Vec<String>> = reader
        .records()
        .map(|r| r.map(|r| r.iter().map(str::to_string).collect()))
        .collect::<std::result::Result<_, _>>()?;
    if examples.is_empty() || examples.iter().any(|e| e.len() != header.len()) {
        return Err(Error::Generation("mock example block is empty or ragged".into()));
    }
    Ok((header, examples))
}

impl LlmClient for MockClient {
    fn complete(&self, request: &ChatRequest) -> Result<String> {
        if request.content("system").contains(REFINE_MARKER) {
            let current = prompt::extract_instruction(request.content("user"));
            return Ok(format!("<instruction>\n{current}\n</instruction>"));
        }
        self.generate(request.content("user"), request.temperature, request.seed)
    }
}
