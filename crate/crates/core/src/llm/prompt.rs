use serde::{Deserialize, Serialize};

use crate::data::{ColumnKind, Row, TableSchema};
use crate::error::{Error, Result};

/// Maximum number of vocabulary entries listed per column.
pub const VOCABULARY_PREVIEW: usize = 50;
pub const MAX_REVISIONS: u32 = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Manual,
    Refined,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Instruction {
    pub text: String,
    pub revision: u32,
    pub provenance: Provenance,
}

impl Instruction {
    pub fn manual(text: impl Into<String>) -> Self {
        Instruction {
            text: text.into(),
            revision: 0,
            provenance: Provenance::Manual,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.revision > MAX_REVISIONS {
            return Err(Error::InvalidArgument(format!(
                "instruction revision {} exceeds {MAX_REVISIONS}",
                self.revision
            )));
        }
        if self.text.trim().is_empty() {
            return Err(Error::InvalidArgument("instruction text is empty".into()));
        }
        Ok(())
    }

    pub fn write_json(&self, path: &std::path::Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn read_json(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let instruction: Instruction = serde_json::from_str(&text)?;
        instruction.validate()?;
        Ok(instruction)
    }
}

/// The five bundled seed instructions. `{label}` is replaced with the label
/// column name.
const TEMPLATES: [&str; 5] = [
    "You generate realistic synthetic rows for a tabular dataset. Each row describes one record and its `{label}` outcome. Keep every value consistent with the column types and with the relationships visible in the example rows.",
    "Act as a data scientist creating new training samples. Study the example rows, infer how the features relate to each other and to `{label}`, and write new rows that follow the same joint distribution without copying any example.",
    "Produce additional records for the table below. Values must respect each column's type and allowed categories. Vary the rows so that they cover the whole range seen in the examples, and make `{label}` plausible for the other fields.",
    "You are helping to augment a small dataset for a prediction task whose target is `{label}`. Write new, diverse rows in the same CSV format. Preserve typical combinations of values and never invent categories that are not listed.",
    "Generate synthetic tabular data. First consider what each column means and which columns tend to move together, then output rows whose `{label}` values are consistent with those patterns. Output only CSV.",
];

pub fn builtin_instructions(schema: &TableSchema) -> Vec<Instruction> {
    TEMPLATES
        .iter()
        .map(|t| Instruction::manual(t.replace("{label}", &schema.label().name)))
        .collect()
}

/// A rendered chat prompt: the instruction goes to the system message, the
/// schema, exemplars and directive to the user message.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prompt {
    pub system: String,
    pub user: String,
}

impl Prompt {
    pub fn text(&self) -> String {
        format!("{}\n\n{}", self.system, self.user)
    }
}

pub fn describe_schema(schema: &TableSchema) -> String {
    let mut out = String::from("Columns, in order:\n");
    for (i, column) in schema.columns.iter().enumerate() {
        let role = if i == schema.label_index { " (label)" } else { "" };
        match &column.kind {
            ColumnKind::Categorical { vocabulary } => {
                let shown: Vec<&str> = vocabulary
                    .iter()
                    .take(VOCABULARY_PREVIEW)
                    .map(String::as_str)
                    .collect();
                let mut values = shown.join(", ");
                if vocabulary.len() > VOCABULARY_PREVIEW {
                    values.push_str(&format!(
                        ", …and {} more",
                        vocabulary.len() - VOCABULARY_PREVIEW
                    ));
                }
                out.push_str(&format!(
                    "- {}{role}: categorical, one of: {values}\n",
                    column.name
                ));
            }
            ColumnKind::Numerical { min, max, .. } => {
                out.push_str(&format!(
                    "- {}{role}: numerical, range [{}, {}]\n",
                    column.name,
                    crate::data::format_number(*min),
                    crate::data::format_number(*max)
                ));
            }
        }
    }
    out
}

/// CSV text (header plus rows), with RFC 4180 quoting where needed.
pub fn render_csv(schema: &TableSchema, rows: &[&Row]) -> String {
    let mut writer = csv::WriterBuilder::new().from_writer(Vec::new());
    writer.write_record(schema.header()).expect("in-memory write");
    for row in rows {
        let record: Vec<String> = row
            .iter()
            .enumerate()
            .map(|(c, v)| schema.format_value(c, *v))
            .collect();
        writer.write_record(&record).expect("in-memory write");
    }
    String::from_utf8(writer.into_inner().expect("in-memory flush")).expect("utf-8 csv")
}

pub fn directive(b: usize) -> String {
    let rows = if b == 1 { "1 row".to_string() } else { format!("{b} rows") };
    format!(
        "Generate exactly {rows} of new data with the same columns in the same order. \
         Reply with a single ```csv code block that starts with the header line. \
         Do not repeat the example rows and do not add any commentary."
    )
}

/// Parses `b` back out of a [`directive`].
pub fn requested_rows(text: &str) -> Option<usize> {
    let start = text.find("Generate exactly ")? + "Generate exactly ".len();
    let digits: String = text[start..].chars().take_while(char::is_ascii_digit).collect();
    digits.parse().ok()
}

pub fn build_prompt(
    instruction: &Instruction,
    exemplars: &[&Row],
    schema: &TableSchema,
    b: usize,
) -> Prompt {
    let user = format!(
        "{}\nExample rows:\n```csv\n{}```\n\n{}",
        describe_schema(schema),
        render_csv(schema, exemplars),
        directive(b)
    );
    Prompt {
        system: instruction.text.clone(),
        user,
    }
}

/// System-message marker that identifies refinement requests.
pub const REFINE_MARKER: &str = "[instruction-refinement]";
pub const NO_DOCUMENTS: &str = "(no documents provided)";
pub const NO_SAMPLES: &str = "(no samples provided)";

pub fn refinement_prompt(
    current: &Instruction,
    docs: &str,
    schema: &TableSchema,
    samples: &[&Row],
) -> Prompt {
    let system = format!(
        "{REFINE_MARKER} You improve instructions that ask a language model to synthesize \
         tabular data. Think step by step about what the documents and samples reveal about \
         each column, then return the improved instruction between <instruction> and \
         </instruction> tags. If no improvement is needed, return it unchanged."
    );
    let docs = if docs.trim().is_empty() { NO_DOCUMENTS } else { docs.trim() };
    let samples = if samples.is_empty() {
        NO_SAMPLES.to_string()
    } else {
        format!("```csv\n{}```", render_csv(schema, samples))
    };
    let user = format!(
        "Current instruction:\n<instruction>\n{}\n</instruction>\n\nDocuments:\n{docs}\n\n{}\nSamples:\n{samples}\n",
        current.text,
        describe_schema(schema)
    );
    Prompt { system, user }
}

/// The text between the first `<instruction>` and `</instruction>` tags, or
/// the whole trimmed response when untagged.
pub fn extract_instruction(response: &str) -> String {
    const OPEN: &str = "<instruction>";
    const CLOSE: &str = "</instruction>";
    if let Some(start) = response.find(OPEN) {
        let body = &response[start + OPEN.len()..];
        let end = body.find(CLOSE).unwrap_or(body.len());
        return body[..end].trim().to_string();
    }
    response.trim().to_string()
}
