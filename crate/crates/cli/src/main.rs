use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use samplellm::llm::{ExemplarStrategy, LlmClient};
use samplellm::pipeline::{self, PipelineConfig};
use samplellm::Error;

const EXIT_CONFIG: u8 = 2;
const EXIT_STAGE: u8 = 3;

/// Few-shot LLM tabular data synthesis with attribution-guided importance
/// resampling.
#[derive(Parser, Debug)]
#[command(name = "samplellm", version)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// TOML configuration file. Relative paths inside it are resolved
    /// against its directory.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    /// Use the offline mock LLM instead of the configured endpoint.
    #[arg(long, global = true)]
    mock: bool,
    /// Root seed for every stage.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Artifact directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Input CSV.
    #[arg(long, global = true)]
    input: Option<PathBuf>,
    /// Label column name.
    #[arg(long, global = true)]
    label: Option<String>,
    /// Exemplars (K-means clusters) per prompt.
    #[arg(long, global = true)]
    clusters: Option<usize>,
    /// Rows requested per LLM call.
    #[arg(long, global = true)]
    rows_per_call: Option<usize>,
    /// Generation rounds; overrides the target fraction.
    #[arg(long, global = true)]
    rounds: Option<usize>,
    /// Relative interaction threshold for feature groups.
    #[arg(long, global = true)]
    gamma: Option<f64>,
    /// Draw exemplars uniformly instead of one per cluster.
    #[arg(long, global = true)]
    random_exemplars: bool,
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(long, short, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run every stage from a fresh split.
    Pipeline,
    /// Select and refine the generation instruction.
    SelectInstruction,
    /// Stage 1: generate raw synthetic rows.
    Generate,
    /// Train the original-data predictor and extract feature groups.
    Attribute,
    /// Stage 2: importance-weight and resample the raw synthetic rows.
    Align,
    /// Utility and similarity report.
    Evaluate,
    /// Print the effective configuration as TOML.
    ShowConfig,
}

impl Common {
    fn config(&self) -> Result<PipelineConfig, Error> {
        let mut cfg = match &self.config {
            Some(path) => PipelineConfig::read(path)?,
            None => PipelineConfig::default(),
        };
        if self.mock {
            cfg.generation.mock_mode = true;
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(out) = &self.out {
            cfg.out_dir = out.clone();
        }
        if let Some(input) = &self.input {
            cfg.input = Some(input.clone());
        }
        if let Some(label) = &self.label {
            cfg.label = Some(label.clone());
        }
        if let Some(a) = self.clusters {
            cfg.generation.a = a;
        }
        if let Some(b) = self.rows_per_call {
            cfg.generation.b = b;
        }
        if let Some(q) = self.rounds {
            cfg.generation.q = Some(q);
        }
        if let Some(gamma) = self.gamma {
            cfg.gamma = gamma;
        }
        if self.random_exemplars {
            cfg.generation.exemplar_strategy = ExemplarStrategy::Random;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn run(cli: &Cli) -> Result<(), Error> {
    let cfg = cli.common.config()?;
    // The LLM client is only optional for stages that can reuse artifacts.
    let optional_client = || -> Option<Box<dyn LlmClient>> { cfg.generation.client().ok() };
    match cli.command {
        Command::ShowConfig => print!("{}", cfg.to_toml()?),
        Command::Pipeline => {
            let report = pipeline::run_pipeline(&cfg)?;
            println!("artifacts written to {}", cfg.out_dir.display());
            println!(
                "similarity raw {:.2}%, aligned {:.2}%",
                report.similarity_raw.overall, report.similarity_aligned.overall
            );
            println!(
                "utility original {}, augmented {}",
                serde_json::to_string(&report.original.mean)?,
                serde_json::to_string(&report.augmentation.mean)?
            );
        }
        Command::SelectInstruction => {
            let client = cfg.generation.client()?;
            let instruction = pipeline::run_select_instruction(&cfg, client.as_ref())?;
            println!("{}", instruction.text);
        }
        Command::Generate => {
            let client = cfg.generation.client()?;
            let (_, report) = pipeline::run_generate(&cfg, client.as_ref())?;
            println!(
                "{} rows ({} requested, {} malformed, {} out of vocabulary, {} copies)",
                report.rows,
                report.requested,
                report.counts.rejected_malformed,
                report.counts.rejected_oov,
                report.counts.rejected_duplicate_of_original
            );
        }
        Command::Attribute => {
            let (_, groups) = pipeline::run_attribute(&cfg)?;
            println!("groups {:?}, threshold {}", groups.groups, groups.threshold);
        }
        Command::Align => {
            let client = optional_client();
            let (_, report) = pipeline::run_align(&cfg, client.as_deref())?;
            println!(
                "kept {} of {} rows; mean factor TV {:.4} -> {:.4}; ESS {:.1}",
                report.output_rows,
                report.input_rows,
                report.factor_tv_before,
                report.factor_tv_after,
                report.diagnostics.effective_sample_size
            );
        }
        Command::Evaluate => {
            let client = optional_client();
            let report = pipeline::run_evaluate(&cfg, client.as_deref())?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.common.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(cause) = source {
                eprintln!("  caused by: {cause}");
                source = cause.source();
            }
            ExitCode::from(if e.is_config() { EXIT_CONFIG } else { EXIT_STAGE })
        }
    }
}
