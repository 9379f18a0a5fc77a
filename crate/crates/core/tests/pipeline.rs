use std::path::Path;

use samplellm::align::AlignReport;
use samplellm::attribution::{FeatureGroups, InteractionMap};
use samplellm::data::{load_csv_with_schema, TableSchema};
use samplellm::fixtures::toy_table;
use samplellm::llm::{GenerationReport, Instruction, MockClient};
use samplellm::pipeline::{self, Artifacts, EvaluationReport, PipelineConfig};
use samplellm::predictor::TrainedPredictor;

fn small_config(dir: &Path, seed: u64) -> PipelineConfig {
    let input = dir.join("toy.csv");
    if !input.exists() {
        toy_table(600, 3).write_csv(&input).unwrap();
    }
    let mut cfg = PipelineConfig {
        input: Some(input),
        out_dir: dir.join(format!("out-{seed}")),
        label: Some("clicked".into()),
        seed,
        bins: 8,
        ..PipelineConfig::default()
    };
    cfg.predictor.hidden_layers = vec![16, 8];
    cfg.predictor.epochs = 8;
    cfg.evaluation.runs = 2;
    cfg.instructions.selection_fraction = 0.05;
    cfg.generation.mock_mode = true;
    cfg.generation.a = 8;
    cfg.generation.b = 10;
    cfg.generation.target_fraction = 0.2;
    cfg
}

fn bytes(path: impl AsRef<Path>) -> Vec<u8> {
    std::fs::read(path.as_ref()).unwrap_or_else(|e| panic!("{}: {e}", path.as_ref().display()))
}

#[test]
fn pipeline_writes_every_artifact_and_they_reload() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), 1);
    let report = pipeline::run_pipeline(&cfg).unwrap();
    let a = cfg.artifacts();

    let schema = TableSchema::read_json(&a.schema()).unwrap();
    let train = load_csv_with_schema(&a.train(), &schema).unwrap();
    assert_eq!(train.len(), 480);
    assert_eq!(load_csv_with_schema(&a.valid(), &schema).unwrap().len(), 60);
    assert_eq!(load_csv_with_schema(&a.test(), &schema).unwrap().len(), 60);

    Instruction::read_json(&a.instruction()).unwrap();
    assert!(samplellm::llm::read_instructions(&a.instruction_history()).unwrap().len() >= 2);
    let generation = GenerationReport::read_json(&a.generation_report()).unwrap();
    assert_eq!(generation.requested, 96);
    let raw = load_csv_with_schema(&a.synthetic_raw(), &schema).unwrap();
    assert_eq!(raw.len(), generation.rows);
    let transcripts = std::fs::read_to_string(a.transcripts()).unwrap();
    assert_eq!(transcripts.lines().count(), generation.rounds.len());

    TrainedPredictor::load(&a.predictor()).unwrap();
    let map = InteractionMap::read_csv(&a.interaction_map(), train.len()).unwrap();
    assert_eq!(map.num_fields(), 6);
    let groups = FeatureGroups::read_json(&a.groups()).unwrap();
    assert_eq!(groups.num_fields, 6);

    let align = AlignReport::read_json(&a.align_report()).unwrap();
    let aligned = load_csv_with_schema(&a.synthetic(), &schema).unwrap();
    assert_eq!(align.input_rows, raw.len());
    assert_eq!(aligned.len(), (0.8 * raw.len() as f64).round() as usize);
    assert_eq!(align.output_rows, aligned.len());
    let weights = std::fs::read_to_string(a.weights()).unwrap();
    assert!(weights.starts_with("age,segment,device,region,arm,price,clicked,__weight\n"));
    assert_eq!(weights.lines().count(), raw.len() + 1);

    assert_eq!(EvaluationReport::read_json(&a.evaluation()).unwrap(), report);
    assert_eq!(report.augmentation.training_rows, train.len() + aligned.len());
    let saved = PipelineConfig::from_toml(&std::fs::read_to_string(a.config()).unwrap()).unwrap();
    assert_eq!(saved, cfg);
}

#[test]
fn stages_compose_to_the_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let whole = small_config(dir.path(), 5);
    pipeline::run_pipeline(&whole).unwrap();

    let mut staged = whole.clone();
    staged.out_dir = dir.path().join("staged");
    let client = MockClient::default();
    pipeline::run_select_instruction(&staged, &client).unwrap();
    pipeline::run_generate(&staged, &client).unwrap();
    pipeline::run_attribute(&staged).unwrap();
    pipeline::run_align(&staged, None).unwrap();
    pipeline::run_evaluate(&staged, None).unwrap();

    let (x, y) = (whole.artifacts(), staged.artifacts());
    let files: [fn(&Artifacts) -> std::path::PathBuf; 13] = [
        Artifacts::schema,
        Artifacts::train,
        Artifacts::test,
        Artifacts::instruction,
        Artifacts::synthetic_raw,
        Artifacts::generation_report,
        Artifacts::transcripts,
        Artifacts::predictor,
        Artifacts::interaction_map,
        Artifacts::groups,
        Artifacts::weights,
        Artifacts::synthetic,
        Artifacts::evaluation,
    ];
    for file in files {
        assert_eq!(bytes(file(&x)), bytes(file(&y)), "{}", file(&x).display());
    }
}

#[test]
fn pipeline_is_deterministic_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let first = small_config(dir.path(), 9);
    pipeline::run_pipeline(&first).unwrap();
    let mut again = first.clone();
    again.out_dir = dir.path().join("again");
    pipeline::run_pipeline(&again).unwrap();
    assert_eq!(bytes(first.artifacts().synthetic()), bytes(again.artifacts().synthetic()));

    let other = small_config(dir.path(), 10);
    pipeline::run_pipeline(&other).unwrap();
    assert_ne!(bytes(first.artifacts().synthetic()), bytes(other.artifacts().synthetic()));
}

#[test]
fn missing_api_key_fails_before_any_stage() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(dir.path(), 2);
    cfg.generation.mock_mode = false;
    cfg.generation.api_key_env = "SAMPLELLM_TEST_KEY_THAT_IS_NEVER_SET".into();
    let err = pipeline::run_pipeline(&cfg).unwrap_err();
    assert!(err.is_config(), "{err}");
    assert!(!cfg.artifacts().train().exists());
    assert!(!cfg.artifacts().synthetic_raw().exists());
}

#[test]
fn stage_errors_name_their_stage() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(dir.path(), 2);
    cfg.input = Some(dir.path().join("missing.csv"));
    let err = pipeline::run_pipeline(&cfg).unwrap_err();
    assert!(!err.is_config());
    assert!(err.to_string().starts_with("prepare stage failed"), "{err}");

    let cfg = small_config(dir.path(), 3);
    pipeline::prepare(&cfg).unwrap();
    let err = pipeline::run_align(&cfg, None).unwrap_err();
    assert!(err.is_config(), "{err}");
    assert!(err.to_string().contains("synthetic_raw.csv"), "{err}");
}
