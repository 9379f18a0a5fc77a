//! Acceptance suite. Each criterion runs in turn and prints one PASS/FAIL
//! line; the process exits non-zero if any criterion fails.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::Rng;
use samplellm::align::{self, AlignSpec, ResampleMode};
use samplellm::attribution::{aggregate_map, extract_groups, merge_pairs, BaselineSet, FeatureGroups, InteractionMap};
use samplellm::data::{fit_bins, ColumnSpec, Encoder, Table, TableSchema, Value};
use samplellm::eval::{augmentation_utility, mle_utility, original_utility};
use samplellm::fixtures::{bilinear_table, toy_table, xor_blobs};
use samplellm::llm::{ExemplarStrategy, MockBias};
use samplellm::matrix::Matrix;
use samplellm::pipeline::{self, PipelineConfig};
use samplellm::predictor::{Activation, Dense, LogitModel, Mlp, PredictorSpec};
use samplellm::seed;
use statrs::distribution::{ChiSquared, ContinuousCDF};

type Outcome = Result<String, String>;
type Criterion = (&'static str, Duration, fn() -> Outcome);

fn ensure(condition: bool, message: impl FnOnce() -> String) -> Result<(), String> {
    if condition {
        Ok(())
    } else {
        Err(message())
    }
}

fn workspace_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn toy_config(out: &Path, seed: u64) -> PipelineConfig {
    let mut cfg = PipelineConfig::read(&workspace_root().join("configs/toy.toml")).expect("toy config");
    cfg.out_dir = out.to_path_buf();
    cfg.seed = seed;
    cfg.generation.mock_mode = true;
    cfg
}

// 1. Analytic input derivatives against central finite differences.

fn random_net(rng: &mut impl Rng) -> Mlp {
    let mut sizes = vec![rng.random_range(2..=8)];
    for _ in 0..rng.random_range(1..=3) {
        sizes.push(rng.random_range(2..=10));
    }
    sizes.push(rng.random_range(1..=4));
    let activation = if rng.random_bool(0.5) { Activation::Softplus } else { Activation::Tanh };
    let layers = sizes
        .windows(2)
        .map(|p| {
            let w: Vec<f64> = (0..p[0] * p[1]).map(|_| rng.random_range(-1.0..1.0)).collect();
            let b: Vec<f64> = (0..p[1]).map(|_| rng.random_range(-0.5..0.5)).collect();
            Dense::new(Matrix::from_vec(p[1], p[0], w), b)
        })
        .collect();
    Mlp::from_layers(layers, activation)
}

fn shifted(x: &[f64], moves: &[(usize, f64)]) -> Vec<f64> {
    let mut y = x.to_vec();
    for &(i, d) in moves {
        y[i] += d;
    }
    y
}

fn attribution_oracle() -> Outcome {
    let mut rng = seed::rng(101);
    let (mut grad_err, mut hess_err) = (0.0f64, 0.0f64);
    for _ in 0..100 {
        let net = random_net(&mut rng);
        let n = net.input_dim();
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let class = rng.random_range(0..net.output_dim());
        let f = |v: Vec<f64>| net.logits(&v)[class];

        let h = 1e-5;
        let grad = net.input_gradient(&x, class);
        for (i, g) in grad.iter().enumerate() {
            let fd = (f(shifted(&x, &[(i, h)])) - f(shifted(&x, &[(i, -h)]))) / (2.0 * h);
            grad_err = grad_err.max((g - fd).abs());
        }

        let h = 1e-3;
        let hess = net.input_hessian(&x, class);
        for i in 0..n {
            for j in 0..n {
                let fd = if i == j {
                    (f(shifted(&x, &[(i, h)])) - 2.0 * f(x.clone()) + f(shifted(&x, &[(i, -h)]))) / (h * h)
                } else {
                    (f(shifted(&x, &[(i, h), (j, h)])) - f(shifted(&x, &[(i, h), (j, -h)]))
                        - f(shifted(&x, &[(i, -h), (j, h)]))
                        + f(shifted(&x, &[(i, -h), (j, -h)])))
                        / (4.0 * h * h)
                };
                hess_err = hess_err.max((hess.get(i, j) - fd).abs());
            }
        }
    }
    ensure(grad_err <= 1e-4, || format!("gradient error {grad_err:.2e}"))?;
    ensure(hess_err <= 1e-3, || format!("hessian error {hess_err:.2e}"))?;
    Ok(format!("100 nets, max gradient error {grad_err:.1e}, max hessian error {hess_err:.1e}"))
}

// 2. Hand-built bilinear predictor.

struct Bilinear {
    dim: usize,
    a: usize,
    b: usize,
}

impl LogitModel for Bilinear {
    fn input_dim(&self) -> usize {
        self.dim
    }
    fn num_classes(&self) -> usize {
        2
    }
    fn logits(&self, v: &[f64]) -> Vec<f64> {
        vec![0.0, v[self.a] * v[self.b]]
    }
    fn input_gradient(&self, v: &[f64], class: usize) -> Vec<f64> {
        let mut g = vec![0.0; self.dim];
        if class == 1 {
            g[self.a] = v[self.b];
            g[self.b] = v[self.a];
        }
        g
    }
    fn input_hessian(&self, _v: &[f64], class: usize) -> Matrix {
        let mut h = Matrix::zeros(self.dim, self.dim);
        if class == 1 {
            h.set(self.a, self.b, 1.0);
            h.set(self.b, self.a, 1.0);
        }
        h
    }
}

fn bilinear_ground_truth() -> Outcome {
    let table = bilinear_table(1000, 10, 7);
    let encoder = Encoder::fit(&table, false).map_err(|e| e.to_string())?;
    let model = Bilinear { dim: encoder.dim(), a: 1, b: 8 };
    let baselines = BaselineSet::all_zeros(encoder.dim());
    let mut map = aggregate_map(&model, &encoder, &table.rows, table.schema.label_index, &baselines)
        .map_err(|e| e.to_string())?;
    let (i, j, max) = map.max_off_diagonal().ok_or("empty map")?;
    let mut runner_up = 0.0f64;
    for p in 0..10 {
        for q in p + 1..10 {
            if (p, q) != (i, j) {
                runner_up = runner_up.max(map.gamma.get(p, q));
            }
        }
    }
    ensure((i, j) == (1, 8) && max > runner_up, || format!("argmax ({i},{j}) {max} vs {runner_up}"))?;
    let groups = extract_groups(&mut map, 0.5).map_err(|e| e.to_string())?;
    ensure(groups.groups == vec![vec![1, 8]], || format!("groups {:?}", groups.groups))?;
    Ok(format!("argmax (1,8) = {max:.3}, next {runner_up:.3}, groups [[1, 8]]"))
}

// 3. Pair merging against a brute-force closure.

fn closure_groups(fields: usize, pairs: &[(usize, usize)]) -> BTreeSet<BTreeSet<usize>> {
    let mut reach = vec![vec![false; fields]; fields];
    for (i, row) in reach.iter_mut().enumerate() {
        row[i] = true;
    }
    for &(a, b) in pairs {
        reach[a][b] = true;
        reach[b][a] = true;
    }
    for k in 0..fields {
        for i in 0..fields {
            for j in 0..fields {
                if reach[i][k] && reach[k][j] {
                    reach[i][j] = true;
                }
            }
        }
    }
    (0..fields)
        .map(|i| (0..fields).filter(|&j| reach[i][j]).collect::<BTreeSet<_>>())
        .filter(|c| c.len() >= 2)
        .collect()
}

fn map_from_pairs(fields: usize, pairs: &[(usize, usize)]) -> InteractionMap {
    let mut gamma = Matrix::zeros(fields, fields);
    for i in 0..fields {
        gamma.set(i, i, 5.0);
    }
    for &(a, b) in pairs {
        gamma.set(a, b, 1.0);
        gamma.set(b, a, 1.0);
    }
    InteractionMap { gamma, sample_count: 1, threshold: None }
}

fn merge_correctness() -> Outcome {
    let example = [(1, 3), (3, 8), (2, 5)];
    let merged = merge_pairs(9, &example);
    ensure(merged == vec![vec![1, 3, 8], vec![2, 5]], || format!("example gave {merged:?}"))?;
    let mut map = map_from_pairs(9, &example);
    let groups = extract_groups(&mut map, 0.5).map_err(|e| e.to_string())?;
    ensure(groups.groups == merged, || format!("extract_groups gave {:?}", groups.groups))?;

    let fields = 6;
    let all: Vec<(usize, usize)> = (0..fields).flat_map(|i| (i + 1..fields).map(move |j| (i, j))).collect();
    for mask in 0u32..1 << all.len() {
        let pairs: Vec<(usize, usize)> =
            all.iter().enumerate().filter(|(k, _)| mask >> k & 1 == 1).map(|(_, &p)| p).collect();
        let got = merge_pairs(fields, &pairs);
        let as_sets: BTreeSet<BTreeSet<usize>> = got.iter().map(|g| g.iter().copied().collect()).collect();
        ensure(as_sets.len() == got.len() && as_sets == closure_groups(fields, &pairs), || {
            format!("pairs {pairs:?} gave {got:?}")
        })?;
        ensure(got.iter().all(|g| g.windows(2).all(|w| w[0] < w[1])), || format!("unsorted {got:?}"))?;
    }
    Ok(format!("example [[1, 3, 8], [2, 5]]; all {} pair sets on 6 fields agree", 1u32 << all.len()))
}

// 4. With-replacement resampling follows w / Σw.

fn draw(rng: &mut impl Rng, p: &[f64; 3]) -> u32 {
    let u: f64 = rng.random();
    if u < p[0] {
        0
    } else if u < p[0] + p[1] {
        1
    } else {
        2
    }
}

fn three_field_table(rows: usize, shares: [[f64; 3]; 3], s: u64) -> Table {
    let vocab = |n: &str| ColumnSpec::categorical(n, vec!["p".into(), "q".into(), "r".into()]);
    let schema = TableSchema::new(
        vec![vocab("f0"), vocab("f1"), vocab("f2"), ColumnSpec::categorical("y", vec!["0".into(), "1".into()])],
        3,
    )
    .expect("schema");
    let mut rng = seed::rng(s);
    let rows = (0..rows)
        .map(|_| {
            let mut row: Vec<Value> = shares.iter().map(|p| Value::Cat(draw(&mut rng, p))).collect();
            let y = u32::from(rng.random::<f64>() < if row[0] == Value::Cat(0) { 0.7 } else { 0.3 });
            row.push(Value::Cat(y));
            row
        })
        .collect();
    Table::new(schema, rows).expect("rows")
}

fn importance_sampling_convergence() -> Outcome {
    let original = three_field_table(4000, [[0.6, 0.3, 0.1], [0.2, 0.2, 0.6], [1.0 / 3.0; 3]], 1);
    let synthetic = three_field_table(300, [[0.2, 0.3, 0.5], [0.5, 0.3, 0.2], [0.6, 0.2, 0.2]], 2);
    let spec = AlignSpec {
        predictor: PredictorSpec { hidden_layers: vec![8], epochs: 10, ..PredictorSpec::default() },
        ..AlignSpec::default()
    };
    let groups = FeatureGroups::independent(3);
    let wt = align::importance_weights(&original, &synthetic, &groups, &original.schema, &spec)
        .map_err(|e| e.to_string())?;
    let n = 10_000;
    let picks = align::resample_indices(&wt.weights, n, ResampleMode::WithReplacement, 3).map_err(|e| e.to_string())?;

    // Cells are the distinct synthetic tuples, so expected counts stay large.
    let key = |i: usize| synthetic.rows[i].iter().map(|v| v.key()).collect::<Vec<_>>();
    let mut cells: std::collections::BTreeMap<Vec<u64>, (f64, f64)> = Default::default();
    let total: f64 = wt.weights.iter().sum();
    for (i, w) in wt.weights.iter().enumerate() {
        cells.entry(key(i)).or_default().0 += n as f64 * w / total;
    }
    for &i in &picks {
        cells.entry(key(i)).or_default().1 += 1.0;
    }
    let chi2: f64 = cells.values().map(|(e, o)| (o - e).powi(2) / e).sum();
    let dof = (cells.len() - 1) as f64;
    let p = ChiSquared::new(dof).map_err(|e| e.to_string())?.sf(chi2);
    ensure(p > 0.01, || format!("chi2 {chi2:.1} on {dof} dof, p = {p:.4}"))?;

    // The weights point the pool towards the original marginals.
    let resampled = synthetic.select(&picks);
    let (before, after): (Vec<f64>, Vec<f64>) = (0..3)
        .map(|f| {
            (
                align::factor_tv(&synthetic, &original, &[f], &original.schema),
                align::factor_tv(&resampled, &original, &[f], &original.schema),
            )
        })
        .unzip();
    ensure(before.iter().zip(&after).all(|(b, a)| a < b), || format!("field TV {before:?} -> {after:?}"))?;
    Ok(format!("chi2 {chi2:.1} on {dof} dof, p = {p:.3}; field TV {before:.3?} -> {after:.3?}"))
}

// 5. Stage 2 corrects a biased generator.

fn alignment_effect() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut cfg = toy_config(dir.path(), 42);
    cfg.generation.mock.bias = Some(MockBias { column: "arm".into(), value: "a".into(), probability: 0.8 });
    let report = pipeline::run_pipeline(&cfg).map_err(|e| e.to_string())?;
    let artifacts = cfg.artifacts();
    let align_report = align::AlignReport::read_json(&artifacts.align_report()).map_err(|e| e.to_string())?;
    let splits = pipeline::splits(&cfg).map_err(|e| e.to_string())?;
    let load = |p: PathBuf| samplellm::data::load_csv_with_schema(&p, &splits.schema).map_err(|e| e.to_string());
    let (raw, aligned) = (load(artifacts.synthetic_raw())?, load(artifacts.synthetic())?);
    let arm = splits.schema.column_index("arm").ok_or("no arm column")?;
    let share = |t: &Table| t.rows.iter().filter(|r| r[arm] == Value::Cat(0)).count() as f64 / t.len() as f64;
    let (o, r) = (share(&splits.train), share(&raw));
    ensure((o - 0.5).abs() < 0.05 && (r - 0.9).abs() < 0.05, || format!("arm=a share {o:.3} vs raw {r:.3}"))?;

    let arm_tv = |t: &Table| align::factor_tv(t, &splits.train, &[arm], &splits.schema);
    let (tv_pre, tv_post) = (arm_tv(&raw), arm_tv(&aligned));
    let (before, after) = (align_report.factor_tv_before, align_report.factor_tv_after);
    ensure(after < before, || format!("mean factor TV {before:.4} -> {after:.4}"))?;
    ensure(tv_post < tv_pre, || format!("arm TV {tv_pre:.4} -> {tv_post:.4}"))?;
    let (s_raw, s_aligned) = (report.similarity_raw.overall, report.similarity_aligned.overall);
    ensure(s_aligned > s_raw, || format!("similarity {s_raw:.2} -> {s_aligned:.2}"))?;
    Ok(format!(
        "arm=a {o:.2} in data, {r:.2} raw, {:.2} aligned; factor TV {before:.3} -> {after:.3}; similarity {s_raw:.2}% -> {s_aligned:.2}%",
        share(&aligned)
    ))
}

// 6. Weights are flat when the synthetic data is the original data.

fn identity_weights() -> Outcome {
    let table = toy_table(1500, 11);
    let binned = fit_bins(&table, 10).map_err(|e| e.to_string())?;
    let table = table.with_schema(binned.clone());
    let groups = FeatureGroups { num_fields: 6, groups: vec![vec![1, 2]], gamma: 0.5, threshold: 0.0 };
    let spec = AlignSpec {
        predictor: PredictorSpec { hidden_layers: vec![16], epochs: 10, seed: 5, ..PredictorSpec::default() },
        ..AlignSpec::default()
    };
    let wt = align::importance_weights(&table, &table.clone(), &groups, &binned, &spec).map_err(|e| e.to_string())?;
    let max = wt.raw_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = wt.raw_weights.iter().copied().fold(f64::INFINITY, f64::min);
    ensure(max / min <= 1.05, || format!("max/min {:.4}", max / min))?;
    Ok(format!("max/min weight ratio {:.6}", max / min))
}

// 7. Utility protocols reduce to their baselines.

fn utility_reduction() -> Outcome {
    let train = xor_blobs(1000, 21);
    let test = xor_blobs(1000, 22);
    let spec = PredictorSpec { hidden_layers: vec![16, 8], epochs: 15, seed: 3, ..PredictorSpec::default() };
    let original = original_utility(&train, &test, &spec, 3).map_err(|e| e.to_string())?;
    let empty = Table::empty(train.schema.clone());
    let augmented = augmentation_utility(&train, &test, &empty, &spec, 3).map_err(|e| e.to_string())?;
    let bits = |r: &samplellm::eval::UtilityReport| serde_json::to_string(&(&r.per_run, &r.mean, r.training_rows));
    ensure(
        bits(&original).map_err(|e| e.to_string())? == bits(&augmented).map_err(|e| e.to_string())?
            && original.per_run == augmented.per_run,
        || "augmentation with no synthetic rows differs from original".into(),
    )?;

    let mut shuffled = xor_blobs(1000, 23);
    let mut labels: Vec<Value> = shuffled.rows.iter().map(|r| r[2]).collect();
    labels.shuffle(&mut seed::rng(24));
    for (row, y) in shuffled.rows.iter_mut().zip(labels) {
        row[2] = y;
    }
    let mle = mle_utility(&shuffled, &test, &spec, 3).map_err(|e| e.to_string())?;
    let auc = mle.mean.auc().ok_or("binary expected")?;
    ensure((auc - 0.5).abs() <= 0.05, || format!("shuffled-label AUC {auc:.4}"))?;
    Ok(format!(
        "empty augmentation matches original (AUC {:.4}); shuffled-label MLE AUC {auc:.4}",
        original.mean.auc().unwrap_or(f64::NAN)
    ))
}

// 8. The CLI is deterministic under a fixed seed.

fn end_to_end_determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let config = workspace_root().join("configs/toy.toml");
    let run = |name: &str| -> Result<Vec<u8>, String> {
        let out = dir.path().join(name);
        let status = Command::new(env!("CARGO_BIN_EXE_samplellm"))
            .args(["--config".as_ref(), config.as_os_str(), "--mock".as_ref(), "--seed".as_ref(), "42".as_ref()])
            .arg("--out")
            .arg(&out)
            .arg("pipeline")
            .output()
            .map_err(|e| e.to_string())?;
        ensure(status.status.success(), || String::from_utf8_lossy(&status.stderr).into_owned())?;
        std::fs::read(out.join("synthetic.csv")).map_err(|e| e.to_string())
    };
    let (first, second) = (run("first")?, run("second")?);
    ensure(!first.is_empty() && first == second, || "synthetic.csv differs between runs".into())?;
    Ok(format!("two runs wrote identical synthetic.csv ({} bytes)", first.len()))
}

// 9. Ablation ordering on the toy fixture.

fn ablation_ordering() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut held = 0;
    let mut lines = Vec::new();
    for s in 0..10u64 {
        let root = 1000 + s;
        let full_cfg = toy_config(&dir.path().join(format!("full-{s}")), root);
        let mut random_cfg = toy_config(&dir.path().join(format!("random-{s}")), root);
        random_cfg.generation.exemplar_strategy = ExemplarStrategy::Random;
        let full = pipeline::run_pipeline(&full_cfg).map_err(|e| e.to_string())?;
        let random = pipeline::run_pipeline(&random_cfg).map_err(|e| e.to_string())?;
        let (f, r, raw) =
            (full.similarity_aligned.overall, random.similarity_aligned.overall, full.similarity_raw.overall);
        if f >= r && r >= raw {
            held += 1;
        }
        lines.push(format!("{f:.2}/{r:.2}/{raw:.2}"));
    }
    let summary = format!("ordering held in {held}/10 (full/-CS/raw: {})", lines.join(", "));
    ensure(held >= 8, || summary.clone())?;
    Ok(summary)
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("attribution oracle", Duration::from_secs(60), attribution_oracle),
        ("bilinear ground truth", Duration::from_secs(10), bilinear_ground_truth),
        ("merge correctness", Duration::from_secs(30), merge_correctness),
        ("importance-sampling convergence", Duration::from_secs(10), importance_sampling_convergence),
        ("alignment effect", Duration::from_secs(120), alignment_effect),
        ("identity weights", Duration::from_secs(60), identity_weights),
        ("utility-protocol reduction", Duration::from_secs(120), utility_reduction),
        ("end-to-end determinism", Duration::from_secs(120), end_to_end_determinism),
        ("ablation ordering", Duration::from_secs(300), ablation_ordering),
    ];
    let mut failed = 0;
    for (n, (name, limit, check)) in criteria.into_iter().enumerate() {
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(check).unwrap_or_else(|_| Err("panicked".into()));
        let elapsed = start.elapsed();
        let outcome = outcome.and_then(|detail| {
            ensure(elapsed <= limit, || format!("took {elapsed:.1?}, limit {limit:?}; {detail}")).map(|_| detail)
        });
        match outcome {
            Ok(detail) => println!("PASS {} {name}: {detail} [{elapsed:.1?}]", n + 1),
            Err(reason) => {
                failed += 1;
                println!("FAIL {} {name}: {reason} [{elapsed:.1?}]", n + 1);
            }
        }
    }
    if failed > 0 {
        println!("{failed} of 9 acceptance criteria failed");
        std::process::exit(1);
    }
    println!("all 9 acceptance criteria passed");
}
