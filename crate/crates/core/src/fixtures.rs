//! Small synthetic datasets with known structure, used by tests, the
//! acceptance suite and the bundled toy CSV.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::data::{ColumnSpec, Table, TableSchema, Value};
use crate::seed;

fn binary_label(name: &str, a: &str, b: &str) -> ColumnSpec {
    ColumnSpec::categorical(name, vec![a.to_string(), b.to_string()])
}

/// Four Gaussian blobs (σ = 0.6) at `(±1.5, ±1.5)`; the label is the XOR of
/// the two coordinate signs, so no single direction separates the classes.
pub fn xor_blobs(n: usize, s: u64) -> Table {
    let schema = TableSchema::new(
        vec![
            ColumnSpec::numerical("x1", -10.0, 10.0),
            ColumnSpec::numerical("x2", -10.0, 10.0),
            binary_label("y", "a", "b"),
        ],
        2,
    )
    .expect("valid schema");
    let mut rng = seed::rng(s);
    let noise = Normal::new(0.0, 0.6).unwrap();
    let rows = (0..n)
        .map(|_| {
            let i = rng.random_range(0..2u32);
            let j = rng.random_range(0..2u32);
            let centre = |k: u32| if k == 0 { -1.5 } else { 1.5 };
            vec![
                Value::Num(centre(i) + noise.sample(&mut rng)),
                Value::Num(centre(j) + noise.sample(&mut rng)),
                Value::Cat(i ^ j),
            ]
        })
        .collect();
    Table::new(schema, rows).expect("rows match schema")
}

/// `fields` standard-normal numerical columns `f0..` and a label equal to
/// the sign of `f1 · f8` (fields beyond the table width are ignored).
pub fn bilinear_table(n: usize, fields: usize, s: u64) -> Table {
    let mut columns: Vec<ColumnSpec> = (0..fields)
        .map(|i| ColumnSpec::numerical(format!("f{i}"), -6.0, 6.0))
        .collect();
    columns.push(binary_label("y", "0", "1"));
    let schema = TableSchema::new(columns, fields).expect("valid schema");
    let mut rng = seed::rng(s);
    let noise = Normal::new(0.0f64, 1.0).unwrap();
    let rows = (0..n)
        .map(|_| {
            let mut row: Vec<Value> = (0..fields)
                .map(|_| Value::Num(noise.sample(&mut rng).clamp(-6.0, 6.0)))
                .collect();
            let product = if fields > 8 { row[1].as_f64() * row[8].as_f64() } else { 0.0 };
            row.push(Value::Cat(u32::from(product > 0.0)));
            row
        })
        .collect();
    Table::new(schema, rows).expect("rows match schema")
}

const SEGMENTS: [(&str, f64, f64, f64); 5] = [
    // name, share, mean age, click effect
    ("casual", 0.45, 34.0, -0.4),
    ("regular", 0.25, 41.0, 0.3),
    ("power", 0.15, 29.0, 1.2),
    ("business", 0.10, 47.0, 0.6),
    ("student", 0.05, 21.0, -0.2),
];
const DEVICES: [&str; 3] = ["desktop", "mobile", "tablet"];
const REGIONS: [(&str, f64); 4] = [("east", 0.2), ("north", 0.4), ("south", 0.3), ("west", 0.1)];

fn pick(rng: &mut impl Rng, shares: impl Iterator<Item = f64>) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, share) in shares.enumerate() {
        acc += share;
        last = i;
        if u < acc {
            return i;
        }
    }
    last
}

/// A click-through table with a skewed `segment` column that drives age,
/// device, basket price and the label, an independent `region`, and an
/// evenly split experiment `arm` (`a`/`b`). Vocabularies are sorted.
pub fn toy_table(n: usize, s: u64) -> Table {
    let mut segments: Vec<&str> = SEGMENTS.iter().map(|s| s.0).collect();
    segments.sort_unstable();
    let vocab = |v: &[&str]| v.iter().map(|s| s.to_string()).collect::<Vec<_>>();
    let schema = TableSchema::new(
        vec![
            ColumnSpec::numerical("age", 18.0, 80.0),
            ColumnSpec::categorical("segment", vocab(&segments)),
            ColumnSpec::categorical("device", vocab(&DEVICES)),
            ColumnSpec::categorical("region", vocab(&REGIONS.map(|r| r.0))),
            ColumnSpec::categorical("arm", vocab(&["a", "b"])),
            ColumnSpec::numerical("price", 1.0, 500.0),
            binary_label("clicked", "no", "yes"),
        ],
        6,
    )
    .expect("valid schema");
    let mut rng = seed::rng(s);
    let noise = Normal::new(0.0f64, 1.0).unwrap();
    let rows = (0..n)
        .map(|_| {
            let k = pick(&mut rng, SEGMENTS.iter().map(|s| s.1));
            let (name, _, mean_age, effect) = SEGMENTS[k];
            let age = (mean_age + 6.0 * noise.sample(&mut rng)).round().clamp(18.0, 80.0);
            let device_shares = match name {
                "business" => [0.8, 0.1, 0.1],
                "student" | "power" => [0.15, 0.75, 0.1],
                _ => [0.4, 0.45, 0.15],
            };
            let device = pick(&mut rng, device_shares.into_iter());
            let region = pick(&mut rng, REGIONS.iter().map(|r| r.1));
            let arm = rng.random_range(0..2u32);
            let price = (3.0 + 0.4 * k as f64 + 0.5 * noise.sample(&mut rng)).exp().clamp(1.0, 500.0);
            let price = (price * 100.0).round() / 100.0;
            let mobile_boost = if DEVICES[device] == "mobile" && name != "business" { 0.9 } else { -0.3 };
            let logit = effect + mobile_boost + 0.04 * (age - 35.0) + if arm == 0 { 0.2 } else { 0.0 };
            let clicked = rng.random::<f64>() < 1.0 / (1.0 + (-logit).exp());
            vec![
                Value::Num(age),
                Value::Cat(segments.iter().position(|s| *s == name).unwrap() as u32),
                Value::Cat(device as u32),
                Value::Cat(region as u32),
                Value::Cat(arm),
                Value::Num(price),
                Value::Cat(u32::from(clicked)),
            ]
        })
        .collect();
    Table::new(schema, rows).expect("rows match schema")
}
