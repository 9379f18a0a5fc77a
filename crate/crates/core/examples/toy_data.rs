//! Writes the bundled toy dataset: `cargo run --example toy_data -- data/toy.csv`.

use samplellm::fixtures::toy_table;

fn main() -> samplellm::Result<()> {
    let path = std::env::args().nth(1).unwrap_or_else(|| "toy.csv".into());
    let rows = std::env::args().nth(2).map_or(2000, |n| n.parse().expect("row count"));
    toy_table(rows, 7).write_csv(std::path::Path::new(&path))?;
    println!("wrote {rows} rows to {path}");
    Ok(())
}
