//! Regenerates the committed benchmark tables from the shipped default
//! configuration: `cargo run --release --example gen_golden -- <dir>`.

use std::path::PathBuf;

use kinsolve::harness::{run_bench, ScenarioConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir: PathBuf = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(concat!(env!("CARGO_MANIFEST_DIR"), "/tests/golden")));
    std::fs::create_dir_all(&dir)?;
    for (name, csv) in run_bench(&ScenarioConfig::shipped_default())? {
        std::fs::write(dir.join(name), csv)?;
        eprintln!("wrote {}", dir.join(name).display());
    }
    Ok(())
}
