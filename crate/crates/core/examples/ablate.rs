//! Trains a small grid over patch length, step and scan direction for one
//! epoch each and writes the result table.
//!
//! cargo run --release --example ablate -- [out.csv]

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

use s2m2ecg::cli::ablate::{run_ablation, write_csv, AblationGrid};
use s2m2ecg::data::generate_synthetic;
use s2m2ecg::model::ModelConfig;
use s2m2ecg::preprocess::preprocess_record;
use s2m2ecg::train::TrainConfig;

fn main() -> s2m2ecg::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map(Into::into)
        .unwrap_or_else(|| std::env::temp_dir().join("s2m2ecg-ablation.csv"));
    let prep = |per_class, seed| -> s2m2ecg::Result<Vec<_>> {
        generate_synthetic(4, per_class, 2500, 250, seed)?
            .iter()
            .map(|r| preprocess_record(r).map(|p| p.record))
            .collect()
    };
    let (train, val) = (prep(5, 1)?, prep(2, 2)?);

    let base = ModelConfig::tiny();
    let grid = AblationGrid::parse("p = 25, 50\ns_ratio = 1, 0.5\nbidirectional = on, off\n", &base)?;
    let cfg = TrainConfig { epochs: 1, batch_size: 8, ..TrainConfig::default() };
    let rows = run_ablation(&grid, &base, &cfg, &train, &val, &val, |row, _| {
        println!("{}", row.fields().join(","));
    })?;
    write_csv(&rows, &out)?;
    println!("{} runs written to {}", rows.len(), out.display());
    Ok(())
}
