//! Trains the tiny configuration on a seeded 4-class synthetic set and
//! prints one history line per epoch.
//!
//! cargo run --release --example train_synthetic -- [epochs] [per_class]

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

use s2m2ecg::data::generate_synthetic;
use s2m2ecg::model::ModelConfig;
use s2m2ecg::preprocess::preprocess_record;
use s2m2ecg::train::{evaluate, train, TrainConfig};

fn main() -> s2m2ecg::Result<()> {
    let mut args = std::env::args().skip(1).map(|a| a.parse::<usize>().expect("numeric argument"));
    let epochs = args.next().unwrap_or(20);
    let per_class = args.next().unwrap_or(50);

    let prep = |seed| -> s2m2ecg::Result<Vec<_>> {
        generate_synthetic(4, per_class, 2500, 250, seed)?
            .iter()
            .map(|r| preprocess_record(r).map(|p| p.record))
            .collect()
    };
    let train_set = prep(1)?;
    let val_set = prep(2)?.into_iter().step_by(5).collect::<Vec<_>>();

    let config = TrainConfig { epochs, track_train: true, ..TrainConfig::default() };
    let outcome = train(&train_set, &val_set, ModelConfig::tiny(), config, |e| println!("{e}"))?;
    println!("best_epoch={}", outcome.best_epoch);
    println!("train {}", evaluate(&outcome.model, &train_set)?);
    println!("val {}", evaluate(&outcome.model, &val_set)?);
    Ok(())
}
