//! Times single-record forwards of the tiny model, or of the reference
//! model when given `reference`.
//!
//! cargo run --release --example bench -- [tiny|reference] [repeats]

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

use s2m2ecg::cli::bench::{bench_latency, random_record, DEFAULT_WARMUP};
use s2m2ecg::model::{ModelConfig, S2m2Ecg};

fn main() -> s2m2ecg::Result<()> {
    let mut args = std::env::args().skip(1);
    let cfg = match args.next().as_deref() {
        Some("reference") => ModelConfig::default(),
        _ => ModelConfig::tiny(),
    };
    let repeats = args.next().map_or(20, |r| r.parse().expect("numeric repeat count"));
    let model = S2m2Ecg::new(cfg, 0)?;
    let record = random_record(&model, 1)?;
    println!("params={}", model.param_count());
    println!("{}", bench_latency(&model, &record, DEFAULT_WARMUP.min(repeats), repeats)?);
    Ok(())
}
