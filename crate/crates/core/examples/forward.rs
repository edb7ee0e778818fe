//! Tokenizes a lead, builds the tiny and reference models and classifies
//! one record with the untrained tiny model.
//!
//! cargo run --release --example forward

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

use s2m2ecg::data::generate_synthetic;
use s2m2ecg::model::{batch_tensor, param_count, Mode, ModelConfig, S2m2Ecg};
use s2m2ecg::numerics::Eager;
use s2m2ecg::preprocess::preprocess_record;
use s2m2ecg::tokenize::segment;

fn main() -> s2m2ecg::Result<()> {
    let record = preprocess_record(&generate_synthetic(4, 1, 2500, 250, 5)?[2])?.record;

    let cfg = ModelConfig::tiny();
    let windows = segment(record.lead(0), cfg.patch_len, cfg.step)?;
    println!(
        "p={} s={}: {} windows of lead 0, {} tokens with CLS",
        cfg.patch_len,
        cfg.step,
        windows.shape()[0],
        cfg.total_tokens()
    );
    println!("tiny params {}, reference params {}", param_count(&cfg), param_count(&ModelConfig::default()));

    let model = S2m2Ecg::new(cfg, 0)?;
    let out = model.forward(&mut Eager, &batch_tensor(&[&record])?, Mode::Eval)?;
    if let Some(w) = &out.se_weights {
        let w: Vec<String> = w.data().iter().map(|v| format!("{v:.3}")).collect();
        println!("lead weights [{}]", w.join(" "));
    }
    let probs = model.predict_proba(&[&record])?;
    println!("label {} probabilities {:?}", record.label, probs.data());
    Ok(())
}
