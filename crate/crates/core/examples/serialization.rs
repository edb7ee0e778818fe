//! Saves and reloads a record and a model, then checks both came back
//! bit for bit.
//!
//! cargo run --release --example serialization

use s2m2ecg::data::{generate_synthetic, read_record, write_record};
use s2m2ecg::model::{batch_tensor, load_model, save_model, ModelConfig, S2m2Ecg};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::temp_dir().join("s2m2ecg-serialization");
    std::fs::create_dir_all(&dir)?;

    // Samples are stored as f32; rounding first makes the trip exact.
    let record = generate_synthetic(2, 1, 1000, 250, 9)?.remove(0).quantized();
    // The id is stored as the file stem.
    let path = dir.join(format!("{}.s2m2", record.id));
    write_record(&record, &path)?;
    println!("record round trip equal: {}", read_record(&path)? == record);

    let model = S2m2Ecg::new(ModelConfig { signal_len: 1000, ..ModelConfig::tiny() }, 4)?;
    let path = dir.join("model.bin");
    save_model(&model, &path)?;
    let back = load_model(&path)?;
    println!("model file {} bytes, identical bytes: {}", model.to_bytes().len(), back.to_bytes() == model.to_bytes());
    let batch = batch_tensor(&[&record])?;
    let same = model.logits(&batch)?.data().iter().zip(back.logits(&batch)?.data()).all(|(a, b)| a.to_bits() == b.to_bits());
    println!("logits bit-identical: {same}");
    Ok(())
}
